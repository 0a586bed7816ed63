//! Browser bindings for three small pieces of the dialog system: caption
//! scoring, candidate clustering and beam search over a toy language model.
//! Every exported function returns JSON text.

use qacoop_core::candidates::{kmeans, sentence_embedding, WordVectorTable};
use qacoop_core::corpus::{tokenize, EOS};
use qacoop_core::decode::{beam_search, greedy_decode, Decoded, StepModel};
use qacoop_core::metrics::{score_corpus, MetricReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Reply<T> {
    Ok(T),
    Err { error: String },
}

fn reply<T: Serialize>(r: Result<T, String>) -> String {
    let r = match r {
        Ok(v) => Reply::Ok(v),
        Err(error) => Reply::Err { error },
    };
    serde_json::to_string(&r).expect("reply serializes")
}

/// One candidate per line; the matching line of `references` holds that
/// candidate's references separated by `|`.
pub fn score(candidates: &str, references: &str) -> Result<MetricReport, String> {
    let cands: Vec<Vec<String>> = candidates.lines().filter(|l| !l.trim().is_empty()).map(tokenize).collect();
    let refs: Vec<Vec<Vec<String>>> =
        references.lines().filter(|l| !l.trim().is_empty()).map(|l| l.split('|').map(tokenize).filter(|r| !r.is_empty()).collect()).collect();
    if cands.len() != refs.len() {
        return Err(format!("{} candidates but {} reference lines", cands.len(), refs.len()));
    }
    if refs.iter().any(Vec::is_empty) {
        return Err("every candidate needs at least one reference".into());
    }
    score_corpus(&cands, &refs).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct ClusterPoint {
    pub sentence: String,
    pub cluster: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Serialize)]
pub struct ClusterView {
    pub points: Vec<ClusterPoint>,
    pub sizes: Vec<usize>,
    pub objective_trace: Vec<f64>,
}

/// Top two principal directions by power iteration with deflation.
fn project_2d(points: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let dim = points.first().map_or(0, Vec::len);
    let n = points.len().max(1) as f64;
    let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let cov_times = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for p in &centered {
            let d: f64 = p.iter().zip(v).map(|(a, b)| a * b).sum();
            for j in 0..dim {
                out[j] += d * p[j];
            }
        }
        out
    };
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for a in 0..2 {
        let mut v: Vec<f64> = (0..dim).map(|j| ((j * 7 + a * 3 + 1) % 11) as f64 - 5.0).collect();
        for _ in 0..100 {
            let mut w = cov_times(&v);
            for prev in &axes {
                let d: f64 = w.iter().zip(prev).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(prev).for_each(|(x, y)| *x -= d * y);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        axes.push(v);
    }
    let along = |p: &[f64], axis: &[f64]| p.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
    centered.iter().map(|p| (along(p, &axes[0]), along(p, &axes[1]))).collect()
}

/// Clusters one sentence per line the way candidate pools are clustered:
/// mean word vectors, then k-means. Word vectors are seeded random.
pub fn cluster(sentences: &str, k: usize, seed: u64) -> Result<ClusterView, String> {
    let lines: Vec<&str> = sentences.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let tokens: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l)).collect();
    let mut words: Vec<&str> = tokens.iter().flatten().map(String::as_str).collect();
    words.sort_unstable();
    words.dedup();
    let table = WordVectorTable::random(words, 16, seed);
    let points: Vec<Vec<f64>> = tokens.iter().map(|t| sentence_embedding(t, &table).0).collect();
    let assignment = kmeans(&points, k, seed, 100).map_err(|e| e.to_string())?;
    let xy = project_2d(&points);
    Ok(ClusterView {
        points: lines.iter().zip(&assignment.assignment).zip(xy).map(|((s, &c), (x, y))| ClusterPoint { sentence: s.to_string(), cluster: c, x, y }).collect(),
        sizes: assignment.sizes(),
        objective_trace: assignment.objective_trace,
    })
}

/// Random language model whose next-token distribution depends on the
/// whole prefix. Token 2 is EOS; 0 and 1 are never emitted.
pub struct ToyLm {
    pub seed: u64,
    pub vocab: usize,
    pub sharpness: f64,
}

impl ToyLm {
    pub fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        let mut h = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ prefix.len() as u64;
        for &t in prefix {
            h = h.rotate_left(13) ^ (t as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> =
            (0..self.vocab).map(|t| if t < EOS { f64::NEG_INFINITY } else { rng.gen_range(-self.sharpness..self.sharpness) }).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        logits.iter().map(|l| l - z).collect()
    }
}

impl StepModel for ToyLm {
    type State = Option<Vec<usize>>;

    fn initial(&self) -> Self::State {
        None
    }

    fn step(&self, state: &Self::State, token: usize) -> (Vec<f64>, Self::State) {
        let prefix = match state {
            None => Vec::new(),
            Some(p) => [p.as_slice(), &[token]].concat(),
        };
        (self.log_probs(&prefix), Some(prefix))
    }
}

#[derive(Debug, Serialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub normalized: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn new(d: &Decoded) -> Self {
        Self { tokens: d.tokens.iter().map(|t| format!("w{t}")).collect(), log_prob: d.log_prob, normalized: d.normalized(), finished: !d.truncated }
    }
}

#[derive(Debug, Serialize)]
pub struct BeamView {
    pub beams: Vec<(usize, Hypothesis)>,
    pub greedy: Hypothesis,
}

/// Beam search at every width up to `max_width`, plus greedy decoding.
pub fn explore(seed: u64, vocab: usize, max_len: usize, max_width: usize) -> Result<BeamView, String> {
    if !(4..=12).contains(&vocab) || !(1..=8).contains(&max_len) || !(1..=64).contains(&max_width) {
        return Err("vocab must be 4..=12, length 1..=8 and width 1..=64".into());
    }
    let lm = ToyLm { seed, vocab, sharpness: 3.0 };
    Ok(BeamView {
        beams: (1..=max_width).map(|w| (w, Hypothesis::new(&beam_search(&lm, w, max_len)))).collect(),
        greedy: Hypothesis::new(&greedy_decode(&lm, max_len)),
    })
}

#[wasm_bindgen(js_name = scoreCaptions)]
pub fn score_captions(candidates: &str, references: &str) -> String {
    reply(score(candidates, references))
}

#[wasm_bindgen(js_name = clusterSentences)]
pub fn cluster_sentences(sentences: &str, k: usize, seed: u32) -> String {
    reply(cluster(sentences, k, seed as u64))
}

#[wasm_bindgen(js_name = exploreBeam)]
pub fn explore_beam(seed: u32, vocab: usize, max_len: usize, max_width: usize) -> String {
    reply(explore(seed as u64, vocab, max_len, max_width))
}
