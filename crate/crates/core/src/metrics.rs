//! Corpus-level caption metrics and selection-ratio tracking.
//!
//! Scores are kept on their natural scale (CIDEr raw, the rest in `[0, 1]`).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dialog::Transcript;
use crate::error::{Error, Result};

pub use crate::training::perplexity;

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub n_cases: usize,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

impl MetricReport {
    /// Every score rounded to four decimals, with the unrounded values under `exact`.
    pub fn to_json(&self) -> serde_json::Value {
        let fields = [
            ("bleu1", self.bleu1),
            ("bleu2", self.bleu2),
            ("bleu3", self.bleu3),
            ("bleu4", self.bleu4),
            ("meteor", self.meteor),
            ("rouge_l", self.rouge_l),
            ("cider", self.cider),
        ];
        let mut out = serde_json::Map::new();
        let mut exact = serde_json::Map::new();
        for (k, v) in fields {
            out.insert(k.into(), round4(v).into());
            exact.insert(k.into(), v.into());
        }
        out.insert("n_cases".into(), self.n_cases.into());
        out.insert("exact".into(), exact.into());
        out.into()
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let mut exact = value.get("exact").cloned().unwrap_or_default();
        if let Some(map) = exact.as_object_mut() {
            map.insert("n_cases".into(), value.get("n_cases").cloned().unwrap_or_default());
        }
        serde_json::from_value(exact).map_err(|e| Error::json("<metric report>", e))
    }
}

/// Counts of every n-gram of order `n`.
pub fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

fn check_shapes(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch(format!("{} candidates for {} reference sets", candidates.len(), references.len())));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("every candidate needs at least one reference".into()));
    }
    Ok(())
}

/// Corpus BLEU-1..4 with clipped counts and the closest-reference brevity penalty.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<[f64; 4]> {
    check_shapes(candidates, references)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (c, refs) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(c.len()), l))
            .expect("non-empty references");
        for n in 1..=4 {
            let counts = ngram_counts(c, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (g, &k) in &counts {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                matched[n - 1] += k.min(max_ref);
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    for n in 0..4 {
        if matched[n] == 0 || total[n] == 0 {
            // every higher order is zero as well
            break;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
        out[n] = bp * (log_sum / (n + 1) as f64).exp();
    }
    Ok(out)
}

/// A maximal exact-match alignment with the fewest chunks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Exact-match unigram alignment between `candidate` and `reference`:
/// maximizes matches, then minimizes the number of contiguous chunks.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    // A maximum matching pairs min(count_c, count_r) tokens of each word type.
    let mut ref_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in reference.iter().enumerate() {
        ref_positions.entry(t.as_str()).or_default().push(j);
    }
    let mut quota: HashMap<&str, usize> = HashMap::new();
    {
        let mut cand_counts: HashMap<&str, usize> = HashMap::new();
        for t in candidate {
            *cand_counts.entry(t.as_str()).or_insert(0) += 1;
        }
        for (w, c) in cand_counts {
            let r = ref_positions.get(w).map_or(0, Vec::len);
            if r > 0 {
                quota.insert(w, c.min(r));
            }
        }
    }
    let target: usize = quota.values().sum();
    if target == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }
    let mut search = AlignSearch {
        candidate,
        ref_positions: &ref_positions,
        used: vec![false; reference.len()],
        best: usize::MAX,
    };
    let remaining: usize = target;
    let mut quota_left = quota;
    search.go(0, remaining, &mut quota_left, None, 0);
    Alignment { matches: target, chunks: search.best }
}

struct AlignSearch<'a> {
    candidate: &'a [String],
    ref_positions: &'a HashMap<&'a str, Vec<usize>>,
    used: Vec<bool>,
    best: usize,
}

impl<'a> AlignSearch<'a> {
    /// Depth-first over candidate positions. `prev` is the reference
    /// position matched by candidate position `i - 1`, if any.
    fn go(&mut self, i: usize, remaining: usize, quota: &mut HashMap<&'a str, usize>, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best {
            return;
        }
        if remaining == 0 {
            self.best = chunks;
            return;
        }
        if i >= self.candidate.len() || self.candidate.len() - i < remaining {
            return;
        }
        let word = self.candidate[i].as_str();
        let left = quota.get(word).copied().unwrap_or(0);
        // Tokens of this word type still available after this position.
        let later_same = self.candidate[i + 1..].iter().filter(|t| t.as_str() == word).count();
        if left > 0 {
            let positions = self.ref_positions.get(word).cloned().unwrap_or_default();
            // Try the continuing position first so good bounds come early.
            let mut order: Vec<usize> = positions.into_iter().filter(|&j| !self.used[j]).collect();
            order.sort_by_key(|&j| (Some(j) != prev.map(|p| p + 1), j));
            for j in order {
                let extends = prev.is_some_and(|p| p + 1 == j);
                self.used[j] = true;
                *quota.get_mut(word).expect("quota") -= 1;
                self.go(i + 1, remaining - 1, quota, Some(j), chunks + usize::from(!extends));
                *quota.get_mut(word).expect("quota") += 1;
                self.used[j] = false;
            }
        }
        if later_same >= left {
            self.go(i + 1, remaining, quota, None, chunks);
        }
    }
}

/// Exact-match METEOR of one candidate against one reference.
pub fn meteor_segment(candidate: &[String], reference: &[String]) -> f64 {
    let a = align(candidate, reference);
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (a.chunks as f64 / m).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}

/// Mean over candidates of the best segment score among their references.
pub fn meteor(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_shapes(candidates, references)?;
    Ok(mean(candidates.iter().zip(references).map(|(c, refs)| {
        refs.iter().map(|r| meteor_segment(c, r)).fold(0.0, f64::max)
    })))
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { row[j + 1].max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F-measure with the best precision and recall over references.
pub fn rouge_l_segment(candidate: &[String], references: &[Vec<String>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut p_max: f64 = 0.0;
    let mut r_max: f64 = 0.0;
    for r in references {
        let l = lcs_len(candidate, r) as f64;
        p_max = p_max.max(l / candidate.len() as f64);
        if !r.is_empty() {
            r_max = r_max.max(l / r.len() as f64);
        }
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max)
}

pub fn rouge_l(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_shapes(candidates, references)?;
    Ok(mean(candidates.iter().zip(references).map(|(c, refs)| rouge_l_segment(c, refs))))
}

type TfIdf<'a> = Vec<HashMap<&'a [String], f64>>;

/// CIDEr: mean over references of the tf-idf cosine per n-gram order
/// (1..=4, equally weighted), damped by a Gaussian on the length difference
/// and scaled by ten. Document frequencies come from the reference sets.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    check_shapes(candidates, references)?;
    let n_docs = references.len();
    if n_docs == 0 {
        return Ok(0.0);
    }
    let mut df: Vec<HashMap<&[String], usize>> = vec![HashMap::new(); 4];
    for refs in references {
        for n in 1..=4 {
            let mut seen: std::collections::HashSet<&[String]> = std::collections::HashSet::new();
            for r in refs {
                seen.extend(ngram_counts(r, n).into_keys());
            }
            for g in seen {
                *df[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }
    let log_n = (n_docs as f64).ln();
    let mut total = 0.0;
    for (c, refs) in candidates.iter().zip(references) {
        let (cv, cn) = tfidf(c, &df, log_n);
        let mut score = 0.0;
        for r in refs {
            let (rv, rn) = tfidf(r, &df, log_n);
            let delta = c.len() as f64 - r.len() as f64;
            let damp = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..4 {
                if cn[n] == 0.0 || rn[n] == 0.0 {
                    continue;
                }
                let dot: f64 = cv[n].iter().filter_map(|(g, w)| rv[n].get(g).map(|x| w * x)).sum();
                score += damp * dot / (cn[n] * rn[n]) / 4.0;
            }
        }
        total += CIDER_SCALE * score / refs.len() as f64;
    }
    Ok(total / n_docs as f64)
}

fn tfidf<'t>(tokens: &'t [String], df: &[HashMap<&[String], usize>], log_n: f64) -> (TfIdf<'t>, Vec<f64>) {
    let mut vecs = Vec::with_capacity(4);
    let mut norms = Vec::with_capacity(4);
    for n in 1..=4 {
        let counts = ngram_counts(tokens, n);
        let total: usize = counts.values().sum();
        let mut v = HashMap::new();
        let mut norm = 0.0;
        for (g, c) in counts {
            let d = df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64;
            let w = (c as f64 / total as f64) * (log_n - d.ln());
            norm += w * w;
            v.insert(g, w);
        }
        vecs.push(v);
        norms.push(norm.sqrt());
    }
    (vecs, norms)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn score_corpus(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<MetricReport> {
    let b = bleu(candidates, references)?;
    Ok(MetricReport {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        meteor: meteor(candidates, references)?,
        rouge_l: rouge_l(candidates, references)?,
        cider: cider(candidates, references)?,
        n_cases: candidates.len(),
    })
}

/// Fractions of agent-selected rounds that picked the ground-truth question
/// and answer. `None` when no round of that kind was selected.
pub fn selection_ratio(transcripts: &[Transcript]) -> (Option<f64>, Option<f64>) {
    let mut q = (0usize, 0usize);
    let mut a = (0usize, 0usize);
    for t in transcripts {
        for r in &t.rounds {
            if let Some(s) = &r.question_selection {
                q.1 += 1;
                q.0 += usize::from(s.is_gt() == Some(true));
            }
            if let Some(s) = &r.answer_selection {
                a.1 += 1;
                a.0 += usize::from(s.is_gt() == Some(true));
            }
        }
    }
    let ratio = |(hit, n): (usize, usize)| (n > 0).then(|| hit as f64 / n as f64);
    (ratio(q), ratio(a))
}
