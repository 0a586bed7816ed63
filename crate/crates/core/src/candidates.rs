//! Question/answer candidate pools for the discriminative setting, sentence
//! embeddings from word vectors, and k-means clustering of candidates.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogCase, QaPair, Tokens, ROUNDS};
use crate::error::{Error, Result};

pub const DEFAULT_WORD_DIM: usize = 50;
pub const DEFAULT_KMEANS_ITERATIONS: usize = 100;

/// Token to vector map. Out-of-vocabulary tokens fall back to the zero vector.
#[derive(Clone, Debug, Default)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::InvalidArgument(format!("word vector has {} entries, table dim is {}", vector.len(), self.dim)));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("word vector"));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Seeded uniform vectors in [-1, 1) for every token, for desk-scale runs.
    pub fn random<'a>(tokens: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Self::new(dim);
        let mut sorted: Vec<&str> = tokens.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        for t in sorted {
            let v = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            table.vectors.insert(t.to_owned(), v);
        }
        table
    }

    /// Parses "token v1 v2 ... vd" lines (GloVe text format).
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("word vectors line {}: {e}", lineno + 1)))?;
            let t = table.get_or_insert_with(|| Self::new(values.len()));
            t.insert(token, values).map_err(|e| Error::InvalidArgument(format!("word vectors line {}: {e}", lineno + 1)))?;
        }
        table.ok_or_else(|| Error::InvalidArgument("word vector file is empty".into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            out.push_str(k);
            for v in &self.vectors[k] {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of the in-table word vectors. Returns `(embedding, all_oov)`;
/// a sentence with no known token embeds to zero and raises the flag.
pub fn sentence_embedding(sentence: &[String], table: &WordVectorTable) -> (Vec<f64>, bool) {
    let mut sum = vec![0.0; table.dim()];
    let mut known = 0usize;
    for tok in sentence {
        if let Some(v) = table.get(tok) {
            known += 1;
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
    }
    // OOV tokens contribute the zero vector but still count toward the mean.
    let n = sentence.len().max(1) as f64;
    for s in &mut sum {
        *s /= n;
    }
    (sum, known == 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

impl ClusterAssignment {
    /// Every item in one cluster.
    pub fn single(n: usize, dim: usize) -> Self {
        Self { k: 1, centroids: vec![vec![0.0; dim]], assignment: vec![0; n], objective_trace: Vec::new() }
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment.iter().enumerate().filter(|(_, &c)| c == cluster).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means over mean-word-vector sentence embeddings.
pub fn cluster_candidates(sentences: &[Tokens], table: &WordVectorTable, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let mut all_oov = 0;
    let points: Vec<Vec<f64>> = sentences
        .iter()
        .map(|s| {
            let (e, oov) = sentence_embedding(s, table);
            all_oov += usize::from(oov);
            e
        })
        .collect();
    if all_oov > 0 {
        log::warn!("{all_oov} of {} sentences have no known word vectors", sentences.len());
    }
    kmeans(&points, k, seed, DEFAULT_KMEANS_ITERATIONS)
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<ClusterAssignment> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidArgument(format!("k-means needs at least k={k} points, got {}", points.len())));
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(points[pick].clone());
    }

    let mut assignment: Vec<usize> = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iterations.max(1) {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(points, &mut centroids, &mut next, k);
        let changed = next != assignment;
        assignment = next;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        trace.push(points.iter().zip(&assignment).map(|(p, &c)| sq_dist(p, &centroids[c])).sum());
        if !changed {
            break;
        }
    }
    Ok(ClusterAssignment { k, centroids, assignment, objective_trace: trace })
}

fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else { return };
        // farthest point from its own centroid, taken only from clusters that keep a member
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[c]);
            if d > 0.0 && best.map_or(true, |(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        // fewer than k distinct points: the cluster stays degenerate
        let Some((i, _)) = best else { return };
        centroids[empty] = points[i].clone();
        assignment[i] = empty;
    }
}

/// Per-round ground-truth indices into a candidate set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtSlot {
    pub question: Option<usize>,
    pub answer: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub questions: Vec<Tokens>,
    pub answers: Vec<Tokens>,
    /// Question index to the answer it was paired with in the data.
    pub pairing: Vec<Option<usize>>,
    /// Ground truth per round for the case the set was built for.
    pub gt: Vec<GtSlot>,
    pub question_clusters: Option<ClusterAssignment>,
    pub answer_clusters: Option<ClusterAssignment>,
    #[serde(skip)]
    question_index: HashMap<Tokens, usize>,
    #[serde(skip)]
    answer_index: HashMap<Tokens, usize>,
}

impl CandidateSet {
    fn add_question(&mut self, q: &Tokens) -> (usize, bool) {
        if let Some(&i) = self.question_index.get(q) {
            return (i, false);
        }
        let i = self.questions.len();
        self.questions.push(q.clone());
        self.pairing.push(None);
        self.question_index.insert(q.clone(), i);
        (i, true)
    }

    fn add_answer(&mut self, a: &Tokens) -> usize {
        if let Some(&i) = self.answer_index.get(a) {
            return i;
        }
        let i = self.answers.len();
        self.answers.push(a.clone());
        self.answer_index.insert(a.clone(), i);
        i
    }

    fn add_pair(&mut self, p: &QaPair) -> (usize, usize) {
        let (qi, _) = self.add_question(&p.question);
        let ai = self.add_answer(&p.answer);
        if self.pairing[qi].is_none() {
            self.pairing[qi] = Some(ai);
        }
        (qi, ai)
    }

    pub fn question_index(&self, q: &[String]) -> Option<usize> {
        self.question_index.get(q).copied()
    }

    pub fn answer_index(&self, a: &[String]) -> Option<usize> {
        self.answer_index.get(a).copied()
    }

    /// Ground-truth indices of `case`'s rounds in this set (by exact tokens).
    pub fn gt_for(&self, case: &DialogCase) -> Vec<GtSlot> {
        case.qa_pairs
            .iter()
            .map(|p| GtSlot { question: self.question_index(&p.question), answer: self.answer_index(&p.answer) })
            .collect()
    }

    pub fn paired_answer(&self, question: usize) -> Option<&Tokens> {
        self.pairing.get(question).copied().flatten().map(|a| &self.answers[a])
    }

    /// Rebuilds lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.question_index = self.questions.iter().enumerate().map(|(i, q)| (q.clone(), i)).collect();
        self.answer_index = self.answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
    }

    /// Clusters question and answer candidates by mean word vector.
    pub fn cluster(&mut self, table: &WordVectorTable, k: usize, seed: u64) -> Result<()> {
        let kq = k.min(self.questions.len());
        let ka = k.min(self.answers.len());
        self.question_clusters = Some(cluster_candidates(&self.questions, table, kq, seed)?);
        self.answer_clusters = Some(cluster_candidates(&self.answers, table, ka, seed.wrapping_add(1))?);
        Ok(())
    }

    /// Applies permutations (`new position -> old index`) to both pools.
    fn permute(&mut self, q_order: &[usize], a_order: &[usize]) {
        let mut q_new = vec![0; q_order.len()];
        for (new, &old) in q_order.iter().enumerate() {
            q_new[old] = new;
        }
        let mut a_new = vec![0; a_order.len()];
        for (new, &old) in a_order.iter().enumerate() {
            a_new[old] = new;
        }
        self.questions = q_order.iter().map(|&o| self.questions[o].clone()).collect();
        self.answers = a_order.iter().map(|&o| self.answers[o].clone()).collect();
        self.pairing = q_order.iter().map(|&o| self.pairing[o].map(|a| a_new[a])).collect();
        for slot in &mut self.gt {
            slot.question = slot.question.map(|q| q_new[q]);
            slot.answer = slot.answer.map(|a| a_new[a]);
        }
        self.reindex();
    }
}

/// Training pool for one case: ground truth for rounds `start_round..=10`
/// plus pairs sampled from `pool` (other dialogs' pairs) until both lists
/// hold `n_candidates` distinct sentences.
pub fn build_training_candidates(
    case: &DialogCase,
    pool: &[QaPair],
    seed: u64,
    start_round: usize,
    n_candidates: usize,
) -> Result<CandidateSet> {
    if !(1..=ROUNDS).contains(&start_round) {
        return Err(Error::InvalidArgument(format!("start_round {start_round} outside 1..=10")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = CandidateSet { gt: vec![GtSlot::default(); ROUNDS], ..Default::default() };
    for (r, pair) in case.qa_pairs.iter().enumerate().skip(start_round - 1) {
        let (qi, ai) = set.add_pair(pair);
        set.gt[r] = GtSlot { question: Some(qi), answer: Some(ai) };
    }
    if set.questions.len().max(set.answers.len()) > n_candidates {
        return Err(Error::InvalidArgument(format!("{n_candidates} candidates cannot hold the case's own ground truth")));
    }

    let own: std::collections::HashSet<&QaPair> = case.qa_pairs.iter().collect();
    let mut order: Vec<&QaPair> = pool.iter().filter(|p| !own.contains(p)).collect();
    order.shuffle(&mut rng);
    let mut leftover_answers = Vec::new();
    for p in order {
        if set.questions.len() >= n_candidates {
            leftover_answers.push(p);
            continue;
        }
        if set.question_index(&p.question).is_some() {
            leftover_answers.push(p);
            continue;
        }
        set.add_pair(p);
    }
    for p in leftover_answers {
        if set.answers.len() >= n_candidates {
            break;
        }
        set.add_answer(&p.answer);
    }
    if set.questions.len() < n_candidates || set.answers.len() < n_candidates {
        let available = set.questions.len().min(set.answers.len());
        return Err(Error::PoolTooSmall { required: n_candidates, available });
    }
    set.questions.truncate(n_candidates);
    set.pairing.truncate(n_candidates);
    set.answers.truncate(n_candidates);
    for p in &mut set.pairing {
        if p.is_some_and(|a| a >= n_candidates) {
            *p = None;
        }
    }

    let mut q_order: Vec<usize> = (0..set.questions.len()).collect();
    let mut a_order: Vec<usize> = (0..set.answers.len()).collect();
    q_order.shuffle(&mut rng);
    a_order.shuffle(&mut rng);
    set.permute(&q_order, &a_order);
    Ok(set)
}

/// Every question and answer of the given dialogs, de-duplicated by exact
/// tokens; a question keeps the answer of its first occurrence.
pub fn build_inference_candidates(cases: &[DialogCase]) -> CandidateSet {
    let mut set = CandidateSet::default();
    for case in cases {
        for p in &case.qa_pairs {
            set.add_pair(p);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthesize_toy_corpus;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn embedding_is_mean_of_vectors() {
        let mut t = WordVectorTable::new(2);
        t.insert("a", vec![1.0, 2.0]).unwrap();
        t.insert("b", vec![-1.0, -2.0]).unwrap();
        t.insert("c", vec![3.0, 0.0]).unwrap();
        assert_eq!(sentence_embedding(&toks("a"), &t).0, vec![1.0, 2.0]);
        assert_eq!(sentence_embedding(&toks("a b"), &t).0, vec![0.0, 0.0]);
        // (1 - 1 + 3) / 3, (2 - 2 + 0) / 3
        let (e, oov) = sentence_embedding(&toks("a b c"), &t);
        assert!((e[0] - 1.0).abs() < 1e-12 && e[1].abs() < 1e-12 && !oov);
        let (e, oov) = sentence_embedding(&toks("zzz"), &t);
        assert_eq!(e, vec![0.0, 0.0]);
        assert!(oov);
    }

    #[test]
    fn glove_text_round_trip() {
        let t = WordVectorTable::parse("the 0.5 -1\ncat 2 3\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get("cat"), Some(&[2.0, 3.0][..]));
        let again = WordVectorTable::parse(&t.to_text()).unwrap();
        assert_eq!(again.get("the"), t.get("the"));
        assert!(WordVectorTable::parse("a 1 2\nb 1\n").is_err());
    }

    #[test]
    fn identical_points_single_cluster() {
        let pts = vec![vec![1.0, 1.0]; 10];
        let c = kmeans(&pts, 1, 0, 100).unwrap();
        assert!(c.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn separable_groups_recovered() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(vec![0.0 + 0.01 * i as f64, 0.0]);
        }
        for i in 0..5 {
            pts.push(vec![10.0, 10.0 + 0.01 * i as f64]);
        }
        let c = kmeans(&pts, 2, 11, 100).unwrap();
        let first = c.assignment[0];
        assert!(c.assignment[..5].iter().all(|&a| a == first));
        assert!(c.assignment[5..].iter().all(|&a| a != first));
        // brute-force nearest centroid check
        for (p, &a) in pts.iter().zip(&c.assignment) {
            let d: Vec<f64> = c.centroids.iter().map(|m| sq_dist(p, m)).collect();
            assert!(d[a] <= d[1 - a]);
        }
        assert_eq!(c, kmeans(&pts, 2, 11, 100).unwrap());
    }

    #[test]
    fn too_few_points_is_error() {
        assert!(kmeans(&[vec![0.0]], 2, 0, 10).is_err());
    }

    fn pool_of(cases: &[DialogCase]) -> Vec<QaPair> {
        cases.iter().flat_map(|c| c.qa_pairs.clone()).collect()
    }

    #[test]
    fn training_candidates_include_ground_truth() {
        let (cases, _) = synthesize_toy_corpus(3, 12, 64);
        let pool = pool_of(&cases);
        let set = build_training_candidates(&cases[0], &pool, 5, 1, 60).unwrap();
        assert_eq!(set.questions.len(), 60);
        assert_eq!(set.answers.len(), 60);
        for (r, p) in cases[0].qa_pairs.iter().enumerate() {
            let qi = set.gt[r].question.unwrap();
            assert_eq!(set.questions[qi], p.question);
            assert_eq!(set.answers[set.gt[r].answer.unwrap()], p.answer);
        }
        for q in 0..set.questions.len() {
            let a = set.pairing[q].expect("every question paired");
            assert!(a < set.answers.len());
        }

        let later = build_training_candidates(&cases[0], &pool, 5, 6, 60).unwrap();
        assert_eq!(later.gt.iter().filter(|g| g.question.is_some()).count(), 5);
        assert!(later.gt[..5].iter().all(|g| g.question.is_none()));
    }

    #[test]
    fn training_candidates_are_deterministic() {
        let (cases, _) = synthesize_toy_corpus(3, 12, 64);
        let pool = pool_of(&cases);
        let a = build_training_candidates(&cases[1], &pool, 9, 1, 50).unwrap();
        let b = build_training_candidates(&cases[1], &pool, 9, 1, 50).unwrap();
        assert_eq!(a.questions, b.questions);
        assert_eq!(a.pairing, b.pairing);
    }

    #[test]
    fn small_pool_reports_required_and_available() {
        let (cases, _) = synthesize_toy_corpus(3, 2, 64);
        let err = build_training_candidates(&cases[0], &pool_of(&cases), 1, 1, 100).unwrap_err();
        assert!(matches!(err, Error::PoolTooSmall { required: 100, .. }), "{err}");
    }

    #[test]
    fn inference_candidates_dedup() {
        let (mut cases, _) = synthesize_toy_corpus(4, 2, 64);
        let set = build_inference_candidates(&cases);
        let distinct: std::collections::HashSet<_> = cases.iter().flat_map(|c| c.qa_pairs.iter().map(|p| &p.question)).collect();
        assert_eq!(set.questions.len(), distinct.len());
        cases[1].qa_pairs[0].question = cases[0].qa_pairs[0].question.clone();
        let set2 = build_inference_candidates(&cases);
        let q0 = set2.question_index(&cases[0].qa_pairs[0].question).unwrap();
        assert_eq!(set2.questions.iter().filter(|q| **q == set2.questions[q0]).count(), 1);
        assert_eq!(set2.paired_answer(q0), Some(&cases[0].qa_pairs[0].answer));
    }
}
