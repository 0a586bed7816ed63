//! Two-phase candidate selection: pick a cluster, then a candidate within it.

use serde::{Deserialize, Serialize};

use crate::attention::EncoderRole;
use crate::candidates::{CandidateSet, ClusterAssignment};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::Model;
use crate::tensor::{argmax, dot, softmax, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Global candidate index.
    pub index: usize,
    /// Phase-2 probability of the selected candidate.
    pub probability: f64,
    pub cluster: Option<usize>,
    pub cluster_logits: Vec<f64>,
    /// Global indices scored in phase 2, aligned with `logits`.
    pub scored: Vec<usize>,
    pub logits: Vec<f64>,
}

impl Selection {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// Scores `keys` (one projected candidate per row) against `query`. With
/// clusters, each cluster is represented by the mean of its members' keys;
/// the best cluster is chosen first and only its members compete. Ties go to
/// the lowest index.
pub fn select_candidate(query: &[f64], keys: &Tensor, clusters: Option<&ClusterAssignment>) -> Result<Selection> {
    let n = keys.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("no candidates to select from".into()));
    }
    if keys.cols() != query.len() {
        return Err(Error::LengthMismatch(format!("query has {} entries, keys have {}", query.len(), keys.cols())));
    }
    let (cluster, cluster_logits, scored) = match clusters {
        None => (None, Vec::new(), (0..n).collect::<Vec<_>>()),
        Some(c) => {
            if c.assignment.len() != n {
                return Err(Error::LengthMismatch(format!("{} cluster assignments for {n} candidates", c.assignment.len())));
            }
            let mut reps = vec![vec![0.0; keys.cols()]; c.k];
            let mut counts = vec![0usize; c.k];
            for (i, &a) in c.assignment.iter().enumerate() {
                counts[a] += 1;
                for (r, v) in reps[a].iter_mut().zip(keys.row(i)) {
                    *r += v;
                }
            }
            for (rep, &cnt) in reps.iter_mut().zip(&counts) {
                if cnt > 0 {
                    rep.iter_mut().for_each(|r| *r /= cnt as f64);
                }
            }
            let logits: Vec<f64> = reps.iter().map(|r| dot(r, query)).collect();
            let chosen = argmax(&logits);
            let mut members = c.members(chosen);
            if members.is_empty() {
                log::warn!("selected cluster {chosen} is empty; scoring all candidates");
                members = (0..n).collect();
            }
            (Some(chosen), logits, members)
        }
    };
    let logits: Vec<f64> = scored.iter().map(|&i| dot(keys.row(i), query)).collect();
    let probs = softmax(&logits);
    let best = argmax(&logits);
    Ok(Selection { index: scored[best], probability: probs[best], cluster, cluster_logits, scored, logits })
}

/// A candidate set with every sentence encoded and projected for one model.
#[derive(Clone, Debug)]
pub struct CandidateBank {
    pub set: CandidateSet,
    /// `N_q × d_q` question encodings (also Q-BOT's r_q when a question is selected).
    pub question_embeddings: Tensor,
    /// `N_q × d_sel`
    pub question_keys: Tensor,
    /// `N_a × d_sel`
    pub answer_keys: Tensor,
    /// Whether two-phase selection uses the set's clusters.
    pub use_clusters: bool,
}

const ENCODE_CHUNK: usize = 256;

impl CandidateBank {
    pub fn encode(model: &Model, set: CandidateSet, use_clusters: bool) -> Result<Self> {
        let q_ids: Vec<Vec<usize>> = set.questions.iter().map(|q| model.vocab.encode(q)).collect();
        let a_ids: Vec<Vec<usize>> = set.answers.iter().map(|a| model.vocab.encode(a)).collect();
        let question_embeddings = encode_rows(model, EncoderRole::QuestionCandidate, &q_ids)?;
        let answer_embeddings = encode_rows(model, EncoderRole::AnswerCandidate, &a_ids)?;
        let project = |lin: &crate::nn::Linear, x: &Tensor| {
            let mut g = Graph::new(&model.store);
            let x = g.constant(x.clone());
            let y = lin.forward(&mut g, x);
            g.value(y).clone()
        };
        let question_keys = project(&model.qbot.select_key, &question_embeddings);
        let answer_keys = project(&model.abot.select_key, &answer_embeddings);
        Ok(Self { set, question_embeddings, question_keys, answer_keys, use_clusters })
    }

    pub fn question_clusters(&self) -> Option<&ClusterAssignment> {
        self.set.question_clusters.as_ref().filter(|_| self.use_clusters)
    }

    pub fn answer_clusters(&self) -> Option<&ClusterAssignment> {
        self.set.answer_clusters.as_ref().filter(|_| self.use_clusters)
    }
}

fn encode_rows(model: &Model, role: EncoderRole, seqs: &[Vec<usize>]) -> Result<Tensor> {
    let dim = model.encoders.for_role(role).out_dim();
    let mut data = Vec::with_capacity(seqs.len() * dim);
    for chunk in seqs.chunks(ENCODE_CHUNK) {
        let mut g = Graph::new(&model.store);
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        let e = model.encoders.encode_batch(&mut g, role, &refs)?;
        data.extend_from_slice(g.value(e).data());
    }
    Ok(Tensor::from_vec(seqs.len(), dim, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_is_certain() {
        let keys = Tensor::row_vector(vec![0.3, -1.0]);
        let s = select_candidate(&[1.0, 2.0], &keys, None).unwrap();
        assert_eq!(s.index, 0);
        assert!((s.probability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_candidates_tie_to_lowest_index() {
        let keys = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let s = select_candidate(&[0.5, 0.5], &keys, None).unwrap();
        assert_eq!(s.index, 0);
        assert_eq!(s.probabilities(), vec![0.5, 0.5]);
    }

    #[test]
    fn cluster_phase_restricts_candidates() {
        let keys = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]]);
        let clusters = ClusterAssignment { k: 2, centroids: vec![vec![0.0; 2]; 2], assignment: vec![0, 1, 1], objective_trace: vec![] };
        let s = select_candidate(&[0.0, 1.0], &keys, Some(&clusters)).unwrap();
        assert_eq!(s.cluster, Some(1));
        assert_eq!(s.scored, vec![1, 2]);
        assert_eq!(s.index, 2);
        // cluster means: [1,0] and [0,1.5]
        assert_eq!(s.cluster_logits, vec![0.0, 1.5]);
    }

    #[test]
    fn empty_cluster_falls_back_to_all() {
        let keys = Tensor::from_rows(&[vec![-1.0], vec![-2.0]]);
        let clusters = ClusterAssignment { k: 2, centroids: vec![vec![0.0]; 2], assignment: vec![0, 0], objective_trace: vec![] };
        // the empty cluster's zero representation outscores the negative one
        let s = select_candidate(&[1.0], &keys, Some(&clusters)).unwrap();
        assert_eq!(s.cluster, Some(1));
        assert_eq!(s.scored, vec![0, 1]);
        assert_eq!(s.index, 0);
    }
}
