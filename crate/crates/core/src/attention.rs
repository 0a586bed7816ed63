//! Token-sequence encoders and the two attention mechanisms shared by both
//! agents: cross-modal (MM) attention and intra-textual (IM) attention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Linear, SequenceEncoder};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderRole {
    HistoryPair,
    InputDescription,
    QuestionCandidate,
    AnswerCandidate,
}

/// One encoder per role: history pairs, input description, question and
/// answer candidates. The history encoder is shared by both agents.
#[derive(Clone, Debug)]
pub struct TextEncoders {
    pub history: SequenceEncoder,
    pub caption: SequenceEncoder,
    pub question: SequenceEncoder,
    pub answer: SequenceEncoder,
}

impl TextEncoders {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        vocab: usize,
        word_dim: usize,
        history_dim: usize,
        caption_dim: usize,
        question_dim: usize,
        answer_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            history: SequenceEncoder::new(store, "enc.history", vocab, word_dim, history_dim, rng),
            caption: SequenceEncoder::new(store, "enc.caption", vocab, word_dim, caption_dim, rng),
            question: SequenceEncoder::new(store, "enc.question", vocab, word_dim, question_dim, rng),
            answer: SequenceEncoder::new(store, "enc.answer", vocab, word_dim, answer_dim, rng),
        }
    }

    pub fn for_role(&self, role: EncoderRole) -> &SequenceEncoder {
        match role {
            EncoderRole::HistoryPair => &self.history,
            EncoderRole::InputDescription => &self.caption,
            EncoderRole::QuestionCandidate => &self.question,
            EncoderRole::AnswerCandidate => &self.answer,
        }
    }

    /// Final hidden state, `1 × d`.
    pub fn encode(&self, g: &mut Graph, role: EncoderRole, tokens: &[usize]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(self.for_role(role).encode_batch(g, &[tokens]).last)
    }

    /// One row per sequence, `n × d`.
    pub fn encode_batch(&self, g: &mut Graph, role: EncoderRole, seqs: &[&[usize]]) -> Result<NodeId> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptySequence);
        }
        Ok(self.for_role(role).encode_batch(g, seqs).last)
    }

    /// Pair-level history embeddings (`n × d_H`), or `None` for an empty history.
    pub fn encode_history(&self, g: &mut Graph, pairs: &[Vec<usize>]) -> Result<Option<NodeId>> {
        if pairs.is_empty() {
            return Ok(None);
        }
        let seqs: Vec<&[usize]> = pairs.iter().map(Vec::as_slice).collect();
        self.encode_batch(g, EncoderRole::HistoryPair, &seqs).map(Some)
    }
}

/// Parameters of one modality in the MM attention.
#[derive(Clone, Debug)]
pub struct MmModality {
    pub utility: Linear,
    /// `att × 1`
    pub self_weight: ParamId,
    /// `1 × att`
    pub pair_gate: ParamId,
    pub output: Linear,
}

/// A modality's elements with their utilities precomputed.
#[derive(Clone, Copy, Debug)]
pub struct PreparedModality {
    pub elements: NodeId,
    pub utility: NodeId,
    pub mean_utility: NodeId,
    pub self_scores: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `1 × target`
    pub output: NodeId,
    /// `1 × n` attention weights.
    pub weights: NodeId,
}

/// Factor-style cross-modal attention. For modality m with elements E_m and
/// utilities U_m = E_m·W_m, the score of element j is
/// `tanh(U_mj)·w_m + (U_mj ⊙ g_m)·Σ_{m'≠m} mean(U_m')`.
#[derive(Clone, Debug)]
pub struct MmAttention {
    pub modalities: Vec<MmModality>,
    pub att_dim: usize,
}

impl MmAttention {
    /// `specs` holds `(name, element dim, target dim)` per modality.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, specs: &[(&str, usize, usize)], att_dim: usize, rng: &mut R) -> Self {
        let modalities = specs
            .iter()
            .map(|&(m, in_dim, target)| {
                let p = format!("{name}.{m}");
                MmModality {
                    utility: Linear::new(store, &format!("{p}.utility"), in_dim, att_dim, false, rng),
                    self_weight: store.add_uniform(format!("{p}.self"), att_dim, 1, att_dim, rng),
                    pair_gate: store.add_uniform(format!("{p}.gate"), 1, att_dim, att_dim, rng),
                    output: Linear::new(store, &format!("{p}.out"), in_dim, target, true, rng),
                }
            })
            .collect();
        Self { modalities, att_dim }
    }

    pub fn prepare(&self, g: &mut Graph, modality: usize, elements: NodeId) -> Result<PreparedModality> {
        let value = g.value(elements);
        if !value.is_finite() {
            return Err(Error::NonFiniteInput("mm_attention"));
        }
        if value.rows() == 0 {
            return Err(Error::InvalidArgument("mm_attention modality without elements".into()));
        }
        let m = &self.modalities[modality];
        let utility = m.utility.forward(g, elements);
        let mean_utility = g.mean_rows(utility);
        let t = g.tanh(utility);
        let w = g.param(m.self_weight);
        let self_scores = g.matmul(t, w);
        Ok(PreparedModality { elements, utility, mean_utility, self_scores })
    }

    /// Attends every present modality; absent ones (`None`) neither receive
    /// an output nor take part in the pairwise terms.
    pub fn attend(&self, g: &mut Graph, inputs: &[Option<PreparedModality>]) -> Vec<Option<Attended>> {
        assert_eq!(inputs.len(), self.modalities.len());
        let present: Vec<NodeId> = inputs.iter().flatten().map(|p| p.mean_utility).collect();
        let total = if present.len() > 1 { Some(g.add_all(&present)) } else { None };
        inputs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let p = (*p)?;
                let m = &self.modalities[i];
                let scores = match total {
                    Some(total) => {
                        let others = g.sub(total, p.mean_utility);
                        let gate = g.param(m.pair_gate);
                        let gated = g.mul(p.utility, gate);
                        let pair = g.matmul_t(gated, others);
                        g.add(p.self_scores, pair)
                    }
                    None => p.self_scores,
                };
                let row = g.transpose(scores);
                let weights = g.softmax(row);
                let pooled = g.matmul(weights, p.elements);
                let output = m.output.forward(g, pooled);
                Some(Attended { output, weights })
            })
            .collect()
    }

    /// Convenience: prepare and attend in one call.
    pub fn forward(&self, g: &mut Graph, elements: &[Option<NodeId>]) -> Result<Vec<Option<Attended>>> {
        let prepared = elements
            .iter()
            .enumerate()
            .map(|(i, e)| e.map(|e| self.prepare(g, i, e)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(self.attend(g, &prepared))
    }

    /// Uniform pooling through the modality's output projection, used when
    /// attention is switched off.
    pub fn pool(&self, g: &mut Graph, modality: usize, elements: NodeId) -> Attended {
        let n = g.value(elements).rows();
        let weights = g.constant(Tensor::filled(1, n, 1.0 / n as f64));
        let pooled = g.matmul(weights, elements);
        let output = self.modalities[modality].output.forward(g, pooled);
        Attended { output, weights }
    }
}

/// Intra-textual attention: history pairs scored by a dot product with the
/// current question in a shared projected space.
#[derive(Clone, Debug)]
pub struct ImAttention {
    pub proj_question: Linear,
    pub proj_history: Linear,
    pub output: Linear,
}

impl ImAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, question_dim: usize, history_dim: usize, att_dim: usize, rng: &mut R) -> Self {
        Self {
            proj_question: Linear::new(store, &format!("{name}.q"), question_dim, att_dim, true, rng),
            proj_history: Linear::new(store, &format!("{name}.h"), history_dim, att_dim, true, rng),
            output: Linear::new(store, &format!("{name}.out"), history_dim + question_dim, history_dim, true, rng),
        }
    }

    /// `history` is `n × d_H` or `None`; `null` stands in for an empty history.
    pub fn forward(&self, g: &mut Graph, history: Option<NodeId>, null: NodeId, question: NodeId) -> Result<Attended> {
        if !g.value(question).is_finite() || history.is_some_and(|h| !g.value(h).is_finite()) {
            return Err(Error::NonFiniteInput("im_attention"));
        }
        let (summary, weights) = match history {
            Some(h) => {
                let q = self.proj_question.forward(g, question);
                let k = self.proj_history.forward(g, h);
                let scores = g.matmul_t(q, k);
                let weights = g.softmax(scores);
                (g.matmul(weights, h), weights)
            }
            None => (null, g.constant(Tensor::filled(1, 1, 1.0))),
        };
        let joined = g.concat_cols(&[summary, question]);
        Ok(Attended { output: self.output.forward(g, joined), weights })
    }
}
