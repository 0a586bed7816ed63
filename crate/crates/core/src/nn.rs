//! Layers built on the autodiff graph: linear maps, LSTM cells, and the
//! "linear + single-layer LSTM" token-sequence encoder.

use rand::Rng;

use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), in_dim, out_dim, in_dim, rng);
        let bias = bias.then(|| store.add_uniform(format!("{name}.bias"), 1, out_dim, in_dim, rng));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => y,
        }
    }
}

/// Hidden and cell state of an LSTM, each `rows × hidden`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub hidden: NodeId,
    pub cell: NodeId,
}

#[derive(Clone, Debug)]
pub struct Lstm {
    /// `(in + hidden) × 4·hidden`, gate order input, forget, output, candidate.
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), in_dim + hidden, 4 * hidden, rng);
        let mut b = Tensor::zeros(1, 4 * hidden);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        let bias = store.add(format!("{name}.bias"), b);
        Self { weight, bias, in_dim, hidden }
    }

    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> LstmState {
        let hidden = g.constant(Tensor::zeros(rows, self.hidden));
        let cell = g.constant(Tensor::zeros(rows, self.hidden));
        LstmState { hidden, cell }
    }

    pub fn step(&self, g: &mut Graph, x: NodeId, state: LstmState) -> LstmState {
        let h = self.hidden;
        let xh = g.concat_cols(&[x, state.hidden]);
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.matmul(xh, w);
        let z = g.add(z, b);
        let zi = g.slice_cols(z, 0, h);
        let zf = g.slice_cols(z, h, h);
        let zo = g.slice_cols(z, 2 * h, h);
        let zu = g.slice_cols(z, 3 * h, h);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let o = g.sigmoid(zo);
        let u = g.tanh(zu);
        let fc = g.mul(f, state.cell);
        let iu = g.mul(i, u);
        let cell = g.add(fc, iu);
        let tc = g.tanh(cell);
        let hidden = g.mul(o, tc);
        LstmState { hidden, cell }
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        // Equivalent to a bias-free linear layer applied to one-hot inputs.
        let table = store.add_uniform(format!("{name}.table"), vocab, dim, vocab, rng);
        Self { table, dim }
    }

    pub fn lookup(&self, g: &mut Graph, tokens: &[usize]) -> NodeId {
        let t = g.param(self.table);
        g.gather(t, tokens)
    }
}

/// Output of encoding a batch of token sequences.
pub struct EncodedBatch {
    /// `n × hidden`, the state after each sequence's last real token.
    pub last: NodeId,
    /// Per-step hidden states (`n × hidden` each) for the padded batch.
    pub steps: Vec<NodeId>,
}

/// Linear word projection followed by a single-layer LSTM; a sequence is
/// represented by the hidden state after its last token.
#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    pub embedding: Embedding,
    pub lstm: Lstm,
}

impl SequenceEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, word_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let embedding = Embedding::new(store, &format!("{name}.embed"), vocab, word_dim, rng);
        let lstm = Lstm::new(store, &format!("{name}.lstm"), word_dim, hidden, rng);
        Self { embedding, lstm }
    }

    pub fn out_dim(&self) -> usize {
        self.lstm.hidden
    }

    /// Encodes sequences zero-padded to the batch's longest length. Padded
    /// steps carry the previous state through unchanged, so each sequence's
    /// encoding is independent of the rest of the batch.
    pub fn encode_batch(&self, g: &mut Graph, seqs: &[&[usize]]) -> EncodedBatch {
        assert!(!seqs.is_empty());
        assert!(seqs.iter().all(|s| !s.is_empty()), "empty token sequence");
        let n = seqs.len();
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut state = self.lstm.zero_state(g, n);
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let tokens: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
            let x = self.embedding.lookup(g, &tokens);
            let next = self.lstm.step(g, x, state);
            if seqs.iter().all(|s| s.len() > t) {
                state = next;
            } else {
                let mask: Vec<f64> = seqs.iter().map(|s| if s.len() > t { 1.0 } else { 0.0 }).collect();
                state = LstmState {
                    hidden: masked_select(g, &mask, next.hidden, state.hidden, self.lstm.hidden),
                    cell: masked_select(g, &mask, next.cell, state.cell, self.lstm.hidden),
                };
            }
            steps.push(state.hidden);
        }
        EncodedBatch { last: state.hidden, steps }
    }

    /// Encodes one sequence, returning `(1 × hidden final state, T × hidden all states)`.
    pub fn encode_one(&self, g: &mut Graph, tokens: &[usize]) -> (NodeId, NodeId) {
        let enc = self.encode_batch(g, &[tokens]);
        let all = g.stack_rows(&enc.steps);
        (enc.last, all)
    }
}

/// `mask ⊙ new + (1 − mask) ⊙ old`, with a per-row 0/1 mask.
fn masked_select(g: &mut Graph, mask: &[f64], new: NodeId, old: NodeId, cols: usize) -> NodeId {
    let rows = mask.len();
    let keep = Tensor::from_vec(rows, cols, mask.iter().flat_map(|&m| std::iter::repeat(m).take(cols)).collect());
    let hold = keep.map(|m| 1.0 - m);
    let keep = g.constant(keep);
    let hold = g.constant(hold);
    let a = g.mul(new, keep);
    let b = g.mul(old, hold);
    g.add(a, b)
}
