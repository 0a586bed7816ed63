//! Recurrent token decoders with teacher forcing, greedy decoding and beam
//! search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EOS, SOS};
use crate::graph::{Graph, NodeId};
use crate::nn::{Embedding, Linear, Lstm, LstmState};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// A decoded token sequence (SOS/EOS excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, EOS included when present.
    pub log_prob: f64,
    /// True when no EOS was produced within the length budget.
    pub truncated: bool,
}

impl Decoded {
    /// Log-probability divided by the number of scored tokens.
    pub fn normalized(&self) -> f64 {
        let n = self.tokens.len() + usize::from(!self.truncated);
        self.log_prob / n.max(1) as f64
    }
}

/// Anything that yields next-token log-probabilities from a cloneable state.
pub trait StepModel {
    type State: Clone;
    fn initial(&self) -> Self::State;
    fn step(&self, state: &Self::State, token: usize) -> (Vec<f64>, Self::State);
}

/// Argmax decoding from SOS; stops at EOS or after `max_len` steps.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Decoded {
    let mut state = model.initial();
    let mut token = SOS;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (lp, next) = model.step(&state, token);
        let best = crate::tensor::argmax(&lp);
        log_prob += lp[best];
        if best == EOS {
            return Decoded { tokens, log_prob, truncated: false };
        }
        tokens.push(best);
        token = best;
        state = next;
    }
    Decoded { tokens, log_prob, truncated: true }
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
}

/// Beam search over at most `max_len` steps. At every step the top `width`
/// expansions (by log-probability, ties to the earlier hypothesis and lower
/// token) survive; those ending in EOS are finished. The result is the
/// finished hypothesis with the best length-normalized log-probability, or
/// the best truncated one when nothing finished.
pub fn beam_search<M: StepModel>(model: &M, width: usize, max_len: usize) -> Decoded {
    let width = width.max(1);
    let mut live = vec![Hyp { tokens: Vec::new(), log_prob: 0.0, state: model.initial() }];
    let mut finished: Vec<Decoded> = Vec::new();
    for _ in 0..max_len {
        let mut expansions: Vec<(f64, usize, usize)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let last = hyp.tokens.last().copied().unwrap_or(SOS);
            let (lp, next) = model.step(&hyp.state, last);
            expansions.extend(lp.iter().enumerate().map(|(tok, &l)| (hyp.log_prob + l, h, tok)));
            states.push(next);
        }
        expansions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        expansions.truncate(width);
        let mut next_live = Vec::new();
        for (score, h, tok) in expansions {
            let mut tokens = live[h].tokens.clone();
            if tok == EOS {
                finished.push(Decoded { tokens, log_prob: score, truncated: false });
            } else {
                tokens.push(tok);
                next_live.push(Hyp { tokens, log_prob: score, state: states[h].clone() });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    let pool: Vec<Decoded> = if finished.is_empty() {
        live.into_iter().map(|h| Decoded { tokens: h.tokens, log_prob: h.log_prob, truncated: true }).collect()
    } else {
        finished
    };
    let mut best: Option<Decoded> = None;
    for d in pool {
        if best.as_ref().map_or(true, |b| d.normalized() > b.normalized()) {
            best = Some(d);
        }
    }
    best.unwrap_or(Decoded { tokens: Vec::new(), log_prob: 0.0, truncated: true })
}

/// Embedding + LSTM + vocabulary projection. Each step consumes the previous
/// token's embedding concatenated with a fixed context vector.
#[derive(Clone, Debug)]
pub struct RecurrentDecoder {
    pub embedding: Embedding,
    pub lstm: Lstm,
    pub output: Linear,
    pub context_dim: usize,
}

impl RecurrentDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, word_dim: usize, context_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            embedding: Embedding::new(store, &format!("{name}.embed"), vocab, word_dim, rng),
            lstm: Lstm::new(store, &format!("{name}.lstm"), word_dim + context_dim, hidden, rng),
            output: Linear::new(store, &format!("{name}.out"), hidden, vocab, true, rng),
            context_dim,
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    fn advance(&self, g: &mut Graph, context: NodeId, state: LstmState, token: usize) -> LstmState {
        let x = self.embedding.lookup(g, &[token]);
        let x = g.concat_cols(&[x, context]);
        self.lstm.step(g, x, state)
    }

    /// Per-step log-probabilities (`(T+1) × V`) for inputs SOS, t_1..t_T;
    /// row k scores target t_{k+1}, the last row scores EOS.
    pub fn teacher_forced_log_probs(&self, g: &mut Graph, context: NodeId, init: LstmState, target: &[usize]) -> NodeId {
        let mut state = init;
        let mut hiddens = Vec::with_capacity(target.len() + 1);
        let inputs = std::iter::once(SOS).chain(target.iter().copied());
        for tok in inputs {
            state = self.advance(g, context, state, tok);
            hiddens.push(state.hidden);
        }
        let h = g.stack_rows(&hiddens);
        let logits = self.output.forward(g, h);
        g.log_softmax(logits)
    }

    /// Summed negative log-likelihood of `target` followed by EOS, and the
    /// number of scored tokens.
    pub fn teacher_forced_nll(&self, g: &mut Graph, context: NodeId, init: LstmState, target: &[usize]) -> (NodeId, usize) {
        let lp = self.teacher_forced_log_probs(g, context, init, target);
        let positions: Vec<(usize, usize)> = target.iter().copied().chain(std::iter::once(EOS)).enumerate().collect();
        let total = g.pick_sum(lp, &positions);
        (g.scale(total, -1.0), positions.len())
    }

    pub fn stepper<'a>(&'a self, store: &'a ParamStore, context: Tensor, hidden: Tensor, cell: Tensor) -> DecoderStepper<'a> {
        DecoderStepper { decoder: self, store, context, init: (hidden, cell) }
    }
}

/// Value-level view of a decoder with a fixed context, for search.
pub struct DecoderStepper<'a> {
    decoder: &'a RecurrentDecoder,
    store: &'a ParamStore,
    context: Tensor,
    init: (Tensor, Tensor),
}

impl StepModel for DecoderStepper<'_> {
    type State = (Tensor, Tensor);

    fn initial(&self) -> Self::State {
        self.init.clone()
    }

    fn step(&self, state: &Self::State, token: usize) -> (Vec<f64>, Self::State) {
        let mut g = Graph::new(self.store);
        let ctx = g.constant(self.context.clone());
        let s = LstmState { hidden: g.constant(state.0.clone()), cell: g.constant(state.1.clone()) };
        let next = self.decoder.advance(&mut g, ctx, s, token);
        let logits = self.decoder.output.forward(&mut g, next.hidden);
        let lp = g.log_softmax(logits);
        (g.value(lp).data().to_vec(), (g.value(next.hidden).clone(), g.value(next.cell).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Next-token table indexed by the previous token.
    struct Table(Vec<Vec<f64>>);

    impl StepModel for Table {
        type State = ();
        fn initial(&self) {}
        fn step(&self, _: &(), token: usize) -> (Vec<f64>, ()) {
            (self.0[token].iter().map(|p: &f64| p.ln()).collect(), ())
        }
    }

    fn table() -> Table {
        // tokens: 0 pad, 1 sos, 2 eos, 3 a, 4 b
        let mut t = vec![vec![0.2; 5]; 5];
        t[SOS] = vec![0.0, 0.0, 0.1, 0.5, 0.4];
        t[3] = vec![0.0, 0.0, 0.6, 0.1, 0.3];
        t[4] = vec![0.0, 0.0, 0.05, 0.05, 0.9];
        Table(t)
    }

    #[test]
    fn greedy_follows_argmax() {
        let d = greedy_decode(&table(), 10);
        assert_eq!(d.tokens, vec![3]);
        assert!(!d.truncated);
        assert!((d.log_prob - (0.5f64.ln() + 0.6f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn width_one_matches_greedy() {
        let t = table();
        assert_eq!(beam_search(&t, 1, 10), greedy_decode(&t, 10));
    }

    #[test]
    fn eos_always_argmax_gives_empty_output() {
        let t = Table(vec![vec![0.0, 0.0, 0.9, 0.05, 0.05]; 5]);
        assert!(greedy_decode(&t, 5).tokens.is_empty());
        assert!(beam_search(&t, 3, 5).tokens.is_empty());
    }

    #[test]
    fn truncation_is_flagged() {
        let t = Table(vec![vec![0.0, 0.0, 0.0, 1.0, 0.0]; 5]);
        let d = greedy_decode(&t, 4);
        assert_eq!(d.tokens.len(), 4);
        assert!(d.truncated);
        let b = beam_search(&t, 2, 4);
        assert!(b.truncated && b.tokens.len() == 4);
    }
}
