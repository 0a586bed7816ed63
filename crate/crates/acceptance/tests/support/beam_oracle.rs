//! Tiny random language models whose next-token distribution depends on the
//! whole prefix, and exhaustive decoding over them.

use qacoop_core::corpus::EOS;
use qacoop_core::decode::{Decoded, StepModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct PrefixModel {
    pub seed: u64,
    pub vocab: usize,
    pub spread: f64,
}

impl PrefixModel {
    /// Log-probabilities after `prefix`, from an RNG seeded by the prefix.
    pub fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for &t in prefix {
            h = h.rotate_left(17) ^ (t as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        }
        h ^= (prefix.len() as u64) << 56;
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-self.spread..self.spread)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        logits.iter().map(|l| l - z).collect()
    }
}

impl StepModel for PrefixModel {
    /// `None` before the SOS input has been consumed.
    type State = Option<Vec<usize>>;

    fn initial(&self) -> Self::State {
        None
    }

    fn step(&self, state: &Self::State, token: usize) -> (Vec<f64>, Self::State) {
        let prefix = match state {
            None => Vec::new(),
            Some(p) => {
                let mut p = p.clone();
                p.push(token);
                p
            }
        };
        (self.log_probs(&prefix), Some(prefix))
    }
}

/// Every complete hypothesis within `max_len` steps: each non-EOS prefix of
/// length < max_len followed by EOS, and every EOS-free sequence of length
/// max_len (truncated).
pub fn enumerate(model: &PrefixModel, max_len: usize) -> Vec<Decoded> {
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((tokens, lp)) = stack.pop() {
        if tokens.len() == max_len {
            out.push(Decoded { tokens, log_prob: lp, truncated: true });
            continue;
        }
        let dist = model.log_probs(&tokens);
        for (t, &l) in dist.iter().enumerate() {
            if t == EOS {
                out.push(Decoded { tokens: tokens.clone(), log_prob: lp + l, truncated: false });
            } else {
                let mut next = tokens.clone();
                next.push(t);
                stack.push((next, lp + l));
            }
        }
    }
    out
}

/// The best length-normalized finished hypothesis (ties to the shorter, then
/// lexicographically smaller sequence).
pub fn exhaustive_best(model: &PrefixModel, max_len: usize) -> Decoded {
    let all = enumerate(model, max_len);
    let finished: Vec<&Decoded> = all.iter().filter(|d| !d.truncated).collect();
    let pool: Vec<&Decoded> = if finished.is_empty() { all.iter().collect() } else { finished };
    let mut best = pool[0];
    for d in pool {
        let (a, b) = (d.normalized(), best.normalized());
        if a > b || (a == b && (d.tokens.len(), &d.tokens) < (best.tokens.len(), &best.tokens)) {
            best = d;
        }
    }
    best.clone()
}
