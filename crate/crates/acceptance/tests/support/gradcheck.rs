//! Central finite differences against the tape's reverse-mode gradients.

use qacoop_core::graph::{Graph, NodeId};
use qacoop_core::params::ParamStore;
use qacoop_core::tensor::Tensor;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_error: f64,
    pub worst: String,
}

impl GradReport {
    fn note(&mut self, what: String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_error || self.worst.is_empty() {
            self.max_error = self.max_error.max(e);
            self.worst = format!("{what}: analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
}

/// Compares gradients of the scalar built by `build` with respect to every
/// parameter it touches and every input tensor. At most `per_tensor` entries
/// are sampled from each tensor (all of them when it is small enough).
pub fn check<F>(store: &ParamStore, inputs: &[Tensor], per_tensor: usize, seed: u64, build: F) -> GradReport
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |s: &ParamStore, xs: &[Tensor]| {
        let mut g = Graph::new(s);
        let nodes: Vec<NodeId> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let root = build(&mut g, &nodes);
        g.scalar(root)
    };
    let mut g = Graph::new(store);
    let nodes: Vec<NodeId> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let root = build(&mut g, &nodes);
    let grads = g.backward(root);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    let mut work = store.clone();
    let mut touched: Vec<_> = grads.params().iter().map(|(id, t)| (*id, t.clone())).collect();
    touched.sort_by_key(|(id, _)| id.0);
    for (id, analytic) in touched {
        let n = analytic.len();
        for k in sample(&mut rng, n, n.min(per_tensor)) {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + H;
            let up = eval(&work, inputs);
            work.get_mut(id).data_mut()[k] = orig - H;
            let down = eval(&work, inputs);
            work.get_mut(id).data_mut()[k] = orig;
            report.note(format!("{}[{k}]", store.name(id)), analytic.data()[k], (up - down) / (2.0 * H));
        }
    }
    let mut xs = inputs.to_vec();
    for (i, node) in nodes.iter().enumerate() {
        let Some(analytic) = grads.wrt(*node).cloned() else { continue };
        let n = analytic.len();
        for k in sample(&mut rng, n, n.min(per_tensor)) {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + H;
            let up = eval(store, &xs);
            xs[i].data_mut()[k] = orig - H;
            let down = eval(store, &xs);
            xs[i].data_mut()[k] = orig;
            report.note(format!("input{i}[{k}]"), analytic.data()[k], (up - down) / (2.0 * H));
        }
    }
    report
}
