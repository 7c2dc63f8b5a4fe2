use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::routing::{top_k_indices, Routing};
use crate::graph::{softmax_rows, Graph, Var};
use crate::nn::{Bindings, Linear, ParamStore, TwoLayer};

/// `K` two-layer experts with a softmax gate that keeps the `top_k` largest
/// gate values per row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpertBank {
    pub experts: Vec<TwoLayer>,
    pub gate: Linear,
    pub top_k: usize,
    pub renormalize: bool,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Graph nodes produced by one bank application.
pub struct MoeOutput {
    pub out: Var,
    /// `(n, K)` softmax gate before top-k.
    pub gate_probs: Var,
    /// `(n, K)` weights actually applied.
    pub weights: Var,
    /// Selected experts per row, largest gate first.
    pub selected: Vec<Vec<usize>>,
}

impl ExpertBank {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        n_experts: usize,
        top_k: usize,
        renormalize: bool,
    ) -> Self {
        let experts = (0..n_experts)
            .map(|k| TwoLayer::new(store, rng, &format!("{name}.expert{k}"), in_dim, out_dim, out_dim))
            .collect();
        Self {
            experts,
            gate: Linear::new(store, rng, &format!("{name}.gate"), in_dim, n_experts),
            top_k,
            renormalize,
            in_dim,
            out_dim,
        }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    /// Applies the bank to every row of `x`.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var, routing: &mut Routing) -> MoeOutput {
        let logits = self.gate.forward(g, p, x);
        let probs = g.softmax_rows(logits);
        let k = self.top_k;
        let selected = {
            let pv = g.value(probs);
            routing.choose(|| {
                pv.rows()
                    .into_iter()
                    .map(|r| top_k_indices(r.as_slice().expect("contiguous row"), k))
                    .collect()
            })
        };
        let (n, n_experts) = g.shape(probs);
        let mut mask = Array2::zeros((n, n_experts));
        for (i, sel) in selected.iter().enumerate() {
            for &e in sel {
                mask[[i, e]] = 1.0;
            }
        }
        let mask = g.constant(mask);
        let mut weights = g.mul(probs, mask);
        if self.renormalize {
            let total = g.row_sum(weights);
            let inv = g.recip(total);
            weights = g.mul_col(weights, inv);
        }
        let mut out: Option<Var> = None;
        for (e, expert) in self.experts.iter().enumerate() {
            let y = expert.forward(g, p, x);
            let w = g.column(weights, e);
            let term = g.mul_col(y, w);
            out = Some(match out {
                Some(acc) => g.add(acc, term),
                None => term,
            });
        }
        MoeOutput {
            out: out.expect("bank has at least one expert"),
            gate_probs: probs,
            weights,
            selected,
        }
    }
}

/// Weights applied to the experts for one row of softmax gate values.
pub fn gate_weights(probs: ArrayView1<f64>, top_k: usize, renormalize: bool) -> Array1<f64> {
    let keep = top_k_indices(probs.as_slice().expect("contiguous"), top_k);
    let mut w = Array1::zeros(probs.len());
    for &e in &keep {
        w[e] = probs[e];
    }
    if renormalize {
        let s = w.sum();
        w /= s;
    }
    w
}

/// Softmax of a gate-logit row.
pub fn gate_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    softmax_rows(&logits.to_owned().insert_axis(ndarray::Axis(0))).row(0).to_owned()
}

/// Applies `bank` to a single vector with fixed parameters; returns the
/// output and the selected expert indices.
pub fn moe_transform(bank: &ExpertBank, store: &ParamStore, x: ArrayView1<f64>) -> (Array1<f64>, Vec<usize>) {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let xv = g.constant(x.to_owned().insert_axis(ndarray::Axis(0)));
    let mut routing = Routing::new();
    let o = bank.forward(&mut g, &p, xv, &mut routing);
    (g.value(o.out).row(0).to_owned(), o.selected[0].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{normal, stream};
    use ndarray::array;

    fn bank(renormalize: bool) -> (ExpertBank, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = stream(2, "moe-test");
        let b = ExpertBank::new(&mut store, &mut rng, "bank", 4, 4, 5, 2, renormalize);
        (b, store)
    }

    #[test]
    fn uniform_logits_pick_the_first_two_equally() {
        let probs = gate_softmax(array![0.0, 0.0, 0.0, 0.0, 0.0].view());
        let w = gate_weights(probs.view(), 2, true);
        assert_eq!(w.to_vec(), vec![0.5, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stated_scores_renormalize() {
        let w = gate_weights(array![0.5, 0.1, 0.3, 0.05, 0.05].view(), 2, true);
        assert!((w[0] - 0.625).abs() < 1e-12);
        assert!((w[2] - 0.375).abs() < 1e-12);
        assert_eq!(w.iter().filter(|&&x| x != 0.0).count(), 2);
        let raw = gate_weights(array![0.5, 0.1, 0.3, 0.05, 0.05].view(), 2, false);
        assert_eq!(raw.to_vec(), vec![0.5, 0.0, 0.3, 0.0, 0.0]);
    }

    #[test]
    fn bank_output_is_weighted_sum_of_selected_experts() {
        let (b, store) = bank(true);
        let mut rng = stream(3, "x");
        let x = Array1::from_shape_fn(4, |_| normal(&mut rng));
        let (out, sel) = moe_transform(&b, &store, x.view());
        assert_eq!(sel.len(), 2);
        let gate = store.get(b.gate.weight);
        let logits = x.dot(gate) + store.get(b.gate.bias).row(0);
        let w = gate_weights(gate_softmax(logits.view()).view(), 2, true);
        let mut expected = Array1::<f64>::zeros(4);
        for (e, ex) in b.experts.iter().enumerate() {
            let h = (x.dot(store.get(ex.fc1.weight)) + store.get(ex.fc1.bias).row(0)).mapv(|v| v.max(0.0));
            let y = h.dot(store.get(ex.fc2.weight)) + store.get(ex.fc2.bias).row(0);
            expected.scaled_add(w[e], &y);
        }
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
