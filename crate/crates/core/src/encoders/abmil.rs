use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bindings, Linear, ParamStore};

/// Gated-attention MIL pooling: `a = softmax(w^T (tanh(V z) ⊙ sigmoid(U z)))`,
/// output `Σ a_i z_i`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AbmilPooler {
    pub v: Linear,
    pub u: Linear,
    pub w: Linear,
    pub dim: usize,
}

impl AbmilPooler {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize, d_attn: usize) -> Self {
        Self {
            v: Linear::new(store, rng, &format!("{name}.attention_v"), dim, d_attn),
            u: Linear::new(store, rng, &format!("{name}.attention_u"), dim, d_attn),
            w: Linear::new(store, rng, &format!("{name}.attention_w"), d_attn, 1),
            dim,
        }
    }

    /// Pools an `(N, D)` bag node into a `(1, D)` node; also returns the
    /// `(1, N)` attention weights.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, bag: Var) -> (Var, Var) {
        let hv = self.v.forward(g, p, bag);
        let hv = g.tanh(hv);
        let hu = self.u.forward(g, p, bag);
        let hu = g.sigmoid(hu);
        let h = g.mul(hv, hu);
        let scores = self.w.forward(g, p, h);
        let scores = g.transpose(scores);
        let weights = g.softmax_rows(scores);
        let pooled = g.matmul(weights, bag);
        (pooled, weights)
    }
}

/// Pools a bag with fixed parameters; returns the pooled vector and weights.
pub fn abmil_pool(
    pooler: &AbmilPooler,
    store: &ParamStore,
    instances: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if instances.nrows() == 0 {
        return Err(Error::EmptyBag);
    }
    if instances.ncols() != pooler.dim {
        return Err(Error::Dimension {
            sample: None,
            reason: format!("bag has {} columns, pooler expects {}", instances.ncols(), pooler.dim),
        });
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let bag = g.constant(instances.to_owned());
    let (pooled, weights) = pooler.forward(&mut g, &p, bag);
    let row = |m: &Array2<f64>| m.row(0).to_owned();
    Ok((row(g.value(pooled)), row(g.value(weights))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{normal, stream};

    fn pooler(dim: usize) -> (AbmilPooler, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = stream(1, "abmil-test");
        let p = AbmilPooler::new(&mut store, &mut rng, "abmil", dim, 3);
        (p, store)
    }

    #[test]
    fn identical_instances_pool_to_that_instance() {
        let (p, store) = pooler(4);
        let v = [0.3, -1.0, 2.5, 0.0];
        let bag = Array2::from_shape_fn((6, 4), |(_, j)| v[j]);
        let (out, w) = abmil_pool(&p, &store, bag.view()).unwrap();
        for (a, b) in out.iter().zip(v) {
            assert!((a - b).abs() < 1e-12);
        }
        for x in w.iter() {
            assert!((x - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_bag() {
        let (p, store) = pooler(3);
        let bag = Array2::from_shape_vec((1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let (out, w) = abmil_pool(&p, &store, bag.view()).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(w.to_vec(), vec![1.0]);
    }

    #[test]
    fn output_in_coordinate_hull_and_weights_normalized() {
        let (p, store) = pooler(5);
        let mut rng = stream(2, "bag");
        let bag = Array2::from_shape_fn((17, 5), |_| normal(&mut rng) * 3.0);
        let (out, w) = abmil_pool(&p, &store, bag.view()).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&a| a >= 0.0));
        for j in 0..5 {
            let col = bag.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(out[j] >= lo - 1e-12 && out[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn empty_bag_errors() {
        let (p, store) = pooler(2);
        let bag = Array2::<f64>::zeros((0, 2));
        assert!(matches!(abmil_pool(&p, &store, bag.view()), Err(Error::EmptyBag)));
    }
}
