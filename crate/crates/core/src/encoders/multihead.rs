use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{glorot, Bindings, Linear, ParamId, ParamStore};

/// `N_h` attention heads over a token matrix. Head `j` scores every token
/// through a shared tanh layer, softmax-normalizes over tokens, and projects
/// the weighted token mean with its own `W_j: (D_token, D)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiHeadLocalAttention {
    pub hidden: Linear,
    pub scores: Linear,
    pub projections: Vec<ParamId>,
    pub d_token: usize,
    pub dim: usize,
}

impl MultiHeadLocalAttention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d_token: usize,
        dim: usize,
        n_heads: usize,
        d_attn: usize,
    ) -> Self {
        let hidden = Linear::new(store, rng, &format!("{name}.hidden"), d_token, d_attn);
        let scores = Linear::new(store, rng, &format!("{name}.scores"), d_attn, n_heads);
        let projections = (0..n_heads)
            .map(|j| store.add(format!("{name}.head{j}.proj"), glorot(rng, d_token, dim)))
            .collect();
        Self {
            hidden,
            scores,
            projections,
            d_token,
            dim,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.projections.len()
    }

    /// Maps `(N_G, D_token)` tokens to `(N_h, D)`; also returns the `(N_h, N_G)`
    /// attention weights.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, tokens: Var) -> (Var, Var) {
        let h = self.hidden.forward(g, p, tokens);
        let h = g.tanh(h);
        let s = self.scores.forward(g, p, h);
        let s = g.transpose(s);
        let alpha = g.softmax_rows(s);
        let pooled = g.matmul(alpha, tokens);
        let rows: Vec<Var> = self
            .projections
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                let r = g.gather_rows(pooled, vec![j]);
                g.matmul(r, p.var(w))
            })
            .collect();
        (g.concat_rows(&rows), alpha)
    }
}

/// Eval-mode forward; returns the head outputs and attention weights.
pub fn multihead_local(
    attn: &MultiHeadLocalAttention,
    store: &ParamStore,
    tokens: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if tokens.nrows() == 0 {
        return Err(Error::EmptyBag);
    }
    if tokens.ncols() != attn.d_token {
        return Err(Error::Dimension {
            sample: None,
            reason: format!("tokens have width {}, encoder expects {}", tokens.ncols(), attn.d_token),
        });
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let t = g.constant(tokens.to_owned());
    let (out, alpha) = attn.forward(&mut g, &p, t);
    Ok((g.value(out).clone(), g.value(alpha).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{normal, stream};

    fn build(d_token: usize, dim: usize, heads: usize) -> (MultiHeadLocalAttention, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = stream(5, "mh-test");
        let a = MultiHeadLocalAttention::new(&mut store, &mut rng, "mh", d_token, dim, heads, 3);
        (a, store)
    }

    fn project(store: &ParamStore, attn: &MultiHeadLocalAttention, j: usize, t: &[f64]) -> Vec<f64> {
        let w = store.get(attn.projections[j]);
        let t = ndarray::Array1::from_vec(t.to_vec());
        t.dot(w).to_vec()
    }

    #[test]
    fn single_token_is_projected_directly() {
        let (a, store) = build(3, 4, 5);
        let t = [0.4, -1.0, 2.0];
        let tokens = Array2::from_shape_vec((1, 3), t.to_vec()).unwrap();
        let (out, alpha) = multihead_local(&a, &store, tokens.view()).unwrap();
        assert_eq!(out.dim(), (5, 4));
        for j in 0..5 {
            assert_eq!(alpha[[j, 0]], 1.0);
            for (x, y) in out.row(j).iter().zip(project(&store, &a, j, &t)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_tokens_ignore_attention() {
        let (a, store) = build(2, 3, 4);
        let t = [1.5, -0.5];
        let tokens = Array2::from_shape_fn((7, 2), |(_, d)| t[d]);
        let (out, _) = multihead_local(&a, &store, tokens.view()).unwrap();
        for j in 0..4 {
            for (x, y) in out.row(j).iter().zip(project(&store, &a, j, &t)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_weights_sum_to_one() {
        let (a, store) = build(4, 3, 6);
        let mut rng = stream(8, "tok");
        let tokens = Array2::from_shape_fn((11, 4), |_| normal(&mut rng) * 2.0);
        let (_, alpha) = multihead_local(&a, &store, tokens.view()).unwrap();
        for row in alpha.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn width_mismatch_errors() {
        let (a, store) = build(4, 3, 2);
        let tokens = Array2::<f64>::zeros((3, 5));
        assert!(matches!(
            multihead_local(&a, &store, tokens.view()),
            Err(Error::Dimension { .. })
        ));
    }
}
