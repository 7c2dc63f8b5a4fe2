use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bindings, Linear, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct MlpBlock {
    linear: Linear,
    gamma: ParamId,
    beta: ParamId,
}

/// Three `Linear -> LayerNorm -> ReLU -> Dropout` blocks mapping a flat input
/// of width `in_dim` to `dim`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlobalMlp {
    blocks: Vec<MlpBlock>,
    pub in_dim: usize,
    pub dim: usize,
    pub dropout: f64,
}

impl GlobalMlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        dim: usize,
        dropout: f64,
    ) -> Self {
        let widths = [in_dim, dim, dim, dim];
        let blocks = (0..3)
            .map(|i| MlpBlock {
                linear: Linear::new(store, rng, &format!("{name}.layer{i}"), widths[i], widths[i + 1]),
                gamma: store.add(format!("{name}.layer{i}.norm.gamma"), Array2::ones((1, dim))),
                beta: store.add(format!("{name}.layer{i}.norm.beta"), Array2::zeros((1, dim))),
            })
            .collect();
        Self {
            blocks,
            in_dim,
            dim,
            dropout,
        }
    }

    /// Maps `(n, in_dim)` to `(n, dim)`. Dropout is applied only when an RNG
    /// is supplied (training mode).
    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var, mut train_rng: Option<&mut dyn rand::RngCore>) -> Var {
        let mut h = x;
        for block in &self.blocks {
            h = block.linear.forward(g, p, h);
            h = g.layer_norm(h, LAYER_NORM_EPS);
            h = g.mul_row(h, p.var(block.gamma));
            h = g.add_row(h, p.var(block.beta));
            h = g.relu(h);
            if let Some(rng) = train_rng.as_deref_mut() {
                if self.dropout > 0.0 {
                    let keep = 1.0 - self.dropout;
                    let mask = Array2::from_shape_fn(g.shape(h), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    let mask = g.constant(mask);
                    h = g.mul(h, mask);
                }
            }
        }
        h
    }
}

/// Eval-mode forward on a single vector.
pub fn mlp_global(mlp: &GlobalMlp, store: &ParamStore, t: ArrayView1<f64>) -> Result<Array1<f64>> {
    if t.len() != mlp.in_dim {
        return Err(Error::Dimension {
            sample: None,
            reason: format!("input has {} entries, encoder expects {}", t.len(), mlp.in_dim),
        });
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(t.to_owned().insert_axis(ndarray::Axis(0)));
    let y = mlp.forward(&mut g, &p, x, None);
    Ok(g.value(y).row(0).to_owned())
}
