use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::moe::ExpertBank;
use super::routing::{top_k_indices, Routing};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bindings, Linear, ParamStore};

/// Affine activation score used to rank transformed local rows.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LocalSelector {
    pub act: Linear,
}

impl LocalSelector {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize) -> Self {
        Self {
            act: Linear::new(store, rng, &format!("{name}.act"), dim, 1),
        }
    }
}

/// Graph nodes of one modality's local pooling over a batch.
pub struct LocalPool {
    /// `(B, D)` mean of the kept rows per sample.
    pub pooled: Var,
    /// `(B * rows, D)` transformed rows before masking.
    pub z: Var,
    /// Keep flags for every row of `z`.
    pub mask: Vec<bool>,
    /// Experts selected for every row of `z` (empty without a bank).
    pub experts: Vec<Vec<usize>>,
}

/// Transforms each local row with `bank`, keeps the `k_loc` best-scoring rows
/// per sample and averages them. Absent samples pool to zero. Without a bank
/// rows pass through untransformed and all of them are averaged.
#[allow(clippy::too_many_arguments)]
pub fn pool_local(
    g: &mut Graph,
    p: &Bindings,
    bank: Option<&ExpertBank>,
    selector: &LocalSelector,
    locals: Var,
    rows: usize,
    k_loc: usize,
    presence: &[bool],
    routing: &mut Routing,
) -> LocalPool {
    let b = presence.len();
    assert_eq!(g.shape(locals).0, b * rows, "local rows per sample");
    let (z, experts, keep) = match bank {
        Some(bank) => {
            let moe = bank.forward(g, p, locals, routing);
            let scores = selector.act.forward(g, p, moe.out);
            let sv = g.value(scores);
            let chosen = routing.choose(|| {
                (0..b)
                    .map(|i| {
                        let s: Vec<f64> = (0..rows).map(|j| sv[[i * rows + j, 0]]).collect();
                        top_k_indices(&s, k_loc)
                    })
                    .collect()
            });
            (moe.out, moe.selected, chosen)
        }
        None => (locals, Vec::new(), (0..b).map(|_| (0..rows).collect()).collect()),
    };
    let mut mask = vec![false; b * rows];
    let mut pool = Array2::zeros((b, b * rows));
    for (i, kept) in keep.iter().enumerate() {
        for &j in kept {
            mask[i * rows + j] = true;
            if presence[i] {
                pool[[i, i * rows + j]] = 1.0 / kept.len() as f64;
            }
        }
    }
    let pool = g.constant(pool);
    let pooled = g.matmul(pool, z);
    LocalPool {
        pooled,
        z,
        mask,
        experts,
    }
}

/// Result of [`select_local`] on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSelection {
    /// `(C, D)` transformed rows with unselected rows zeroed.
    pub kept: Array2<f64>,
    pub mask: Vec<bool>,
    /// Mean of the kept rows.
    pub pooled: Array1<f64>,
}

pub fn check_k_loc(k_loc: usize, rows: usize) -> Result<()> {
    if k_loc == 0 || k_loc > rows {
        return Err(Error::config(
            "fusion.k_loc",
            format!("must lie in 1..={rows}, got {k_loc}"),
        ));
    }
    Ok(())
}

/// Single-sample local selection with fixed parameters.
pub fn select_local(
    locals: ArrayView2<f64>,
    selector: &LocalSelector,
    bank: &ExpertBank,
    store: &ParamStore,
    k_loc: usize,
) -> Result<LocalSelection> {
    let rows = locals.nrows();
    check_k_loc(k_loc, rows)?;
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(locals.to_owned());
    let mut routing = Routing::new();
    let lp = pool_local(&mut g, &p, Some(bank), selector, x, rows, k_loc, &[true], &mut routing);
    let mut kept = g.value(lp.z).clone();
    for (j, &keep) in lp.mask.iter().enumerate() {
        if !keep {
            kept.row_mut(j).fill(0.0);
        }
    }
    Ok(LocalSelection {
        kept,
        mask: lp.mask,
        pooled: g.value(lp.pooled).row(0).to_owned(),
    })
}
