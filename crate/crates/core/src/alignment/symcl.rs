use ndarray::Array2;

use crate::config::TauMode;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

fn logit_scale(tau: f64, mode: TauMode) -> f64 {
    match mode {
        TauMode::Multiply => tau,
        TauMode::Divide => 1.0 / tau,
    }
}

/// Symmetric contrastive loss between matched rows of `a` and `b`, both
/// `(M, D)`. Rows are unit-normalized first; the similarity matrix is scaled
/// by `tau` (or `1/tau`), and the two cross-entropy directions are averaged.
pub fn symcl_rows(g: &mut Graph, a: Var, b: Var, tau: f64, mode: TauMode) -> Var {
    let m = g.shape(a).0;
    let an = g.l2_normalize_rows(a);
    let bn = g.l2_normalize_rows(b);
    let bt = g.transpose(bn);
    let sim = g.matmul(an, bt);
    let logits = g.scale(sim, logit_scale(tau, mode));
    let targets: Vec<usize> = (0..m).collect();
    let ab = g.cross_entropy(logits, &targets);
    let lt = g.transpose(logits);
    let ba = g.cross_entropy(lt, &targets);
    let s = g.add(ab, ba);
    g.scale(s, 0.5)
}

pub fn symcl_loss(a: &Array2<f64>, b: &Array2<f64>, tau: f64, mode: TauMode) -> Result<f64> {
    if a.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            sample: None,
            reason: format!("batches have shapes {:?} and {:?}", a.dim(), b.dim()),
        });
    }
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let bv = g.constant(b.clone());
    let l = symcl_rows(&mut g, av, bv, tau, mode);
    Ok(g.scalar(l))
}

/// Mean of the six per-modality terms: attended feature of each modality
/// against the aggregate, at both levels. Each term only uses the samples
/// where that modality is present; a term with no such sample contributes 0.
pub fn symcl_total_rows(
    g: &mut Graph,
    presence: &[[bool; 3]],
    attended: [[Var; 3]; 2],
    aggregates: [Var; 2],
    tau: f64,
    mode: TauMode,
) -> Var {
    let mut total: Option<Var> = None;
    for level in 0..2 {
        for m in 0..3 {
            let idx: Vec<usize> = (0..presence.len()).filter(|&i| presence[i][m]).collect();
            let term = if idx.is_empty() {
                g.constant(Array2::zeros((1, 1)))
            } else {
                let a = g.gather_rows(attended[level][m], idx.clone());
                let b = g.gather_rows(aggregates[level], idx);
                symcl_rows(g, a, b, tau, mode)
            };
            total = Some(match total {
                Some(t) => g.add(t, term),
                None => term,
            });
        }
    }
    let total = total.expect("six terms");
    g.scale(total, 1.0 / 6.0)
}

/// [`symcl_total_rows`] on fixed matrices: `attended[level][m]` and
/// `aggregates[level]` are `(M, D)`.
pub fn symcl_total(
    presence: &[[bool; 3]],
    attended: &[[Array2<f64>; 3]; 2],
    aggregates: &[Array2<f64>; 2],
    tau: f64,
    mode: TauMode,
) -> Result<f64> {
    if presence.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g = Graph::new();
    let att = [0, 1].map(|l| [0, 1, 2].map(|m| g.constant(attended[l][m].clone())));
    let agg = [0, 1].map(|l| g.constant(aggregates[l].clone()));
    let t = symcl_total_rows(&mut g, presence, att, agg, tau, mode);
    Ok(g.scalar(t))
}
