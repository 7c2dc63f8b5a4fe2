use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoders::fit_corpus_kmeans;
use crate::error::{Error, Result};
use crate::mixture::{argmax, logsumexp, DiagGmm};

/// Balancing stops once every row sum is within this of 1.
pub const SINKHORN_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITERS: usize = 1000;

/// One diagonal GMM per class over the final representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGmms {
    /// `None` for a class that had no features at initialization.
    pub classes: Vec<Option<DiagGmm>>,
}

impl ClassGmms {
    /// Per-class k-means on `features`, followed by one hard-assignment
    /// M-step. Classes with fewer distinct points than `m_comp` get one
    /// component per distinct point.
    pub fn init_kmeans(
        features: ArrayView2<f64>,
        labels: &[usize],
        n_classes: usize,
        m_comp: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut classes = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                classes.push(None);
                continue;
            }
            let data = features.select(Axis(0), &idx);
            let k = m_comp.min(distinct_rows(&data));
            let means = fit_corpus_kmeans(data.view(), k, seed.wrapping_add(c as u64))?;
            let init = DiagGmm::from_means(means.clone());
            let mut resp = Array2::zeros((data.nrows(), k));
            for (i, x) in data.rows().into_iter().enumerate() {
                let d: Array1<f64> = means
                    .rows()
                    .into_iter()
                    .map(|mu| -(&x - &mu).mapv(|v| v * v).sum())
                    .collect();
                resp[[i, argmax(d.view())]] = 1.0;
            }
            classes.push(Some(init.m_step(data.view(), resp.view())));
        }
        Ok(Self { classes })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, class: usize) -> Option<&DiagGmm> {
        self.classes.get(class).and_then(Option::as_ref)
    }
}

fn distinct_rows(data: &Array2<f64>) -> usize {
    let mut rows: Vec<Vec<u64>> = data
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

/// Posterior over the class components, computed in log space.
pub fn gmm_posterior(x: ndarray::ArrayView1<f64>, gmm: &DiagGmm) -> Result<Array1<f64>> {
    gmm.posterior(x)
}

/// Log-domain Sinkhorn balancing of `exp(log_kernel / reg)` to row sums 1 and
/// column sums `n / M`. Runs at least `min_iters` iterations and continues
/// until the row sums are within [`SINKHORN_TOL`] of 1.
pub fn sinkhorn_balance(log_kernel: ArrayView2<f64>, reg: f64, min_iters: usize) -> Result<Array2<f64>> {
    let (n, m) = log_kernel.dim();
    if n == 0 || m == 0 {
        return Ok(Array2::zeros((n, m)));
    }
    let lk = log_kernel.mapv(|v| v / reg);
    let log_col = (n as f64 / m as f64).ln();
    let mut u = Array1::<f64>::zeros(n);
    let mut v = Array1::<f64>::zeros(m);
    for iteration in 0..SINKHORN_MAX_ITERS.max(min_iters) {
        for i in 0..n {
            let r = Array1::from_shape_fn(m, |j| lk[[i, j]] + v[j]);
            u[i] = -logsumexp(r.view());
        }
        for j in 0..m {
            let c = Array1::from_shape_fn(n, |i| lk[[i, j]] + u[i]);
            v[j] = log_col - logsumexp(c.view());
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                iteration,
                reason: "Sinkhorn scaling diverged".into(),
            });
        }
        if iteration + 1 >= min_iters {
            let worst = (0..n)
                .map(|i| {
                    let s: f64 = (0..m).map(|j| (lk[[i, j]] + u[i] + v[j]).exp()).sum();
                    (s - 1.0).abs()
                })
                .fold(0.0, f64::max);
            if worst < SINKHORN_TOL {
                break;
            }
        }
    }
    Ok(Array2::from_shape_fn((n, m), |(i, j)| (lk[[i, j]] + u[i] + v[j]).exp()))
}

/// Options for [`sinkhorn_em_update`].
#[derive(Clone, Copy, Debug)]
pub struct EmOptions {
    pub momentum: f64,
    /// Entropic regularization; `None` uses plain posteriors (pure EM).
    pub sinkhorn_reg: Option<f64>,
    pub sinkhorn_iters: usize,
}

/// One online EM step per class present in the batch. Responsibilities are
/// balanced with Sinkhorn, the batch-optimal parameters are computed, and
/// each parameter moves to `momentum * old + (1 - momentum) * batch`.
/// Classes absent from the batch, or without a mixture, are left untouched.
pub fn sinkhorn_em_update(
    features: ArrayView2<f64>,
    labels: &[usize],
    gmms: &mut ClassGmms,
    opts: EmOptions,
) -> Result<()> {
    for (c, slot) in gmms.classes.iter_mut().enumerate() {
        let Some(gmm) = slot.as_mut() else { continue };
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let data = features.select(Axis(0), &idx);
        let resp = match opts.sinkhorn_reg {
            Some(reg) => {
                let mut lj = Array2::zeros((data.nrows(), gmm.n_components()));
                for (i, x) in data.rows().into_iter().enumerate() {
                    lj.row_mut(i).assign(&gmm.log_joint(x));
                }
                sinkhorn_balance(lj.view(), reg, opts.sinkhorn_iters)?
            }
            None => gmm.e_step(data.view()).0,
        };
        let batch = gmm.m_step(data.view(), resp.view());
        let mo = opts.momentum;
        gmm.weights = &gmm.weights * mo + &batch.weights * (1.0 - mo);
        gmm.means = &gmm.means * mo + &batch.means * (1.0 - mo);
        gmm.vars = &gmm.vars * mo + &batch.vars * (1.0 - mo);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{normal, stream};
    use ndarray::array;

    fn far_gmm() -> DiagGmm {
        DiagGmm::from_means(array![[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    }

    #[test]
    fn sinkhorn_marginals() {
        let mut rng = stream(1, "sk");
        let lk = Array2::from_shape_fn((7, 3), |_| normal(&mut rng) * 3.0);
        let q = sinkhorn_balance(lk.view(), 1.0, 10).unwrap();
        for r in q.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-6);
        }
        for c in q.columns() {
            assert!((c.sum() - 7.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn full_momentum_keeps_the_mixture() {
        let mut gmms = ClassGmms {
            classes: vec![Some(far_gmm())],
        };
        let before = gmms.clone();
        let data = array![[1.0, 2.0], [3.0, -1.0]];
        let opts = EmOptions {
            momentum: 1.0,
            sinkhorn_reg: Some(1.0),
            sinkhorn_iters: 10,
        };
        sinkhorn_em_update(data.view(), &[0, 0], &mut gmms, opts).unwrap();
        assert_eq!(gmms, before);
    }

    #[test]
    fn balanced_batch_at_the_means_is_a_fixed_point() {
        let gmm = far_gmm();
        let mut rows = Vec::new();
        for _ in 0..4 {
            for mu in gmm.means.rows() {
                rows.extend(mu.iter().copied());
            }
        }
        let data = Array2::from_shape_vec((12, 2), rows).unwrap();
        let mut gmms = ClassGmms {
            classes: vec![Some(gmm.clone())],
        };
        let opts = EmOptions {
            momentum: 0.0,
            sinkhorn_reg: Some(1.0),
            sinkhorn_iters: 10,
        };
        sinkhorn_em_update(data.view(), &[0; 12], &mut gmms, opts).unwrap();
        let after = gmms.get(0).unwrap();
        for (a, b) in after.means.iter().zip(gmm.means.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn absent_class_is_untouched() {
        let mut gmms = ClassGmms {
            classes: vec![Some(far_gmm()), Some(far_gmm())],
        };
        let data = array![[5.0, 5.0]];
        let opts = EmOptions {
            momentum: 0.0,
            sinkhorn_reg: Some(1.0),
            sinkhorn_iters: 10,
        };
        sinkhorn_em_update(data.view(), &[1], &mut gmms, opts).unwrap();
        assert_eq!(gmms.get(0).unwrap(), &far_gmm());
        assert_ne!(gmms.get(1).unwrap(), &far_gmm());
    }

    #[test]
    fn posterior_of_point_at_a_far_mean_is_concentrated() {
        let p = gmm_posterior(array![20.0, 0.0].view(), &far_gmm()).unwrap();
        assert!(p[1] > 0.99);
        assert!((p.sum() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn init_handles_small_classes() {
        let f = array![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0], [5.0, 5.0]];
        let g = ClassGmms::init_kmeans(f.view(), &[0, 0, 1, 1], 3, 3, 0).unwrap();
        assert_eq!(g.get(0).unwrap().n_components(), 2);
        assert_eq!(g.get(1).unwrap().n_components(), 1);
        assert!(g.get(2).is_none());
    }
}
