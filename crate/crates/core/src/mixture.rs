//! Diagonal-covariance Gaussian mixtures: densities, posteriors and EM steps.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on every variance entry.
pub const VAR_FLOOR: f64 = 1e-6;

/// Components whose total responsibility falls below this keep their
/// previous mean and variance.
pub const EMPTY_MASS: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn logsumexp(v: ArrayView1<f64>) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGmm {
    pub weights: Array1<f64>,
    pub means: Array2<f64>,
    pub vars: Array2<f64>,
}

impl DiagGmm {
    /// Uniform weights and unit variances around `means`.
    pub fn from_means(means: Array2<f64>) -> Self {
        let m = means.nrows();
        Self {
            weights: Array1::from_elem(m, 1.0 / m as f64),
            vars: Array2::ones(means.dim()),
            means,
        }
    }

    pub fn n_components(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `log π_m + log N(x; μ_m, diag σ²_m)` for every component.
    pub fn log_joint(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let d = self.dim() as f64;
        Array1::from_shape_fn(self.n_components(), |m| {
            let mu = self.means.row(m);
            let var = self.vars.row(m);
            let mut quad = 0.0;
            let mut logdet = 0.0;
            for j in 0..mu.len() {
                let diff = x[j] - mu[j];
                quad += diff * diff / var[j];
                logdet += var[j].ln();
            }
            self.weights[m].ln() - 0.5 * (d * LN_2PI + logdet + quad)
        })
    }

    /// Normalized posterior over components, computed in log space.
    pub fn posterior(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let lj = self.log_joint(x);
        let lse = logsumexp(lj.view());
        if !lse.is_finite() {
            return Err(Error::Numerical {
                iteration: 0,
                reason: "every component likelihood underflowed".into(),
            });
        }
        Ok(lj.mapv(|v| (v - lse).exp()))
    }

    pub fn argmax_posterior(&self, x: ArrayView1<f64>) -> Result<usize> {
        let p = self.posterior(x)?;
        Ok(argmax(p.view()))
    }

    /// Posterior matrix `(N, M)` and the total data log-likelihood.
    pub fn e_step(&self, data: ArrayView2<f64>) -> (Array2<f64>, f64) {
        let mut resp = Array2::zeros((data.nrows(), self.n_components()));
        let mut ll = 0.0;
        for (i, x) in data.rows().into_iter().enumerate() {
            let lj = self.log_joint(x);
            let lse = logsumexp(lj.view());
            ll += lse;
            for m in 0..lj.len() {
                resp[[i, m]] = (lj[m] - lse).exp();
            }
        }
        (resp, ll)
    }

    pub fn log_likelihood(&self, data: ArrayView2<f64>) -> f64 {
        data.rows()
            .into_iter()
            .map(|x| logsumexp(self.log_joint(x).view()))
            .sum()
    }

    /// Maximum-likelihood parameters for the given responsibilities.
    /// Components with negligible mass keep their current mean and variance.
    pub fn m_step(&self, data: ArrayView2<f64>, resp: ArrayView2<f64>) -> DiagGmm {
        let mass = resp.sum_axis(Axis(0));
        let total: f64 = mass.sum();
        let mut next = self.clone();
        for m in 0..self.n_components() {
            next.weights[m] = mass[m] / total;
            if mass[m] < EMPTY_MASS {
                continue;
            }
            let r = resp.column(m);
            let mut mean = Array1::<f64>::zeros(self.dim());
            for (i, x) in data.rows().into_iter().enumerate() {
                mean.scaled_add(r[i], &x);
            }
            mean /= mass[m];
            let mut var = Array1::<f64>::zeros(self.dim());
            for (i, x) in data.rows().into_iter().enumerate() {
                let diff = &x - &mean;
                var.scaled_add(r[i], &(&diff * &diff));
            }
            var /= mass[m];
            var.mapv_inplace(|v| v.max(VAR_FLOOR));
            next.means.row_mut(m).assign(&mean);
            next.vars.row_mut(m).assign(&var);
        }
        next
    }
}

pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_component_posterior_is_one() {
        let g = DiagGmm::from_means(array![[1.0, 2.0]]);
        let p = g.posterior(array![5.0, -3.0].view()).unwrap();
        assert_eq!(p.to_vec(), vec![1.0]);
    }

    #[test]
    fn log_joint_matches_direct_density() {
        let g = DiagGmm {
            weights: array![0.25, 0.75],
            means: array![[0.0, 1.0], [2.0, -1.0]],
            vars: array![[1.0, 4.0], [0.5, 2.0]],
        };
        let x = array![0.5, 0.0];
        let lj = g.log_joint(x.view());
        let direct = |w: f64, mu: [f64; 2], var: [f64; 2]| {
            let mut p = w;
            for j in 0..2 {
                p *= (-(x[j] - mu[j]).powi(2) / (2.0 * var[j])).exp()
                    / (2.0 * std::f64::consts::PI * var[j]).sqrt();
            }
            p.ln()
        };
        assert!((lj[0] - direct(0.25, [0.0, 1.0], [1.0, 4.0])).abs() < 1e-12);
        assert!((lj[1] - direct(0.75, [2.0, -1.0], [0.5, 2.0])).abs() < 1e-12);
    }
}
