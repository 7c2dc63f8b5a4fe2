use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::mixture::DiagGmm;

pub const LOCAL_EM_ITERS: usize = 25;
pub const LOCAL_EM_TOL: f64 = 1e-6;

/// Fitted local components of one bag.
#[derive(Clone, Debug)]
pub struct LocalGmmFit {
    /// `(C, D)` component means, the local representation.
    pub means: Array2<f64>,
    pub gmm: DiagGmm,
    /// Log-likelihood at the initialization and after each EM iteration.
    pub log_likelihoods: Vec<f64>,
}

/// EM on a diagonal GMM initialized at the shared `centroids` with uniform
/// weights and unit variances. Runs at most [`LOCAL_EM_ITERS`] iterations,
/// stopping early when the relative log-likelihood change drops below
/// [`LOCAL_EM_TOL`]. Always returns exactly `centroids.nrows()` means.
pub fn fit_local_gmm(bag: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Result<LocalGmmFit> {
    if bag.nrows() == 0 {
        return Err(Error::EmptyBag);
    }
    if bag.ncols() != centroids.ncols() {
        return Err(Error::Dimension {
            sample: None,
            reason: format!(
                "bag has {} columns, centroids have {}",
                bag.ncols(),
                centroids.ncols()
            ),
        });
    }
    let mut gmm = DiagGmm::from_means(centroids.to_owned());
    let mut trace = Vec::with_capacity(LOCAL_EM_ITERS + 1);
    let (mut resp, mut ll) = gmm.e_step(bag);
    if !ll.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            reason: "non-finite log-likelihood".into(),
        });
    }
    trace.push(ll);
    for iteration in 1..=LOCAL_EM_ITERS {
        gmm = gmm.m_step(bag, resp.view());
        let (next_resp, next_ll) = gmm.e_step(bag);
        if !next_ll.is_finite() {
            return Err(Error::Numerical {
                iteration,
                reason: "non-finite log-likelihood".into(),
            });
        }
        trace.push(next_ll);
        let rel = (next_ll - ll).abs() / ll.abs().max(1e-300);
        resp = next_resp;
        ll = next_ll;
        if rel < LOCAL_EM_TOL {
            break;
        }
    }
    Ok(LocalGmmFit {
        means: gmm.means.clone(),
        gmm,
        log_likelihoods: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{normal, stream};
    use ndarray::array;

    #[test]
    fn bag_at_centroids_is_a_fixed_point() {
        let centroids = array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        for _ in 0..20 {
            for c in centroids.rows() {
                rows.extend(c.iter().copied());
            }
        }
        let bag = Array2::from_shape_vec((60, 2), rows).unwrap();
        let fit = fit_local_gmm(bag.view(), centroids.view()).unwrap();
        for (a, b) in fit.means.iter().zip(centroids.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn fewer_points_than_components_keeps_shape() {
        let centroids = array![[0.0, 0.0], [10.0, 10.0], [-10.0, 5.0], [3.0, -8.0]];
        let bag = array![[0.5, 0.1], [0.2, -0.3]];
        let fit = fit_local_gmm(bag.view(), centroids.view()).unwrap();
        assert_eq!(fit.means.dim(), (4, 2));
        assert!(fit.means.iter().all(|v| v.is_finite()));
        // far components never receive mass and stay put
        assert_eq!(fit.means.row(1).to_vec(), vec![10.0, 10.0]);
    }

    #[test]
    fn log_likelihood_is_non_decreasing() {
        let mut rng = stream(3, "gmm-test");
        let bag = Array2::from_shape_fn((80, 3), |(i, _)| (i % 4) as f64 * 2.0 + normal(&mut rng));
        let centroids = Array2::from_shape_fn((5, 3), |(k, j)| k as f64 + 0.1 * j as f64);
        let fit = fit_local_gmm(bag.view(), centroids.view()).unwrap();
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_bag_errors() {
        let centroids = array![[0.0, 0.0]];
        let bag = Array2::<f64>::zeros((0, 2));
        assert!(matches!(fit_local_gmm(bag.view(), centroids.view()), Err(Error::EmptyBag)));
    }
}
