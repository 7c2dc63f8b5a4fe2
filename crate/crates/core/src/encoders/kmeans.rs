use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::stream;

pub const MAX_LLOYD_ITERS: usize = 100;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn distinct_rows(points: ArrayView2<f64>) -> usize {
    points
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when no assignment changes or after [`MAX_LLOYD_ITERS`] iterations.
/// Empty clusters keep their previous centroid.
pub fn fit_corpus_kmeans(points: ArrayView2<f64>, c: usize, seed: u64) -> Result<Array2<f64>> {
    let n = points.nrows();
    if c == 0 {
        return Err(Error::config("C", "must be positive"));
    }
    let distinct = distinct_rows(points);
    if n < c || distinct < c {
        return Err(Error::DegenerateClustering {
            distinct,
            requested: c,
        });
    }
    let mut rng = stream(seed, "fit_corpus_kmeans");
    let mut centroids = Array2::zeros((c, points.ncols()));
    centroids
        .row_mut(0)
        .assign(&points.row(rng.random_range(0..n)));
    let mut d2: Array1<f64> = points
        .rows()
        .into_iter()
        .map(|x| sq_dist(x, centroids.row(0)))
        .collect();
    for k in 1..c {
        let total: f64 = d2.sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] <= 0.0 {
            pick = d2.iter().position(|&w| w > 0.0).expect("distinct point remains");
        }
        centroids.row_mut(k).assign(&points.row(pick));
        for (i, x) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, centroids.row(k)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = 0;
        for (i, x) in points.rows().into_iter().enumerate() {
            let (k, _) = nearest(x, &centroids);
            if assign[i] != k {
                assign[i] = k;
                changed += 1;
            }
        }
        if changed == 0 {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; c];
        for (i, x) in points.rows().into_iter().enumerate() {
            let mut row = sums.row_mut(assign[i]);
            row += &x;
            counts[assign[i]] += 1;
        }
        for k in 0..c {
            if counts[k] > 0 {
                let mean = &sums.row(k) / counts[k] as f64;
                centroids.row_mut(k).assign(&mean);
            }
        }
    }
    Ok(centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn c_distinct_points_are_recovered() {
        let pts = array![[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [-3.0, 1.0], [5.0, 5.0]];
        let cent = fit_corpus_kmeans(pts.view(), 3, 4).unwrap();
        let mut rows: Vec<Vec<f64>> = cent.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![-3.0, 1.0], vec![0.0, 0.0], vec![5.0, 5.0]]);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = array![[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(
            fit_corpus_kmeans(pts.view(), 3, 0),
            Err(Error::DegenerateClustering { distinct: 2, requested: 3 })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = Array2::from_shape_fn((50, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        assert_eq!(
            fit_corpus_kmeans(pts.view(), 4, 9).unwrap(),
            fit_corpus_kmeans(pts.view(), 4, 9).unwrap()
        );
    }
}
