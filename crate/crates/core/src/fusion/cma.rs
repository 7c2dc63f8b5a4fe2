use ndarray::{Array1, ArrayView1};

use crate::dataio::Modality;
use crate::graph::{Graph, Var};

/// `a + (a·b) b`.
pub fn cma_pair(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let s = a.dot(&b);
    &a + &(&b * s)
}

/// Row-wise [`cma_pair`] on `(n, D)` nodes.
pub fn cma_pair_rows(g: &mut Graph, a: Var, b: Var) -> Var {
    let s = g.row_dot(a, b);
    let cross = g.mul_col(b, s);
    g.add(a, cross)
}

/// Per-modality attended features (mean of the two partner pairs) and their
/// sum. With `enabled = false` the features pass through unchanged and the
/// aggregate is their plain sum.
pub fn cma_fuse(g: &mut Graph, x: [Var; 3], enabled: bool) -> ([Var; 3], Var) {
    let attended = if enabled {
        Modality::ALL.map(|m| {
            let [p, q] = m.partners();
            let a = cma_pair_rows(g, x[m.index()], x[p.index()]);
            let b = cma_pair_rows(g, x[m.index()], x[q.index()]);
            let s = g.add(a, b);
            g.scale(s, 0.5)
        })
    } else {
        x
    };
    let partial = g.add(attended[0], attended[1]);
    let agg = g.add(partial, attended[2]);
    (attended, agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pair_identities() {
        let a = array![1.0, 2.0, -1.0];
        let zero = Array1::zeros(3);
        assert_eq!(cma_pair(a.view(), zero.view()), a);
        assert_eq!(cma_pair(zero.view(), a.view()), zero);
        let e1 = array![1.0, 0.0, 0.0];
        assert_eq!(cma_pair(e1.view(), e1.view()), array![2.0, 0.0, 0.0]);
    }
}
