//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value, and [`Graph::backward`] walks the tape in reverse. Vectors are
//! represented as `(1, d)` or `(n, 1)` matrices. Nodes created with
//! [`Graph::constant`] never receive gradients and prune the backward pass.

use ndarray::{Array1, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Recip(Var),
    SoftmaxRows(Var),
    RowSum(Var),
    RowDot(Var, Var),
    SumAll(Var),
    Column(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SelectRows(Vec<bool>, Var, Var),
    Reshape(Var),
    LayerNorm { x: Var, xhat: Mat, inv_std: Array1<f64> },
    L2Normalize { x: Var, norms: Array1<f64> },
    CrossEntropy { logits: Var, probs: Mat, targets: Vec<usize> },
}

/// Small epsilon inside the row-normalization square root; keeps the zero
/// vector mapped to zero with a finite derivative.
pub const NORMALIZE_EPS: f64 = 1e-12;

pub struct Graph {
    values: Vec<Mat>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    /// Differentiable leaf (parameter or probed input).
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].dot(&self.values[b.0]);
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.values[a.0].t().to_owned();
        let g = self.needs_grad[a.0];
        self.push(value, Op::Transpose(a), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = &self.values[a.0] + &self.values[b.0];
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = &self.values[a.0] - &self.values[b.0];
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = &self.values[a.0] * &self.values[b.0];
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::Mul(a, b), g)
    }

    /// `a (n, d) + row (1, d)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "add_row: bias shape");
        let value = &self.values[a.0] + &self.values[row.0];
        let g = self.any_grad(&[a, row]);
        self.push(value, Op::AddRow(a, row), g)
    }

    /// `a (n, d) * row (1, d)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "mul_row: scale shape");
        let value = &self.values[a.0] * &self.values[row.0];
        let g = self.any_grad(&[a, row]);
        self.push(value, Op::MulRow(a, row), g)
    }

    /// `a (n, d) * col (n, 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(col), (n, 1), "mul_col: column shape");
        let value = &self.values[a.0] * &self.values[col.0];
        let g = self.any_grad(&[a, col]);
        self.push(value, Op::MulCol(a, col), g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.values[a.0] * c;
        let g = self.needs_grad[a.0];
        self.push(value, Op::Scale(a, c), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| x.max(0.0));
        let g = self.needs_grad[a.0];
        self.push(value, Op::Relu(a), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(f64::tanh);
        let g = self.needs_grad[a.0];
        self.push(value, Op::Tanh(a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let g = self.needs_grad[a.0];
        self.push(value, Op::Sigmoid(a), g)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| 1.0 / x);
        let g = self.needs_grad[a.0];
        self.push(value, Op::Recip(a), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(&self.values[a.0]);
        let g = self.needs_grad[a.0];
        self.push(value, Op::SoftmaxRows(a), g)
    }

    /// Row sums as an `(n, 1)` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.values[a.0].sum_axis(Axis(1)).insert_axis(Axis(1));
        let g = self.needs_grad[a.0];
        self.push(value, Op::RowSum(a), g)
    }

    /// Per-row dot products as an `(n, 1)` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "row_dot: shape mismatch");
        let value = (&self.values[a.0] * &self.values[b.0])
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::RowDot(a, b), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.values[a.0].sum());
        let g = self.needs_grad[a.0];
        self.push(value, Op::SumAll(a), g)
    }

    pub fn column(&mut self, a: Var, k: usize) -> Var {
        let value = self.values[a.0].column(k).to_owned().insert_axis(Axis(1));
        let g = self.needs_grad[a.0];
        self.push(value, Op::Column(a, k), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let g = self.any_grad(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let g = self.any_grad(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), g)
    }

    /// Rows `idx[i]` of `a`, in order; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let value = self.values[a.0].select(Axis(0), &idx);
        let g = self.needs_grad[a.0];
        self.push(value, Op::GatherRows(a, idx), g)
    }

    /// Row `i` taken from `a` where `mask[i]`, otherwise from `b`.
    /// Values are copied, never blended.
    pub fn select_rows(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "select_rows: shape mismatch");
        assert_eq!(mask.len(), self.shape(a).0, "select_rows: mask length");
        let mut value = self.values[b.0].clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                value.row_mut(i).assign(&self.values[a.0].row(i));
            }
        }
        let g = self.any_grad(&[a, b]);
        self.push(value, Op::SelectRows(mask, a, b), g)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, shape: (usize, usize)) -> Var {
        let src = &self.values[a.0];
        assert_eq!(src.len(), shape.0 * shape.1, "reshape: size mismatch");
        let flat: Vec<f64> = src.iter().copied().collect();
        let value = Mat::from_shape_vec(shape, flat).expect("reshape");
        let g = self.needs_grad[a.0];
        self.push(value, Op::Reshape(a), g)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let src = &self.values[x.0];
        let (n, d) = src.dim();
        let mut xhat = Mat::zeros((n, d));
        let mut inv_std = Array1::zeros(n);
        for i in 0..n {
            let row = src.row(i);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                xhat[[i, j]] = (row[j] - mean) * inv;
            }
        }
        let g = self.needs_grad[x.0];
        self.push(xhat.clone(), Op::LayerNorm { x, xhat, inv_std }, g)
    }

    /// Scales each row to unit L2 norm; zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let src = &self.values[x.0];
        let norms: Array1<f64> = src
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r) + NORMALIZE_EPS).sqrt())
            .collect();
        let value = src / &norms.view().insert_axis(Axis(1));
        let g = self.needs_grad[x.0];
        self.push(value, Op::L2Normalize { x, norms }, g)
    }

    /// Mean softmax cross-entropy over rows, as a `(1, 1)` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let src = &self.values[logits.0];
        assert_eq!(src.nrows(), targets.len(), "cross_entropy: target count");
        let probs = softmax_rows(src);
        let n = targets.len().max(1) as f64;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            total -= log_softmax_at(src.row(i), t);
        }
        let g = self.needs_grad[logits.0];
        self.push(
            Mat::from_elem((1, 1), total / n),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            g,
        )
    }

    /// Affine map `x W + b` with `b` a `(1, out)` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.needs_grad[idx] {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, dy: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, g: Mat| {
            if !self.needs_grad[v.0] {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };
        let val = |v: Var| &self.values[v.0];
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs_grad[a.0] {
                    acc(*a, dy.dot(&val(*b).t()));
                }
                if self.needs_grad[b.0] {
                    acc(*b, val(*a).t().dot(dy));
                }
            }
            Op::Transpose(a) => acc(*a, dy.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, -dy);
            }
            Op::Mul(a, b) => {
                acc(*a, dy * val(*b));
                acc(*b, dy * val(*a));
            }
            Op::AddRow(a, row) => {
                acc(*a, dy.clone());
                acc(*row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulRow(a, row) => {
                acc(*a, dy * val(*row));
                acc(*row, (dy * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulCol(a, col) => {
                acc(*a, dy * val(*col));
                acc(*col, (dy * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, c) => acc(*a, dy * *c),
            Op::Relu(a) => {
                let mut g = dy.clone();
                Zip::from(&mut g).and(val(*a)).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                acc(*a, g);
            }
            Op::Tanh(a) => {
                let y = &self.values[idx];
                acc(*a, dy * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Sigmoid(a) => {
                let y = &self.values[idx];
                acc(*a, dy * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Recip(a) => {
                let y = &self.values[idx];
                acc(*a, -(dy * &y.mapv(|r| r * r)));
            }
            Op::SoftmaxRows(a) => {
                let y = &self.values[idx];
                let inner = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, y * &(dy - &inner));
            }
            Op::RowSum(a) => {
                let (n, d) = val(*a).dim();
                let g = dy.broadcast((n, d)).expect("row_sum broadcast").to_owned();
                acc(*a, g);
            }
            Op::RowDot(a, b) => {
                acc(*a, val(*b) * dy);
                acc(*b, val(*a) * dy);
            }
            Op::SumAll(a) => acc(*a, Mat::from_elem(val(*a).dim(), dy[[0, 0]])),
            Op::Column(a, k) => {
                let mut g = Mat::zeros(val(*a).dim());
                g.column_mut(*k).assign(&dy.column(0));
                acc(*a, g);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = val(*p).nrows();
                    acc(*p, dy.slice(ndarray::s![start..start + n, ..]).to_owned());
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let d = val(*p).ncols();
                    acc(*p, dy.slice(ndarray::s![.., start..start + d]).to_owned());
                    start += d;
                }
            }
            Op::GatherRows(a, rows) => {
                let mut g = Mat::zeros(val(*a).dim());
                for (out_row, &src_row) in rows.iter().enumerate() {
                    let mut target = g.row_mut(src_row);
                    target += &dy.row(out_row);
                }
                acc(*a, g);
            }
            Op::SelectRows(mask, a, b) => {
                let mut ga = Mat::zeros(dy.dim());
                let mut gb = Mat::zeros(dy.dim());
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        ga.row_mut(i).assign(&dy.row(i));
                    } else {
                        gb.row_mut(i).assign(&dy.row(i));
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Reshape(a) => {
                let flat: Vec<f64> = dy.iter().copied().collect();
                acc(*a, Mat::from_shape_vec(val(*a).dim(), flat).expect("reshape back"));
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let d = xhat.ncols() as f64;
                let mut g = Mat::zeros(xhat.dim());
                for i in 0..xhat.nrows() {
                    let dyr = dy.row(i);
                    let xr = xhat.row(i);
                    let mean_dy = dyr.sum() / d;
                    let mean_dy_x = dyr.dot(&xr) / d;
                    for j in 0..xhat.ncols() {
                        g[[i, j]] = inv_std[i] * (dyr[j] - mean_dy - xr[j] * mean_dy_x);
                    }
                }
                acc(*x, g);
            }
            Op::L2Normalize { x, norms } => {
                let src = val(*x);
                let mut g = Mat::zeros(src.dim());
                for i in 0..src.nrows() {
                    let n = norms[i];
                    let xr = src.row(i);
                    let proj = xr.dot(&dy.row(i)) / (n * n * n);
                    for j in 0..src.ncols() {
                        g[[i, j]] = dy[[i, j]] / n - xr[j] * proj;
                    }
                }
                acc(*x, g);
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
            } => {
                let scale = dy[[0, 0]] / targets.len().max(1) as f64;
                let mut g = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    g[[i, t]] -= 1.0;
                }
                g *= scale;
                acc(*logits, g);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

pub fn log_softmax_at(row: ndarray::ArrayView1<f64>, t: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[t] - lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn finite_diff<F: Fn(&Mat) -> f64>(f: F, x: &Mat, h: f64) -> Mat {
        let mut g = Mat::zeros(x.dim());
        for idx in 0..x.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            plus[[i, j]] += h;
            minus[[i, j]] -= h;
            g[[i, j]] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / denom < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn composite_expression_matches_finite_differences() {
        let x0 = array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]];
        let w = array![[0.2, -0.4], [0.9, 0.1], [-0.3, 0.5]];
        let build = |g: &mut Graph, x: Var| {
            let wv = g.constant(w.clone());
            let h = g.matmul(x, wv);
            let t = g.tanh(h);
            let n = g.l2_normalize_rows(t);
            let ln = g.layer_norm(x, 1e-5);
            let s = g.sigmoid(ln);
            let rs = g.row_sum(s);
            let m = g.mul_col(n, rs);
            let sm = g.softmax_rows(m);
            let ce = g.cross_entropy(m, &[1, 0]);
            let tot = g.sum(sm);
            let c0 = g.column(sm, 0);
            let c0s = g.sum(c0);
            let a = g.add(ce, c0s);
            g.add(a, tot)
        };
        let f = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let out = build(&mut g, xv);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let xv = g.leaf(x0.clone());
        let out = build(&mut g, xv);
        let grads = g.backward(out);
        let fd = finite_diff(f, &x0, 1e-5);
        assert_close(grads.get(xv).unwrap(), &fd, 1e-5);
    }

    #[test]
    fn structural_ops_route_gradients() {
        let x0 = array![[1.0, 2.0], [3.0, -4.0], [0.5, 0.25]];
        let build = |g: &mut Graph, x: Var| {
            let gathered = g.gather_rows(x, vec![2, 0, 0]);
            let t = g.transpose(gathered);
            let r = g.reshape(t, (3, 2));
            let sel = g.select_rows(vec![true, false, true], r, x);
            let cat = g.concat_rows(&[sel, x]);
            let cc = g.concat_cols(&[cat, cat]);
            let sq = g.mul(cc, cc);
            let rd = g.row_dot(cc, sq);
            g.sum(rd)
        };
        let f = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let out = build(&mut g, xv);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let xv = g.leaf(x0.clone());
        let out = build(&mut g, xv);
        let grads = g.backward(out);
        assert_close(grads.get(xv).unwrap(), &finite_diff(f, &x0, 1e-5), 1e-6);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[1.0, 2.0]]);
        let x = g.leaf(array![[3.0, 4.0]]);
        let p = g.mul(c, x);
        let s = g.sum(p);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn normalize_zero_row_stays_zero() {
        let mut g = Graph::new();
        let x = g.leaf(array![[0.0, 0.0], [3.0, 4.0]]);
        let n = g.l2_normalize_rows(x);
        let v = g.value(n);
        assert_eq!(v.row(0).to_vec(), vec![0.0, 0.0]);
        assert!((v[[1, 0]] - 0.6).abs() < 1e-9);
    }
}
