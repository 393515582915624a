use rand::Rng;

use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    MaskScale(Var, Vec<f64>),
    Softmax(Var, usize),
    LogSoftmax(Var),
    GatherRows(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order so that gradients can be pulled back
/// through them in exact reverse order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional gradient per recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, or zeros when nothing reachable from the loss touched it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn check_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    if t.rank() != 2 {
        return Err(AutodiffError::shape(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `c = alpha * a·b + beta * c` on raw row-major buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents match (m, k, n) under the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        out[r * cols..(r + 1) * cols].iter_mut().for_each(|o| *o /= total);
    }
    out
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = check_matrix("matmul", self.value(a))?;
        let (k2, n) = check_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(AutodiffError::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), (k, 1), self.value(b).data(), (n, 1), 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        same_shape(name, self.value(a), self.value(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Matrix plus a row vector broadcast over every row (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (m, n) = check_matrix("add_row", self.value(a))?;
        if self.value(row).numel() != n {
            return Err(AutodiffError::shape(
                "add_row",
                format!("row of {} elements against {n} columns", self.value(row).numel()),
            ));
        }
        let b = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for r in 0..m {
            out[r * n..(r + 1) * n].iter_mut().zip(b).for_each(|(o, &v)| *o += v);
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a, row), rg))
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let t = self.map(a, |x| alpha * x + beta);
        let rg = self.rg(&[a]);
        self.push(t, Op::Affine(a, alpha), rg)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.map(a, f);
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Elementwise clamp; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Concatenates along `axis` (0 = rows, 1 = columns). Rank-1 inputs join end to end on axis 0.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or_else(|| AutodiffError::shape("concat", "no inputs".into()))?;
        let rank = self.value(*first).rank();
        if parts.iter().any(|p| self.value(*p).rank() != rank) {
            return Err(AutodiffError::shape("concat", "mixed ranks".into()));
        }
        let t = match (rank, axis) {
            (1, 0) => {
                let data: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).data().iter().copied()).collect();
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = self.value(*first).cols();
                if parts.iter().any(|p| self.value(*p).cols() != cols) {
                    return Err(AutodiffError::shape("concat", "row concat needs equal column counts".into()));
                }
                let data: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).data().iter().copied()).collect();
                let rows = data.len() / cols;
                Tensor::new(vec![rows, cols], data)?
            }
            (2, 1) => {
                let rows = self.value(*first).rows();
                if parts.iter().any(|p| self.value(*p).rows() != rows) {
                    return Err(AutodiffError::shape("concat", "column concat needs equal row counts".into()));
                }
                let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for p in parts {
                        data.extend_from_slice(self.value(*p).row(r));
                    }
                }
                Tensor::new(vec![rows, total], data)?
            }
            _ => return Err(AutodiffError::shape("concat", format!("axis {axis} on rank {rank}"))),
        };
        let rg = self.rg(parts);
        Ok(self.push(t, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (m, n) = check_matrix("slice_rows", self.value(a))?;
        if len == 0 || start + len > m {
            return Err(AutodiffError::shape("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![len, n], data)?, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (m, n) = check_matrix("slice_cols", self.value(a))?;
        if len == 0 || start + len > n {
            return Err(AutodiffError::shape("slice_cols", format!("cols {start}..{} of {n}", start + len)));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols(a, start), rg))
    }

    /// Multiplies by a fixed elementwise mask (dropout with a precomputed, pre-scaled mask).
    pub fn mask_scale(&mut self, a: Var, mask: Vec<f64>) -> Result<Var, AutodiffError> {
        if mask.len() != self.value(a).numel() {
            return Err(AutodiffError::shape("mask_scale", "mask length differs from input".into()));
        }
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::MaskScale(a, mask), rg))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales survivors by `1/(1-p)`.
    /// Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::shape("dropout", format!("rate {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(a).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mask_scale(a, mask)
    }

    /// Softmax along `axis` of a matrix, with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (m, n) = check_matrix("softmax", self.value(a))?;
        let data = match axis {
            1 => softmax_rows(self.value(a).data(), m, n),
            0 => transpose(&softmax_rows(&transpose(self.value(a).data(), m, n), n, m), n, m),
            _ => return Err(AutodiffError::shape("softmax", format!("axis {axis} on a matrix"))),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::Softmax(a, axis), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (m, n) = check_matrix("log_softmax", self.value(a))?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out[r * n..(r + 1) * n].iter_mut().zip(row).for_each(|(o, v)| *o = v - lse);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::LogSoftmax(a), rg))
    }

    /// Stacks the selected rows (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let (m, n) = check_matrix("gather_rows", self.value(a))?;
        if idx.is_empty() || idx.iter().any(|&i| i >= m) {
            return Err(AutodiffError::shape("gather_rows", format!("indices out of range for {m} rows")));
        }
        let src = self.value(a);
        let data: Vec<f64> = idx.iter().flat_map(|&i| src.row(i).iter().copied()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![idx.len(), n], data)?, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// `out[i] = a[i, idx[i]]`, shape `[rows, 1]`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let (m, n) = check_matrix("pick_cols", self.value(a))?;
        if idx.len() != m || idx.iter().any(|&c| c >= n) {
            return Err(AutodiffError::shape("pick_cols", format!("{} indices for [{m}, {n}]", idx.len())));
        }
        let src = self.value(a).data();
        let data = idx.iter().enumerate().map(|(r, &c)| src[r * n + c]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, 1], data)?, Op::PickCols(a, idx.to_vec()), rg))
    }

    /// Reverse pass from a one-element loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.pull_back(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if n.requires_grad { g } else { None })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn pull_back(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        // Accumulation buffer for input `v`, or None when `v` does not need a gradient.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.numel();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if let Some(da) = acc!(*a) {
                    // dA += G · Bᵀ
                    gemm(m, n, k, g, (n, 1), self.value(*b).data(), (1, n), 1.0, da);
                }
                if let Some(db) = acc!(*b) {
                    // dB += Aᵀ · G
                    gemm(k, m, n, self.value(*a).data(), (1, k), g, (n, 1), 1.0, db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = acc!(v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = acc!(*a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = acc!(*b) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::AddRow(a, row) => {
                if let Some(d) = acc!(*a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                let n = node.value.cols();
                if let Some(d) = acc!(*row) {
                    for chunk in g.chunks(n) {
                        d.iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = acc!(*a) {
                    for ((d, g), b) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * b;
                    }
                }
                if let Some(d) = acc!(*b) {
                    for ((d, g), a) in d.iter_mut().zip(g).zip(av) {
                        *d += g * a;
                    }
                }
            }
            Op::Affine(a, alpha) => {
                if let Some(d) = acc!(*a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += alpha * g);
                }
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let (pn, pc) = (pv.numel(), pv.cols());
                    let out_cols = node.value.cols();
                    if let Some(d) = acc!(*p) {
                        if *axis == 0 {
                            d.iter_mut().zip(&g[offset..offset + pn]).for_each(|(d, g)| *d += g);
                        } else {
                            for (r, drow) in d.chunks_mut(pc).enumerate() {
                                let src = &g[r * out_cols + offset..r * out_cols + offset + pc];
                                drow.iter_mut().zip(src).for_each(|(d, g)| *d += g);
                            }
                        }
                    }
                    offset += if *axis == 0 { pn } else { pc };
                }
            }
            Op::SliceRows(a, start) => {
                let n = node.value.cols();
                if let Some(d) = acc!(*a) {
                    d[start * n..start * n + g.len()].iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::SliceCols(a, start) => {
                let len = node.value.cols();
                let n = self.value(*a).cols();
                if let Some(d) = acc!(*a) {
                    for (r, grow) in g.chunks(len).enumerate() {
                        d[r * n + start..r * n + start + len].iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = acc!(*a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = acc!(*a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(d) = acc!(*a) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(d) = acc!(*a) {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y;
                    }
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                if let Some(d) = acc!(*a) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                        *d += g / x;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                if let Some(d) = acc!(*a) {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                        if *x >= *lo && *x <= *hi {
                            *d += g;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = acc!(*a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                if let Some(d) = acc!(*a) {
                    d.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::MaskScale(a, mask) => {
                if let Some(d) = acc!(*a) {
                    for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(d) = acc!(*a) {
                    if *axis == 1 {
                        for r in 0..m {
                            let s = r * n..(r + 1) * n;
                            let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(g, y)| g * y).sum();
                            for c in s {
                                d[c] += y[c] * (g[c] - dot);
                            }
                        }
                    } else {
                        for c in 0..n {
                            let dot: f64 = (0..m).map(|r| g[r * n + c] * y[r * n + c]).sum();
                            for r in 0..m {
                                d[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = node.value.cols();
                if let Some(d) = acc!(*a) {
                    for (r, (grow, yrow)) in g.chunks(n).zip(y.chunks(n)).enumerate() {
                        let gsum: f64 = grow.iter().sum();
                        for c in 0..n {
                            d[r * n + c] += grow[c] - yrow[c].exp() * gsum;
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let n = node.value.cols();
                if let Some(d) = acc!(*a) {
                    for (grow, &src) in g.chunks(n).zip(idx) {
                        d[src * n..(src + 1) * n].iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::PickCols(a, idx) => {
                let n = self.value(*a).cols();
                if let Some(d) = acc!(*a) {
                    for (r, &c) in idx.iter().enumerate() {
                        d[r * n + c] += g[r];
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
