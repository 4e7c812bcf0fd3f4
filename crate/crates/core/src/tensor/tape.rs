use std::cell::Cell;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{MatMut, MatRef, Scalar};

const LAYER_NORM_EPS: f64 = 1e-5;

thread_local! {
    static BACKWARD_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of backward passes executed on the current thread.
pub fn backward_calls_on_this_thread() -> u64 {
    BACKWARD_CALLS.with(|c| c.get())
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, b: Var },
    AddCol { x: Var, b: Var },
    Mul { a: Var, b: Var },
    MulConst { a: Var, mask: Vec<T> },
    Scale { a: Var, s: T },
    Relu { a: Var },
    Softmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Conv1d { x: Var, w: Var, b: Var },
    SliceCols { a: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
    MeanRows { a: Var },
    Sum { a: Var },
    Reshape { a: Var },
    BceWithLogits { logits: Var, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Whether the tape may be differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Ordered record of primitive operations, differentiated in reverse.
///
/// Nodes are appended as operations execute, so every node's parents
/// precede it and the reverse sweep is a plain backwards iteration.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    backward_done: bool,
}

/// Gradients of a scalar root with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), mode: Mode::Train, backward_done: false }
    }

    /// A tape that never tracks gradients and refuses `backward`.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), mode: Mode::Inference, backward_done: false }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Allows another backward pass over the same recording.
    pub fn reset(&mut self) {
        self.backward_done = false;
    }

    /// Records an input tensor. It is differentiated iff `requires_grad` is set
    /// and the tape is in training mode.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad && self.mode == Mode::Train;
        self.push(t, Op::Leaf, needs_grad)
    }

    /// Records a tensor that is never differentiated.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul")?;
        let (k2, n) = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm_raw(
            MatRef::row_major(self.value(a).data(), m, k),
            MatRef::row_major(self.value(b).data(), k, n),
            MatMut::row_major(&mut out, m, n),
            false,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b }, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Transpose { a }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    /// `x + b` with `b` broadcast along every leading axis.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(b) != [n] {
            return Err(Error::dim("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let data = self.value(x).data().chunks_exact(n).flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c)).collect();
        let t = Tensor::new(self.shape(x), data)?;
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(t, Op::AddRow { x, b }, ng))
    }

    /// `x[i, j] + b[i]` for a matrix `x`.
    pub fn add_col(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(x, "add_col")?;
        if self.shape(b) != [m] {
            return Err(Error::dim("add_col", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(n)
            .zip(bias)
            .flat_map(|(row, &c)| row.iter().map(move |&v| v + c))
            .collect();
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], data)?, Op::AddCol { x, b }, ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale { a, s }, ng)
    }

    /// Inverted dropout: zeroes each element with probability `p` and
    /// rescales survivors by `1/(1-p)`. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> =
            (0..self.value(a).len()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let data = self.value(a).data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::MulConst { a, mask }, ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(a);
        self.push(t, Op::Relu { a }, ng)
    }

    /// Softmax over the last axis, computed with the row maximum subtracted.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if !x.all_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let n = x.last_dim();
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(x.shape(), out)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Softmax { a }, ng))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let nf = T::lit(n as f64);
        let xs = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xs.len() / n;
        let mut xhat = Vec::with_capacity(xs.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks_exact(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + bt[j]);
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng))
    }

    /// Stride-1 1D convolution over time with symmetric zero padding.
    ///
    /// `x` is `[T, C_in]`, `w` is `[C_out, C_in, k]` with odd `k`, `b` is
    /// `[C_out]`; the output is `[T, C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (t_len, c_in) = self.mat_dims(x, "conv1d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::dim("conv1d", self.shape(x), &ws));
        }
        let (c_out, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel length must be odd, got {k}")));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::dim("conv1d bias", &ws, self.shape(b)));
        }
        let xp = pad_time(self.value(x).data(), t_len, c_in, k);
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..t_len).flat_map(|_| bias.iter().copied()).collect();
        let wd = self.value(w).data();
        for j in 0..k {
            T::gemm_raw(
                MatRef { data: &xp, offset: j * c_in, rows: t_len, cols: c_in, row_stride: c_in, col_stride: 1 },
                MatRef { data: wd, offset: j, rows: c_in, cols: c_out, row_stride: k, col_stride: c_in * k },
                MatMut::row_major(&mut out, t_len, c_out),
                true,
            );
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Tensor::new(&[t_len, c_out], out)?, Op::Conv1d { x, w, b }, ng))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(a, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", &[m, n], &[start, len]));
        }
        let src = self.value(a).data();
        let data = src.chunks_exact(n).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&[m, len], data)?, Op::SliceCols { a, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Validation("concat_cols of nothing".into()))?;
        let (m, _) = self.mat_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mi, ni) = self.mat_dims(p, "concat_cols")?;
            if mi != m {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(&[m, total], data)?, Op::ConcatCols { parts: parts.to_vec() }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Validation("concat_rows of nothing".into()))?;
        let (_, n) = self.mat_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (mi, ni) = self.mat_dims(p, "concat_rows")?;
            if ni != n {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += mi;
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(&[rows, n], data)?, Op::ConcatRows { parts: parts.to_vec() }, ng))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(a, "mean_rows")?;
        let mut out = vec![T::zero(); n];
        for row in self.value(a).data().chunks_exact(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let mf = T::lit(m as f64);
        out.iter_mut().for_each(|o| *o /= mf);
        let ng = self.ng(a);
        Ok(self.push(Tensor::new(&[1, n], out)?, Op::MeanRows { a }, ng))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape { a }, ng))
    }

    /// `x @ w + b` over the last axis of a matrix.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// evaluated in the fused form `max(z,0) - z*y + ln(1 + e^{-|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(Error::dim("bce_with_logits", self.shape(logits), targets.shape()));
        }
        if let Some(bad) = targets.data().iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(Error::Validation(format!("BCE target {bad} is not binary")));
        }
        let z = self.value(logits).data();
        let n = T::lit(z.len() as f64);
        let total = z.iter().zip(targets.data()).map(|(&z, &y)| bce_term(z, y)).sum::<T>() / n;
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(total), Op::BceWithLogits { logits, targets: targets.data().to_vec() }, ng))
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Every `requires_grad` leaf gets a gradient of its own shape (zeros if
    /// it does not influence `root`). A second call requires [`Tape::reset`].
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if self.mode == Mode::Inference {
            return Err(Error::Contract("backward called on an inference tape".into()));
        }
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape; call reset() first".into()));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!("backward root must be scalar, got shape {:?}", self.shape(root))));
        }
        self.backward_done = true;
        BACKWARD_CALLS.with(|c| c.set(c.get() + 1));

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                if matches!(node.op, Op::Leaf) && node.needs_grad {
                    let data = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                    Some(Tensor::new(node.value.shape(), data).expect("gradient matches leaf shape"))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.mat_dims(*a, "matmul")?;
                let n = self.shape(*b)[1];
                if self.ng(*a) {
                    let da = grad_slot(grads, *a, m * k);
                    T::gemm_raw(
                        MatRef::row_major(g, m, n),
                        MatRef::row_major(self.value(*b).data(), k, n).t(),
                        MatMut::row_major(da, m, k),
                        true,
                    );
                }
                if self.ng(*b) {
                    let db = grad_slot(grads, *b, k * n);
                    T::gemm_raw(
                        MatRef::row_major(self.value(*a).data(), m, k).t(),
                        MatRef::row_major(g, m, n),
                        MatMut::row_major(db, k, n),
                        true,
                    );
                }
            }
            Op::Transpose { a } => {
                let (m, n) = self.mat_dims(*a, "transpose")?;
                let da = grad_slot(grads, *a, m * n);
                for r in 0..m {
                    for c in 0..n {
                        da[r * n + c] += g[c * m + r];
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        accumulate(grad_slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddRow { x, b } => {
                if self.ng(*x) {
                    accumulate(grad_slot(grads, *x, g.len()), g);
                }
                if self.ng(*b) {
                    let n = self.value(*b).len();
                    let db = grad_slot(grads, *b, n);
                    for row in g.chunks_exact(n) {
                        accumulate(db, row);
                    }
                }
            }
            Op::AddCol { x, b } => {
                if self.ng(*x) {
                    accumulate(grad_slot(grads, *x, g.len()), g);
                }
                if self.ng(*b) {
                    let m = self.value(*b).len();
                    let n = g.len() / m;
                    let db = grad_slot(grads, *b, m);
                    for (d, row) in db.iter_mut().zip(g.chunks_exact(n)) {
                        *d += row.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.ng(*a) {
                    let other = self.value(*b).data();
                    let da = grad_slot(grads, *a, g.len());
                    for ((d, &gi), &o) in da.iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
                if self.ng(*b) {
                    let other = self.value(*a).data();
                    let db = grad_slot(grads, *b, g.len());
                    for ((d, &gi), &o) in db.iter_mut().zip(g).zip(other) {
                        *d += gi * o;
                    }
                }
            }
            Op::MulConst { a, mask } => {
                let da = grad_slot(grads, *a, g.len());
                for ((d, &gi), &m) in da.iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }
            Op::Scale { a, s } => {
                let da = grad_slot(grads, *a, g.len());
                for (d, &gi) in da.iter_mut().zip(g) {
                    *d += gi * *s;
                }
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                let da = grad_slot(grads, *a, g.len());
                for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                    if xi > T::zero() {
                        *d += gi;
                    }
                }
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let da = grad_slot(grads, *a, g.len());
                for ((drow, grow), yrow) in da.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                    let dot = grow.iter().zip(yrow).map(|(&gi, &yi)| gi * yi).sum::<T>();
                    for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += yi * (gi - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = node.value.last_dim();
                let gam = self.value(*gamma).data();
                if self.ng(*gamma) {
                    let dg = grad_slot(grads, *gamma, n);
                    for (grow, hrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for ((d, &gi), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *d += gi * h;
                        }
                    }
                }
                if self.ng(*beta) {
                    let db = grad_slot(grads, *beta, n);
                    for grow in g.chunks_exact(n) {
                        accumulate(db, grow);
                    }
                }
                if self.ng(*x) {
                    let nf = T::lit(n as f64);
                    let dx = grad_slot(grads, *x, g.len());
                    for (((dxr, grow), hrow), &r) in
                        dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(xhat.chunks_exact(n)).zip(rstd)
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..n {
                            let dh = grow[j] * gam[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= nf;
                        mean_dh_h /= nf;
                        for j in 0..n {
                            let dh = grow[j] * gam[j];
                            dxr[j] += r * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b } => {
                let (t_len, c_in) = self.mat_dims(*x, "conv1d")?;
                let ws = self.shape(*w);
                let (c_out, k) = (ws[0], ws[2]);
                let pad = (k - 1) / 2;
                let wd = self.value(*w).data();
                if self.ng(*x) {
                    let mut dxp = vec![T::zero(); (t_len + k - 1) * c_in];
                    for j in 0..k {
                        T::gemm_raw(
                            MatRef::row_major(g, t_len, c_out),
                            MatRef { data: wd, offset: j, rows: c_out, cols: c_in, row_stride: c_in * k, col_stride: k },
                            MatMut { data: &mut dxp, offset: j * c_in, rows: t_len, cols: c_in, row_stride: c_in, col_stride: 1 },
                            true,
                        );
                    }
                    accumulate(grad_slot(grads, *x, t_len * c_in), &dxp[pad * c_in..(pad + t_len) * c_in]);
                }
                if self.ng(*w) {
                    let xp = pad_time(self.value(*x).data(), t_len, c_in, k);
                    let dw = grad_slot(grads, *w, c_out * c_in * k);
                    for j in 0..k {
                        T::gemm_raw(
                            MatRef { data: &xp, offset: j * c_in, rows: c_in, cols: t_len, row_stride: 1, col_stride: c_in },
                            MatRef::row_major(g, t_len, c_out),
                            MatMut { data: dw, offset: j, rows: c_in, cols: c_out, row_stride: k, col_stride: c_in * k },
                            true,
                        );
                    }
                }
                if self.ng(*b) {
                    let db = grad_slot(grads, *b, c_out);
                    for row in g.chunks_exact(c_out) {
                        accumulate(db, row);
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let (m, n) = self.mat_dims(*a, "slice_cols")?;
                let len = node.value.last_dim();
                let da = grad_slot(grads, *a, m * n);
                for (drow, grow) in da.chunks_exact_mut(n).zip(g.chunks_exact(len)) {
                    accumulate(&mut drow[*start..*start + len], grow);
                }
            }
            Op::ConcatCols { parts } => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = self.mat_dims(p, "concat_cols")?;
                    if self.ng(p) {
                        let dp = grad_slot(grads, p, m * w);
                        for (drow, grow) in dp.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                            accumulate(drow, &grow[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.ng(p) {
                        accumulate(grad_slot(grads, p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::MeanRows { a } => {
                let (m, n) = self.mat_dims(*a, "mean_rows")?;
                let inv = T::one() / T::lit(m as f64);
                let da = grad_slot(grads, *a, m * n);
                for drow in da.chunks_exact_mut(n) {
                    for (d, &gi) in drow.iter_mut().zip(g) {
                        *d += gi * inv;
                    }
                }
            }
            Op::Sum { a } => {
                let len = self.value(*a).len();
                let da = grad_slot(grads, *a, len);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Reshape { a } => {
                accumulate(grad_slot(grads, *a, g.len()), g);
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits).data();
                let scale = g[0] / T::lit(z.len() as f64);
                let dz = grad_slot(grads, *logits, z.len());
                for ((d, &zi), &yi) in dz.iter_mut().zip(z).zip(targets) {
                    *d += (sigmoid(zi) - yi) * scale;
                }
            }
        }
        Ok(())
    }
}

fn grad_slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn pad_time<T: Scalar>(x: &[T], t_len: usize, c_in: usize, k: usize) -> Vec<T> {
    let pad = (k - 1) / 2;
    let mut xp = vec![T::zero(); (t_len + k - 1) * c_in];
    xp[pad * c_in..(pad + t_len) * c_in].copy_from_slice(x);
    xp
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn bce_term<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}
