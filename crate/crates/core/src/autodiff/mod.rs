//! Reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! Operations are recorded eagerly on a [`Tape`]: each call computes the
//! forward value immediately and appends a node, so the node order is a
//! valid topological order by construction. [`Tape::backward`] replays the
//! tape in reverse, accumulating vector-Jacobian products into every node
//! that (transitively) depends on a trainable parameter.
//!
//! Scalar reductions accumulate in `f64` while tensor storage stays `f32`.

mod eval64;
mod gradcheck;

pub use gradcheck::gradient_check;

use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub(crate) fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    GlobalAvgPool(Var),
    MaxMany(Vec<Var>),
    Concat { xs: Vec<Var>, axis: usize },
    MeanAll(Var),
    Mse { a: Var, b: Var },
    SumSqDiff { a: Var, b: Var },
    L2Norm(Var),
    PairDistMean { a: Var, b: Var },
    Bce { p: Var, y: Var },
    Cce { logits: Var, labels: Vec<usize> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f32 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::MaxMany(_) => "max_many",
            Op::Concat { .. } => "concat",
            Op::MeanAll(_) => "mean_all",
            Op::Mse { .. } => "mse",
            Op::SumSqDiff { .. } => "sum_sq_diff",
            Op::L2Norm(_) => "l2_norm",
            Op::PairDistMean { .. } => "pair_dist_mean",
            Op::Bce { .. } => "bce",
            Op::Cce { .. } => "cce",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Probability clamp used by the cross-entropy losses.
pub const PROB_EPS: f32 = 1e-7;
const NORM_GUARD: f32 = 1e-12;

/// Recording tape. Single-threaded during a forward/backward pass;
/// distinct tapes may be used from different threads concurrently.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    grads: Vec<Option<Vec<f32>>>,
    check_finite: bool,
    frozen_prefixes: Vec<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            grads: Vec::new(),
            check_finite: true,
            frozen_prefixes: Vec::new(),
        }
    }

    /// Parameters whose names start with `prefix` bind as plain inputs:
    /// no gradients are computed or reported for them on this tape.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        self.frozen_prefixes.push(prefix.to_string());
    }

    /// Disable the per-op finite scan (hot loops that check the loss instead).
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if any flowed there.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Registers a non-trainable input leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// Registers an input leaf that participates in gradient computation
    /// (used when checking gradients w.r.t. data rather than parameters).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    /// Binds a named parameter from `store` onto the tape (value snapshot).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        if self.frozen_prefixes.iter().any(|p| name.starts_with(p.as_str())) {
            return Ok(self.push_leaf(t.clone(), false));
        }
        let v = self.push_leaf(t.clone(), true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Cuts the gradient flow: a new leaf carrying a copy of `v`'s value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, t: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let needs_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite {
                op: format!("{}#{}", op.name(), self.nodes.len()),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Tanh(x) | Op::Softmax(x) => vec![*x],
            Op::GlobalAvgPool(x) | Op::MeanAll(x) | Op::L2Norm(x) | Op::Scale { x, .. } => {
                vec![*x]
            }
            Op::MaxMany(xs) => xs.clone(),
            Op::Concat { xs, .. } => xs.clone(),
            Op::Mse { a, b }
            | Op::SumSqDiff { a, b }
            | Op::PairDistMean { a, b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b } => vec![*a, *b],
            Op::Bce { p, y } => vec![*p, *y],
            Op::Cce { logits, .. } => vec![*logits],
        }
    }

    fn err_shape(&self, op: &str, detail: String) -> Error {
        Error::ShapeMismatch {
            op: format!("{op}#{}", self.nodes.len()),
            detail,
        }
    }

    // ── Operators ────────────────────────────────────────────────────

    /// `y = x·W + b` for `x` of shape `[B, I]` or `[I]`, `W` `[I, O]`, `b` `[O]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, in_dim, keep_rank1) = match self.shape(x) {
            [i] => (1usize, *i, true),
            [r, i] => (*r, *i, false),
            s => return Err(self.err_shape("affine", format!("x must be rank 1 or 2, got {s:?}"))),
        };
        let (wi, wo) = match self.shape(w) {
            [i, o] => (*i, *o),
            s => return Err(self.err_shape("affine", format!("W must be rank 2, got {s:?}"))),
        };
        if wi != in_dim {
            return Err(self.err_shape(
                "affine",
                format!("x inner dim {in_dim} vs W rows {wi}"),
            ));
        }
        match self.shape(b) {
            [o] if *o == wo => {}
            s => return Err(self.err_shape("affine", format!("bias must be [{wo}], got {s:?}"))),
        }
        let xs = self.nodes[x.0].value.data();
        let ws = self.nodes[w.0].value.data();
        let bs = self.nodes[b.0].value.data();
        let mut out = vec![0.0f32; rows * wo];
        for r in 0..rows {
            let orow = &mut out[r * wo..(r + 1) * wo];
            orow.copy_from_slice(bs);
            let xrow = &xs[r * in_dim..(r + 1) * in_dim];
            for (i, &xv) in xrow.iter().enumerate() {
                if xv != 0.0 {
                    let wrow = &ws[i * wo..(i + 1) * wo];
                    for (o, &wv) in wrow.iter().enumerate() {
                        orow[o] += xv * wv;
                    }
                }
            }
        }
        let shape = if keep_rank1 { vec![wo] } else { vec![rows, wo] };
        self.push(Tensor::new(shape, out)?, Op::Affine { x, w, b })
    }

    /// 2-D convolution with zero padding: `x` `[B, C, H, W]`, `w` `[O, C, kh, kw]`,
    /// `b` `[O]`, output `[B, O, OH, OW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (bs, c, h, wd) = match self.shape(x) {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(self.err_shape("conv2d", format!("x must be rank 4, got {s:?}"))),
        };
        let (oc, wc, kh, kw) = match self.shape(w) {
            [o, c, kh, kw] => (*o, *c, *kh, *kw),
            s => return Err(self.err_shape("conv2d", format!("w must be rank 4, got {s:?}"))),
        };
        if wc != c {
            return Err(self.err_shape("conv2d", format!("x channels {c} vs kernel channels {wc}")));
        }
        match self.shape(b) {
            [o] if *o == oc => {}
            s => return Err(self.err_shape("conv2d", format!("bias must be [{oc}], got {s:?}"))),
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(self.err_shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {pad})"),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let xs = self.nodes[x.0].value.data();
        let ws = self.nodes[w.0].value.data();
        let bias = self.nodes[b.0].value.data();
        let mut out = vec![0.0f32; bs * oc * oh * ow];
        for bb in 0..bs {
            for o in 0..oc {
                let obase = ((bb * oc) + o) * oh * ow;
                out[obase..obase + oh * ow].fill(bias[o]);
                for cc in 0..c {
                    let xbase = ((bb * c) + cc) * h * wd;
                    let wbase = ((o * c) + cc) * kh * kw;
                    for oy in 0..oh {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * wd;
                            let wrow = wbase + ky * kw;
                            let orow = obase + oy * ow;
                            for ox in 0..ow {
                                let mut acc = 0.0f32;
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += xs[xrow + ix as usize] * ws[wrow + kx];
                                }
                                out[orow + ox] += acc;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![bs, oc, oh, ow], out)?,
            Op::Conv2d { x, w, b, stride, pad },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let out: Vec<f32> = v.data().iter().map(|&a| a.max(0.0)).collect();
        self.push(Tensor::new(v.shape().to_vec(), out)?, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let out: Vec<f32> = v.data().iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect();
        self.push(Tensor::new(v.shape().to_vec(), out)?, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let out: Vec<f32> = v.data().iter().map(|&a| a.tanh()).collect();
        self.push(Tensor::new(v.shape().to_vec(), out)?, Op::Tanh(x))
    }

    /// Softmax along the last axis of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let (rows, cols) = match v.shape() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => return Err(self.err_shape("softmax", format!("rank 1 or 2 required, got {s:?}"))),
        };
        if cols == 0 {
            return Err(self.err_shape("softmax", "empty axis".into()));
        }
        let mut out = vec![0.0f32; rows * cols];
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let orow = &mut out[r * cols..(r + 1) * cols];
            softmax_row(row, orow);
        }
        self.push(Tensor::new(v.shape().to_vec(), out)?, Op::Softmax(x))
    }

    /// `[B, C, H, W]` → `[B, C]` mean over the spatial dims.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let (b, c, h, w) = match v.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(self.err_shape("global_avg_pool", format!("rank 4 required, got {s:?}"))),
        };
        let plane = h * w;
        let mut out = vec![0.0f32; b * c];
        for i in 0..b * c {
            let mut acc = 0.0f64;
            for &p in &v.data()[i * plane..(i + 1) * plane] {
                acc += p as f64;
            }
            out[i] = (acc / plane as f64) as f32;
        }
        self.push(Tensor::new(vec![b, c], out)?, Op::GlobalAvgPool(x))
    }

    /// Elementwise max across a non-empty set of equally shaped tensors.
    pub fn max_many(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("max_many needs at least one input".into()));
        }
        let shape = self.shape(xs[0]).to_vec();
        for &v in xs.iter().skip(1) {
            if self.shape(v) != shape {
                return Err(self.err_shape(
                    "max_many",
                    format!("shapes differ: {:?} vs {:?}", shape, self.shape(v)),
                ));
            }
        }
        let n = shape.iter().product();
        let mut out = self.nodes[xs[0].0].value.data().to_vec();
        for &v in xs.iter().skip(1) {
            let d = self.nodes[v.0].value.data();
            for i in 0..n {
                if d[i] > out[i] {
                    out[i] = d[i];
                }
            }
        }
        self.push(Tensor::new(shape, out)?, Op::MaxMany(xs.to_vec()))
    }

    /// Concatenation along `axis`; inputs must agree on every other dim.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat needs at least one input".into()));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(self.err_shape(
                "concat",
                format!("axis {axis} out of range for rank {}", first.len()),
            ));
        }
        let mut axis_total = 0usize;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len() {
                return Err(self.err_shape("concat", "rank mismatch".into()));
            }
            for (d, (&a, &b)) in s.iter().zip(first.iter()).enumerate() {
                if d != axis && a != b {
                    return Err(self.err_shape(
                        "concat",
                        format!("dim {d} differs: {a} vs {b}"),
                    ));
                }
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0f32; shape.iter().product()];
        let out_stride = axis_total * inner;
        let mut offset = 0usize;
        for &v in xs {
            let s = self.shape(v).to_vec();
            let block = s[axis] * inner;
            let data = self.nodes[v.0].value.data();
            for o in 0..outer {
                let src = &data[o * block..(o + 1) * block];
                let dst = o * out_stride + offset;
                out[dst..dst + block].copy_from_slice(src);
            }
            offset += block;
        }
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// Mean over all elements, as a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.numel() == 0 {
            return Err(self.err_shape("mean_all", "empty tensor".into()));
        }
        let mut acc = 0.0f64;
        for &a in v.data() {
            acc += a as f64;
        }
        let m = (acc / v.numel() as f64) as f32;
        self.push(Tensor::scalar(m), Op::MeanAll(x))
    }

    /// Mean squared error `(1/n) Σ (a-b)²`, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mse", a, b)?;
        let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut acc = 0.0f64;
        for (&x, &y) in av.iter().zip(bv) {
            let d = (x - y) as f64;
            acc += d * d;
        }
        let m = (acc / av.len() as f64) as f32;
        self.push(Tensor::scalar(m), Op::Mse { a, b })
    }

    /// Squared-error reduction `Σ (a-b)²`, as a scalar.
    pub fn sum_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sum_sq_diff", a, b)?;
        let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut acc = 0.0f64;
        for (&x, &y) in av.iter().zip(bv) {
            let d = (x - y) as f64;
            acc += d * d;
        }
        self.push(Tensor::scalar(acc as f32), Op::SumSqDiff { a, b })
    }

    /// Euclidean norm `sqrt(Σ x²)`, as a scalar.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let mut acc = 0.0f64;
        for &a in v.data() {
            acc += (a as f64) * (a as f64);
        }
        self.push(Tensor::scalar(acc.sqrt() as f32), Op::L2Norm(x))
    }

    /// Mean over rows of the row-wise Euclidean distance between `a` and `b`
    /// (rank-1 inputs are treated as a single row). Scalar output.
    pub fn pair_dist_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("pair_dist_mean", a, b)?;
        let (rows, cols) = match self.shape(a) {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => {
                return Err(self.err_shape(
                    "pair_dist_mean",
                    format!("rank 1 or 2 required, got {s:?}"),
                ))
            }
        };
        let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut acc = 0.0f64;
        for r in 0..rows {
            let mut sq = 0.0f64;
            for i in r * cols..(r + 1) * cols {
                let d = (av[i] - bv[i]) as f64;
                sq += d * d;
            }
            acc += sq.sqrt();
        }
        self.push(
            Tensor::scalar((acc / rows as f64) as f32),
            Op::PairDistMean { a, b },
        )
    }

    /// Binary cross-entropy of probabilities `p` against targets `y`,
    /// mean over elements; `p` clamped to `[PROB_EPS, 1-PROB_EPS]`.
    pub fn bce(&mut self, p: Var, y: Var) -> Result<Var> {
        self.check_same_shape("bce", p, y)?;
        let (pv, yv) = (self.nodes[p.0].value.data(), self.nodes[y.0].value.data());
        let mut acc = 0.0f64;
        for (&pi, &yi) in pv.iter().zip(yv) {
            let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS) as f64;
            acc += -(yi as f64 * pc.ln() + (1.0 - yi as f64) * (1.0 - pc).ln());
        }
        let m = (acc / pv.len() as f64) as f32;
        self.push(Tensor::scalar(m), Op::Bce { p, y })
    }

    /// Categorical cross-entropy of logits (rank 1 = one sample,
    /// rank 2 = `[B, K]`) against integer labels, mean over the batch.
    pub fn cce(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, cols) = match self.shape(logits) {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => return Err(self.err_shape("cce", format!("rank 1 or 2 required, got {s:?}"))),
        };
        if labels.len() != rows {
            return Err(self.err_shape(
                "cce",
                format!("{} labels for {} rows", labels.len(), rows),
            ));
        }
        for &l in labels {
            if l >= cols {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range for {cols} classes"
                )));
            }
        }
        let lv = self.nodes[logits.0].value.data();
        let mut acc = 0.0f64;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0f64;
            for &z in row {
                sum += (z as f64 - max).exp();
            }
            acc += max + sum.ln() - row[label] as f64;
        }
        let m = (acc / rows as f64) as f32;
        self.push(
            Tensor::scalar(m),
            Op::Cce {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let out: Vec<f32> = v.data().iter().map(|&a| a * c).collect();
        self.push(Tensor::new(v.shape().to_vec(), out)?, Op::Scale { x, c })
    }

    /// Elementwise op over equal shapes, or `b` rank-1 broadcast across the
    /// rows of a rank-2 `a` (lengths must match `a`'s last dim).
    fn binary_elementwise(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let broadcast = broadcast_kind(&sa, &sb).ok_or_else(|| {
            self.err_shape(name, format!("incompatible shapes {sa:?} vs {sb:?}"))
        })?;
        let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let out: Vec<f32> = match broadcast {
            Broadcast::Same => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::RowWise => {
                let cols = bv.len();
                av.iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bv[i % cols]))
                    .collect()
            }
        };
        self.push(Tensor::new(sa, out)?, op)
    }

    fn check_same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.err_shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar `loss` node. Gradients become available
    /// through [`Tape::grad`] and [`Tape::param_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::LossNotScalar(lv.shape().to_vec()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.backward_op(idx, &op, &dy)?;
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&mut self, v: Var, contrib: &[f32]) {
        match &mut self.grads[v.0] {
            Some(g) => {
                for (gi, &c) in g.iter_mut().zip(contrib) {
                    *gi += c;
                }
            }
            None => self.grads[v.0] = Some(contrib.to_vec()),
        }
    }

    fn accumulate_owned(&mut self, v: Var, contrib: Vec<f32>) {
        match &mut self.grads[v.0] {
            Some(g) => {
                for (gi, c) in g.iter_mut().zip(contrib) {
                    *gi += c;
                }
            }
            None => self.grads[v.0] = Some(contrib),
        }
    }

    fn backward_op(&mut self, idx: usize, op: &Op, dy: &[f32]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (rows, in_dim) = match self.shape(*x) {
                    [i] => (1usize, *i),
                    [r, i] => (*r, *i),
                    _ => unreachable!(),
                };
                let out_dim = self.shape(*w)[1];
                if self.wants(*x) {
                    let ws = self.nodes[w.0].value.data();
                    let mut dx = vec![0.0f32; rows * in_dim];
                    for r in 0..rows {
                        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
                        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                        for i in 0..in_dim {
                            let wrow = &ws[i * out_dim..(i + 1) * out_dim];
                            let mut acc = 0.0f64;
                            for (o, &wv) in wrow.iter().enumerate() {
                                acc += dyr[o] as f64 * wv as f64;
                            }
                            dxr[i] = acc as f32;
                        }
                    }
                    self.accumulate_owned(*x, dx);
                }
                if self.wants(*w) {
                    let xs = self.nodes[x.0].value.data();
                    let mut dw = vec![0.0f64; in_dim * out_dim];
                    for r in 0..rows {
                        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
                        let xrow = &xs[r * in_dim..(r + 1) * in_dim];
                        for (i, &xv) in xrow.iter().enumerate() {
                            if xv != 0.0 {
                                let dwrow = &mut dw[i * out_dim..(i + 1) * out_dim];
                                for (o, &d) in dyr.iter().enumerate() {
                                    dwrow[o] += xv as f64 * d as f64;
                                }
                            }
                        }
                    }
                    self.accumulate_owned(*w, dw.into_iter().map(|v| v as f32).collect());
                }
                if self.wants(*b) {
                    let mut db = vec![0.0f64; out_dim];
                    for r in 0..rows {
                        for o in 0..out_dim {
                            db[o] += dy[r * out_dim + o] as f64;
                        }
                    }
                    self.accumulate_owned(*b, db.into_iter().map(|v| v as f32).collect());
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                self.backward_conv2d(*x, *w, *b, *stride, *pad, dy)?;
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.nodes[x.0].value.data();
                    let dx: Vec<f32> = xv
                        .iter()
                        .zip(dy)
                        .map(|(&a, &d)| if a > 0.0 { d } else { 0.0 })
                        .collect();
                    self.accumulate_owned(*x, dx);
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let yv = self.nodes[idx].value.data();
                    let dx: Vec<f32> = yv.iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect();
                    self.accumulate_owned(*x, dx);
                }
            }
            Op::Tanh(x) => {
                if self.wants(*x) {
                    let yv = self.nodes[idx].value.data();
                    let dx: Vec<f32> = yv.iter().zip(dy).map(|(&t, &d)| d * (1.0 - t * t)).collect();
                    self.accumulate_owned(*x, dx);
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let yv = self.nodes[idx].value.data();
                    let (rows, cols) = match self.shape(*x) {
                        [c] => (1, *c),
                        [r, c] => (*r, *c),
                        _ => unreachable!(),
                    };
                    let mut dx = vec![0.0f32; rows * cols];
                    for r in 0..rows {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let d = &dy[r * cols..(r + 1) * cols];
                        let mut dot = 0.0f64;
                        for (yi, di) in y.iter().zip(d) {
                            dot += (*yi as f64) * (*di as f64);
                        }
                        let dxr = &mut dx[r * cols..(r + 1) * cols];
                        for i in 0..cols {
                            dxr[i] = y[i] * (d[i] - dot as f32);
                        }
                    }
                    self.accumulate_owned(*x, dx);
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.wants(*x) {
                    let s = self.shape(*x);
                    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let plane = h * w;
                    let mut dx = vec![0.0f32; b * c * plane];
                    for i in 0..b * c {
                        let g = dy[i] / plane as f32;
                        dx[i * plane..(i + 1) * plane].fill(g);
                    }
                    self.accumulate_owned(*x, dx);
                }
            }
            Op::MaxMany(xs) => {
                let n = self.nodes[idx].value.numel();
                // Route each element's gradient to the first input attaining
                // the max (lowest index wins ties).
                let mut winner = vec![0usize; n];
                let mut best = self.nodes[xs[0].0].value.data().to_vec();
                for (k, &v) in xs.iter().enumerate().skip(1) {
                    let d = self.nodes[v.0].value.data();
                    for i in 0..n {
                        if d[i] > best[i] {
                            best[i] = d[i];
                            winner[i] = k;
                        }
                    }
                }
                for (k, &v) in xs.iter().enumerate() {
                    if !self.wants(v) {
                        continue;
                    }
                    let mut dx = vec![0.0f32; n];
                    for i in 0..n {
                        if winner[i] == k {
                            dx[i] = dy[i];
                        }
                    }
                    self.accumulate_owned(v, dx);
                }
            }
            Op::Concat { xs, axis } => {
                let first = self.shape(xs[0]).to_vec();
                let outer: usize = first[..*axis].iter().product();
                let inner: usize = first[*axis + 1..].iter().product();
                let total_axis = self.shape(Var(idx))[*axis];
                let out_stride = total_axis * inner;
                let mut offset = 0usize;
                for &v in xs {
                    let block = self.shape(v)[*axis] * inner;
                    if self.wants(v) {
                        let mut dx = vec![0.0f32; outer * block];
                        for o in 0..outer {
                            let src = o * out_stride + offset;
                            dx[o * block..(o + 1) * block]
                                .copy_from_slice(&dy[src..src + block]);
                        }
                        self.accumulate_owned(v, dx);
                    }
                    offset += block;
                }
            }
            Op::MeanAll(x) => {
                if self.wants(*x) {
                    let n = self.nodes[x.0].value.numel();
                    let g = dy[0] / n as f32;
                    self.accumulate_owned(*x, vec![g; n]);
                }
            }
            Op::Mse { a, b } => {
                let n = self.nodes[a.0].value.numel();
                let scale = 2.0 * dy[0] / n as f32;
                self.backward_diff_pair(*a, *b, scale);
            }
            Op::SumSqDiff { a, b } => {
                let scale = 2.0 * dy[0];
                self.backward_diff_pair(*a, *b, scale);
            }
            Op::L2Norm(x) => {
                if self.wants(*x) {
                    let norm = self.nodes[idx].value.data()[0].max(NORM_GUARD);
                    let g = dy[0] / norm;
                    let dx: Vec<f32> = self.nodes[x.0].value.data().iter().map(|&a| a * g).collect();
                    self.accumulate_owned(*x, dx);
                }
            }
            Op::PairDistMean { a, b } => {
                let (rows, cols) = match self.shape(*a) {
                    [c] => (1, *c),
                    [r, c] => (*r, *c),
                    _ => unreachable!(),
                };
                let (av, bv) = (
                    self.nodes[a.0].value.data().to_vec(),
                    self.nodes[b.0].value.data().to_vec(),
                );
                let mut da = vec![0.0f32; rows * cols];
                for r in 0..rows {
                    let mut sq = 0.0f64;
                    for i in r * cols..(r + 1) * cols {
                        let d = (av[i] - bv[i]) as f64;
                        sq += d * d;
                    }
                    let norm = (sq.sqrt() as f32).max(NORM_GUARD);
                    let g = dy[0] / (rows as f32 * norm);
                    for i in r * cols..(r + 1) * cols {
                        da[i] = (av[i] - bv[i]) * g;
                    }
                }
                if self.wants(*b) {
                    let db: Vec<f32> = da.iter().map(|&v| -v).collect();
                    self.accumulate_owned(*b, db);
                }
                if self.wants(*a) {
                    self.accumulate_owned(*a, da);
                }
            }
            Op::Bce { p, y } => {
                let n = self.nodes[p.0].value.numel();
                let (pv, yv) = (
                    self.nodes[p.0].value.data().to_vec(),
                    self.nodes[y.0].value.data().to_vec(),
                );
                if self.wants(*p) {
                    let g = dy[0] / n as f32;
                    let dp: Vec<f32> = pv
                        .iter()
                        .zip(&yv)
                        .map(|(&pi, &yi)| {
                            let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                            -g * (yi / pc - (1.0 - yi) / (1.0 - pc))
                        })
                        .collect();
                    self.accumulate_owned(*p, dp);
                }
                if self.wants(*y) {
                    let g = dy[0] / n as f32;
                    let dyv: Vec<f32> = pv
                        .iter()
                        .map(|&pi| {
                            let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                            -g * (pc.ln() - (1.0 - pc).ln())
                        })
                        .collect();
                    self.accumulate_owned(*y, dyv);
                }
            }
            Op::Cce { logits, labels } => {
                if self.wants(*logits) {
                    let (rows, cols) = match self.shape(*logits) {
                        [c] => (1, *c),
                        [r, c] => (*r, *c),
                        _ => unreachable!(),
                    };
                    let lv = self.nodes[logits.0].value.data().to_vec();
                    let g = dy[0] / rows as f32;
                    let mut dx = vec![0.0f32; rows * cols];
                    let mut probs = vec![0.0f32; cols];
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &lv[r * cols..(r + 1) * cols];
                        softmax_row(row, &mut probs);
                        let dxr = &mut dx[r * cols..(r + 1) * cols];
                        for i in 0..cols {
                            dxr[i] = g * (probs[i] - if i == label { 1.0 } else { 0.0 });
                        }
                    }
                    self.accumulate_owned(*logits, dx);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    self.accumulate(*a, dy);
                }
                if self.wants(*b) {
                    self.backward_broadcast_b(*a, *b, dy, 1.0);
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    self.accumulate(*a, dy);
                }
                if self.wants(*b) {
                    self.backward_broadcast_b(*a, *b, dy, -1.0);
                }
            }
            Op::Mul { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let kind = broadcast_kind(&sa, &sb).expect("checked at forward");
                let (av, bv) = (
                    self.nodes[a.0].value.data().to_vec(),
                    self.nodes[b.0].value.data().to_vec(),
                );
                if self.wants(*a) {
                    let da: Vec<f32> = match kind {
                        Broadcast::Same => dy.iter().zip(&bv).map(|(&d, &y)| d * y).collect(),
                        Broadcast::RowWise => {
                            let cols = bv.len();
                            dy.iter()
                                .enumerate()
                                .map(|(i, &d)| d * bv[i % cols])
                                .collect()
                        }
                    };
                    self.accumulate_owned(*a, da);
                }
                if self.wants(*b) {
                    match kind {
                        Broadcast::Same => {
                            let db: Vec<f32> = dy.iter().zip(&av).map(|(&d, &x)| d * x).collect();
                            self.accumulate_owned(*b, db);
                        }
                        Broadcast::RowWise => {
                            let cols = bv.len();
                            let mut db = vec![0.0f32; cols];
                            for (i, &d) in dy.iter().enumerate() {
                                db[i % cols] += d * av[i];
                            }
                            self.accumulate_owned(*b, db);
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.wants(*x) {
                    let dx: Vec<f32> = dy.iter().map(|&d| d * c).collect();
                    self.accumulate_owned(*x, dx);
                }
            }
        }
        Ok(())
    }

    fn backward_diff_pair(&mut self, a: Var, b: Var, scale: f32) {
        let (av, bv) = (
            self.nodes[a.0].value.data().to_vec(),
            self.nodes[b.0].value.data().to_vec(),
        );
        if self.wants(a) {
            let da: Vec<f32> = av.iter().zip(&bv).map(|(&x, &y)| scale * (x - y)).collect();
            self.accumulate_owned(a, da);
        }
        if self.wants(b) {
            let db: Vec<f32> = av.iter().zip(&bv).map(|(&x, &y)| -scale * (x - y)).collect();
            self.accumulate_owned(b, db);
        }
    }

    fn backward_broadcast_b(&mut self, a: Var, b: Var, dy: &[f32], sign: f32) {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        match broadcast_kind(&sa, &sb).expect("checked at forward") {
            Broadcast::Same => {
                let db: Vec<f32> = dy.iter().map(|&d| sign * d).collect();
                self.accumulate_owned(b, db);
            }
            Broadcast::RowWise => {
                let cols: usize = sb.iter().product();
                let mut db = vec![0.0f32; cols];
                for (i, &d) in dy.iter().enumerate() {
                    db[i % cols] += sign * d;
                }
                self.accumulate_owned(b, db);
            }
        }
    }

    fn backward_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        dy: &[f32],
    ) -> Result<()> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (bs, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (oc, kh, kw) = (sw[0], sw[2], sw[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let xs = self.nodes[x.0].value.data().to_vec();
        let ws = self.nodes[w.0].value.data().to_vec();

        if self.wants(*&x) {
            let mut dx = vec![0.0f32; bs * c * h * wd];
            for bb in 0..bs {
                for o in 0..oc {
                    let obase = ((bb * oc) + o) * oh * ow;
                    for cc in 0..c {
                        let xbase = ((bb * c) + cc) * h * wd;
                        let wbase = ((o * c) + cc) * kh * kw;
                        for oy in 0..oh {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xbase + iy as usize * wd;
                                let wrow = wbase + ky * kw;
                                let orow = obase + oy * ow;
                                for ox in 0..ow {
                                    let d = dy[orow + ox];
                                    if d == 0.0 {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        dx[xrow + ix as usize] += d * ws[wrow + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.accumulate_owned(x, dx);
        }
        if self.wants(w) {
            let mut dw = vec![0.0f64; oc * c * kh * kw];
            for bb in 0..bs {
                for o in 0..oc {
                    let obase = ((bb * oc) + o) * oh * ow;
                    for cc in 0..c {
                        let xbase = ((bb * c) + cc) * h * wd;
                        let wbase = ((o * c) + cc) * kh * kw;
                        for oy in 0..oh {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xbase + iy as usize * wd;
                                let wrow = wbase + ky * kw;
                                let orow = obase + oy * ow;
                                for ox in 0..ow {
                                    let d = dy[orow + ox];
                                    if d == 0.0 {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        dw[wrow + kx] += d as f64 * xs[xrow + ix as usize] as f64;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.accumulate_owned(w, dw.into_iter().map(|v| v as f32).collect());
        }
        if self.wants(b) {
            let mut db = vec![0.0f64; oc];
            for bb in 0..bs {
                for o in 0..oc {
                    let obase = ((bb * oc) + o) * oh * ow;
                    let mut acc = 0.0f64;
                    for v in &dy[obase..obase + oh * ow] {
                        acc += *v as f64;
                    }
                    db[o] += acc;
                }
            }
            self.accumulate_owned(b, db.into_iter().map(|v| v as f32).collect());
        }
        Ok(())
    }

    // ── Parameter bookkeeping ────────────────────────────────────────

    /// Distance of the recorded graph from the nearest non-differentiable
    /// point: the smallest `|x|` over all relu inputs and the smallest
    /// winner-vs-runner-up gap over all elementwise-max sites. Infinite
    /// when the graph contains no kinked ops. Finite-difference probes are
    /// only trustworthy when the perturbation stays below this margin.
    pub fn min_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.nodes[x.0].value.data() {
                        margin = margin.min(v.abs() as f64);
                    }
                }
                Op::MaxMany(xs) => {
                    let n = self.nodes[xs[0].0].value.numel();
                    for i in 0..n {
                        let mut best = f32::NEG_INFINITY;
                        let mut second = f32::NEG_INFINITY;
                        for &v in xs {
                            let val = self.nodes[v.0].value.data()[i];
                            if val > best {
                                second = best;
                                best = val;
                            } else if val > second {
                                second = val;
                            }
                        }
                        if second.is_finite() {
                            margin = margin.min((best - second) as f64);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Names and vars of every parameter bound onto this tape, in bind order.
    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Gradient per bound parameter after `backward`; parameters the loss
    /// does not reach get zeros.
    pub fn param_grads(&self) -> std::collections::BTreeMap<String, Vec<f32>> {
        let mut out = std::collections::BTreeMap::new();
        for (name, var) in &self.params {
            let g = match &self.grads[var.0] {
                Some(g) => g.clone(),
                None => vec![0.0; self.nodes[var.0].value.numel()],
            };
            out.insert(name.clone(), g);
        }
        out
    }

    pub(crate) fn node_op(&self, idx: usize) -> &Op {
        &self.nodes[idx].op
    }

    pub(crate) fn node_value(&self, idx: usize) -> &Tensor {
        &self.nodes[idx].value
    }

    pub(crate) fn param_var(&self, name: &str) -> Option<Var> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

fn softmax_row(row: &[f32], out: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for (o, &z) in out.iter_mut().zip(row) {
        let e = (z - max).exp();
        *o = e;
        sum += e as f64;
    }
    for o in out.iter_mut() {
        // Floor at the smallest normal float so outputs stay strictly
        // positive even when the exponent underflows; the perturbation to
        // the row sum is far below the 1e-6 contract.
        *o = ((*o as f64 / sum) as f32).max(f32::MIN_POSITIVE);
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Broadcast {
    Same,
    RowWise,
}

pub(crate) fn broadcast_kind(sa: &[usize], sb: &[usize]) -> Option<Broadcast> {
    if sa == sb {
        return Some(Broadcast::Same);
    }
    let a_last = *sa.last()?;
    if sb.len() == 1 && sb[0] == a_last && sa.len() >= 1 {
        return Some(Broadcast::RowWise);
    }
    None
}
