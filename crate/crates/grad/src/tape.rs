//! The computation tape: forward kernels that record themselves, and the
//! reverse sweep that turns a scalar loss into gradients.
//!
//! Every operation appends exactly one node whose inputs already exist on
//! the tape, so node order is a topological order and the backward pass is
//! a single reverse scan.

use crate::array::{matmul_raw, transpose_raw, DenseArray};
use crate::error::{GradError, Result};
use crate::params::{ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability clamp applied before every logarithm in the loss kernels.
pub const LOG_CLAMP: f64 = 1e-7;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MaskMul(Var, DenseArray),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    LnClamped { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Bce { p: Var, target: DenseArray },
    SquaredError { x: Var, target: DenseArray },
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: DenseArray,
    op: Op,
}

/// Ordered record of primitive operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape with every parameter of `store` already recorded as a leaf.
    pub fn with_params(store: &ParamStore) -> Self {
        let mut tape = Self::new();
        tape.bind(store);
        tape
    }

    /// Records every parameter in `store` as a leaf node.
    pub fn bind(&mut self, store: &ParamStore) {
        self.params = vec![None; store.len()];
        for (id, _, value) in store.iter() {
            let var = self.push(value.clone(), Op::Param);
            self.params[id.index()] = Some(var);
        }
    }

    /// The leaf bound to a parameter. Panics if the store was never bound.
    pub fn param(&self, id: ParamId) -> Var {
        self.params
            .get(id.index())
            .copied()
            .flatten()
            .unwrap_or_else(|| panic!("parameter {} not bound to tape", id.index()))
    }

    /// Records an input array (data, constants, detached values).
    pub fn input(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &DenseArray {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance from any input of a piecewise operation
    /// (`relu`, `leaky_relu`, `ln_clamped`) to one of its break points, or
    /// infinity if the tape has none. Near zero means a small perturbation
    /// can switch branches, where finite differences are meaningless.
    pub fn kink_margin(&self) -> f64 {
        let dist = |x: &Var, kink: &dyn Fn(f64) -> f64| {
            self.value(*x).data().iter().map(|&v| kink(v)).fold(f64::INFINITY, f64::min)
        };
        self.nodes
            .iter()
            .map(|node| match &node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => dist(x, &|v| v.abs()),
                Op::LnClamped { x, lo, hi } => dist(x, &|v| (v - lo).abs().min((v - hi).abs())),
                _ => f64::INFINITY,
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn push(&mut self, value: DenseArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, op_name: &'static str, value: DenseArray, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(GradError::NonFinite { op: op_name });
        }
        Ok(self.push(value, op))
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn dims2(&self, op: &'static str, var: Var) -> Result<(usize, usize)> {
        self.nodes[var.0]
            .value
            .dims2()
            .ok_or_else(|| GradError::ShapeMismatch { op, shapes: vec![self.shape(var).to_vec()] })
    }

    fn mismatch(&self, op: &'static str, vars: &[Var]) -> GradError {
        GradError::ShapeMismatch { op, shapes: vars.iter().map(|&v| self.shape(v).to_vec()).collect() }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(self.mismatch(op, &[a, b]))
        }
    }

    // ----- forward kernels -------------------------------------------------

    /// `(n × k) · (k × m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2("matmul", a)?;
        let (k2, m) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", &[a, b]));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.checked("matmul", DenseArray::from_parts(vec![n, m], out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.checked("add", out, Op::Add(a, b))
    }

    /// Matrix plus a row vector (`1 × m` or `m`) added to every row; the only
    /// broadcast the tape supports.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.dims2("add_row", a)?;
        if self.value(row).len() != m || !matches!(self.shape(row), [1, _] | [_]) {
            return Err(self.mismatch("add_row", &[a, row]));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..n {
            for (o, &b) in out.data_mut()[i * m..(i + 1) * m].iter_mut().zip(&r) {
                *o += b;
            }
        }
        self.checked("add_row", out, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.checked("sub", out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.checked("mul", out, Op::Mul(a, b))
    }

    /// Elementwise product with a constant mask; no gradient flows to the mask.
    pub fn mask_mul(&mut self, a: Var, mask: &DenseArray) -> Result<Var> {
        if self.shape(a) != mask.shape() {
            return Err(GradError::ShapeMismatch {
                op: "mask_mul",
                shapes: vec![self.shape(a).to_vec(), mask.shape().to_vec()],
            });
        }
        let out = self.value(a).zip_map(mask, |x, m| x * m);
        self.checked("mask_mul", out, Op::MaskMul(a, mask.clone()))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.checked("scale", out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, shift: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + shift);
        self.checked("add_scalar", out, Op::AddScalar(a))
    }

    /// `1 - a`, a common shorthand in adversarial losses.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.checked("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.checked("tanh", out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.checked("relu", out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.checked("leaky_relu", out, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(softplus);
        self.checked("softplus", out, Op::Softplus(a))
    }

    /// `ln(clamp(a, lo, hi))`; zero gradient where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi).ln());
        self.checked("ln_clamped", out, Op::LnClamped { x: a, lo, hi })
    }

    /// Softmax over the last axis of a rank-2 array.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Softmax over the last axis where entries with `mask == 0` get exactly
    /// zero weight. A fully masked row comes out as all zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: &DenseArray) -> Result<Var> {
        if mask.shape() != self.shape(a) {
            return Err(GradError::ShapeMismatch {
                op: "masked_softmax",
                shapes: vec![self.shape(a).to_vec(), mask.shape().to_vec()],
            });
        }
        self.softmax_impl(a, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<&DenseArray>) -> Result<Var> {
        let (n, m) = self.dims2("softmax", a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &x[i * m..(i + 1) * m];
            let keep = |j: usize| mask.is_none_or(|mk| mk.data()[i * m + j] != 0.0);
            let max = (0..m).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for j in 0..m {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    out[i * m + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * m..(i + 1) * m] {
                *v /= total;
            }
        }
        self.checked("softmax", DenseArray::from_parts(vec![n, m], out), Op::Softmax(a))
    }

    /// Concatenates rank-2 arrays along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(self.mismatch("concat", parts));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.dims2("concat", p)).collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        let ok = if axis == 0 { dims.iter().all(|&(_, c)| c == c0) } else { dims.iter().all(|&(r, _)| r == r0) };
        if !ok {
            return Err(self.mismatch("concat", parts));
        }
        let value = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            DenseArray::from_parts(vec![rows, c0], data)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                }
            }
            DenseArray::from_parts(vec![r0, cols], data)
        };
        self.checked("concat", value, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.dims2("slice", a)?;
        let extent = if axis == 0 { n } else { m };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(self.mismatch("slice", &[a]));
        }
        let src = self.value(a).data();
        let value = if axis == 0 {
            DenseArray::from_parts(vec![len, m], src[start * m..(start + len) * m].to_vec())
        } else {
            let mut data = Vec::with_capacity(n * len);
            for i in 0..n {
                data.extend_from_slice(&src[i * m + start..i * m + start + len]);
            }
            DenseArray::from_parts(vec![n, len], data)
        };
        self.checked("slice", value, Op::Slice { x: a, axis, start })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.dims2("transpose", a)?;
        let out = transpose_raw(self.value(a).data(), n, m);
        self.checked("transpose", DenseArray::from_parts(vec![m, n], out), Op::Transpose(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.checked("sum", DenseArray::from_parts(vec![], vec![s]), Op::Sum(a))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.checked("mean", DenseArray::from_parts(vec![], vec![s]), Op::Mean(a))
    }

    /// Mean binary cross-entropy of probabilities `p` against constant
    /// targets, with `p` clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]`.
    pub fn bce(&mut self, p: Var, target: &DenseArray) -> Result<Var> {
        if self.shape(p) != target.shape() {
            return Err(GradError::ShapeMismatch {
                op: "bce",
                shapes: vec![self.shape(p).to_vec(), target.shape().to_vec()],
            });
        }
        let pv = self.value(p).data();
        let n = pv.len() as f64;
        let loss = pv
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let c = p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
                -(t * c.ln() + (1.0 - t) * (1.0 - c).ln())
            })
            .sum::<f64>()
            / n;
        self.checked("bce", DenseArray::from_parts(vec![], vec![loss]), Op::Bce { p, target: target.clone() })
    }

    /// Mean squared difference against constant targets.
    pub fn squared_error(&mut self, a: Var, target: &DenseArray) -> Result<Var> {
        if self.shape(a) != target.shape() {
            return Err(GradError::ShapeMismatch {
                op: "squared_error",
                shapes: vec![self.shape(a).to_vec(), target.shape().to_vec()],
            });
        }
        let av = self.value(a).data();
        let loss = av.iter().zip(target.data()).map(|(&x, &t)| (x - t) * (x - t)).sum::<f64>() / av.len() as f64;
        self.checked(
            "squared_error",
            DenseArray::from_parts(vec![], vec![loss]),
            Op::SquaredError { x: a, target: target.clone() },
        )
    }

    /// Row-wise layer normalization with learned gain and bias (`1 × m`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.dims2("layer_norm", x)?;
        if self.value(gain).len() != m || self.value(bias).len() != m {
            return Err(self.mismatch("layer_norm", &[x, gain, bias]));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..m {
                let h = (row[j] - mu) * inv;
                normed[i * m + j] = h;
                out[i * m + j] = g[j] * h + b[j];
            }
        }
        self.checked(
            "layer_norm",
            DenseArray::from_parts(vec![n, m], out),
            Op::LayerNorm { x, gain, bias, normed, inv_std },
        )
    }

    // ----- reverse sweep ---------------------------------------------------

    /// Back-propagates from a scalar `loss`. Leaves that the loss does not
    /// depend on report zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(GradError::UnknownHandle(format!("node {}", loss.0)));
        }
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(GradError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<DenseArray>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseArray::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { leaves: grads, shapes, params: self.params.clone() })
    }

    fn propagate(&self, node: &Node, g: &DenseArray, grads: &mut [Option<DenseArray>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (n, k) = val(*a).dims2().unwrap();
                let m = val(*b).dims2().unwrap().1;
                let bt = transpose_raw(val(*b).data(), k, m);
                let da = matmul_raw(g.data(), &bt, n, m, k);
                accumulate(grads, *a, DenseArray::from_parts(vec![n, k], da));
                let at = transpose_raw(val(*a).data(), n, k);
                let db = matmul_raw(&at, g.data(), k, n, m);
                accumulate(grads, *b, DenseArray::from_parts(vec![k, m], db));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let (n, m) = g.dims2().unwrap();
                let mut dr = vec![0.0; m];
                for i in 0..n {
                    for (d, &v) in dr.iter_mut().zip(&g.data()[i * m..(i + 1) * m]) {
                        *d += v;
                    }
                }
                accumulate(grads, *row, DenseArray::from_parts(val(*row).shape().to_vec(), dr));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |d, y| d * y));
                accumulate(grads, *b, g.zip_map(val(*a), |d, x| d * x));
            }
            Op::MaskMul(a, mask) => accumulate(grads, *a, g.zip_map(mask, |d, m| d * m)),
            Op::Scale(a, f) => accumulate(grads, *a, g.map(|d| d * f)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out, |d, y| d * y * (1.0 - y))),
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |d, y| d * (1.0 - y * y))),
            Op::Relu(a) => accumulate(grads, *a, g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::LeakyRelu(a, s) => accumulate(grads, *a, g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { d * s })),
            Op::Softplus(a) => accumulate(grads, *a, g.zip_map(val(*a), |d, x| d * sigmoid(x))),
            Op::LnClamped { x, lo, hi } => {
                accumulate(grads, *x, g.zip_map(val(*x), |d, v| if v > *lo && v < *hi { d / v } else { 0.0 }))
            }
            Op::Softmax(a) => {
                let (n, m) = out.dims2().unwrap();
                let (y, dy) = (out.data(), g.data());
                let mut dx = vec![0.0; n * m];
                for i in 0..n {
                    let r = i * m..(i + 1) * m;
                    let dot: f64 = y[r.clone()].iter().zip(&dy[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        dx[j] = y[j] * (dy[j] - dot);
                    }
                }
                accumulate(grads, *a, DenseArray::from_parts(vec![n, m], dx));
            }
            Op::Concat { parts, axis } => {
                let (n, m) = g.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = val(p).dims2().unwrap();
                    let piece = if *axis == 0 {
                        g.data()[offset * m..(offset + pr) * m].to_vec()
                    } else {
                        let mut d = Vec::with_capacity(n * pc);
                        for i in 0..n {
                            d.extend_from_slice(&g.data()[i * m + offset..i * m + offset + pc]);
                        }
                        d
                    };
                    offset += if *axis == 0 { pr } else { pc };
                    accumulate(grads, p, DenseArray::from_parts(vec![pr, pc], piece));
                }
            }
            Op::Slice { x, axis, start } => {
                let (n, m) = val(*x).dims2().unwrap();
                let (gr, gc) = g.dims2().unwrap();
                let mut d = vec![0.0; n * m];
                if *axis == 0 {
                    d[start * m..(start + gr) * m].copy_from_slice(g.data());
                } else {
                    for i in 0..n {
                        d[i * m + start..i * m + start + gc].copy_from_slice(&g.data()[i * gc..(i + 1) * gc]);
                    }
                }
                accumulate(grads, *x, DenseArray::from_parts(vec![n, m], d));
            }
            Op::Transpose(a) => {
                let (n, m) = g.dims2().unwrap();
                accumulate(grads, *a, DenseArray::from_parts(vec![m, n], transpose_raw(g.data(), n, m)));
            }
            Op::Sum(a) => {
                accumulate(grads, *a, DenseArray::full(val(*a).shape(), g.item()));
            }
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                accumulate(grads, *a, DenseArray::full(val(*a).shape(), g.item() / n));
            }
            Op::Bce { p, target } => {
                let pv = val(*p);
                let scale = g.item() / pv.len() as f64;
                let d = pv.zip_map(target, |p, t| {
                    if p > LOG_CLAMP && p < 1.0 - LOG_CLAMP {
                        -scale * (t / p - (1.0 - t) / (1.0 - p))
                    } else {
                        0.0
                    }
                });
                accumulate(grads, *p, d);
            }
            Op::SquaredError { x, target } => {
                let xv = val(*x);
                let scale = 2.0 * g.item() / xv.len() as f64;
                accumulate(grads, *x, xv.zip_map(target, |x, t| scale * (x - t)));
            }
            Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                let (n, m) = g.dims2().unwrap();
                let gv = val(*gain).data();
                let dy = g.data();
                let mut dx = vec![0.0; n * m];
                let mut dg = vec![0.0; m];
                let mut db = vec![0.0; m];
                for i in 0..n {
                    let r = i * m;
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..m {
                        let dh = dy[r + j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * normed[r + j];
                        dg[j] += dy[r + j] * normed[r + j];
                        db[j] += dy[r + j];
                    }
                    let mf = m as f64;
                    for j in 0..m {
                        let dh = dy[r + j] * gv[j];
                        dx[r + j] = inv_std[i] / mf * (mf * dh - sum_dh - normed[r + j] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, DenseArray::from_parts(vec![n, m], dx));
                accumulate(grads, *gain, DenseArray::from_parts(val(*gain).shape().to_vec(), dg));
                accumulate(grads, *bias, DenseArray::from_parts(val(*bias).shape().to_vec(), db));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<DenseArray>], var: Var, g: DenseArray) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gradients of one backward pass, keyed by leaf node or parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<Option<DenseArray>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros when the loss does not reach it.
    pub fn wrt(&self, var: Var) -> DenseArray {
        self.leaves
            .get(var.0)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| DenseArray::zeros(&self.shapes[var.0]))
    }

    /// Gradient with respect to a bound parameter.
    pub fn param(&self, id: ParamId) -> DenseArray {
        let var = self.params[id.index()].expect("parameter bound to tape");
        self.wrt(var)
    }

    /// Number of parameters covered by this gradient map.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}
