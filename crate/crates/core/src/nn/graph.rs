//! Reverse-mode tape. A [`Graph`] lives for one forward/backward pass; every
//! op appends a node holding its output, and [`Graph::backward`] walks the
//! tape in reverse.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::kernels::{self, ConvDims, ConvGeometry};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::signal::{hann_window, reflect_index, StftConfig};

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddAlong {
        x: usize,
        b: usize,
        axis: usize,
    },
    MulAlong {
        x: usize,
        b: usize,
        axis: usize,
    },
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Square(usize),
    Abs(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Conv1d {
        x: usize,
        w: usize,
        geom: ConvGeometry,
    },
    ConvTranspose1d {
        x: usize,
        w: usize,
        geom: ConvGeometry,
    },
    Upsample {
        x: usize,
        factor: usize,
    },
    PadTime {
        x: usize,
        left: usize,
    },
    FoldPeriod {
        x: usize,
        period: usize,
    },
    HaarDwt(usize),
    Sum(usize),
    Mean(usize),
    StftMagnitude {
        x: usize,
        spec: Vec<Complex64>,
        cfg: StftConfig,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddAlong { .. } => "add_along",
            Op::MulAlong { .. } => "mul_along",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose1d { .. } => "conv_transpose1d",
            Op::Upsample { .. } => "upsample_nearest",
            Op::PadTime { .. } => "pad_time",
            Op::FoldPeriod { .. } => "fold_period",
            Op::HaarDwt(..) => "haar_dwt",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::StftMagnitude { .. } => "stft_magnitude",
            Op::Dropout { .. } => "dropout",
        }
    }
}

struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
    param: Option<(u64, usize)>,
}

/// (outer, dim, inner) view of a shape around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn contract(msg: String) -> Error {
    Error::Contract(msg)
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<(u64, usize, bool), usize>>,
    kink_margin: Cell<Option<f64>>,
    kink_signature: Cell<u64>,
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    g: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest |input| seen by a non-differentiable op (leaky ReLU, abs).
    /// Finite-difference checks use it to avoid straddling a kink.
    pub fn kink_margin(&self) -> Option<f64> {
        self.kink_margin.get()
    }

    /// Hash of the sign pattern of every input to a non-differentiable op.
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature.get()
    }

    fn note_kink(&self, x: &[f64]) {
        let m = x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let cur = self.kink_margin.get().unwrap_or(f64::INFINITY);
        self.kink_margin.set(Some(cur.min(m)));
        let mut h = self.kink_signature.get() ^ 0xcbf2_9ce4_8422_2325;
        for v in x {
            h ^= u64::from(*v > 0.0) + 1;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.kink_signature.set(h);
    }

    fn push(
        &self,
        value: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
        needs_grad: bool,
    ) -> Result<Var<'_>> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var {
            g: self,
            id: nodes.len() - 1,
        })
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, t: Tensor) -> Result<Var<'_>> {
        let shape = t.shape().to_vec();
        self.push(t.into_data(), shape, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&self, t: Tensor) -> Result<Var<'_>> {
        let shape = t.shape().to_vec();
        self.push(t.into_data(), shape, Op::Leaf, true)
    }

    /// Binds a stored parameter. With `trainable = false` it enters the tape
    /// as a constant, so no weight gradient is computed for it.
    pub fn param(&self, store: &ParamStore, id: ParamId, trainable: bool) -> Result<Var<'_>> {
        let key = (store.tag(), id.0, trainable);
        if let Some(&node) = self.bound.borrow().get(&key) {
            return Ok(Var { g: self, id: node });
        }
        let t = store.value(id).clone();
        let shape = t.shape().to_vec();
        let v = self.push(t.into_data(), shape, Op::Leaf, trainable)?;
        if trainable {
            self.nodes.borrow_mut()[v.id].param = Some((store.tag(), id.0));
        }
        self.bound.borrow_mut().insert(key, v.id);
        Ok(v)
    }

    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if root.needs_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: node.op.name() });
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            backprop(&nodes, i, &g, &mut grads);
        }
        Ok(Gradients {
            params: nodes.iter().map(|n| n.param).collect(),
            grads,
        })
    }
}

/// Gradients of one backward pass, held on leaves only.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<(u64, usize)>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adds the gradients of `store`'s bound parameters into the store.
    /// Returns how many parameters received a gradient.
    pub fn accumulate(&self, store: &mut ParamStore) -> usize {
        let tag = store.tag();
        let mut n = 0;
        for (g, p) in self.grads.iter().zip(&self.params) {
            if let (Some(g), Some((t, idx))) = (g, p) {
                if *t == tag {
                    store.accumulate_grad(*idx, g);
                    n += 1;
                }
            }
        }
        n
    }
}

fn slot<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    j: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].needs_grad {
        return None;
    }
    let n = nodes[j].value.len();
    Some(grads[j].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn conv_dims(x: &[usize], w: &[usize], y: &[usize], transposed: bool) -> ConvDims {
    let (c_in, c_out) = if transposed {
        (w[0], w[1])
    } else {
        (w[1], w[0])
    };
    ConvDims {
        batch: x[0],
        c_in,
        c_out,
        kernel: w[2],
        t_in: x[2],
        t_out: y[2],
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                add_scaled(row, &b[p * n..(p + 1) * n], av);
            }
        }
    }
    out
}

fn add_scaled(dst: &mut [f64], src: &[f64], alpha: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn backprop(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(s) = slot(grads, nodes, *a) {
                add_into(s, g);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                add_into(s, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(grads, nodes, *a) {
                add_into(s, g);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                s.iter_mut().zip(g).for_each(|(d, v)| *d -= v);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if let Some(s) = slot(grads, nodes, *a) {
                for k in 0..g.len() {
                    s[k] += g[k] * bv[k];
                }
            }
            if let Some(s) = slot(grads, nodes, *b) {
                for k in 0..g.len() {
                    s[k] += g[k] * av[k];
                }
            }
        }
        Op::AddAlong { x, b, axis } => {
            let (_, dim, inner) = split(&node.shape, *axis);
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(s, g);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                for (k, v) in g.iter().enumerate() {
                    s[(k / inner) % dim] += v;
                }
            }
        }
        Op::MulAlong { x, b, axis } => {
            let (_, dim, inner) = split(&node.shape, *axis);
            let (xv, bv) = (&nodes[*x].value, &nodes[*b].value);
            if let Some(s) = slot(grads, nodes, *x) {
                for (k, v) in g.iter().enumerate() {
                    s[k] += v * bv[(k / inner) % dim];
                }
            }
            if let Some(s) = slot(grads, nodes, *b) {
                for (k, v) in g.iter().enumerate() {
                    s[(k / inner) % dim] += v * xv[k];
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(s) = slot(grads, nodes, *x) {
                add_scaled(s, g, *c);
            }
        }
        Op::Offset(x) | Op::Reshape(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                add_into(s, g);
            }
        }
        Op::MatMul(a, b) => {
            let (ash, bsh) = (&nodes[*a].shape, &nodes[*b].shape);
            let (m, k, n) = (ash[0], ash[1], bsh[1]);
            if nodes[*a].needs_grad {
                let bt = transpose_raw(&nodes[*b].value, k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                add_into(slot(grads, nodes, *a).unwrap(), &da);
            }
            if nodes[*b].needs_grad {
                let at = transpose_raw(&nodes[*a].value, m, k);
                let db = matmul_raw(&at, g, k, m, n);
                add_into(slot(grads, nodes, *b).unwrap(), &db);
            }
        }
        Op::Transpose(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                let (m, n) = (node.shape[0], node.shape[1]);
                add_into(s, &transpose_raw(g, m, n));
            }
        }
        Op::Narrow { x, axis, start } => {
            if let Some(s) = slot(grads, nodes, *x) {
                let (outer, dim_in, inner) = split(&nodes[*x].shape, *axis);
                let len = node.shape[*axis];
                for o in 0..outer {
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    let dst = &mut s[(o * dim_in + start) * inner..][..len * inner];
                    add_into(dst, src);
                }
            }
        }
        Op::Concat { xs, axis } => {
            let (outer, dim_out, inner) = split(&node.shape, *axis);
            let mut at = 0;
            for &x in xs {
                let len = nodes[x].shape[*axis];
                if let Some(s) = slot(grads, nodes, x) {
                    for o in 0..outer {
                        let src = &g[(o * dim_out + at) * inner..][..len * inner];
                        add_into(&mut s[o * len * inner..(o + 1) * len * inner], src);
                    }
                }
                at += len;
            }
        }
        Op::Sigmoid(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                for (k, y) in node.value.iter().enumerate() {
                    s[k] += g[k] * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                for (k, y) in node.value.iter().enumerate() {
                    s[k] += g[k] * (1.0 - y * y);
                }
            }
        }
        Op::LeakyRelu(x, slope) => {
            let xv = &nodes[*x].value;
            if let Some(s) = slot(grads, nodes, *x) {
                for k in 0..g.len() {
                    s[k] += if xv[k] > 0.0 { g[k] } else { slope * g[k] };
                }
            }
        }
        Op::Square(x) => {
            let xv = &nodes[*x].value;
            if let Some(s) = slot(grads, nodes, *x) {
                for k in 0..g.len() {
                    s[k] += 2.0 * xv[k] * g[k];
                }
            }
        }
        Op::Abs(x) => {
            let xv = &nodes[*x].value;
            if let Some(s) = slot(grads, nodes, *x) {
                for k in 0..g.len() {
                    s[k] += if xv[k] > 0.0 {
                        g[k]
                    } else if xv[k] < 0.0 {
                        -g[k]
                    } else {
                        0.0
                    };
                }
            }
        }
        Op::Softmax(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                let d = *node.shape.last().unwrap();
                for (r, (y, gr)) in node.value.chunks(d).zip(g.chunks(d)).enumerate() {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..d {
                        s[r * d + k] += y[k] * (gr[k] - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, inv_std } => {
            if let Some(s) = slot(grads, nodes, *x) {
                let d = *node.shape.last().unwrap();
                for (r, (y, gr)) in node.value.chunks(d).zip(g.chunks(d)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for k in 0..d {
                        s[r * d + k] += inv_std[r] * (gr[k] - mg - y[k] * mgy);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            if let Some(s) = slot(grads, nodes, *table) {
                let d = nodes[*table].shape[1];
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut s[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
        }
        Op::Conv1d { x, w, geom } => {
            let dims = conv_dims(&nodes[*x].shape, &nodes[*w].shape, &node.shape, false);
            if nodes[*x].needs_grad {
                let dx = kernels::conv1d_backward_input(g, &nodes[*w].value, &dims, geom);
                add_into(slot(grads, nodes, *x).unwrap(), &dx);
            }
            if nodes[*w].needs_grad {
                let dw = kernels::conv1d_backward_weight(g, &nodes[*x].value, &dims, geom);
                add_into(slot(grads, nodes, *w).unwrap(), &dw);
            }
        }
        Op::ConvTranspose1d { x, w, geom } => {
            let dims = conv_dims(&nodes[*x].shape, &nodes[*w].shape, &node.shape, true);
            if nodes[*x].needs_grad {
                let dx = kernels::conv_t_backward_input(g, &nodes[*w].value, &dims, geom);
                add_into(slot(grads, nodes, *x).unwrap(), &dx);
            }
            if nodes[*w].needs_grad {
                let dw = kernels::conv_t_backward_weight(g, &nodes[*x].value, &dims, geom);
                add_into(slot(grads, nodes, *w).unwrap(), &dw);
            }
        }
        Op::Upsample { x, factor } => {
            if let Some(s) = slot(grads, nodes, *x) {
                for (k, chunk) in g.chunks(*factor).enumerate() {
                    s[k] += chunk.iter().sum::<f64>();
                }
            }
        }
        Op::PadTime { x, left } => {
            if let Some(s) = slot(grads, nodes, *x) {
                let t_in = *nodes[*x].shape.last().unwrap();
                let t_out = *node.shape.last().unwrap();
                for (r, row) in s.chunks_mut(t_in).enumerate() {
                    add_into(row, &g[r * t_out + left..][..t_in]);
                }
            }
        }
        Op::FoldPeriod { x, period } => {
            if let Some(s) = slot(grads, nodes, *x) {
                let xs = &nodes[*x].shape;
                let (b, c, t) = (xs[0], xs[1], xs[2]);
                let l = node.shape[2];
                for bi in 0..b {
                    for j in 0..*period {
                        for ci in 0..c {
                            let src = &g[((bi * period + j) * c + ci) * l..][..l];
                            for (i, v) in src.iter().enumerate() {
                                let n = i * period + j;
                                if n < t {
                                    s[(bi * c + ci) * t + n] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::HaarDwt(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                let xs = &nodes[*x].shape;
                let (b, c, t) = (xs[0], xs[1], xs[2]);
                let l = node.shape[2];
                let r = std::f64::consts::FRAC_1_SQRT_2;
                for bi in 0..b {
                    for ci in 0..c {
                        let ga = &g[(bi * 2 * c + ci) * l..][..l];
                        let gd = &g[(bi * 2 * c + c + ci) * l..][..l];
                        let row = &mut s[(bi * c + ci) * t..][..t];
                        for i in 0..l {
                            row[2 * i] += (ga[i] + gd[i]) * r;
                            if 2 * i + 1 < t {
                                row[2 * i + 1] += (ga[i] - gd[i]) * r;
                            }
                        }
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                s.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(s) = slot(grads, nodes, *x) {
                let c = g[0] / s.len() as f64;
                s.iter_mut().for_each(|d| *d += c);
            }
        }
        Op::StftMagnitude { x, spec, cfg } => {
            if let Some(s) = slot(grads, nodes, *x) {
                stft_magnitude_backward(s, g, spec, cfg);
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(s) = slot(grads, nodes, *x) {
                for k in 0..g.len() {
                    s[k] += g[k] * mask[k];
                }
            }
        }
    }
}

fn stft_magnitude_backward(dx: &mut [f64], g: &[f64], spec: &[Complex64], cfg: &StftConfig) {
    let n = dx.len();
    let n_fft = cfg.n_fft;
    let bins = cfg.n_bins();
    let pad = n_fft / 2;
    let window = hann_window(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut padded = vec![0.0; n + 2 * pad];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for f in 0..spec.len() / bins {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for k in 0..bins {
            let xk = spec[f * bins + k];
            let mag = xk.norm();
            if mag > 0.0 {
                buf[k] = xk.conj() * (g[f * bins + k] / mag);
            }
        }
        fft.process(&mut buf);
        let start = f * cfg.hop;
        for (i, b) in buf.iter().enumerate() {
            padded[start + i] += window[i] * b.re;
        }
    }
    for (m, v) in padded.iter().enumerate() {
        dx[reflect_index(m as isize - pad as isize, n)] += v;
    }
}

impl<'g> Var<'g> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn graph(self) -> &'g Graph {
        self.g
    }

    pub fn shape(self) -> Vec<usize> {
        self.g.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(self) -> usize {
        self.g.nodes.borrow()[self.id].value.len()
    }

    pub fn value(self) -> Tensor {
        let nodes = self.g.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape matches storage")
    }

    pub fn to_vec(self) -> Vec<f64> {
        self.g.nodes.borrow()[self.id].value.clone()
    }

    /// Value of a single-element node.
    pub fn item(self) -> f64 {
        self.g.nodes.borrow()[self.id].value[0]
    }

    pub fn requires_grad(self) -> bool {
        self.g.nodes.borrow()[self.id].needs_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(self) -> Result<Var<'g>> {
        self.g.constant(self.value())
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            (
                n.value.iter().map(|&v| f(v)).collect(),
                n.shape.clone(),
                n.needs_grad,
            )
        };
        self.g.push(value, shape, op, ng)
    }

    fn zip(self, o: Var<'g>, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[o.id]);
            if a.shape != b.shape {
                return Err(contract(format!(
                    "{name}: shapes {:?} and {:?} differ",
                    a.shape, b.shape
                )));
            }
            let v = a
                .value
                .iter()
                .zip(&b.value)
                .map(|(&x, &y)| f(x, y))
                .collect();
            (v, a.shape.clone(), a.needs_grad || b.needs_grad)
        };
        self.g.push(value, shape, op, ng)
    }

    pub fn add(self, o: Var<'g>) -> Result<Var<'g>> {
        self.zip(o, "add", Op::Add(self.id, o.id), |a, b| a + b)
    }

    pub fn sub(self, o: Var<'g>) -> Result<Var<'g>> {
        self.zip(o, "sub", Op::Sub(self.id, o.id), |a, b| a - b)
    }

    pub fn mul(self, o: Var<'g>) -> Result<Var<'g>> {
        self.zip(o, "mul", Op::Mul(self.id, o.id), |a, b| a * b)
    }

    fn along(self, b: Var<'g>, axis: usize, mul: bool) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let (x, bn) = (&nodes[self.id], &nodes[b.id]);
            if axis >= x.shape.len() || bn.value.len() != x.shape[axis] {
                return Err(contract(format!(
                    "broadcast of {:?} along axis {axis} of {:?}",
                    bn.shape, x.shape
                )));
            }
            let (_, dim, inner) = split(&x.shape, axis);
            let v = x
                .value
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let c = bn.value[(k / inner) % dim];
                    if mul {
                        v * c
                    } else {
                        v + c
                    }
                })
                .collect();
            (v, x.shape.clone(), x.needs_grad || bn.needs_grad)
        };
        let op = if mul {
            Op::MulAlong {
                x: self.id,
                b: b.id,
                axis,
            }
        } else {
            Op::AddAlong {
                x: self.id,
                b: b.id,
                axis,
            }
        };
        self.g.push(value, shape, op, ng)
    }

    /// Adds the 1-D `b` broadcast along `axis` (e.g. a channel bias).
    pub fn add_along(self, b: Var<'g>, axis: usize) -> Result<Var<'g>> {
        self.along(b, axis, false)
    }

    pub fn mul_along(self, b: Var<'g>, axis: usize) -> Result<Var<'g>> {
        self.along(b, axis, true)
    }

    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn offset(self, c: f64) -> Result<Var<'g>> {
        self.unary(Op::Offset(self.id), |v| v + c)
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary(Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(self) -> Result<Var<'g>> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'g>> {
        self.g.note_kink(&self.g.nodes.borrow()[self.id].value);
        self.unary(Op::LeakyRelu(self.id, slope), |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn abs(self) -> Result<Var<'g>> {
        self.g.note_kink(&self.g.nodes.borrow()[self.id].value);
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn sum(self) -> Result<Var<'g>> {
        let (v, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            (n.value.iter().sum::<f64>(), n.needs_grad)
        };
        self.g.push(vec![v], vec![], Op::Sum(self.id), ng)
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let (v, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if n.value.is_empty() {
                return Err(contract("mean of an empty tensor".into()));
            }
            (
                n.value.iter().sum::<f64>() / n.value.len() as f64,
                n.needs_grad,
            )
        };
        self.g.push(vec![v], vec![], Op::Mean(self.id), ng)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let (value, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if shape.iter().product::<usize>() != n.value.len() {
                return Err(contract(format!(
                    "cannot reshape {:?} into {shape:?}",
                    n.shape
                )));
            }
            (n.value.clone(), n.needs_grad)
        };
        self.g.push(value, shape.to_vec(), Op::Reshape(self.id), ng)
    }

    /// `[M, K] x [K, N]`.
    pub fn matmul(self, o: Var<'g>) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[o.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(contract(format!(
                    "matmul of {:?} and {:?}",
                    a.shape, b.shape
                )));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            (
                matmul_raw(&a.value, &b.value, m, k, n),
                vec![m, n],
                a.needs_grad || b.needs_grad,
            )
        };
        self.g.push(value, shape, Op::MatMul(self.id, o.id), ng)
    }

    /// Transpose of a 2-D tensor.
    pub fn t(self) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if n.shape.len() != 2 {
                return Err(contract(format!("transpose needs 2-D, got {:?}", n.shape)));
            }
            let (m, k) = (n.shape[0], n.shape[1]);
            (transpose_raw(&n.value, m, k), vec![k, m], n.needs_grad)
        };
        self.g.push(value, shape, Op::Transpose(self.id), ng)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if axis >= n.shape.len() || start + len > n.shape[axis] {
                return Err(contract(format!(
                    "narrow [{start}, {}) on axis {axis} of {:?}",
                    start + len,
                    n.shape
                )));
            }
            let (outer, dim, inner) = split(&n.shape, axis);
            let mut v = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                v.extend_from_slice(&n.value[(o * dim + start) * inner..][..len * inner]);
            }
            let mut shape = n.shape.clone();
            shape[axis] = len;
            (v, shape, n.needs_grad)
        };
        self.g.push(
            value,
            shape,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            ng,
        )
    }

    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| contract("concat of zero tensors".into()))?;
        let g = first.g;
        let (value, shape, ng) = {
            let nodes = g.nodes.borrow();
            let base = &nodes[first.id].shape;
            if axis >= base.len() {
                return Err(contract(format!("concat axis {axis} for shape {base:?}")));
            }
            let mut total = 0;
            for p in parts {
                let s = &nodes[p.id].shape;
                let same = s.len() == base.len()
                    && s.iter()
                        .zip(base)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !same {
                    return Err(contract(format!(
                        "concat of {base:?} and {s:?} on axis {axis}"
                    )));
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let (outer, _, inner) = split(&shape, axis);
            let mut v = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let n = &nodes[p.id];
                    let len = n.shape[axis] * inner;
                    v.extend_from_slice(&n.value[o * len..(o + 1) * len]);
                }
            }
            (v, shape, parts.iter().any(|p| nodes[p.id].needs_grad))
        };
        let xs = parts.iter().map(|p| p.id).collect();
        g.push(value, shape, Op::Concat { xs, axis }, ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            let d = *n
                .shape
                .last()
                .ok_or_else(|| contract("softmax of a scalar".into()))?;
            let mut v = n.value.clone();
            for row in v.chunks_mut(d) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    z += *x;
                }
                row.iter_mut().for_each(|x| *x /= z);
            }
            (v, n.shape.clone(), n.needs_grad)
        };
        self.g.push(value, shape, Op::Softmax(self.id), ng)
    }

    /// Normalises the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(self) -> Result<Var<'g>> {
        let (value, shape, ng, inv_std) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            let d = *n
                .shape
                .last()
                .ok_or_else(|| contract("layer_norm of a scalar".into()))?;
            let mut v = n.value.clone();
            let mut inv = Vec::with_capacity(v.len() / d);
            for row in v.chunks_mut(d) {
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
                let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                row.iter_mut().for_each(|x| *x = (*x - mu) * r);
                inv.push(r);
            }
            (v, n.shape.clone(), n.needs_grad, inv)
        };
        self.g.push(
            value,
            shape,
            Op::LayerNorm {
                x: self.id,
                inv_std,
            },
            ng,
        )
    }

    /// Rows of the `[V, D]` table selected by `ids`, giving `[ids.len(), D]`.
    pub fn embed(self, ids: &[usize]) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if n.shape.len() != 2 {
                return Err(contract(format!(
                    "embedding table must be 2-D, got {:?}",
                    n.shape
                )));
            }
            let (vocab, d) = (n.shape[0], n.shape[1]);
            let mut v = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= vocab {
                    return Err(contract(format!(
                        "embedding id {id} outside vocabulary {vocab}"
                    )));
                }
                v.extend_from_slice(&n.value[id * d..(id + 1) * d]);
            }
            (v, vec![ids.len(), d], n.needs_grad)
        };
        let op = Op::Embedding {
            table: self.id,
            ids: ids.to_vec(),
        };
        self.g.push(value, shape, op, ng)
    }

    /// x `[B, Cin, T]`, w `[Cout, Cin, K]`.
    pub fn conv1d(self, w: Var<'g>, geom: ConvGeometry) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let (x, wn) = (&nodes[self.id], &nodes[w.id]);
            if x.shape.len() != 3 || wn.shape.len() != 3 || x.shape[1] != wn.shape[1] {
                return Err(contract(format!(
                    "conv1d input {:?} vs weight {:?}",
                    x.shape, wn.shape
                )));
            }
            let t_out = geom.conv_out_len(x.shape[2], wn.shape[2]).ok_or_else(|| {
                contract(format!("conv1d input {:?} shorter than kernel", x.shape))
            })?;
            let shape = vec![x.shape[0], wn.shape[0], t_out];
            let dims = conv_dims(&x.shape, &wn.shape, &shape, false);
            (
                kernels::conv1d_forward(&x.value, &wn.value, &dims, &geom),
                shape,
                x.needs_grad || wn.needs_grad,
            )
        };
        let op = Op::Conv1d {
            x: self.id,
            w: w.id,
            geom,
        };
        self.g.push(value, shape, op, ng)
    }

    /// x `[B, Cin, T]`, w `[Cin, Cout, K]`; output length `(T-1)*stride - 2*pad + K`.
    pub fn conv_transpose1d(self, w: Var<'g>, geom: ConvGeometry) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let (x, wn) = (&nodes[self.id], &nodes[w.id]);
            if x.shape.len() != 3
                || wn.shape.len() != 3
                || x.shape[1] != wn.shape[0]
                || x.shape[2] == 0
            {
                return Err(contract(format!(
                    "conv_transpose1d input {:?} vs weight {:?}",
                    x.shape, wn.shape
                )));
            }
            let t_out = geom
                .transposed_out_len(x.shape[2], wn.shape[2])
                .filter(|&t| t > 0)
                .ok_or_else(|| {
                    contract(format!(
                        "conv_transpose1d padding too large for {:?}",
                        x.shape
                    ))
                })?;
            let shape = vec![x.shape[0], wn.shape[1], t_out];
            let dims = conv_dims(&x.shape, &wn.shape, &shape, true);
            (
                kernels::conv_t_forward(&x.value, &wn.value, &dims, &geom),
                shape,
                x.needs_grad || wn.needs_grad,
            )
        };
        let op = Op::ConvTranspose1d {
            x: self.id,
            w: w.id,
            geom,
        };
        self.g.push(value, shape, op, ng)
    }

    /// Repeats every sample of the last axis `factor` times.
    pub fn upsample_nearest(self, factor: usize) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            let mut shape = n.shape.clone();
            *shape
                .last_mut()
                .ok_or_else(|| contract("upsample of a scalar".into()))? *= factor;
            let v = n
                .value
                .iter()
                .flat_map(|&x| std::iter::repeat_n(x, factor))
                .collect();
            (v, shape, n.needs_grad)
        };
        self.g
            .push(value, shape, Op::Upsample { x: self.id, factor }, ng)
    }

    /// Zero padding of the last axis.
    pub fn pad_time(self, left: usize, right: usize) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            let t = *n
                .shape
                .last()
                .ok_or_else(|| contract("pad of a scalar".into()))?;
            let mut shape = n.shape.clone();
            *shape.last_mut().unwrap() = t + left + right;
            let mut v = Vec::with_capacity(n.value.len() / t.max(1) * (t + left + right));
            for row in n.value.chunks(t.max(1)) {
                v.extend(std::iter::repeat_n(0.0, left));
                v.extend_from_slice(row);
                v.extend(std::iter::repeat_n(0.0, right));
            }
            (v, shape, n.needs_grad)
        };
        self.g
            .push(value, shape, Op::PadTime { x: self.id, left }, ng)
    }

    /// `[B, C, T]` → `[B*p, C, ceil(T/p)]`: each of the `p` phases of the
    /// signal becomes its own batch row (zero padded at the end).
    pub fn fold_period(self, period: usize) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if n.shape.len() != 3 || period == 0 {
                return Err(contract(format!("fold_period({period}) of {:?}", n.shape)));
            }
            let (b, c, t) = (n.shape[0], n.shape[1], n.shape[2]);
            let l = t.div_ceil(period);
            let mut v = vec![0.0; b * period * c * l];
            for bi in 0..b {
                for j in 0..period {
                    for ci in 0..c {
                        let dst = &mut v[((bi * period + j) * c + ci) * l..][..l];
                        let src = &n.value[(bi * c + ci) * t..][..t];
                        for (i, d) in dst.iter_mut().enumerate() {
                            if let Some(x) = src.get(i * period + j) {
                                *d = *x;
                            }
                        }
                    }
                }
            }
            (v, vec![b * period, c, l], n.needs_grad)
        };
        self.g
            .push(value, shape, Op::FoldPeriod { x: self.id, period }, ng)
    }

    /// One Haar level along time: `[B, C, T]` → `[B, 2C, ceil(T/2)]` with the
    /// approximation channels first, then the detail channels.
    pub fn haar_dwt(self) -> Result<Var<'g>> {
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if n.shape.len() != 3 {
                return Err(contract(format!(
                    "haar_dwt needs [B, C, T], got {:?}",
                    n.shape
                )));
            }
            let (b, c, t) = (n.shape[0], n.shape[1], n.shape[2]);
            let l = t.div_ceil(2);
            let r = std::f64::consts::FRAC_1_SQRT_2;
            let mut v = vec![0.0; b * 2 * c * l];
            for bi in 0..b {
                for ci in 0..c {
                    let src = &n.value[(bi * c + ci) * t..][..t];
                    for i in 0..l {
                        let x0 = src[2 * i];
                        let x1 = src.get(2 * i + 1).copied().unwrap_or(0.0);
                        v[(bi * 2 * c + ci) * l + i] = (x0 + x1) * r;
                        v[(bi * 2 * c + c + ci) * l + i] = (x0 - x1) * r;
                    }
                }
            }
            (v, vec![b, 2 * c, l], n.needs_grad)
        };
        self.g.push(value, shape, Op::HaarDwt(self.id), ng)
    }

    /// Linear STFT magnitude of the flattened signal, `[frames, n_fft/2+1]`.
    pub fn stft_magnitude(self, cfg: StftConfig) -> Result<Var<'g>> {
        cfg.validate()?;
        let (value, shape, ng, spec) = {
            let nodes = self.g.nodes.borrow();
            let n = &nodes[self.id];
            if n.value.is_empty() {
                return Err(Error::InvalidInput("stft of an empty signal".into()));
            }
            let len = n.value.len();
            let pad = cfg.n_fft / 2;
            let padded: Vec<f64> = (0..len + 2 * pad)
                .map(|i| n.value[reflect_index(i as isize - pad as isize, len)])
                .collect();
            let window = hann_window(cfg.n_fft);
            let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
            let frames = cfg.n_frames(len);
            let bins = cfg.n_bins();
            let mut spec = Vec::with_capacity(frames * bins);
            let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
            for f in 0..frames {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(padded[f * cfg.hop + i] * window[i], 0.0);
                }
                fft.process(&mut buf);
                spec.extend_from_slice(&buf[..bins]);
            }
            let mag = spec.iter().map(|c| c.norm()).collect();
            (mag, vec![frames, bins], n.needs_grad, spec)
        };
        // A bin whose phase is pinned (DC, Nyquist, frames made symmetric by
        // reflection) has an absolute-value kink where it passes through
        // zero; both parts change sign there.
        let parts: Vec<f64> = spec.iter().flat_map(|c| [c.re, c.im]).collect();
        self.g.note_kink(&parts);
        self.g.push(
            value,
            shape,
            Op::StftMagnitude {
                x: self.id,
                spec,
                cfg,
            },
            ng,
        )
    }

    /// Inverted dropout; the identity when `p == 0`.
    pub fn dropout(self, p: f64, rng: &mut impl Rng) -> Result<Var<'g>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let n = self.numel();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if p > 0.0 && rng.gen::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let (value, shape, ng) = {
            let nodes = self.g.nodes.borrow();
            let node = &nodes[self.id];
            let v = node.value.iter().zip(&mask).map(|(a, m)| a * m).collect();
            (v, node.shape.clone(), node.needs_grad)
        };
        self.g
            .push(value, shape, Op::Dropout { x: self.id, mask }, ng)
    }
}
