//! Parameterised building blocks. Each layer only stores [`ParamId`]s; the
//! values live in a [`ParamStore`] and enter a graph through a [`Binder`].

use rand::Rng;

use super::kernels::ConvGeometry;
use super::param::{kaiming_uniform, normal};
use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Slope of every leaky ReLU in the models.
pub const LRELU_SLOPE: f64 = 0.1;

/// How a store's parameters enter a graph: tracked for a training step or
/// frozen (constant) when another model is being optimised.
#[derive(Clone, Copy)]
pub struct Binder<'s> {
    pub store: &'s ParamStore,
    pub trainable: bool,
}

impl<'s> Binder<'s> {
    pub fn train(store: &'s ParamStore) -> Self {
        Self {
            store,
            trainable: true,
        }
    }

    pub fn frozen(store: &'s ParamStore) -> Self {
        Self {
            store,
            trainable: false,
        }
    }

    pub fn get<'g>(&self, g: &'g Graph, id: ParamId) -> Result<Var<'g>> {
        g.param(self.store, id, self.trainable)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[in_dim, out_dim], in_dim, LRELU_SLOPE, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// `[N, in]` → `[N, out]`.
    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<Var<'g>> {
        let g = x.graph();
        let y = x.matmul(p.get(g, self.weight)?)?;
        match self.bias {
            Some(b) => y.add_along(p.get(g, b)?, 1),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeometry,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        geom: ConvGeometry,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[c_out, c_in, kernel], c_in * kernel, LRELU_SLOPE, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            geom,
            c_in,
            c_out,
            kernel,
        })
    }

    /// Stride-1 convolution that keeps the length.
    pub fn same(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::new(
            store,
            name,
            c_in,
            c_out,
            kernel,
            ConvGeometry::same(kernel, dilation),
            true,
            rng,
        )
    }

    /// `[B, Cin, T]` → `[B, Cout, T']`.
    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<Var<'g>> {
        let g = x.graph();
        let y = x.conv1d(p.get(g, self.weight)?, self.geom)?;
        match self.bias {
            Some(b) => y.add_along(p.get(g, b)?, 1),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeometry,
}

impl ConvTranspose1d {
    /// Upsampling by `stride` with kernel `kernel` and padding `(kernel - stride) / 2`,
    /// so the output is exactly `stride` times longer when `kernel - stride` is even.
    pub fn upsampler(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel < stride || !(kernel - stride).is_multiple_of(2) {
            return Err(Error::Config(format!(
                "{name}: kernel {kernel} and stride {stride} do not give an exact upsampling"
            )));
        }
        let geom = ConvGeometry::new(stride, 1, (kernel - stride) / 2);
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(
                &[c_in, c_out, kernel],
                c_in * kernel / stride,
                LRELU_SLOPE,
                rng,
            ),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self { weight, bias, geom })
    }

    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<Var<'g>> {
        let g = x.graph();
        x.conv_transpose1d(p.get(g, self.weight)?, self.geom)?
            .add_along(p.get(g, self.bias)?, 1)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let table = store.add(format!("{name}.table"), normal(&[vocab, dim], 0.01, rng))?;
        Ok(Self { table, vocab, dim })
    }

    pub fn forward<'g>(&self, p: &Binder, g: &'g Graph, ids: &[usize]) -> Result<Var<'g>> {
        p.get(g, self.table)?.embed(ids)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    /// Normalises the last axis of `[N, D]`.
    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<Var<'g>> {
        let g = x.graph();
        let axis = x.shape().len() - 1;
        x.layer_norm()?
            .mul_along(p.get(g, self.gamma)?, axis)?
            .add_along(p.get(g, self.beta)?, axis)
    }
}

/// Full (non-causal) multi-head self-attention over `[T, D]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "{name}: model dim {dim} is not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, true, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, true, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng)?,
            n_heads,
        })
    }

    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let dim = self.query.in_dim;
        if shape.len() != 2 || shape[1] != dim {
            return Err(Error::Contract(format!(
                "attention expects [T, {dim}], got {shape:?}"
            )));
        }
        let d_head = dim / self.n_heads;
        let q = self.query.forward(p, x)?;
        let k = self.key.forward(p, x)?;
        let v = self.value.forward(p, x)?;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = q.narrow(1, h * d_head, d_head)?;
            let kh = k.narrow(1, h * d_head, d_head)?;
            let vh = v.narrow(1, h * d_head, d_head)?;
            let weights = qh.matmul(kh.t()?)?.scale(scale)?.softmax()?;
            heads.push(weights.matmul(vh)?);
        }
        self.out.forward(p, Var::concat(&heads, 1)?)
    }
}
