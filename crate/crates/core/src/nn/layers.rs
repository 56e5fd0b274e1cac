//! Transformer building blocks on top of [`Graph`].

use rand_chacha::ChaCha8Rng;

use super::graph::{AttentionMask, Graph, Var};
use super::params::{ModelParams, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

pub fn layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
    g.layer_norm(x, gain, bias, eps)
}

pub fn softmax_cross_entropy(g: &mut Graph, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
    g.cross_entropy(logits, targets, smoothing)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(params: &mut ModelParams, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Linear {
            w: params.add_glorot(&format!("{name}.w"), fan_in, fan_out, rng)?,
            b: params.add(&format!("{name}.b"), Tensor::zeros(1, fan_out))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ModelParams, x: Var) -> Result<Var> {
        let (w, b) = (g.param(params, self.w), g.param(params, self.b));
        linear(g, x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ModelParams, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: params.add(&format!("{name}.gain"), Tensor::filled(1, dim, 1.0))?,
            bias: params.add(&format!("{name}.bias"), Tensor::zeros(1, dim))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ModelParams, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(params, self.gain), g.param(params, self.bias));
        layer_norm(g, x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Multi-head scaled dot-product attention with an explicit mask.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(params: &mut ModelParams, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(params, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(params, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(params, &format!("{name}.v"), dim, dim, rng)?,
            o: Linear::new(params, &format!("{name}.o"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// Attention whose query and key projections share one weight, so the
    /// initial scores already follow the inner products of the inputs.
    pub fn new_tied(params: &mut ModelParams, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dimension {dim} is not divisible by {heads} heads"
            )));
        }
        let qk = Linear::new(params, &format!("{name}.qk"), dim, dim, rng)?;
        Ok(MultiHeadAttention {
            q: qk,
            k: qk,
            v: Linear::new(params, &format!("{name}.v"), dim, dim, rng)?,
            o: Linear::new(params, &format!("{name}.o"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// Queries from `q_in`, keys from `k_in`, values from `v_in`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        mask: &AttentionMask,
    ) -> Result<Var> {
        multi_head_attention(g, params, self, q_in, k_in, v_in, mask)
    }
}

pub fn multi_head_attention(
    g: &mut Graph,
    params: &ModelParams,
    attn: &MultiHeadAttention,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    mask: &AttentionMask,
) -> Result<Var> {
    let (nq, nk) = (g.value(q_in).rows(), g.value(k_in).rows());
    if mask.rows() != nq || mask.cols() != nk || g.value(v_in).rows() != nk {
        return Err(Error::Shape(format!(
            "attention mask {}x{} for {nq} queries and {nk} keys",
            mask.rows(),
            mask.cols()
        )));
    }
    let q = attn.q.forward(g, params, q_in)?;
    let k = attn.k.forward(g, params, k_in)?;
    let v = attn.v.forward(g, params, v_in)?;
    let dh = attn.dim / attn.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(attn.heads);
    for h in 0..attn.heads {
        let (qh, kh, vh) = if attn.heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let weights = g.masked_softmax(scores, mask)?;
        heads.push(g.matmul(weights, vh)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    attn.o.forward(g, params, joined)
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(params: &mut ModelParams, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(params, &format!("{name}.up"), dim, hidden, rng)?,
            down: Linear::new(params, &format!("{name}.down"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ModelParams, x: Var) -> Result<Var> {
        let h = self.up.forward(g, params, x)?;
        let h = g.relu(h);
        self.down.forward(g, params, h)
    }
}

/// Standard sinusoidal position table, `len x dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            t[(pos, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}
