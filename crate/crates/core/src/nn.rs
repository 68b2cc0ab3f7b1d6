//! Transformer building blocks expressed on the autograd [`Graph`].

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: store.add_xavier(format!("{name}.weight"), fan_in, fan_out, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, fan_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add_ones(format!("{name}.weight"), 1, width),
            bias: store.add_zeros(format!("{name}.bias"), 1, width),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, self.eps)
    }
}

/// Multi-head scaled dot-product attention. Queries come from one sequence,
/// keys and values from another (the same one for self-attention).
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::InvalidConfig(format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), width, width, rng),
            key: Linear::new(store, &format!("{name}.key"), width, width, rng),
            value: Linear::new(store, &format!("{name}.value"), width, width, rng),
            output: Linear::new(store, &format!("{name}.output"), width, width, rng),
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, queries: Var, context: Var) -> Result<Var> {
        let (_, width) = g.shape(queries);
        if g.shape(context).1 != width {
            return Err(Error::shape(format!(
                "attention width mismatch: {} vs {}",
                width,
                g.shape(context).1
            )));
        }
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, context)?;
        let v = self.value.forward(g, context)?;
        let head_dim = width / self.heads;
        let scale = 1.0 / libm::sqrt(head_dim as f64);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_dim;
            let qh = g.slice_cols(q, start, head_dim)?;
            let kh = g.slice_cols(k, start, head_dim)?;
            let vh = g.slice_cols(v, start, head_dim)?;
            let scores = g.matmul_t(qh, false, kh, true)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores);
            outs.push(g.matmul(weights, vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.output.forward(g, merged)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), width, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Pre-norm self-attention transformer block.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, mlp_ratio: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            attn: Attention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            mlp: Mlp::new(store, &format!("{name}.mlp"), width, width * mlp_ratio, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.add(x, m)
    }
}

/// 2-D sine-cosine positional table with a leading all-zero row for the
/// class token. Returns `(1 + side^2) x width`.
pub fn sincos_2d(width: usize, side: usize) -> Result<crate::tensor::Matrix> {
    if width % 4 != 0 {
        return Err(Error::InvalidConfig(format!(
            "positional width {width} must be divisible by 4"
        )));
    }
    let quarter = width / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / libm::pow(10000.0, i as f64 / quarter as f64))
        .collect();
    let mut table = crate::tensor::Matrix::zeros(1 + side * side, width);
    for r in 0..side {
        for c in 0..side {
            let row = table.row_mut(1 + r * side + c);
            for (i, w) in omega.iter().enumerate() {
                row[i] = libm::sin(r as f64 * w);
                row[quarter + i] = libm::cos(r as f64 * w);
                row[2 * quarter + i] = libm::sin(c as f64 * w);
                row[3 * quarter + i] = libm::cos(c as f64 * w);
            }
        }
    }
    Ok(table)
}
