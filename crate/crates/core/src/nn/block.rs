use candle_core::Tensor;

use super::layers::{attention, gelu, LayerNorm, Linear};
use super::params::Params;
use crate::error::{OmniError, Result};

/// Multi-head attention with separate q/k/v/o projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(p: &Params, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(OmniError::InvalidArgument(format!(
                "width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(&p.pp("q"), dim, dim, true)?,
            k: Linear::new(&p.pp("k"), dim, dim, true)?,
            v: Linear::new(&p.pp("v"), dim, dim, true)?,
            o: Linear::new(&p.pp("o"), dim, dim, true)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        Ok(x.reshape((b, l, self.heads, d / self.heads))?.transpose(1, 2)?)
    }

    /// `x: (b, l, d)` attends to `ctx: (b, m, d)`.
    pub fn forward(&self, x: &Tensor, ctx: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let q = self.split(&self.q.forward(x)?)?;
        let k = self.split(&self.k.forward(ctx)?)?;
        let v = self.split(&self.v.forward(ctx)?)?;
        let y = attention(&q, &k, &v, mask)?.transpose(1, 2)?.reshape((b, l, d))?;
        self.o.forward(&y)
    }
}

/// Pre-norm bidirectional transformer block with a GELU MLP.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderBlock {
    pub fn new(p: &Params, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&p.pp("ln1"), dim)?,
            attn: MultiHeadAttention::new(&p.pp("attn"), dim, heads)?,
            ln2: LayerNorm::new(&p.pp("ln2"), dim)?,
            fc1: Linear::new(&p.pp("fc1"), dim, 4 * dim, true)?,
            fc2: Linear::new(&p.pp("fc2"), 4 * dim, dim, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, mask)?)?;
        let h = self.fc2.forward(&gelu(&self.fc1.forward(&self.ln2.forward(&x)?)?)?)?;
        Ok((x + h)?)
    }
}
