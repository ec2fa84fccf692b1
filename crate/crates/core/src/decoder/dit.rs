use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::codec::LATENT_CHANNELS;
use crate::error::{OmniError, Result};
use crate::nn::{gelu, sinusoidal, EncoderBlock, LayerNorm, Linear, MultiHeadAttention, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub cond_channels: usize,
}

impl DecoderConfig {
    pub fn main() -> Self {
        Self { blocks: 4, width: 128, heads: 4, cond_channels: 64 }
    }

    /// Weaker reference model for autoguidance.
    pub fn bad() -> Self {
        Self { blocks: 2, width: 64, heads: 2, cond_channels: 64 }
    }
}

/// Velocity predictor for rectified flow. `x_t` and `cond` are
/// `(b, c, h, w)`; `t` holds one time per batch item.
pub trait VelocityField {
    fn velocity(&self, x_t: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor>;
}

fn check_pair(x: &Tensor, cond: &Tensor, t: &[f64], cond_channels: usize) -> Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = x.dims4()?;
    let (cb, cc, ch, cw) = cond.dims4()?;
    if (cb, ch, cw) != (b, h, w) {
        return Err(OmniError::Shape(format!(
            "latent {:?} and cond {:?} disagree",
            x.dims(),
            cond.dims()
        )));
    }
    if cc != cond_channels || c != LATENT_CHANNELS {
        return Err(OmniError::Shape(format!(
            "expected {LATENT_CHANNELS} latent and {cond_channels} cond channels, got {c} and {cc}"
        )));
    }
    if t.len() != b {
        return Err(OmniError::Shape(format!("{} times for batch of {b}", t.len())));
    }
    Ok((b, c, h, w))
}

fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?)
}

fn from_tokens(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, _, c) = x.dims3()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?)
}

fn grid_positions(h: usize, w: usize, width: usize, dtype: DType) -> Result<Tensor> {
    let half = width / 2;
    let rows: Vec<f64> = (0..h).map(|i| i as f64).collect();
    let cols: Vec<f64> = (0..w).map(|i| i as f64).collect();
    let r = sinusoidal(&rows, half, 100.0, dtype, &Device::Cpu)?.unsqueeze(1)?;
    let c = sinusoidal(&cols, width - half, 100.0, dtype, &Device::Cpu)?.unsqueeze(0)?;
    Ok(Tensor::cat(&[r.broadcast_as((h, w, half))?, c.broadcast_as((h, w, width - half))?], 2)?
        .reshape((h * w, width))?)
}

struct TimeEmbed {
    fc1: Linear,
    fc2: Linear,
    width: usize,
}

impl TimeEmbed {
    fn new(p: &Params, width: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&p.pp("fc1"), width, width, true)?,
            fc2: Linear::new(&p.pp("fc2"), width, width, true)?,
            width,
        })
    }

    /// `(b, 1, width)`.
    fn forward(&self, t: &[f64], dtype: DType) -> Result<Tensor> {
        let scaled: Vec<f64> = t.iter().map(|v| v * 1000.0).collect();
        let e = sinusoidal(&scaled, self.width, 10_000.0, dtype, &Device::Cpu)?;
        Ok(self.fc2.forward(&gelu(&self.fc1.forward(&e)?)?)?.unsqueeze(1)?)
    }
}

/// Single-stream transformer whose only conditioning path is channel-wise
/// concatenation of the cond grid with the noisy latent.
pub struct ConcatDit {
    cfg: DecoderConfig,
    input: Linear,
    time: TimeEmbed,
    blocks: Vec<EncoderBlock>,
    norm: LayerNorm,
    out: Linear,
    dtype: DType,
}

impl ConcatDit {
    pub fn new(p: &Params, cfg: DecoderConfig) -> Result<Self> {
        let blocks = (0..cfg.blocks)
            .map(|i| EncoderBlock::new(&p.pp(format!("blocks.{i}")), cfg.width, cfg.heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            input: Linear::new(&p.pp("input"), LATENT_CHANNELS + cfg.cond_channels, cfg.width, true)?,
            time: TimeEmbed::new(&p.pp("time"), cfg.width)?,
            blocks,
            norm: LayerNorm::new(&p.pp("norm"), cfg.width)?,
            out: Linear::zeros(&p.pp("out"), cfg.width, LATENT_CHANNELS)?,
            dtype: p.dtype(),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }
}

impl VelocityField for ConcatDit {
    fn velocity(&self, x_t: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor> {
        let (_, _, h, w) = check_pair(x_t, cond, t, self.cfg.cond_channels)?;
        let joint = Tensor::cat(&[x_t, cond], 1)?;
        let mut hdn = self
            .input
            .forward(&to_tokens(&joint)?)?
            .broadcast_add(&grid_positions(h, w, self.cfg.width, self.dtype)?)?
            .broadcast_add(&self.time.forward(t, self.dtype)?)?;
        for b in &self.blocks {
            hdn = b.forward(&hdn, None)?;
        }
        from_tokens(&self.out.forward(&self.norm.forward(&hdn)?)?, h, w)
    }
}

struct CrossBlock {
    self_block_ln: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_ln: LayerNorm,
    cross_attn: MultiHeadAttention,
    mlp_ln: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl CrossBlock {
    fn new(p: &Params, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            self_block_ln: LayerNorm::new(&p.pp("ln1"), width)?,
            self_attn: MultiHeadAttention::new(&p.pp("self_attn"), width, heads)?,
            cross_ln: LayerNorm::new(&p.pp("ln_cross"), width)?,
            cross_attn: MultiHeadAttention::new(&p.pp("cross_attn"), width, heads)?,
            mlp_ln: LayerNorm::new(&p.pp("ln2"), width)?,
            // half-width MLP keeps the parameter count level with the concat model
            fc1: Linear::new(&p.pp("fc1"), width, 2 * width, true)?,
            fc2: Linear::new(&p.pp("fc2"), 2 * width, width, true)?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &Tensor) -> Result<Tensor> {
        let h = self.self_block_ln.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h, None)?)?;
        let h = self.cross_ln.forward(&x)?;
        let x = (&x + self.cross_attn.forward(&h, ctx, None)?)?;
        let m = self.fc2.forward(&gelu(&self.fc1.forward(&self.mlp_ln.forward(&x)?)?)?)?;
        Ok((x + m)?)
    }
}

/// Baseline that reads the cond grid through cross-attention instead of
/// channel concatenation.
pub struct CrossAttnDit {
    cfg: DecoderConfig,
    input: Linear,
    cond_in: Linear,
    time: TimeEmbed,
    blocks: Vec<CrossBlock>,
    norm: LayerNorm,
    out: Linear,
    dtype: DType,
}

impl CrossAttnDit {
    pub fn new(p: &Params, cfg: DecoderConfig) -> Result<Self> {
        let blocks = (0..cfg.blocks)
            .map(|i| CrossBlock::new(&p.pp(format!("blocks.{i}")), cfg.width, cfg.heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            input: Linear::new(&p.pp("input"), LATENT_CHANNELS, cfg.width, true)?,
            cond_in: Linear::new(&p.pp("cond_in"), cfg.cond_channels, cfg.width, true)?,
            time: TimeEmbed::new(&p.pp("time"), cfg.width)?,
            blocks,
            norm: LayerNorm::new(&p.pp("norm"), cfg.width)?,
            out: Linear::zeros(&p.pp("out"), cfg.width, LATENT_CHANNELS)?,
            dtype: p.dtype(),
        })
    }
}

impl VelocityField for CrossAttnDit {
    fn velocity(&self, x_t: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor> {
        let (_, _, h, w) = check_pair(x_t, cond, t, self.cfg.cond_channels)?;
        let pos = grid_positions(h, w, self.cfg.width, self.dtype)?;
        let ctx = self.cond_in.forward(&to_tokens(cond)?)?.broadcast_add(&pos)?;
        let mut hdn = self
            .input
            .forward(&to_tokens(x_t)?)?
            .broadcast_add(&pos)?
            .broadcast_add(&self.time.forward(t, self.dtype)?)?;
        for b in &self.blocks {
            hdn = b.forward(&hdn, &ctx)?;
        }
        from_tokens(&self.out.forward(&self.norm.forward(&hdn)?)?, h, w)
    }
}
