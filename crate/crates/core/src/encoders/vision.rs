use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::audio::{ContinuousEmbedding, EmbeddingModality};
use crate::error::{OmniError, Result};
use crate::nn::resize::adaptive_avg_pool;
use crate::nn::{sinusoidal, Linear, Params};
use crate::vision::ImageBuffer;

/// Maximum number of vision embeddings emitted per item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub image: usize,
    pub video: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self { image: 3072, video: 11264 }
    }
}

impl TokenBudget {
    pub fn for_frames(&self, frames: usize) -> usize {
        if frames > 1 {
            self.video
        } else {
            self.image
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionEncoderConfig {
    pub patch: usize,
    pub width: usize,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        Self { patch: 16, width: 128 }
    }
}

/// Smallest integer pooling factor `s` with
/// `frames * ceil(gh/s) * ceil(gw/s) <= budget`.
pub fn pooling_factor(frames: usize, gh: usize, gw: usize, budget: usize) -> Result<usize> {
    if budget < 1 {
        return Err(OmniError::InvalidArgument("token budget must be at least 1".into()));
    }
    if frames > budget {
        return Err(OmniError::OutOfRange {
            what: "frame count for budget",
            value: frames,
            limit: budget,
        });
    }
    let max = gh.max(gw).max(1);
    (1..=max)
        .find(|&s| frames * gh.div_ceil(s) * gw.div_ceil(s) <= budget)
        .ok_or_else(|| OmniError::Internal("no pooling factor fits the budget".into()))
}

/// Patch-embedding vision encoder followed by a linear adapter into the
/// backbone width. Grids over budget are average-pooled spatially.
pub struct VisionEncoder {
    cfg: VisionEncoderConfig,
    patch_embed: Linear,
    adapter: Linear,
}

impl VisionEncoder {
    pub fn new(encoder: &Params, adapter: &Params, cfg: VisionEncoderConfig, out_width: usize) -> Result<Self> {
        Ok(Self {
            cfg,
            patch_embed: Linear::new(&encoder.pp("patch_embed"), cfg.patch * cfg.patch * 3, cfg.width, true)?,
            adapter: Linear::new(&adapter.pp("proj"), cfg.width, out_width, true)?,
        })
    }

    pub fn grid_size(&self, width: usize, height: usize) -> (usize, usize) {
        (height.div_ceil(self.cfg.patch), width.div_ceil(self.cfg.patch))
    }

    /// Number of embeddings `encode` will emit for these frames.
    pub fn output_len(&self, frames: usize, width: usize, height: usize, budget: usize) -> Result<usize> {
        let (gh, gw) = self.grid_size(width, height);
        let s = pooling_factor(frames, gh, gw, budget)?;
        Ok(frames * gh.div_ceil(s) * gw.div_ceil(s))
    }

    fn patches(&self, img: &ImageBuffer, dtype: DType) -> Result<Tensor> {
        let p = self.cfg.patch;
        let (gh, gw) = self.grid_size(img.width(), img.height());
        let x = Tensor::from_slice(img.data(), (img.height(), img.width(), 3), &Device::Cpu)?
            .to_dtype(dtype)?
            .pad_with_zeros(0, 0, gh * p - img.height())?
            .pad_with_zeros(1, 0, gw * p - img.width())?;
        Ok(x.reshape((gh, p, gw, p, 3))?
            .permute((0, 2, 1, 3, 4))?
            .contiguous()?
            .reshape((gh * gw, p * p * 3))?)
    }

    /// All frames must share one size. Output rows are frame-major, then
    /// row-major over the (pooled) patch grid.
    pub fn encode(&self, frames: &[ImageBuffer], budget: usize, dtype: DType) -> Result<ContinuousEmbedding> {
        let first = frames
            .first()
            .ok_or_else(|| OmniError::InvalidArgument("no frames to encode".into()))?;
        let (w, h) = (first.width(), first.height());
        if frames.iter().any(|f| (f.width(), f.height()) != (w, h)) {
            return Err(OmniError::Shape("all frames must share one size".into()));
        }
        let (gh, gw) = self.grid_size(w, h);
        let s = pooling_factor(frames.len(), gh, gw, budget)?;
        let (oh, ow) = (gh.div_ceil(s), gw.div_ceil(s));
        let half = self.cfg.width / 2;
        let rows: Vec<f64> = (0..gh).map(|i| i as f64).collect();
        let cols: Vec<f64> = (0..gw).map(|i| i as f64).collect();
        let pe_r = sinusoidal(&rows, half, 100.0, dtype, &Device::Cpu)?.unsqueeze(1)?;
        let pe_c = sinusoidal(&cols, self.cfg.width - half, 100.0, dtype, &Device::Cpu)?.unsqueeze(0)?;
        let pos = Tensor::cat(
            &[pe_r.broadcast_as((gh, gw, half))?, pe_c.broadcast_as((gh, gw, self.cfg.width - half))?],
            2,
        )?
        .reshape((gh * gw, self.cfg.width))?;
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            let e = self.patch_embed.forward(&self.patches(f, dtype)?)?.broadcast_add(&pos)?;
            let e = if s > 1 {
                let grid = e.t()?.reshape((self.cfg.width, gh, gw))?;
                adaptive_avg_pool(&grid, oh, ow)?
                    .reshape((self.cfg.width, oh * ow))?
                    .t()?
            } else {
                e
            };
            out.push(e);
        }
        let e = Tensor::cat(&out, 0)?;
        ContinuousEmbedding::new(self.adapter.forward(&e)?, 0.0, EmbeddingModality::Vision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn encoder() -> (ParamStore, VisionEncoder) {
        let store = ParamStore::new(DType::F32, 2);
        let enc = VisionEncoder::new(
            &store.root().pp("vision_encoder"),
            &store.root().pp("vision_adapter"),
            VisionEncoderConfig::default(),
            32,
        )
        .unwrap();
        (store, enc)
    }

    #[test]
    fn budgets() {
        let (_s, enc) = encoder();
        let img = ImageBuffer::filled(384, 384, [0.5; 3]).unwrap();
        let e = enc.encode(std::slice::from_ref(&img), 3072, DType::F32).unwrap();
        assert_eq!((e.len(), e.width()), (576, 32));
        let one = ImageBuffer::filled(1, 1, [0.5; 3]).unwrap();
        assert_eq!(enc.encode(&[one], 3072, DType::F32).unwrap().len(), 1);
        assert!(enc.encode(&[img], 0, DType::F32).is_err());
        assert_eq!(enc.output_len(120, 384, 384, 11264).unwrap(), 120 * 64);
        assert_eq!(enc.output_len(1, 1024, 1024, 3072).unwrap(), 1024);
    }

    #[test]
    fn pooling_factor_minimal() {
        assert_eq!(pooling_factor(1, 24, 24, 3072).unwrap(), 1);
        assert_eq!(pooling_factor(120, 24, 24, 11264).unwrap(), 3);
        assert_eq!(pooling_factor(1, 64, 64, 3072).unwrap(), 2);
        assert!(pooling_factor(5, 1, 1, 4).is_err());
    }
}
