use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use super::mel::{MelFrames, MEL_RATE_HZ, N_MELS};
use crate::error::{OmniError, Result};
use crate::nn::{gelu, softmax_last, sinusoidal, Conv1d, EncoderBlock, LayerNorm, Linear, Params};

pub const AUDIO_RATE_HZ: f64 = 25.0;
pub const COMPRESSED_RATE_HZ: f64 = 1.0;
pub const COMPRESS_WINDOW: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingModality {
    Audio,
    Vision,
}

/// Continuous embedding stream `(len, width)` with its frame rate.
#[derive(Debug, Clone)]
pub struct ContinuousEmbedding {
    pub values: Tensor,
    /// Frames per second; 0 for spatial (vision) streams.
    pub rate_hz: f64,
    pub modality: EmbeddingModality,
}

impl ContinuousEmbedding {
    pub fn new(values: Tensor, rate_hz: f64, modality: EmbeddingModality) -> Result<Self> {
        values.dims2()?;
        Ok(Self { values, rate_hz, modality })
    }

    pub fn len(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.values.dims()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioEncoderConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self { width: 128, heads: 4, blocks: 2 }
    }
}

/// Toy speech encoder: two convolutions (the second strided by two), a
/// stride-two average pool and a few self-attention blocks. 100 Hz mel in,
/// 25 Hz embeddings out.
pub struct AudioEncoder {
    cfg: AudioEncoderConfig,
    conv1: Conv1d,
    conv2: Conv1d,
    blocks: Vec<EncoderBlock>,
    ln: LayerNorm,
}

impl AudioEncoder {
    pub fn new(p: &Params, cfg: AudioEncoderConfig) -> Result<Self> {
        let blocks = (0..cfg.blocks)
            .map(|i| EncoderBlock::new(&p.pp(format!("blocks.{i}")), cfg.width, cfg.heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            conv1: Conv1d::new(&p.pp("conv1"), N_MELS, cfg.width, 3, 1, 1)?,
            conv2: Conv1d::new(&p.pp("conv2"), cfg.width, cfg.width, 3, 2, 1)?,
            blocks,
            ln: LayerNorm::new(&p.pp("ln"), cfg.width)?,
        })
    }

    pub fn width(&self) -> usize {
        self.cfg.width
    }

    /// Output length for `frames` mel frames.
    pub fn output_len(frames: usize) -> usize {
        frames / 4
    }

    pub fn encode(&self, mel: &MelFrames, dtype: DType) -> Result<ContinuousEmbedding> {
        let t = mel.frames();
        if t < 4 {
            return Err(OmniError::InvalidArgument(format!(
                "audio encoder needs at least 4 mel frames, got {t}"
            )));
        }
        let x = Tensor::from_slice(mel.data(), (t, N_MELS), &Device::Cpu)?
            .to_dtype(dtype)?
            .t()?
            .unsqueeze(0)?
            .contiguous()?;
        let h = gelu(&self.conv1.forward(&x)?)?;
        let h = gelu(&self.conv2.forward(&h)?)?.narrow(2, 0, t / 2)?;
        let out = Self::output_len(t);
        let h = h
            .narrow(2, 0, 2 * out)?
            .reshape((1, self.cfg.width, out, 2))?
            .mean(D::Minus1)?
            .transpose(1, 2)?; // (1, out, width)
        let pos: Vec<f64> = (0..out).map(|i| i as f64).collect();
        let mut h = h.broadcast_add(&sinusoidal(&pos, self.cfg.width, 10_000.0, dtype, &Device::Cpu)?)?;
        for b in &self.blocks {
            h = b.forward(&h, None)?;
        }
        let h = self.ln.forward(&h)?.squeeze(0)?;
        ContinuousEmbedding::new(h, MEL_RATE_HZ / 4.0, EmbeddingModality::Audio)
    }
}

/// Linear → GELU → Linear projection into the backbone width.
pub struct Adapter {
    fc1: Linear,
    fc2: Linear,
    in_width: usize,
}

impl Adapter {
    pub fn new(p: &Params, in_width: usize, out_width: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&p.pp("fc1"), in_width, out_width, true)?,
            fc2: Linear::new(&p.pp("fc2"), out_width, out_width, true)?,
            in_width,
        })
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let w = x.dim(D::Minus1)?;
        if w != self.in_width {
            return Err(OmniError::Shape(format!(
                "adapter expects width {}, got {w}",
                self.in_width
            )));
        }
        self.fc2.forward(&gelu(&self.fc1.forward(x)?)?)
    }

    pub fn forward(&self, e: &ContinuousEmbedding) -> Result<ContinuousEmbedding> {
        ContinuousEmbedding::new(self.forward_tensor(&e.values)?, e.rate_hz, e.modality)
    }

    pub fn first(&self) -> &Linear {
        &self.fc1
    }

    pub fn second(&self) -> &Linear {
        &self.fc2
    }
}

/// Number of compressed outputs for `len` inputs.
pub fn compressed_len(len: usize) -> usize {
    len.div_ceil(COMPRESS_WINDOW)
}

/// Gated attention pooling over non-overlapping windows of 25 frames. A
/// trailing partial window is pooled over the frames it has.
pub struct TemporalCompressor {
    score: Linear,
    gate: Linear,
    out: Linear,
    width: usize,
}

impl TemporalCompressor {
    pub fn new(p: &Params, width: usize) -> Result<Self> {
        Ok(Self {
            score: Linear::new(&p.pp("score"), width, 1, true)?,
            gate: Linear::new(&p.pp("gate"), width, width, true)?,
            out: Linear::new(&p.pp("out"), width, width, true)?,
            width,
        })
    }

    pub fn forward(&self, e: &ContinuousEmbedding) -> Result<ContinuousEmbedding> {
        let len = e.len();
        if len == 0 {
            return Err(OmniError::InvalidArgument("cannot compress an empty stream".into()));
        }
        if e.width() != self.width {
            return Err(OmniError::Shape(format!(
                "compressor expects width {}, got {}",
                self.width,
                e.width()
            )));
        }
        let n = compressed_len(len);
        let padded_len = n * COMPRESS_WINDOW;
        let x = e.values.pad_with_zeros(0, 0, padded_len - len)?;
        let mask: Vec<f32> = (0..padded_len)
            .map(|i| if i < len { 0.0 } else { f32::NEG_INFINITY })
            .collect();
        let mask = Tensor::from_vec(mask, (n, COMPRESS_WINDOW), &Device::Cpu)?.to_dtype(x.dtype())?;
        let scores = self.score.forward(&x)?.reshape((n, COMPRESS_WINDOW))?;
        let attn = softmax_last(&(scores + mask)?)?; // (n, 25)
        let g = self.gate.forward(&x)?;
        let gate = (((g * 0.5)?.tanh()? + 1.0)? * 0.5)?;
        let gated = (&x * gate)?;
        let pooled = attn
            .unsqueeze(1)?
            .matmul(&gated.reshape((n, COMPRESS_WINDOW, self.width))?)?
            .squeeze(1)?;
        let y = self.out.forward(&pooled)?;
        ContinuousEmbedding::new(y, COMPRESSED_RATE_HZ, e.modality)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::log_mel;
    use crate::nn::ParamStore;

    #[test]
    fn encoder_rate_contract() {
        let store = ParamStore::new(DType::F32, 3);
        let enc = AudioEncoder::new(&store.root().pp("audio_encoder"), AudioEncoderConfig::default()).unwrap();
        for (frames, want) in [(4usize, 1usize), (7, 1), (8, 2), (101, 25)] {
            let mel = MelFrames::new(vec![0.0; frames * N_MELS], frames).unwrap();
            let e = enc.encode(&mel, DType::F32).unwrap();
            assert_eq!((e.len(), e.width()), (want, 128));
            assert_eq!(e.rate_hz, 25.0);
        }
        let mel = MelFrames::new(vec![0.0; 3 * N_MELS], 3).unwrap();
        assert!(enc.encode(&mel, DType::F32).is_err());
        let mel = log_mel(&vec![0.01; 16_000 * 2]).unwrap();
        assert_eq!(enc.encode(&mel, DType::F32).unwrap().len(), 50);
    }

    #[test]
    fn adapter_zero_input_is_bias_image() {
        let store = ParamStore::new(DType::F64, 3);
        let a = Adapter::new(&store.root().pp("audio_adapter"), 8, 6).unwrap();
        let zero = Tensor::zeros((5, 8), DType::F64, &Device::Cpu).unwrap();
        let y = a.forward_tensor(&zero).unwrap();
        let b1 = a.first().bias().unwrap().unsqueeze(0).unwrap();
        let expect = a.second().forward(&gelu(&b1).unwrap()).unwrap();
        let y: Vec<Vec<f64>> = y.to_vec2().unwrap();
        let e: Vec<f64> = expect.squeeze(0).unwrap().to_vec1().unwrap();
        for row in y {
            assert_eq!(row, e);
        }
        let bad = Tensor::zeros((5, 7), DType::F64, &Device::Cpu).unwrap();
        assert!(a.forward_tensor(&bad).is_err());
    }

    #[test]
    fn compressor_window_counts() {
        let store = ParamStore::new(DType::F32, 3);
        let c = TemporalCompressor::new(&store.root().pp("compressor"), 16).unwrap();
        for (len, want) in [(250, 10), (25, 1), (30, 2), (1, 1)] {
            let x = Tensor::randn(0f32, 1.0, (len, 16), &Device::Cpu).unwrap();
            let e = ContinuousEmbedding::new(x, 25.0, EmbeddingModality::Audio).unwrap();
            let y = c.forward(&e).unwrap();
            assert_eq!((y.len(), y.width()), (want, 16));
            let v: Vec<f32> = y.values.flatten_all().unwrap().to_vec1().unwrap();
            assert!(v.iter().all(|x| x.is_finite()));
        }
        let empty = Tensor::zeros((0, 16), DType::F32, &Device::Cpu).unwrap();
        let e = ContinuousEmbedding::new(empty, 25.0, EmbeddingModality::Audio).unwrap();
        assert!(c.forward(&e).is_err());
    }

    #[test]
    fn partial_window_ignores_padding() {
        let store = ParamStore::new(DType::F64, 9);
        let c = TemporalCompressor::new(&store.root().pp("compressor"), 4).unwrap();
        let x = Tensor::randn(0f64, 1.0, (30, 4), &Device::Cpu).unwrap();
        let full = c
            .forward(&ContinuousEmbedding::new(x.clone(), 25.0, EmbeddingModality::Audio).unwrap())
            .unwrap();
        let tail = c
            .forward(&ContinuousEmbedding::new(x.narrow(0, 25, 5).unwrap(), 25.0, EmbeddingModality::Audio).unwrap())
            .unwrap();
        let a: Vec<f64> = full.values.get(1).unwrap().to_vec1().unwrap();
        let b: Vec<f64> = tail.values.get(0).unwrap().to_vec1().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
