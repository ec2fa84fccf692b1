use candle_core::{DType, Device, Tensor};

use super::config::VocoderConfig;
use super::speaker::SpeakerEmbedding;
use crate::error::{OmniError, Result};
use crate::fsq::Code;
use crate::nn::{Conv1d, Embedding, Init, Params, Upsample1d};

/// `x + sin²(αx)/α` with one learnable α per channel, on `(b, c, t)`.
#[derive(Clone, Debug)]
pub struct Snake {
    alpha: Tensor,
}

impl Snake {
    pub fn new(p: &Params, channels: usize) -> Result<Self> {
        Ok(Self { alpha: p.get(channels, "alpha", Init::Const(1.0))? })
    }

    pub fn alpha(&self) -> &Tensor {
        &self.alpha
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        snake(x, &self.alpha)
    }
}

pub fn snake(x: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    let a = alpha.reshape((1, (), 1))?;
    let s = x.broadcast_mul(&a)?.sin()?.sqr()?;
    Ok((x + s.broadcast_div(&a)?)?)
}

struct ResUnit {
    act1: Snake,
    conv1: Conv1d,
    act2: Snake,
    conv2: Conv1d,
}

impl ResUnit {
    fn new(p: &Params, ch: usize, dilation: usize) -> Result<Self> {
        Ok(Self {
            act1: Snake::new(&p.pp("act1"), ch)?,
            conv1: Conv1d::new(&p.pp("conv1"), ch, ch, 3, 1, dilation)?,
            act2: Snake::new(&p.pp("act2"), ch)?,
            conv2: Conv1d::new(&p.pp("conv2"), ch, ch, 1, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.act1.forward(x)?)?;
        let h = self.conv2.forward(&self.act2.forward(&h)?)?;
        Ok((x + h)?)
    }
}

struct Stage {
    act: Snake,
    up: Upsample1d,
    res: Vec<ResUnit>,
}

/// Code embedding, speaker channels, then upsampling stages with snake
/// activations. Emits exactly `hop` samples per code.
pub struct UnitVocoder {
    cfg: VocoderConfig,
    embed: Embedding,
    conv_pre: Conv1d,
    stages: Vec<Stage>,
    act_post: Snake,
    conv_post: Conv1d,
    dtype: DType,
}

impl UnitVocoder {
    pub fn new(p: &Params, cfg: VocoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut ch = cfg.channels;
        let mut stages = Vec::with_capacity(cfg.factors.len());
        for (i, &f) in cfg.factors.iter().enumerate() {
            let sp = p.pp(format!("stages.{i}"));
            let res = cfg
                .dilations
                .iter()
                .enumerate()
                .map(|(j, &d)| ResUnit::new(&sp.pp(format!("res.{j}")), ch / 2, d))
                .collect::<Result<_>>()?;
            stages.push(Stage { act: Snake::new(&sp.pp("act"), ch)?, up: Upsample1d::new(&sp.pp("up"), ch, ch / 2, f)?, res });
            ch /= 2;
        }
        Ok(Self {
            embed: Embedding::new(&p.pp("embed"), cfg.codebook_size, cfg.code_dim)?,
            conv_pre: Conv1d::new(&p.pp("conv_pre"), cfg.code_dim + cfg.speaker_dim, cfg.channels, 7, 1, 1)?,
            stages,
            act_post: Snake::new(&p.pp("act_post"), ch)?,
            conv_post: Conv1d::new(&p.pp("conv_post"), ch, 1, 7, 1, 1)?,
            dtype: p.dtype(),
            cfg,
        })
    }

    pub fn config(&self) -> &VocoderConfig {
        &self.cfg
    }

    /// Snake modules in forward order.
    pub fn snakes(&self) -> Vec<&Snake> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.push(&s.act);
            for r in &s.res {
                out.push(&r.act1);
                out.push(&r.act2);
            }
        }
        out.push(&self.act_post);
        out
    }

    /// `(1, samples)` waveform for `codes`.
    pub fn forward(&self, codes: &[Code], spk: &SpeakerEmbedding) -> Result<Tensor> {
        if codes.is_empty() {
            return Err(OmniError::InvalidArgument("no codes to synthesize".into()));
        }
        if let Some(bad) = codes.iter().find(|c| c.0 as usize >= self.cfg.codebook_size) {
            return Err(OmniError::OutOfRange { what: "audio code", value: bad.0 as usize, limit: self.cfg.codebook_size });
        }
        if spk.dim() != self.cfg.speaker_dim {
            return Err(OmniError::Shape(format!(
                "speaker embedding has {} dims, vocoder expects {}",
                spk.dim(),
                self.cfg.speaker_dim
            )));
        }
        let t = codes.len();
        let ids = Tensor::from_vec(codes.iter().map(|c| c.0).collect::<Vec<_>>(), t, &Device::Cpu)?;
        let e = self.embed.forward(&ids)?.t()?.unsqueeze(0)?; // (1, code_dim, t)
        let s = Tensor::from_slice(spk.values(), (1, self.cfg.speaker_dim, 1), &Device::Cpu)?
            .to_dtype(self.dtype)?
            .broadcast_as((1, self.cfg.speaker_dim, t))?;
        let mut h = self.conv_pre.forward(&Tensor::cat(&[&e, &s], 1)?.contiguous()?)?;
        for st in &self.stages {
            h = st.up.forward(&st.act.forward(&h)?)?;
            for r in &st.res {
                h = r.forward(&h)?;
            }
        }
        let y = self.conv_post.forward(&self.act_post.forward(&h)?)?.tanh()?;
        Ok(y.squeeze(1)?)
    }

    /// Waveform samples, exactly `codes.len() * hop`.
    pub fn synthesize(&self, codes: &[Code], spk: &SpeakerEmbedding) -> Result<Vec<f32>> {
        Ok(self.forward(codes, spk)?.squeeze(0)?.to_dtype(DType::F32)?.to_vec1()?)
    }
}
