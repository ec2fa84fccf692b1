//! Unit-to-waveform vocoder conditioned on a speaker vector, with a
//! multi-resolution spectral training loss.

mod config;
mod generator;
mod loss;
mod speaker;

pub use config::{VocoderConfig, TOKEN_SPAN_SECS};
pub use generator::{snake, Snake, UnitVocoder};
pub use loss::{stft_magnitude, vocoder_loss, STFT_RESOLUTIONS};
pub use speaker::{speaker_embed, SpeakerEmbedding, DEFAULT_SPEAKER_DIM, MIN_REFERENCE_SECS};

use candle_core::{DType, Device, Tensor};

use crate::error::{OmniError, Result};
use crate::fsq::Code;
use crate::nn::{AdamW, Gradients, ParamStore};

/// One training clip: codes, the matching waveform and its speaker.
#[derive(Debug, Clone)]
pub struct VocoderExample {
    pub codes: Vec<Code>,
    pub wave: Vec<f32>,
    pub speaker: SpeakerEmbedding,
}

/// Pads or truncates `wave` to `codes * hop` samples. Mismatches larger than
/// one token's span are rejected.
pub fn align_target(wave: &[f32], codes: usize, hop: usize) -> Result<Vec<f32>> {
    let want = codes * hop;
    if wave.len().abs_diff(want) > hop {
        return Err(OmniError::Shape(format!(
            "waveform has {} samples, {codes} codes imply {want} (tolerance {hop})",
            wave.len()
        )));
    }
    let mut out = wave[..wave.len().min(want)].to_vec();
    out.resize(want, 0.0);
    Ok(out)
}

/// Loss of the vocoder on `batch`, averaged over clips.
pub fn batch_loss(voc: &UnitVocoder, batch: &[VocoderExample]) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(OmniError::InvalidArgument("empty vocoder batch".into()));
    }
    let hop = voc.config().hop();
    let mut total: Option<Tensor> = None;
    for ex in batch {
        let target = align_target(&ex.wave, ex.codes.len(), hop)?;
        let pred = voc.forward(&ex.codes, &ex.speaker)?;
        let target = Tensor::from_vec(target, (1, pred.dims()[1]), &Device::Cpu)?.to_dtype(pred.dtype())?;
        let l = vocoder_loss(&pred, &target)?;
        total = Some(match total {
            Some(t) => (t + l)?,
            None => l,
        });
    }
    Ok((total.expect("non-empty batch") / batch.len() as f64)?)
}

/// One optimizer step; returns the pre-update loss.
pub fn train_step(voc: &UnitVocoder, store: &ParamStore, opt: &mut AdamW, batch: &[VocoderExample]) -> Result<f64> {
    let loss = batch_loss(voc, batch)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(OmniError::NonFinite);
    }
    let mut grads = Gradients::from_loss(&loss, store)?;
    grads.clip_norm(1.0)?;
    opt.step(store, &grads, None)?;
    Ok(value)
}

#[cfg(test)]
mod tests;
