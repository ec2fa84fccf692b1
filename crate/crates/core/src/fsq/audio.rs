use candle_core::DType;

use super::codes::{Code, FsqConfig, FsqProjection};
use crate::encoders::{AudioEncoder, AudioEncoderConfig, MelFrames, MelFrontend};
use crate::error::Result;
use crate::nn::Params;

/// Discrete audio path: log-mel → frozen encoder → FSQ codes at 25 Hz.
pub struct AudioTokenizer {
    frontend: MelFrontend,
    encoder: AudioEncoder,
    fsq: FsqProjection,
    dtype: DType,
}

impl AudioTokenizer {
    pub fn new(encoder: &Params, fsq: &Params, enc_cfg: AudioEncoderConfig, fsq_cfg: FsqConfig) -> Result<Self> {
        let encoder_net = AudioEncoder::new(encoder, enc_cfg)?;
        Ok(Self {
            frontend: MelFrontend::new(),
            fsq: FsqProjection::new(fsq, encoder_net.width(), fsq_cfg)?,
            encoder: encoder_net,
            dtype: encoder.dtype(),
        })
    }

    pub fn encoder(&self) -> &AudioEncoder {
        &self.encoder
    }

    pub fn config(&self) -> &FsqConfig {
        self.fsq.config()
    }

    pub fn codebook_size(&self) -> usize {
        self.fsq.config().codebook_size()
    }

    pub fn mel(&self, wave: &[f32]) -> Result<MelFrames> {
        self.frontend.compute(wave)
    }

    pub fn tokenize_mel(&self, mel: &MelFrames) -> Result<Vec<Code>> {
        let e = self.encoder.encode(mel, self.dtype)?;
        self.fsq.encode(&e.values)
    }

    /// 16 kHz mono samples to `floor(samples / 640)` codes.
    pub fn tokenize(&self, wave: &[f32]) -> Result<Vec<Code>> {
        self.tokenize_mel(&self.mel(wave)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    #[test]
    fn twenty_five_codes_per_second() {
        let store = ParamStore::new(DType::F32, 11);
        let tok = AudioTokenizer::new(
            &store.root().pp("audio_encoder"),
            &store.root().pp("audio_fsq"),
            AudioEncoderConfig::default(),
            FsqConfig::default(),
        )
        .unwrap();
        let wave: Vec<f32> = (0..16_000 * 3).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect();
        let codes = tok.tokenize(&wave).unwrap();
        assert_eq!(codes.len(), 75);
        assert!(codes.iter().all(|c| c.0 < 6561));
        assert_eq!(tok.tokenize(&wave).unwrap(), codes);
    }
}
