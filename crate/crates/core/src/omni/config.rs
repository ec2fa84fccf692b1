use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, MtpConfig};
use crate::corpus::CorpusConfig;
use crate::curriculum::DEFAULT_BUDGET_SCALE;
use crate::decoder::{DecodeOptions, DecoderConfig};
use crate::encoders::{AudioEncoderConfig, TokenBudget, VisionEncoderConfig, SAMPLE_RATE};
use crate::error::{OmniError, Result};
use crate::fsq::FsqConfig;
use crate::vision::VisionTokenizerConfig;
use crate::vocab::{Region, VocabLayout};
use crate::vocoder::VocoderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub budget_scale: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Hard cap on optimizer steps per stage, on top of the token budget.
    pub max_steps_per_stage: Option<usize>,
    pub cycle_corpus: bool,
    pub tokenizer_steps: usize,
    pub decoder_steps: usize,
    /// Bad-model steps are `decoder_steps / bad_step_divisor`.
    pub bad_step_divisor: usize,
    pub vocoder_steps: usize,
    /// Tokens per vocoder training crop.
    pub vocoder_crop_tokens: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            budget_scale: DEFAULT_BUDGET_SCALE,
            batch_size: 2,
            lr: 1e-3,
            grad_clip: 1.0,
            max_steps_per_stage: None,
            cycle_corpus: true,
            tokenizer_steps: 40,
            decoder_steps: 400,
            bad_step_divisor: 20,
            vocoder_steps: 300,
            vocoder_crop_tokens: 10,
        }
    }
}

/// Everything a run needs besides its seed-derived weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub layout: VocabLayout,
    pub backbone: BackboneConfig,
    pub mtp: MtpConfig,
    pub fsq: FsqConfig,
    pub audio_encoder: AudioEncoderConfig,
    pub vision_encoder: VisionEncoderConfig,
    pub token_budget: TokenBudget,
    pub vision_tokenizer: VisionTokenizerConfig,
    pub decoder: DecoderConfig,
    pub bad_decoder: DecoderConfig,
    pub decode: DecodeOptions,
    pub vocoder: VocoderConfig,
    pub corpus: CorpusConfig,
    pub training: TrainingConfig,
    /// Stage list, relative to the run directory.
    pub stages_file: String,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            layout: VocabLayout::default_layout(),
            backbone: BackboneConfig::default(),
            mtp: MtpConfig::default(),
            fsq: FsqConfig::default(),
            audio_encoder: AudioEncoderConfig::default(),
            vision_encoder: VisionEncoderConfig::default(),
            token_budget: TokenBudget::default(),
            vision_tokenizer: VisionTokenizerConfig::default(),
            decoder: DecoderConfig::main(),
            bad_decoder: DecoderConfig::bad(),
            decode: DecodeOptions::default(),
            vocoder: VocoderConfig::default(),
            corpus: CorpusConfig::default(),
            training: TrainingConfig::default(),
            stages_file: "stages.json".into(),
        }
    }

    /// Small corpus, tiny stage budgets and short component schedules, for
    /// smoke runs of the whole curriculum.
    pub fn toy(seed: u64) -> Self {
        let mut cfg = Self::new(seed);
        cfg.corpus = CorpusConfig { images: 4, speech_clips: 4, conversations: 8, videos: 2, edits: 2, ..CorpusConfig::default() };
        let t = &mut cfg.training;
        t.budget_scale = 1e-9;
        t.batch_size = 1;
        t.max_steps_per_stage = Some(4);
        t.tokenizer_steps = 2;
        t.decoder_steps = 8;
        t.vocoder_steps = 2;
        cfg.decode.steps = 2;
        cfg.decode.sample_px = 32;
        cfg
    }

    /// Cross-component consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OmniError::InvalidArgument(format!("config: {m}")));
        self.layout.validate_controls()?;
        self.backbone.validate()?;
        self.mtp.validate()?;
        self.fsq.validate()?;
        self.vocoder.validate()?;
        self.corpus.validate()?;
        if self.layout.size(Region::Vision) != self.vision_tokenizer.codebook_size {
            return bad(format!(
                "vision region {} != tokenizer codebook {}",
                self.layout.size(Region::Vision),
                self.vision_tokenizer.codebook_size
            ));
        }
        if self.layout.size(Region::Audio) != self.fsq.codebook_size() {
            return bad(format!(
                "audio region {} != FSQ codebook {}",
                self.layout.size(Region::Audio),
                self.fsq.codebook_size()
            ));
        }
        if self.vocoder.codebook_size != self.fsq.codebook_size() {
            return bad(format!(
                "vocoder codebook {} != FSQ codebook {}",
                self.vocoder.codebook_size,
                self.fsq.codebook_size()
            ));
        }
        if self.vocoder.sample_rate != SAMPLE_RATE {
            return bad(format!("vocoder rate {} != audio rate {SAMPLE_RATE}", self.vocoder.sample_rate));
        }
        for (name, d) in [("decoder", &self.decoder), ("bad decoder", &self.bad_decoder)] {
            if d.cond_channels != self.vision_tokenizer.feature_dim {
                return bad(format!(
                    "{name} expects {} cond channels, tokenizer features have {}",
                    d.cond_channels, self.vision_tokenizer.feature_dim
                ));
            }
        }
        if self.layout.size(Region::Text) < 256 {
            return bad("text region must hold the 256 byte tokens".into());
        }
        let t = &self.training;
        if !(t.budget_scale.is_finite() && t.budget_scale > 0.0) || t.batch_size == 0 || !(t.lr > 0.0) {
            return bad("training budget scale, batch size and learning rate must be positive".into());
        }
        if t.bad_step_divisor == 0 || t.vocoder_crop_tokens == 0 {
            return bad("bad-model divisor and vocoder crop must be positive".into());
        }
        if self.decode.steps == 0 || self.decode.sample_px < 8 {
            return bad("decode needs at least one step and 8 pixels".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OmniError::Missing(format!("config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
