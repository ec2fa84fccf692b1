use std::path::Path;

use candle_core::DType;

use super::config::RunConfig;
use crate::backbone::Backbone;
use crate::decoder::ConcatDit;
use crate::encoders::{Adapter, AudioEncoder, TemporalCompressor, VisionEncoder};
use crate::error::{OmniError, Result};
use crate::fsq::AudioTokenizer;
use crate::nn::checkpoint::{load_into_store, save_store};
use crate::nn::ParamStore;
use crate::vision::VisionTokenizer;
use crate::vocab::{TextTokenizer, VocabLayout};
use crate::vocoder::UnitVocoder;

/// Language model and the perception modules trained with it.
pub struct LanguageModel {
    pub store: ParamStore,
    pub backbone: Backbone,
    pub vision_encoder: VisionEncoder,
    pub audio_encoder: AudioEncoder,
    pub audio_adapter: Adapter,
    pub compressor: TemporalCompressor,
}

impl LanguageModel {
    pub fn new(cfg: &RunConfig, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(dtype, cfg.seed.wrapping_add(1));
        let root = store.root();
        let hidden = cfg.backbone.hidden;
        Ok(Self {
            backbone: Backbone::new(&root.pp("backbone"), cfg.backbone, &cfg.mtp, cfg.layout.total())?,
            vision_encoder: VisionEncoder::new(
                &root.pp("vision_encoder"),
                &root.pp("vision_adapter"),
                cfg.vision_encoder,
                hidden,
            )?,
            audio_encoder: AudioEncoder::new(&root.pp("audio_encoder"), cfg.audio_encoder)?,
            audio_adapter: Adapter::new(&root.pp("audio_adapter"), cfg.audio_encoder.width, hidden)?,
            compressor: TemporalCompressor::new(&root.pp("compressor"), hidden)?,
            store,
        })
    }
}

/// Frozen tokenizers on both modality sides.
pub struct Tokenizers {
    pub store: ParamStore,
    pub text: TextTokenizer,
    pub vision: VisionTokenizer,
    pub audio: AudioTokenizer,
}

impl Tokenizers {
    pub fn new(cfg: &RunConfig, text: TextTokenizer) -> Result<Self> {
        if text.size() != cfg.layout.size(crate::vocab::Region::Text) {
            return Err(OmniError::InvalidArgument(format!(
                "text tokenizer has {} ids, layout text region {}",
                text.size(),
                cfg.layout.size(crate::vocab::Region::Text)
            )));
        }
        let store = ParamStore::new(DType::F32, cfg.seed.wrapping_add(2));
        let root = store.root();
        Ok(Self {
            vision: VisionTokenizer::new(&root.pp("vision_tokenizer"), cfg.vision_tokenizer)?,
            audio: AudioTokenizer::new(&root.pp("audio_tokenizer.encoder"), &root.pp("audio_tokenizer.fsq"), cfg.audio_encoder, cfg.fsq)?,
            store,
            text,
        })
    }
}

/// Main and bad flow decoders.
pub struct Decoders {
    pub store: ParamStore,
    pub main: ConcatDit,
    pub bad: ConcatDit,
}

impl Decoders {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let store = ParamStore::new(DType::F32, cfg.seed.wrapping_add(3));
        let root = store.root();
        Ok(Self {
            main: ConcatDit::new(&root.pp("main"), cfg.decoder)?,
            bad: ConcatDit::new(&root.pp("bad"), cfg.bad_decoder)?,
            store,
        })
    }
}

pub struct Vocoder {
    pub store: ParamStore,
    pub net: UnitVocoder,
}

impl Vocoder {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let store = ParamStore::new(DType::F32, cfg.seed.wrapping_add(4));
        Ok(Self { net: UnitVocoder::new(&store.root(), cfg.vocoder.clone())?, store })
    }
}

/// All trained parts of a run.
pub struct OmniModel {
    pub config: RunConfig,
    pub lm: LanguageModel,
    pub tokenizers: Tokenizers,
    pub decoders: Decoders,
    pub vocoder: Vocoder,
}

impl OmniModel {
    pub fn new(config: RunConfig, text: TextTokenizer) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            lm: LanguageModel::new(&config, DType::F32)?,
            tokenizers: Tokenizers::new(&config, text)?,
            decoders: Decoders::new(&config)?,
            vocoder: Vocoder::new(&config)?,
            config,
        })
    }

    pub fn layout(&self) -> &VocabLayout {
        &self.config.layout
    }

    /// Writes tokenizer, decoder and vocoder weights under `dir`.
    pub fn save_components(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("text_tokenizer.json"), serde_json::to_string(&self.tokenizers.text)?)?;
        save_store(&self.tokenizers.store, &dir.join("tokenizers"))?;
        save_store(&self.decoders.store, &dir.join("decoders"))?;
        save_store(&self.vocoder.store, &dir.join("vocoder"))?;
        Ok(())
    }

    pub fn load_components(&mut self, dir: &Path) -> Result<()> {
        load_into_store(&self.tokenizers.store, &dir.join("tokenizers"))?;
        load_into_store(&self.decoders.store, &dir.join("decoders"))?;
        load_into_store(&self.vocoder.store, &dir.join("vocoder"))?;
        self.tokenizers.vision.set_frozen(true);
        Ok(())
    }

    pub fn save_lm(&self, dir: &Path) -> Result<()> {
        save_store(&self.lm.store, dir)
    }

    pub fn load_lm(&self, dir: &Path) -> Result<()> {
        load_into_store(&self.lm.store, dir)
    }
}

pub fn load_text_tokenizer(dir: &Path) -> Result<TextTokenizer> {
    let path = dir.join("text_tokenizer.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| OmniError::Missing(format!("text tokenizer {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
