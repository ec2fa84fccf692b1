use std::collections::HashMap;

use candle_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::OmniModel;
use crate::corpus::{Corpus, CorpusKind};
use crate::curriculum::{ItemBuilder, TaskKind};
use crate::error::Result;
use crate::interleave::{assemble, render_template, MaskFactors, ModelInput, Position, Role, Segment, SegmentKind, Turn};
use crate::vision::{resize_square, ImageBuffer};
use crate::vocab::{Region, TokenId, EDIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ImageKey {
    Image(usize),
    EditSource(usize),
    EditTarget(usize),
}

/// Builds training sequences from the corpus with the run's tokenizers and
/// encoders. Discrete token ids are cached per corpus item; continuous
/// embeddings are recomputed so adapters receive gradients.
pub struct OmniBuilder<'a> {
    model: &'a OmniModel,
    corpus: &'a Corpus,
    vision_ids: HashMap<ImageKey, Vec<u32>>,
    audio_ids: HashMap<usize, Vec<u32>>,
}

impl<'a> OmniBuilder<'a> {
    pub fn new(model: &'a OmniModel, corpus: &'a Corpus) -> Self {
        Self { model, corpus, vision_ids: HashMap::new(), audio_ids: HashMap::new() }
    }

    pub fn text_ids(&self, s: &str) -> Result<Vec<TokenId>> {
        text_to_global(self.model, s)
    }

    fn text(&self, s: &str) -> Result<Segment> {
        Ok(Segment::text(self.text_ids(s)?))
    }

    fn vision_tokens(&mut self, key: ImageKey, img: &ImageBuffer) -> Result<Vec<u32>> {
        if let Some(ids) = self.vision_ids.get(&key) {
            return Ok(ids.clone());
        }
        let ids = self.model.tokenizers.vision.tokenize(&resize_square(img)?)?.ids().to_vec();
        self.vision_ids.insert(key, ids.clone());
        Ok(ids)
    }

    fn audio_codes(&mut self, index: usize) -> Result<Vec<u32>> {
        if let Some(ids) = self.audio_ids.get(&index) {
            return Ok(ids.clone());
        }
        let codes: Vec<u32> =
            self.model.tokenizers.audio.tokenize(&self.corpus.speech[index].wave)?.iter().map(|c| c.0).collect();
        self.audio_ids.insert(index, codes.clone());
        Ok(codes)
    }

    fn vision_stream(&self, frames: &[ImageBuffer]) -> Result<Tensor> {
        let budget = self.model.config.token_budget.for_frames(frames.len());
        Ok(self.model.lm.vision_encoder.encode(frames, budget, self.model.lm.store.dtype())?.values)
    }

    fn audio_stream(&self, wave: &[f32]) -> Result<Tensor> {
        let lm = &self.model.lm;
        let mel = self.model.tokenizers.audio.mel(wave)?;
        let e = lm.audio_encoder.encode(&mel, lm.store.dtype())?;
        Ok(lm.audio_adapter.forward(&e)?.values)
    }

    fn finish(&self, turns: Vec<Turn>, factors: &MaskFactors) -> Result<ModelInput> {
        let segs = render_template(&turns, self.model.layout())?;
        assemble(&segs, self.model.layout(), factors)
    }

    fn qa(&self, user: Vec<Segment>, answer: Vec<Segment>, factors: &MaskFactors) -> Result<ModelInput> {
        self.finish(vec![Turn::new(Role::User, user), Turn::new(Role::Assistant, answer)], factors)
    }

    fn understanding<R: Rng>(&self, task: TaskKind, index: usize, rng: &mut R, f: &MaskFactors) -> Result<ModelInput> {
        let item = &self.corpus.images[index];
        let stream = Segment::new(SegmentKind::VisionContinuous(self.vision_stream(std::slice::from_ref(&item.image))?));
        let (q, a) = match task {
            TaskKind::Ocr => ("read the label".to_string(), item.label.clone()),
            TaskKind::Vqa if rng.random_bool(0.5) => ("what colour is the shape".into(), item.color.clone()),
            TaskKind::Vqa => ("what shape is it".into(), item.shape.name().to_string()),
            _ => ("describe the image".into(), item.caption.clone()),
        };
        self.qa(vec![stream, self.text(&q)?], vec![self.text(&a)?], f)
    }

    fn edit(&mut self, index: usize, f: &MaskFactors) -> Result<ModelInput> {
        let pair = &self.corpus.edits[index];
        let src = self.vision_tokens(ImageKey::EditSource(index), &pair.source)?;
        let tgt = self.vision_tokens(ImageKey::EditTarget(index), &pair.target)?;
        let stream = self.vision_stream(std::slice::from_ref(&pair.source))?;
        let user = vec![
            self.text(&pair.instruction)?,
            Segment::new(SegmentKind::VisionContinuous(stream)).edit_source(),
            Segment::new(SegmentKind::VisionDiscrete(src)),
        ];
        let mut input = self.qa(user, vec![Segment::new(SegmentKind::VisionDiscrete(tgt))], f)?;
        unsupervise_edit_source(&mut input, self.model)?;
        Ok(input)
    }
}

/// Text encoded with the run tokenizer, as global ids.
pub fn text_to_global(model: &OmniModel, s: &str) -> Result<Vec<TokenId>> {
    model
        .tokenizers
        .text
        .encode(s)
        .into_iter()
        .map(|i| model.layout().global_id(Region::Text, i as usize))
        .collect()
}

/// Zeroes the loss weights of the discrete source span that follows the
/// edit marker; only the edited output span stays supervised.
fn unsupervise_edit_source(input: &mut ModelInput, model: &OmniModel) -> Result<()> {
    let edit = model.layout().special(EDIT)?;
    let Some(p) = input.positions().iter().position(|x| *x == Position::Token(edit)) else {
        return Ok(());
    };
    let span = crate::vision::GRID_CELLS + 2;
    let w = input.weights_mut();
    // position t is the target of index t - 1
    for t in p + 1..(p + 1 + span).min(w.len() + 1) {
        w[t - 1] = 0.0;
    }
    Ok(())
}

impl ItemBuilder for OmniBuilder<'_> {
    fn available(&self, kind: CorpusKind) -> usize {
        self.corpus.count(kind)
    }

    fn build(&mut self, task: TaskKind, index: usize, rng: &mut ChaCha8Rng, f: &MaskFactors) -> Result<ModelInput> {
        match task {
            TaskKind::Text | TaskKind::Think => {
                let c = &self.corpus.conversations[index];
                let mut answer = Turn::new(Role::Assistant, vec![self.text(&c.assistant)?]);
                if task == TaskKind::Think {
                    let reasoning = c.think.clone().unwrap_or_else(|| format!("the user asks: {}", c.user));
                    answer = answer.with_think(self.text_ids(&reasoning)?);
                }
                self.finish(vec![Turn::new(Role::User, vec![self.text(&c.user)?]), answer], f)
            }
            TaskKind::Image => {
                let item = &self.corpus.images[index];
                let ids = Segment::new(SegmentKind::VisionDiscrete(self.vision_tokens(ImageKey::Image(index), &item.image)?));
                if rng.random_bool(0.5) {
                    self.qa(vec![ids, self.text("describe the image")?], vec![self.text(&item.caption)?], f)
                } else {
                    self.qa(vec![self.text(&format!("draw {}", item.caption))?], vec![ids], f)
                }
            }
            TaskKind::VisionGeneration => {
                let item = &self.corpus.images[index];
                let ids = Segment::new(SegmentKind::VisionDiscrete(self.vision_tokens(ImageKey::Image(index), &item.image)?));
                self.qa(vec![self.text(&format!("draw {}", item.caption))?], vec![ids], f)
            }
            TaskKind::Audio | TaskKind::Tts => {
                let codes = Segment::new(SegmentKind::AudioDiscrete(self.audio_codes(index)?));
                let transcript = self.corpus.speech[index].transcript.clone();
                if task == TaskKind::Audio && rng.random_bool(0.5) {
                    self.qa(vec![codes, self.text("transcribe")?], vec![self.text(&transcript)?], f)
                } else {
                    self.qa(vec![self.text(&format!("say {transcript}"))?], vec![codes], f)
                }
            }
            TaskKind::Asr => {
                let clip = &self.corpus.speech[index];
                let stream = self.audio_stream(&clip.wave)?;
                let codes = self.audio_codes(index)?;
                let [c, d] = crate::interleave::audio_understanding(stream, codes);
                let transcript = self.corpus.speech[index].transcript.clone();
                self.qa(vec![c, d, self.text("transcribe")?], vec![self.text(&transcript)?], f)
            }
            TaskKind::Caption | TaskKind::Ocr | TaskKind::Vqa => self.understanding(task, index, rng, f),
            TaskKind::VisionUnderstanding => {
                let pick = [TaskKind::Caption, TaskKind::Ocr, TaskKind::Vqa][rng.random_range(0..3)];
                self.understanding(pick, index, rng, f)
            }
            TaskKind::Edit => self.edit(index, f),
            TaskKind::Video => {
                let clip = &self.corpus.videos[index];
                let frames = self.vision_stream(&clip.frames)?;
                let lm = &self.model.lm;
                let mel = self.model.tokenizers.audio.mel(&clip.audio)?;
                let audio = lm.audio_adapter.forward(&lm.audio_encoder.encode(&mel, lm.store.dtype())?)?;
                let compressed = lm.compressor.forward(&audio)?.values;
                let user = vec![
                    Segment::new(SegmentKind::VisionContinuous(frames)),
                    Segment::new(SegmentKind::AudioContinuous(compressed)),
                    self.text("what happens in the video")?,
                ];
                self.qa(user, vec![self.text(&clip.caption)?], f)
            }
        }
    }
}

