use std::collections::BTreeMap;
use std::io::Write;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::items::OmniBuilder;
use super::model::OmniModel;
use crate::backbone::backbone_loss;
use crate::corpus::Corpus;
use crate::curriculum::{sample_batch, CorpusCursor, MixtureLedger, MixtureSampler, Mutation, StageSpec, TriggerState};
use crate::decoder::{phase_schedule, prepare_from_features, stack_examples, train_step as flow_step, ConcatDit};
use crate::error::{OmniError, Result};
use crate::interleave::ModelInput;
use crate::nn::{AdamW, AdamWConfig, Gradients, ParamStore};
use crate::vision::{resize_square, ImageBuffer};
use crate::vocab::{expansion_freeze_mask, FreezeMask, ParamRegistry};
use crate::vocoder::{speaker_embed, train_step as vocoder_step, VocoderExample};

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// One JSON line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub stage: String,
    pub step: usize,
    /// Absent when no sampled item carried a supervised position.
    pub loss: Option<f64>,
    pub main: Option<f64>,
    pub aux: Option<f64>,
    pub tokens: u64,
    pub lr: f64,
    pub mask_version: u64,
    pub realized: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredTrigger {
    pub at_total: u64,
    pub mutation: Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub ledger: MixtureLedger,
    pub fired: Vec<FiredTrigger>,
    pub mask_version: u64,
}

/// Freeze mask bound to one stage. Every step re-checks the stamp so that a
/// step can never run against the mask of another stage.
pub struct StageMask {
    stage: String,
    mask: FreezeMask,
    stamp: u64,
}

impl StageMask {
    pub fn new(model: &OmniModel, stage: &StageSpec) -> Result<Self> {
        let mask =
            expansion_freeze_mask(model.layout(), stage.freeze_policy, &ParamRegistry::from_store(&model.lm.store))?;
        Ok(Self { stage: stage.name.clone(), stamp: mask.version(), mask })
    }

    pub fn version(&self) -> u64 {
        self.stamp
    }

    pub fn mask(&self) -> &FreezeMask {
        &self.mask
    }

    /// Mask for `stage`, failing if it was built for another stage or has
    /// been swapped since construction.
    pub fn checked(&self, stage: &StageSpec) -> Result<&FreezeMask> {
        if self.stage != stage.name || self.mask.version() != self.stamp || self.mask.policy() != stage.freeze_policy {
            return Err(OmniError::Internal(format!(
                "stale freeze mask: built for {} (v{}), stepping {}",
                self.stage, self.stamp, stage.name
            )));
        }
        Ok(&self.mask)
    }
}

/// Runs `stage` until its token budget (or `max_steps`) is reached, writing
/// one metrics line per step.
pub fn train_stage(
    model: &OmniModel,
    corpus: &Corpus,
    stage: &StageSpec,
    stage_index: u64,
    max_steps: Option<usize>,
    metrics: &mut dyn Write,
) -> Result<StageOutcome> {
    stage.validate()?;
    let cfg = &model.config;
    if stage.context_length > cfg.backbone.context_length {
        return Err(OmniError::InvalidArgument(format!(
            "stage {} wants context {}, backbone holds {}",
            stage.name, stage.context_length, cfg.backbone.context_length
        )));
    }
    let t = &cfg.training;
    let mask = StageMask::new(model, stage)?;
    let sampler = MixtureSampler::new(&stage.mixture)?;
    let mut builder = OmniBuilder::new(model, corpus);
    let mut cursor = if t.cycle_corpus { CorpusCursor::cycling() } else { CorpusCursor::default() };
    let mut rng = stream_rng(cfg.seed, 100 + stage_index);
    let mut ledger = MixtureLedger::default();
    let mut triggers = TriggerState::new(stage);
    let mut factors = stage.mask_factors;
    let mut opt = AdamW::new(AdamWConfig { lr: t.lr, ..AdamWConfig::default() });
    let mut fired = Vec::new();
    let mut final_loss = None;
    let mut steps = 0;
    let cap = max_steps.or(t.max_steps_per_stage).unwrap_or(usize::MAX);
    while ledger.total < stage.token_budget && steps < cap {
        let items = sample_batch(stage, &sampler, &mut builder, &mut cursor, &mut rng, &factors, t.batch_size, &mut ledger)?;
        let inputs: Vec<&ModelInput> =
            items.iter().map(|i| &i.input).filter(|i| i.weights().iter().any(|w| *w > 0.0)).collect();
        let (loss, main, aux) = if inputs.is_empty() {
            (None, None, None)
        } else {
            let out = model.lm.backbone.forward(&inputs, cfg.mtp.enabled)?;
            let l = backbone_loss(&out, &inputs, &cfg.mtp)?;
            let value = scalar(&l.total)?;
            if !value.is_finite() {
                return Err(OmniError::NonFinite);
            }
            let mut grads = Gradients::from_loss(&l.total, &model.lm.store)?;
            grads.clip_norm(t.grad_clip)?;
            opt.step(&model.lm.store, &grads, Some(mask.checked(stage)?))?;
            (Some(value), Some(l.main), l.aux)
        };
        steps += 1;
        final_loss = loss;
        for m in triggers.advance(&ledger, stage)? {
            m.apply_to_mask(&mut factors);
            if let Mutation::ScaleLr { factor } = m {
                opt.set_lr(opt.lr() * factor);
            }
            fired.push(FiredTrigger { at_total: ledger.total, mutation: m });
        }
        let line = StepMetrics {
            stage: stage.name.clone(),
            step: steps,
            loss,
            main,
            aux,
            tokens: ledger.total,
            lr: opt.lr(),
            mask_version: mask.version(),
            realized: ledger.item_fractions().into_iter().map(|(k, v)| (k.name().to_string(), v)).collect(),
        };
        writeln!(metrics, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(StageOutcome { stage: stage.name.clone(), steps, final_loss, ledger, fired, mask_version: mask.version() })
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub tokenizer_loss: Vec<f64>,
    pub decoder_loss: Vec<f64>,
    pub bad_decoder_loss: Vec<f64>,
    pub vocoder_loss: Vec<f64>,
}

fn first_last(v: &[f64]) -> Vec<f64> {
    match (v.first(), v.last()) {
        (Some(a), Some(b)) => vec![*a, *b],
        _ => Vec::new(),
    }
}

/// Trains the vision tokenizer (then freezes it), both flow decoders and
/// the vocoder on the corpus.
pub fn train_components(model: &mut OmniModel, corpus: &Corpus) -> Result<ComponentReport> {
    let cfg = model.config.clone();
    let t = &cfg.training;
    if corpus.images.is_empty() || corpus.speech.is_empty() {
        return Err(OmniError::Missing("images and speech are needed to train components".into()));
    }
    let squares: Vec<ImageBuffer> = corpus.images.iter().map(|i| resize_square(&i.image)).collect::<Result<_>>()?;
    let refs: Vec<&ImageBuffer> = squares.iter().collect();

    let tok = &mut model.tokenizers.vision;
    tok.set_frozen(false);
    tok.init_codebook_from(&refs)?;
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut tok_losses = Vec::with_capacity(t.tokenizer_steps);
    for s in 0..t.tokenizer_steps {
        let batch: Vec<&ImageBuffer> = (0..4).map(|j| refs[(s * 4 + j) % refs.len()]).collect();
        tok_losses.push(tok.train_vq_step(&batch, &mut opt)?);
    }
    tok.set_frozen(true);

    let features: Vec<Tensor> = refs
        .iter()
        .map(|img| Ok(tok.detokenize(&tok.tokenize(img)?)?.tensor().clone()))
        .collect::<Result<_>>()?;
    let dec = &model.decoders;
    let main_loss = train_decoder(&dec.main, &dec.store, corpus, &features, t.decoder_steps, t.lr, stream_rng(cfg.seed, 10))?;
    let bad_steps = (t.decoder_steps / t.bad_step_divisor).max(1);
    let bad_loss = train_decoder(&dec.bad, &dec.store, corpus, &features, bad_steps, t.lr, stream_rng(cfg.seed, 11))?;

    let voc = &model.vocoder;
    let hop = voc.net.config().hop();
    let mut clips = Vec::with_capacity(corpus.speech.len());
    for clip in &corpus.speech {
        let codes = model.tokenizers.audio.tokenize(&clip.wave)?;
        let spk = speaker_embed(&clip.wave, cfg.vocoder.speaker_dim)?;
        clips.push((codes, spk));
    }
    let mut rng = stream_rng(cfg.seed, 12);
    let mut opt = AdamW::new(AdamWConfig { lr: t.lr, ..AdamWConfig::default() });
    let mut voc_losses = Vec::with_capacity(t.vocoder_steps);
    for _ in 0..t.vocoder_steps {
        let batch: Vec<VocoderExample> = (0..2)
            .map(|_| {
                let i = rng.random_range(0..clips.len());
                let (codes, spk) = &clips[i];
                let n = t.vocoder_crop_tokens.min(codes.len());
                let start = rng.random_range(0..=codes.len() - n);
                let wave = &corpus.speech[i].wave;
                let end = ((start + n) * hop).min(wave.len());
                VocoderExample {
                    codes: codes[start..start + n].to_vec(),
                    wave: wave[start * hop..end].to_vec(),
                    speaker: spk.clone(),
                }
            })
            .collect();
        voc_losses.push(vocoder_step(&voc.net, &voc.store, &mut opt, &batch)?);
    }
    Ok(ComponentReport {
        tokenizer_loss: first_last(&tok_losses),
        decoder_loss: first_last(&main_loss),
        bad_decoder_loss: first_last(&bad_loss),
        vocoder_loss: first_last(&voc_losses),
    })
}

/// Four-phase decoder schedule with `steps` split evenly across phases.
fn train_decoder(
    net: &ConcatDit,
    store: &ParamStore,
    corpus: &Corpus,
    features: &[Tensor],
    steps: usize,
    lr: f64,
    mut rng: ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut opt = AdamW::new(AdamWConfig { lr, ..AdamWConfig::default() });
    let mut losses = Vec::with_capacity(steps);
    let per_phase = steps.div_ceil(4);
    let mut done = 0;
    for phase_id in 1..=4u8 {
        let phase = phase_schedule(phase_id)?;
        opt.set_lr(lr * phase.lr_scale);
        for _ in 0..per_phase.min(steps - done) {
            let mut examples = Vec::with_capacity(4);
            for _ in 0..4 {
                let i = rng.random_range(0..features.len());
                examples.push(prepare_from_features(&corpus.images[i].image, &features[i], &phase, &mut rng, store.dtype())?);
            }
            let (x0, cond) = stack_examples(&examples)?;
            losses.push(flow_step(net, store, &mut opt, &x0, &cond, &mut rng)?);
            done += 1;
        }
    }
    Ok(losses)
}
