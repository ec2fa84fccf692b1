use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Outcome;
use crate::backbone::SamplerSettings;
use crate::corpus::{shape_image, speech_clip};
use crate::decoder::{
    decode_tokens, flow_loss, gaussian, sample, tokens_to_cond, train_step, ConcatDit, CrossAttnDit, DecoderConfig,
    GuidanceConfig, LatentCodec, LatentGrid, VelocityField,
};
use crate::encoders::{read_wav, write_wav, AudioEncoderConfig, SAMPLE_RATE};
use crate::error::{OmniError, Result};
use crate::fsq::{AudioTokenizer, FsqConfig};
use crate::nn::{AdamW, AdamWConfig, ParamStore};
use crate::omni::{generate_audio, generate_image, RunDir};
use crate::vision::{resize_square, AspectRecord, ImageBuffer, VisionTokenizer, VisionTokenizerConfig, GRID_CELLS};
use crate::vocoder::{speaker_embed, train_step as vocoder_step, UnitVocoder, VocoderConfig, VocoderExample};

/// Seed the directional conditioning check is asserted for.
pub const SHIPPED_SEED: u64 = 0;

const OVERFIT_IMAGES: usize = 16;
const OVERFIT_PX: usize = 32;
const PSNR_TARGET_DB: f64 = 25.0;
const DECODER_STEP_LIMIT: usize = 2000;
const VOCODER_STEP_LIMIT: usize = 1000;
const TIME_LIMIT_SECS: f64 = 600.0;

/// Latents, cond grids and pixels of a small shape-image set.
pub struct DecoderSet {
    pub latents: Tensor,
    pub conds: Tensor,
    pub images: Vec<ImageBuffer>,
}

/// `n` procedural `px × px` images tokenized by a codebook initialised on
/// them.
pub fn decoder_set(seed: u64, n: usize, px: usize, tok: &VisionTokenizer) -> Result<DecoderSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<ImageBuffer> =
        (0..n).map(|_| Ok(shape_image(&mut rng, px, px)?.image)).collect::<Result<_>>()?;
    let (lw, lh) = crate::decoder::latent_size(px, px);
    let mut lat = Vec::with_capacity(n);
    let mut cond = Vec::with_capacity(n);
    for img in &images {
        lat.push(LatentCodec.encode(img, DType::F32)?.tensor().clone());
        let grid = tok.tokenize(&resize_square(img)?)?;
        cond.push(tokens_to_cond(tok, &grid, lw, lh)?.to_dtype(DType::F32)?);
    }
    Ok(DecoderSet { latents: Tensor::stack(&lat, 0)?, conds: Tensor::stack(&cond, 0)?, images })
}

fn set_tokenizer(seed: u64) -> Result<(ParamStore, VisionTokenizer)> {
    let store = ParamStore::new(DType::F32, seed ^ 0x70c);
    let mut tok = VisionTokenizer::new(&store.root().pp("vision_tokenizer"), VisionTokenizerConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1ba);
    let imgs: Vec<ImageBuffer> = (0..OVERFIT_IMAGES)
        .map(|_| resize_square(&shape_image(&mut rng, OVERFIT_PX, OVERFIT_PX)?.image))
        .collect::<Result<_>>()?;
    let refs: Vec<&ImageBuffer> = imgs.iter().collect();
    tok.init_codebook_from(&refs)?;
    tok.set_frozen(true);
    Ok((store, tok))
}

/// PSNR of sampled latents against the codec round-trip of the targets,
/// and against the source pixels.
pub fn sample_psnr(net: &dyn VelocityField, set: &DecoderSet, steps: usize, seed: u64) -> Result<(f64, f64)> {
    let x = sample(net, None, &set.conds, steps, &GuidanceConfig { scale: 1.0 }, seed)?;
    let (mut mse, mut pixel_mse) = (0.0, 0.0);
    let n = set.images.len();
    for (i, img) in set.images.iter().enumerate() {
        let (w, h) = (img.width(), img.height());
        let got = LatentCodec.decode(&LatentGrid::new(x.get(i)?)?, w, h)?;
        let want = LatentCodec.decode(&LatentGrid::new(set.latents.get(i)?)?, w, h)?;
        mse += got.mse(&want)? / n as f64;
        pixel_mse += got.mse(img)? / n as f64;
    }
    let db = |m: f64| 10.0 * (1.0 / m.max(1e-12)).log10();
    Ok((db(mse), db(pixel_mse)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOverfit {
    pub steps: usize,
    pub psnr_db: f64,
    pub pixel_psnr_db: f64,
    pub seconds: f64,
}

/// Trains the main-size decoder on the overfit set until the sampled
/// reconstructions reach `target_db` or `max_steps` run out.
pub fn decoder_overfit(seed: u64, max_steps: usize, target_db: f64) -> Result<DecoderOverfit> {
    let start = Instant::now();
    let (_ts, tok) = set_tokenizer(seed)?;
    let set = decoder_set(seed ^ 0x1ba, OVERFIT_IMAGES, OVERFIT_PX, &tok)?;
    let store = ParamStore::new(DType::F32, seed);
    let net = ConcatDit::new(&store.root().pp("decoder"), DecoderConfig::main())?;
    let mut opt = AdamW::new(AdamWConfig { lr: 2e-3, ..AdamWConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut steps = 0;
    while steps < max_steps {
        train_step(&net, &store, &mut opt, &set.latents, &set.conds, &mut rng)?;
        steps += 1;
        if steps % 100 == 0 || steps == max_steps {
            let p = sample_psnr(&net, &set, 20, seed)?;
            if p.0 > best.0 {
                best = p;
            }
            if p.0 >= target_db {
                break;
            }
        }
    }
    Ok(DecoderOverfit { steps, psnr_db: best.0, pixel_psnr_db: best.1, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderOverfit {
    pub steps: usize,
    pub first_loss: f64,
    pub best_loss: f64,
    pub seconds: f64,
}

impl VocoderOverfit {
    pub fn reduction(&self) -> f64 {
        1.0 - self.best_loss / self.first_loss
    }
}

/// Eight 10-token clips from both synthetic speakers, full batch, until
/// the loss halves or `max_steps` run out.
pub fn vocoder_overfit(seed: u64, max_steps: usize) -> Result<VocoderOverfit> {
    let start = Instant::now();
    let tok_store = ParamStore::new(DType::F32, seed ^ 0xa0d);
    let tok = AudioTokenizer::new(
        &tok_store.root().pp("audio_tokenizer.encoder"),
        &tok_store.root().pp("audio_tokenizer.fsq"),
        AudioEncoderConfig::default(),
        FsqConfig::default(),
    )?;
    let cfg = VocoderConfig::default();
    let hop = cfg.hop();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Vec::with_capacity(8);
    for i in 0..8 {
        let clip = speech_clip(&mut rng, i % 2, 5);
        let codes = tok.tokenize(&clip.wave)?;
        let spk = speaker_embed(&clip.wave, cfg.speaker_dim)?;
        batch.push(VocoderExample { codes: codes[..10].to_vec(), wave: clip.wave[..10 * hop].to_vec(), speaker: spk });
    }
    let store = ParamStore::new(DType::F32, seed);
    let voc = UnitVocoder::new(&store.root(), cfg)?;
    let mut opt = AdamW::new(AdamWConfig { lr: 2e-3, ..AdamWConfig::default() });
    let mut first = f64::NAN;
    let mut best = f64::INFINITY;
    let mut steps = 0;
    while steps < max_steps {
        let l = vocoder_step(&voc, &store, &mut opt, &batch)?;
        steps += 1;
        if steps == 1 {
            first = l;
        }
        best = best.min(l);
        if best <= 0.5 * first {
            break;
        }
    }
    Ok(VocoderOverfit { steps, first_loss: first, best_loss: best, seconds: start.elapsed().as_secs_f64() })
}

pub fn overfit_oracles(seed: u64) -> Result<Outcome> {
    let d = decoder_overfit(seed, DECODER_STEP_LIMIT, PSNR_TARGET_DB)?;
    let v = vocoder_overfit(seed, VOCODER_STEP_LIMIT)?;
    let dec_ok = d.psnr_db >= PSNR_TARGET_DB && d.seconds < TIME_LIMIT_SECS;
    let voc_ok = v.reduction() >= 0.5 && v.seconds < TIME_LIMIT_SECS;
    Ok(Outcome::new(
        dec_ok && voc_ok,
        d.psnr_db,
        format!("decoder >= {PSNR_TARGET_DB} dB in {DECODER_STEP_LIMIT} steps; vocoder loss -50% in {VOCODER_STEP_LIMIT} steps"),
        format!(
            "decoder {:.2} dB (pixel {:.2} dB) after {} steps in {:.0}s; vocoder {:.4} -> {:.4} ({:.0}% down) after {} steps in {:.0}s",
            d.psnr_db,
            d.pixel_psnr_db,
            d.steps,
            d.seconds,
            v.first_loss,
            v.best_loss,
            100.0 * v.reduction(),
            v.steps,
            v.seconds
        ),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningComparison {
    pub steps: usize,
    pub concat_loss: f64,
    pub cross_loss: f64,
    pub concat_params: usize,
    pub cross_params: usize,
}

/// Flow loss on held-out images over a fixed grid of times and noise.
fn validation_loss(net: &dyn VelocityField, set: &DecoderSet, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a1);
    let n = set.images.len();
    let mut total = 0.0;
    let times = [0.1, 0.3, 0.5, 0.7, 0.9];
    for t in times {
        let eps = gaussian(set.latents.dims(), DType::F32, &mut rng)?;
        let l = flow_loss(net, &set.latents, &set.conds, &vec![t; n], &eps)?;
        total += l.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    }
    Ok(total / times.len() as f64)
}

/// Trains the concat and cross-attention decoders with identical data,
/// noise and step counts, then compares held-out flow loss.
pub fn compare_conditioning(seed: u64, steps: usize) -> Result<ConditioningComparison> {
    let (_ts, tok) = set_tokenizer(seed)?;
    let train = decoder_set(seed ^ 0x1ba, OVERFIT_IMAGES, OVERFIT_PX, &tok)?;
    let val = decoder_set(seed ^ 0x5e7, 8, OVERFIT_PX, &tok)?;
    let cfg = DecoderConfig::main();
    let concat_store = ParamStore::new(DType::F32, seed);
    let concat = ConcatDit::new(&concat_store.root().pp("decoder"), cfg)?;
    let cross_store = ParamStore::new(DType::F32, seed);
    let cross = CrossAttnDit::new(&cross_store.root().pp("decoder"), cfg)?;
    let run = |net: &dyn VelocityField, store: &ParamStore| -> Result<f64> {
        let mut opt = AdamW::new(AdamWConfig { lr: 1e-3, ..AdamWConfig::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf10);
        for _ in 0..steps {
            train_step(net, store, &mut opt, &train.latents, &train.conds, &mut rng)?;
        }
        validation_loss(net, &val, seed)
    };
    Ok(ConditioningComparison {
        steps,
        concat_loss: run(&concat, &concat_store)?,
        cross_loss: run(&cross, &cross_store)?,
        concat_params: concat_store.num_params(),
        cross_params: cross_store.num_params(),
    })
}

pub fn conditioning_comparison(seed: u64) -> Result<Outcome> {
    let c = compare_conditioning(seed, 300)?;
    let asserted = seed == SHIPPED_SEED;
    let mut o = Outcome::new(
        c.concat_loss <= c.cross_loss,
        c.concat_loss - c.cross_loss,
        "concat validation loss <= cross-attention loss",
        format!(
            "concat {:.5} ({} params) vs cross-attention {:.5} ({} params) after {} steps{}",
            c.concat_loss,
            c.concat_params,
            c.cross_loss,
            c.cross_params,
            c.steps,
            if asserted { "" } else { "; reported only, not the shipped seed" }
        ),
    );
    o.info_only = !asserted;
    Ok(o)
}

/// Fails with a missing-precondition error unless every stage of the run
/// has a checkpoint.
pub fn require_trained(dir: &Path) -> Result<()> {
    let run = RunDir::new(dir);
    let cfg = run.load_config()?;
    let stages = run.load_stages(&cfg)?;
    if let Some(s) = stages.iter().find(|s| !run.has_checkpoint(&s.name)) {
        return Err(OmniError::Missing(format!(
            "checkpoint for stage {} in {} (run `omnistack train --all` first)",
            s.name,
            dir.display()
        )));
    }
    Ok(())
}

/// Generation from the final checkpoint of a trained run: a PNG that
/// re-tokenizes to a full grid and a 2 s WAV with the exact sample count.
/// Token agreement after a decode round-trip is reported only.
pub fn end_to_end(dir: &Path) -> Result<Outcome> {
    require_trained(dir)?;
    let run = RunDir::new(dir);
    let cfg = run.load_config()?;
    let stages = run.load_stages(&cfg)?;
    let last = stages.last().map(|s| s.name.clone()).ok_or_else(|| OmniError::Missing("stages".into()))?;
    let model = run.load_model(&cfg, Some(&last))?;
    let corpus = run.load_corpus()?;
    let out = run.outputs_dir();
    std::fs::create_dir_all(&out)?;
    let settings = SamplerSettings { temperature: 1.0, top_k: 0, seed: cfg.seed };

    let (img, _) = generate_image(&model, "draw a red circle", &settings, 64, 48, &cfg.decode)?;
    let png = out.join("e2e_image.png");
    img.save_png(&png)?;
    let reloaded = ImageBuffer::load_png(&png)?;
    let tok = &model.tokenizers.vision;
    let grid = tok.tokenize(&resize_square(&reloaded)?)?;
    let cb = tok.config().codebook_size as u32;
    let png_ok = grid.ids().len() == GRID_CELLS && grid.ids().iter().all(|&i| i < cb);

    let clip = corpus.speech.first().ok_or_else(|| OmniError::Missing("speech clips".into()))?;
    let spk = speaker_embed(&clip.wave, cfg.vocoder.speaker_dim)?;
    let (wave, codes) = generate_audio(&model, "say hello", &settings, 2.0, &spk)?;
    let wav = out.join("e2e_audio.wav");
    write_wav(&wav, &wave, SAMPLE_RATE)?;
    let samples = read_wav(&wav)?.len();
    let wav_ok = codes.len() == 50 && samples == 50 * cfg.vocoder.hop();

    let dec = &model.decoders;
    let mut agree = 0.0;
    let n = corpus.images.len().min(4);
    for shape in corpus.images.iter().take(n) {
        let ids = tok.tokenize(&resize_square(&shape.image)?)?;
        let aspect = AspectRecord { width: shape.image.width(), height: shape.image.height() };
        let back = decode_tokens(&dec.main, Some(&dec.bad), tok, &ids, aspect, &cfg.decode, dec.store.dtype())?;
        let again = tok.tokenize(&resize_square(&back)?)?;
        let same = ids.ids().iter().zip(again.ids()).filter(|(a, b)| a == b).count();
        agree += same as f64 / GRID_CELLS as f64 / n as f64;
    }
    Ok(Outcome::new(
        png_ok && wav_ok,
        agree,
        "729 valid ids from the PNG; WAV of 32000 samples; agreement reported only",
        format!(
            "stages trained through {last}; png ids {} ok={png_ok}; wav {samples} samples ok={wav_ok}; re-tokenization agreement {:.1}%",
            grid.ids().len(),
            100.0 * agree
        ),
    ))
}
