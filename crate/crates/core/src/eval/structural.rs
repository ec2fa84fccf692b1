use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Outcome;
use crate::backbone::{backbone_loss, log_softmax, weighted_cross_entropy, Backbone, BackboneConfig, MtpConfig};
use crate::corpus::Corpus;
use crate::curriculum::{builtin_stages, find_stage};
use crate::decoder::{
    decode_tokens, flow_loss, gaussian, latent_size, tokens_to_cond, train_step, ConcatDit, DecodeOptions,
    DecoderConfig, GuidanceConfig,
};
use crate::encoders::{log_mel, Adapter, AudioEncoder, AudioEncoderConfig, TemporalCompressor, SAMPLE_RATE};
use crate::error::Result;
use crate::fsq::{code_to_digits, dequantize, digits_to_code, quantize, Code, FsqConfig};
use crate::interleave::{assemble, MaskFactors, ModelInput, Segment, SegmentKind};
use crate::nn::gradcheck::check_gradients;
use crate::nn::{AdamW, AdamWConfig, ParamStore};
use crate::omni::{train_stage, OmniModel, RunConfig};
use crate::vision::{AspectRecord, VisionTokenGrid, VisionTokenizer, VisionTokenizerConfig, GRID_CELLS};
use crate::vocab::{build_layout, Region, TextTokenizer, VocabLayout, DEFAULT_SPECIALS};
use crate::vocoder::{vocoder_loss, SpeakerEmbedding, UnitVocoder, VocoderConfig};

const GRAD_SAMPLES: usize = 50;
const GRAD_TOL: f64 = 1e-4;

pub fn fsq_bijection() -> Result<Outcome> {
    let cfg = FsqConfig::default();
    let start = Instant::now();
    let mut bad = 0usize;
    for c in 0..cfg.codebook_size() as u32 {
        let code = Code(c);
        let digits = code_to_digits(code, &cfg)?;
        if digits_to_code(&digits, &cfg)? != code {
            bad += 1;
        }
        let point = dequantize(code, &cfg)?;
        let (again, _) = quantize(&point, &cfg)?;
        if again != code || dequantize(again, &cfg)? != point {
            bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(
        bad == 0 && secs < 1.0,
        secs,
        "0 mismatches, < 1 s",
        format!("{} codes, {bad} mismatches", cfg.codebook_size()),
    ))
}

pub fn fsq_anchors() -> Result<Outcome> {
    let cfg = FsqConfig::default();
    let d = cfg.dims;
    let centre = quantize(&vec![0.0; d], &cfg)?.0;
    let low = quantize(&vec![-1e3; d], &cfg)?.0;
    let high = quantize(&vec![1e3; d], &cfg)?.0;
    let ok = (centre, low, high) == (Code(3280), Code(0), Code(6560));
    Ok(Outcome::new(
        ok,
        centre.0 as f64,
        "centre 3280, extremes 0 and 6560",
        format!("centre {}, low {}, high {}", centre.0, low.0, high.0),
    ))
}

fn tiny_backbone(store: &ParamStore, layout: &VocabLayout, context: usize) -> Result<Backbone> {
    let cfg = BackboneConfig { layers: 2, hidden: 16, heads: 2, context_length: context, mlp_ratio: 2, rope_theta: 10_000.0 };
    Backbone::new(&store.root().pp("backbone"), cfg, &MtpConfig::default(), layout.total())
}

fn small_layout() -> Result<VocabLayout> {
    build_layout(&DEFAULT_SPECIALS, 24, 6, 9)
}

fn text_input(layout: &VocabLayout, locals: &[usize]) -> Result<ModelInput> {
    let mut ids = vec![layout.special(crate::vocab::TURN_START)?];
    for &l in locals {
        ids.push(layout.global_id(Region::Text, l)?);
    }
    ModelInput::from_ids(&ids, layout, &MaskFactors::default())
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    gaussian(shape, DType::F64, rng)
}

/// Central differences against autograd for four trainable paths.
pub fn gradient_checks(seed: u64) -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Vec::new();

    let layout = small_layout()?;
    let store = ParamStore::new(DType::F64, seed);
    let bb = tiny_backbone(&store, &layout, 64)?;
    let input = text_input(&layout, &[3, 4, 17, 5, 9, 3, 21])?;
    let mtp = MtpConfig::default();
    let r = check_gradients(
        &store,
        || {
            let out = bb.forward(&[&input], true)?;
            Ok(backbone_loss(&out, &[&input], &mtp)?.total)
        },
        |_| true,
        GRAD_SAMPLES,
        1e-6,
        seed,
    )?;
    worst.push(("backbone+mtp", r.max_rel_err()));

    let store = ParamStore::new(DType::F64, seed ^ 1);
    let adapter = Adapter::new(&store.root().pp("audio_adapter"), 12, 8)?;
    let x = random_tensor(&[5, 12], &mut rng)?;
    let target = random_tensor(&[5, 8], &mut rng)?;
    let r = check_gradients(
        &store,
        || Ok((adapter.forward_tensor(&x)? - &target)?.sqr()?.mean_all()?),
        |_| true,
        GRAD_SAMPLES,
        1e-6,
        seed,
    )?;
    worst.push(("audio_adapter", r.max_rel_err()));

    // A few updates first: the zero-initialised output layer would
    // otherwise make most upstream gradients exactly zero.
    let store = ParamStore::new(DType::F64, seed ^ 2);
    let dit = ConcatDit::new(&store.root().pp("decoder"), DecoderConfig { blocks: 1, width: 16, heads: 2, cond_channels: 4 })?;
    let x0 = random_tensor(&[2, 3, 4, 4], &mut rng)?;
    let cond = random_tensor(&[2, 4, 4, 4], &mut rng)?;
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-2, ..AdamWConfig::default() });
    for _ in 0..5 {
        train_step(&dit, &store, &mut opt, &x0, &cond, &mut rng)?;
    }
    let eps = random_tensor(&[2, 3, 4, 4], &mut rng)?;
    let r = check_gradients(&store, || flow_loss(&dit, &x0, &cond, &[0.3, 0.7], &eps), |_| true, GRAD_SAMPLES, 1e-6, seed)?;
    worst.push(("decoder", r.max_rel_err()));

    let store = ParamStore::new(DType::F64, seed ^ 3);
    let vcfg = VocoderConfig {
        sample_rate: 1600,
        factors: vec![4, 4, 4],
        codebook_size: 16,
        code_dim: 8,
        speaker_dim: 8,
        channels: 16,
        dilations: vec![1],
    };
    let voc = UnitVocoder::new(&store.root(), vcfg)?;
    let codes: Vec<Code> = (0..10).map(|i| Code(i * 5 % 16)).collect();
    let wave: Vec<f64> = (0..640).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
    let target = Tensor::from_vec(wave, (1, 640), &Device::Cpu)?;
    let spk = SpeakerEmbedding::from_values((0..8).map(|i| (i as f32 - 3.5) * 0.3).collect())?;
    let r = check_gradients(
        &store,
        || vocoder_loss(&voc.forward(&codes, &spk)?, &target),
        |n| n.contains("alpha"),
        GRAD_SAMPLES,
        // The spectral loss sums thousands of terms; a 1e-6 probe is lost
        // in cancellation for the smallest alpha gradients.
        1e-5,
        seed,
    )?;
    worst.push(("vocoder_snake", r.max_rel_err()));

    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let detail = worst.iter().map(|(n, e)| format!("{n}={e:.2e}")).collect::<Vec<_>>().join(" ");
    Ok(Outcome::new(
        max < GRAD_TOL && secs < 120.0,
        max,
        format!("< {GRAD_TOL:e} on {GRAD_SAMPLES} params per path, < 120 s"),
        format!("{detail} in {secs:.1}s"),
    ))
}

pub fn mtp_composition(seed: u64) -> Result<Outcome> {
    let layout = small_layout()?;
    let store = ParamStore::new(DType::F64, seed);
    let bb = tiny_backbone(&store, &layout, 64)?;
    let input = text_input(&layout, &[1, 2, 3, 10, 11, 12, 4])?;
    let mtp = MtpConfig::default();
    let out = bb.forward(&[&input], true)?;
    let l = backbone_loss(&out, &[&input], &mtp)?;
    let total = l.total.to_scalar::<f64>()?;
    let aux = l.aux.unwrap_or(f64::NAN);
    let rel = ((total - (l.main + 0.2 * aux)) / total).abs();
    Ok(Outcome::new(
        mtp.weight == 0.2 && rel < 1e-6,
        rel,
        "relative error < 1e-6 at weight 0.2",
        format!("total {total:.6} main {:.6} aux {aux:.6}", l.main),
    ))
}

/// One P1 step on a freshly built model: frozen rows and layers stay
/// bit-identical, at least one modality row moves.
pub fn freeze_policy(seed: u64) -> Result<Outcome> {
    let mut cfg = RunConfig::toy(seed);
    cfg.training.max_steps_per_stage = Some(1);
    let corpus = Corpus::generate(&cfg.corpus, cfg.seed)?;
    let text = TextTokenizer::train(&corpus.texts(), cfg.layout.size(Region::Text))?;
    let model = OmniModel::new(cfg.clone(), text)?;
    let stages = builtin_stages(cfg.training.budget_scale)?;
    let before = model.lm.store.snapshot()?;
    let out = train_stage(&model, &corpus, find_stage(&stages, "P1")?, 0, Some(1), &mut std::io::sink())?;
    let after = model.lm.store.snapshot()?;
    let modality = model.layout().modality_rows();
    let row_params = ["backbone.embed.weight", "backbone.head.weight", "backbone.mtp.head.weight"];
    let mut frozen_changed = Vec::new();
    let mut moved_rows = 0usize;
    for (name, b) in &before {
        let a = &after[name];
        if row_params.contains(&name.as_str()) {
            let bv: Vec<Vec<f32>> = b.to_dtype(DType::F32)?.to_vec2()?;
            let av: Vec<Vec<f32>> = a.to_dtype(DType::F32)?.to_vec2()?;
            for (r, (x, y)) in bv.iter().zip(&av).enumerate() {
                let same = x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
                if modality.contains(&r) {
                    moved_rows += usize::from(!same);
                } else if !same {
                    frozen_changed.push(format!("{name}[{r}]"));
                }
            }
        } else if name.starts_with("backbone.") {
            let bv: Vec<f32> = b.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            let av: Vec<f32> = a.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            if bv.iter().zip(&av).any(|(p, q)| p.to_bits() != q.to_bits()) {
                frozen_changed.push(name.clone());
            }
        }
    }
    let ok = out.steps == 1 && frozen_changed.is_empty() && moved_rows >= 1;
    let detail = if frozen_changed.is_empty() {
        format!("{moved_rows} modality rows moved, frozen parameters untouched")
    } else {
        format!("frozen parameters changed: {}", frozen_changed.iter().take(5).cloned().collect::<Vec<_>>().join(", "))
    };
    Ok(Outcome::new(ok, moved_rows as f64, "0 frozen changes, >= 1 modality row moved", detail))
}

/// Gradient on vision-target logit rows at factor 0 and linearity of the
/// weighted vision contribution in the factor.
pub fn loss_masking(seed: u64) -> Result<Outcome> {
    let layout = small_layout()?;
    let store = ParamStore::new(DType::F64, seed);
    let bb = tiny_backbone(&store, &layout, 1024)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vision: Vec<u32> = (0..GRID_CELLS).map(|_| rand::Rng::random_range(&mut rng, 0..6)).collect();
    let text = |l: &[usize]| -> Result<Segment> {
        Ok(Segment::text(l.iter().map(|&i| layout.global_id(Region::Text, i)).collect::<Result<Vec<_>>>()?))
    };
    let segments =
        vec![text(&[1, 2, 3])?, Segment::new(SegmentKind::VisionDiscrete(vision)), text(&[4, 5, 6, 7])?];
    let build = |v: f64| assemble(&segments, &layout, &MaskFactors::new(1.0, v, 1.0)?);
    let inputs = [build(0.0)?, build(0.5)?, build(1.0)?];
    // Row t predicts target t; the final position has nothing to predict.
    let n_targets = inputs[2].targets().len();
    let logits = bb.forward(&[&inputs[2]], false)?.logits.squeeze(0)?.narrow(0, 0, n_targets)?.detach();
    let nll: Vec<Vec<f64>> = log_softmax(&logits)?.to_vec2()?;
    let targets: Vec<u32> = inputs[2].targets().iter().map(|t| t.map_or(0, |t| t.0)).collect();
    let is_vision: Vec<bool> = inputs[2]
        .targets()
        .iter()
        .map(|t| t.is_some_and(|t| layout.region_of(t).ok() == Some(Region::Vision)))
        .collect();
    let contribution = |input: &ModelInput| -> f64 {
        input
            .weights()
            .iter()
            .enumerate()
            .filter(|(i, _)| is_vision[*i])
            .map(|(i, w)| w * -nll[i][targets[i] as usize])
            .sum()
    };
    let [c0, c_half, c1] = [contribution(&inputs[0]), contribution(&inputs[1]), contribution(&inputs[2])];

    let var = Var::from_tensor(&logits)?;
    let loss = weighted_cross_entropy(var.as_tensor(), &targets, inputs[0].weights())?;
    let grads = loss.backward()?;
    let g: Vec<Vec<f64>> = grads.get(var.as_tensor()).expect("logits take part in the loss").to_vec2()?;
    let max_vision_grad = g
        .iter()
        .enumerate()
        .filter(|(i, _)| is_vision[*i])
        .flat_map(|(_, row)| row.iter().map(|x| x.abs()))
        .fold(0.0, f64::max);
    let n_vision = is_vision.iter().filter(|v| **v).count();
    let ok = max_vision_grad == 0.0 && c0 == 0.0 && c1 != 0.0 && c_half == 0.5 * c1 && n_vision == GRID_CELLS;
    Ok(Outcome::new(
        ok,
        max_vision_grad,
        "vision-row gradient exactly 0 at factor 0; contribution(0.5) == 0.5 * contribution(1.0)",
        format!("{n_vision} vision targets, contribution 0/0.5/1.0 = {c0}/{c_half}/{c1}"),
    ))
}

pub fn rate_algebra(seed: u64) -> Result<Outcome> {
    let secs = 10.0;
    let n = (secs * SAMPLE_RATE as f64) as usize;
    let wave: Vec<f32> = (0..n).map(|i| (i as f32 * 0.07).sin() * 0.2).collect();
    let mel = log_mel(&wave)?;
    let store = ParamStore::new(DType::F32, seed);
    let enc_cfg = AudioEncoderConfig::default();
    let enc = AudioEncoder::new(&store.root().pp("audio_encoder"), enc_cfg)?;
    let emb = enc.encode(&mel, DType::F32)?;
    let comp = TemporalCompressor::new(&store.root().pp("compressor"), enc.width())?;
    let pooled = comp.forward(&emb)?;
    let voc = UnitVocoder::new(&store.root().pp("vocoder"), VocoderConfig::default())?;
    let spk = SpeakerEmbedding::from_values(vec![1.0; 64])?;
    let codes: Vec<Code> = (0..25).map(|i| Code(i * 97)).collect();
    let samples = voc.synthesize(&codes, &spk)?.len();
    let got = [mel.frames(), emb.len(), pooled.len(), samples];
    let ok = got == [1000, 250, 10, 16_000] && emb.rate_hz == 25.0 && pooled.rate_hz == 1.0;
    Ok(Outcome::new(
        ok,
        samples as f64,
        "1000 frames, 250 @25 Hz, 10 @1 Hz, 16000 samples",
        format!("frames {} embeddings {} @{} Hz pooled {} @{} Hz samples {samples}", got[0], got[1], emb.rate_hz, got[2], pooled.rate_hz),
    ))
}

pub fn conditioning_geometry(seed: u64) -> Result<Outcome> {
    let store = ParamStore::new(DType::F32, seed);
    let tok = VisionTokenizer::new(&store.root().pp("vision_tokenizer"), VisionTokenizerConfig::default())?;
    let grid = VisionTokenGrid::new((0..GRID_CELLS as u32).map(|i| i * 7 % 512).collect(), 512)?;
    let (w, h) = latent_size(928, 624);
    let cond = tokens_to_cond(&tok, &grid, w, h)?;
    let dit = ConcatDit::new(
        &store.root().pp("decoder"),
        DecoderConfig { blocks: 1, width: 16, heads: 2, cond_channels: tok.config().feature_dim },
    )?;
    let aspect = AspectRecord { width: 928, height: 624 };
    let opts = DecodeOptions { sample_px: 16, steps: 2, guidance: GuidanceConfig { scale: 1.0 }, seed };
    let img = decode_tokens(&dit, None, &tok, &grid, aspect, &opts, DType::F32)?;
    let dims = cond.dims().to_vec();
    let ok = (w, h) == (116, 78)
        && dims[1..] == [78, 116]
        && (img.width(), img.height()) == (928, 624)
        && img.original_aspect().ratio() == aspect.ratio();
    Ok(Outcome::new(
        ok,
        (w * h) as f64,
        "116x78 grid, decoded 928x624",
        format!("latent {w}x{h}, cond {dims:?}, decoded {}x{}", img.width(), img.height()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_checks_pass() {
        for o in [fsq_bijection().unwrap(), fsq_anchors().unwrap(), mtp_composition(0).unwrap()] {
            assert!(o.ok, "{o:?}");
        }
    }

    #[test]
    fn masking_and_rates_pass() {
        let o = loss_masking(0).unwrap();
        assert!(o.ok, "{o:?}");
        let o = rate_algebra(0).unwrap();
        assert!(o.ok, "{o:?}");
    }

    #[test]
    fn small_layout_text_input_is_valid() {
        let l = small_layout().unwrap();
        let input = text_input(&l, &[0, 1]).unwrap();
        assert_eq!(input.len(), 3);
        assert_eq!(input.positions()[0].token(), Some(l.special(crate::vocab::TURN_START).unwrap()));
    }
}
