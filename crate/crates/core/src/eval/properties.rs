use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Outcome;
use crate::backbone::{generate, RandomLogits, SamplerSettings, SamplerState, SpanEvent};
use crate::curriculum::{
    builtin_stages, find_stage, MixtureLedger, MixtureSampler, Modality, Mutation, TaskKind, TriggerState,
    DEFAULT_BUDGET_SCALE,
};
use crate::decoder::{gaussian, sample, train_step, ConcatDit, DecoderConfig, GuidanceConfig, VelocityField};
use crate::error::Result;
use crate::interleave::{assemble, validate_spans, MaskFactors, ModelInput, Position, Segment, SegmentKind};
use crate::nn::{AdamW, AdamWConfig, ParamStore};
use crate::vision::GRID_CELLS;
use crate::vocab::{build_layout, Region, TokenId, VocabLayout, AUDIO_START, DEFAULT_SPECIALS, VISION_START};

const DRAWS: usize = 100_000;
const MIX_TOL: f64 = 0.005;

/// P2 draws against 2 : 6.5 : 1.5, plus the midpoint trigger under a random
/// step schedule.
pub fn mixture_concentration(seed: u64) -> Result<Outcome> {
    let stages = builtin_stages(DEFAULT_BUDGET_SCALE)?;
    let p2 = find_stage(&stages, "P2")?;
    let sampler = MixtureSampler::new(&p2.mixture)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0usize; 3];
    let kinds = [TaskKind::Text, TaskKind::Image, TaskKind::Audio];
    for _ in 0..DRAWS {
        let k = sampler.draw(&mut rng);
        if let Some(i) = kinds.iter().position(|x| *x == k) {
            counts[i] += 1;
        }
    }
    let ratio = [2.0, 6.5, 1.5];
    let sum: f64 = ratio.iter().sum();
    let dev = (0..3).map(|i| (counts[i] as f64 / DRAWS as f64 - ratio[i] / sum).abs()).fold(0.0, f64::max);
    let covered = counts.iter().sum::<usize>() == DRAWS;

    let mut ledger = MixtureLedger::default();
    let mut state = TriggerState::new(p2);
    let mut factors = p2.mask_factors;
    let start_vision = factors.vision;
    let midpoint = p2.token_budget / 2;
    let mut fires = Vec::new();
    while ledger.total < p2.token_budget {
        let before = ledger.total;
        ledger.record(TaskKind::Image, rng.random_range(1..=p2.token_budget / 50 + 1));
        for m in state.advance(&ledger, p2)? {
            m.apply_to_mask(&mut factors);
            fires.push((before, ledger.total, m));
        }
    }
    let want = Mutation::SetMaskFactor { modality: Modality::Vision, value: 1.0 };
    let trigger_ok = fires.len() == 1
        && fires[0].0 < midpoint
        && fires[0].1 >= midpoint
        && fires[0].2 == want
        && start_vision == 0.5
        && factors.vision == 1.0;
    let fractions: Vec<String> = counts.iter().map(|c| format!("{:.4}", *c as f64 / DRAWS as f64)).collect();
    Ok(Outcome::new(
        dev <= MIX_TOL && covered && trigger_ok,
        dev,
        format!("max deviation <= {MIX_TOL}; one trigger at {midpoint} tokens"),
        format!("realized {}, {} trigger fire(s), vision factor {start_vision} -> {}", fractions.join("/"), fires.len(), factors.vision),
    ))
}

fn small_layout() -> Result<VocabLayout> {
    build_layout(&DEFAULT_SPECIALS, 24, 6, 9)
}

fn random_segments(rng: &mut ChaCha8Rng, layout: &VocabLayout, width: usize) -> Result<(Vec<Segment>, usize)> {
    let n = rng.random_range(1..6);
    let mut segs = Vec::with_capacity(n);
    let mut expected = 0usize;
    for _ in 0..n {
        let kind = match rng.random_range(0..5) {
            0 => {
                let k = rng.random_range(1..8);
                let ids = (0..k).map(|_| layout.global_id(Region::Text, rng.random_range(0..24))).collect::<Result<_>>()?;
                expected += k;
                SegmentKind::TextIds(ids)
            }
            1 => {
                expected += GRID_CELLS + 2;
                SegmentKind::VisionDiscrete((0..GRID_CELLS).map(|_| rng.random_range(0..6)).collect())
            }
            2 => {
                let k = rng.random_range(1..30);
                expected += k + 2;
                SegmentKind::AudioDiscrete((0..k).map(|_| rng.random_range(0..9)).collect())
            }
            3 => {
                let k = rng.random_range(1..20);
                expected += k + 2;
                SegmentKind::VisionContinuous(Tensor::zeros((k, width), DType::F32, &candle_core::Device::Cpu)?)
            }
            _ => {
                let k = rng.random_range(1..20);
                expected += k + 2;
                SegmentKind::AudioContinuous(Tensor::zeros((k, width), DType::F32, &candle_core::Device::Cpu)?)
            }
        };
        segs.push(Segment::new(kind));
    }
    Ok((segs, expected))
}

/// Independent scan of one assembled input: targets only ever point at
/// token positions, and every vision id run between wrappers is 729 long.
fn scan(input: &ModelInput, layout: &VocabLayout) -> Result<Option<String>> {
    let pos = input.positions();
    for (t, (target, w)) in input.targets().iter().zip(input.weights()).enumerate() {
        match (pos[t + 1], target) {
            (Position::Slot { .. }, Some(_)) => return Ok(Some(format!("slot at {} is targeted", t + 1))),
            (Position::Slot { .. }, None) if *w != 0.0 => return Ok(Some(format!("slot at {} has weight", t + 1))),
            (Position::Token(id), Some(tid)) if id != *tid => return Ok(Some(format!("target {t} mismatch"))),
            _ => {}
        }
    }
    let vs = layout.special(VISION_START)?;
    let mut run: Option<usize> = None;
    for p in pos {
        match p.token() {
            Some(t) if t == vs => run = Some(0),
            Some(t) if layout.region_of(t)? == Region::Vision => {
                if let Some(r) = run.as_mut() {
                    *r += 1;
                }
            }
            None => run = None,
            Some(_) => {
                if let Some(r) = run.take() {
                    if r != GRID_CELLS {
                        return Ok(Some(format!("vision span of {r} ids")));
                    }
                }
            }
        }
    }
    Ok(None)
}

/// Randomised assembly cases and constrained generation over many seeds.
pub fn interleave_integrity(seed: u64) -> Result<Outcome> {
    let layout = small_layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let cases = 10_000;
    for case in 0..cases {
        let (segs, expected) = random_segments(&mut rng, &layout, 4)?;
        let input = assemble(&segs, &layout, &MaskFactors::default())?;
        if input.len() != expected {
            violations.push(format!("case {case}: {} positions, expected {expected}", input.len()));
        }
        if let Err(e) = validate_spans(&input, &layout) {
            violations.push(format!("case {case}: {e}"));
        }
        if let Some(v) = scan(&input, &layout)? {
            violations.push(format!("case {case}: {v}"));
        }
        let short: Vec<u32> = vec![0; rng.random_range(0..GRID_CELLS)];
        if assemble(&[Segment::new(SegmentKind::VisionDiscrete(short))], &layout, &MaskFactors::default()).is_ok() {
            violations.push(format!("case {case}: short vision span accepted"));
        }
    }

    let vs = layout.special(VISION_START)?;
    let a_s = layout.special(AUDIO_START)?;
    let prompt = ModelInput::from_ids(&[layout.special(crate::vocab::TURN_START)?], &layout, &MaskFactors::default())?;
    let seeds = 1000u64;
    let mut emitted = 0usize;
    for s in 0..seeds {
        let mut p = RandomLogits::new(layout.total(), seed.wrapping_mul(7919).wrapping_add(s))
            .with_boost(vs, 4.0)
            .with_boost(a_s, 2.0);
        let settings = SamplerSettings { temperature: 1.0, top_k: 0, seed: s };
        let max_new = 800;
        let out = generate(&mut p, &prompt, &layout, &settings, max_new)?;
        emitted += out.tokens.len();
        let mut state = SamplerState::from_prompt(&prompt, &layout)?;
        for (i, &t) in out.tokens.iter().enumerate() {
            if !state.permits(t, &layout, max_new - i) {
                violations.push(format!("seed {s}: id {} not permitted at step {i}", t.0));
                break;
            }
            state.observe(t);
        }
        for span in &out.spans {
            if let SpanEvent::Vision(ids) = span {
                if ids.len() != GRID_CELLS {
                    violations.push(format!("seed {s}: generated vision span of {}", ids.len()));
                }
            }
        }
        let regions_ok = out.tokens.iter().all(|t| layout.region_of(TokenId(t.0)).is_ok());
        if !regions_ok {
            violations.push(format!("seed {s}: id outside the vocabulary"));
        }
    }
    Ok(Outcome::new(
        violations.is_empty(),
        violations.len() as f64,
        "0 violations",
        if violations.is_empty() {
            format!("{cases} assemblies, {seeds} generations ({emitted} tokens)")
        } else {
            violations.iter().take(3).cloned().collect::<Vec<_>>().join("; ")
        },
    ))
}

/// Plain Euler integration of `net` from the same starting noise, as an
/// oracle for unguided sampling.
fn euler(net: &dyn VelocityField, cond: &Tensor, steps: usize, seed: u64) -> Result<Tensor> {
    let (b, _, h, w) = cond.dims4()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&[b, 3, h, w], cond.dtype(), &mut rng)?;
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let v = net.velocity(&x, cond, &vec![1.0 - i as f64 * dt; b])?;
        x = (x - (v * dt)?)?;
    }
    Ok(x)
}

fn bits(t: &Tensor) -> Result<Vec<u32>> {
    Ok(t.flatten_all()?.to_vec1::<f32>()?.iter().map(|v| v.to_bits()).collect())
}

/// Guidance at 1.0 reproduces main-model sampling bit for bit; at 1.75 it
/// runs against a bad model trained for 1/20 of the main steps.
pub fn autoguidance_identity(seed: u64) -> Result<Outcome> {
    let store = ParamStore::new(DType::F32, seed);
    let cfg = DecoderConfig { blocks: 1, width: 16, heads: 2, cond_channels: 4 };
    let main = ConcatDit::new(&store.root().pp("main"), cfg)?;
    let bad = ConcatDit::new(&store.root().pp("bad"), DecoderConfig { width: 8, ..cfg })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = gaussian(&[4, 3, 3, 3], DType::F32, &mut rng)?;
    let cond = gaussian(&[4, 4, 3, 3], DType::F32, &mut rng)?;
    let main_steps = 40;
    let bad_steps = main_steps / 20;
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-2, ..AdamWConfig::default() });
    for _ in 0..main_steps {
        train_step(&main, &store, &mut opt, &x0, &cond, &mut rng)?;
    }
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-2, ..AdamWConfig::default() });
    for _ in 0..bad_steps {
        train_step(&bad, &store, &mut opt, &x0, &cond, &mut rng)?;
    }
    let steps = 8;
    let plain = sample(&main, None, &cond, steps, &GuidanceConfig { scale: 1.0 }, seed)?;
    let with_bad = sample(&main, Some(&bad), &cond, steps, &GuidanceConfig { scale: 1.0 }, seed)?;
    let oracle = euler(&main, &cond, steps, seed)?;
    let identical = bits(&plain)? == bits(&with_bad)? && bits(&plain)? == bits(&oracle)?;
    let guided = sample(&main, Some(&bad), &cond, steps, &GuidanceConfig { scale: 1.75 }, seed)?;
    let g: Vec<f32> = guided.flatten_all()?.to_vec1()?;
    let finite = g.iter().all(|v| v.is_finite());
    let differs = bits(&guided)? != bits(&plain)?;
    let needs_bad = sample(&main, None, &cond, steps, &GuidanceConfig { scale: 1.75 }, seed).is_err();
    Ok(Outcome::new(
        identical && finite && differs && needs_bad,
        bad_steps as f64 / main_steps as f64,
        "s=1 bit-identical; s=1.75 finite with bad model at 1/20 steps",
        format!("identical {identical}, guided finite {finite}, guided differs {differs}, bad model required {needs_bad}"),
    ))
}
