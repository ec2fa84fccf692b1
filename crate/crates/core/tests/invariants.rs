//! Randomised invariants across the stack.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use omnistack::curriculum::{
    builtin_stages, find_stage, MixtureLedger, MixtureSampler, Modality, Mutation, StageSpec, TaskKind, Trigger,
    TriggerState, DEFAULT_BUDGET_SCALE,
};
use omnistack::encoders::{compressed_len, log_mel, AudioEncoder, VisionEncoder, VisionEncoderConfig, HOP, MEL_RATE_HZ, SAMPLE_RATE};
use omnistack::fsq::{code_to_digits, digits_to_code, dequantize, quantize, Code, FsqConfig};
use omnistack::interleave::{assemble, MaskFactors, Position, Segment, SegmentKind};
use omnistack::nn::checkpoint::{load_tensors, save_tensors};
use omnistack::nn::ParamStore;
use omnistack::omni::RunConfig;
use omnistack::vision::GRID_CELLS;
use omnistack::vocab::{build_layout, FreezePolicy, Region, TokenId, VocabLayout, DEFAULT_SPECIALS};
use omnistack::vocoder::{SpeakerEmbedding, UnitVocoder, VocoderConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_layout() -> VocabLayout {
    build_layout(&DEFAULT_SPECIALS, 24, 6, 9).unwrap()
}

proptest! {
    #[test]
    fn layout_ids_round_trip(text in 1usize..200, vision in 1usize..200, audio in 1usize..200, pick in any::<u64>()) {
        let l = build_layout(&DEFAULT_SPECIALS, text, vision, audio).unwrap();
        let id = TokenId((pick % l.total() as u64) as u32);
        let (region, local) = l.resolve(id).unwrap();
        prop_assert_eq!(l.global_id(region, local).unwrap(), id);
        let owners = Region::ALL.iter().filter(|r| l.range(**r).contains(&id.index())).count();
        prop_assert_eq!(owners, 1);
        prop_assert!(l.resolve(TokenId(l.total() as u32)).is_err());
    }

    #[test]
    fn fsq_digits_round_trip(dims in 1usize..6, k in 1usize..4, seed in any::<u64>()) {
        let cfg = FsqConfig::new(dims, k, 1.0).unwrap();
        let code = Code((seed % cfg.codebook_size() as u64) as u32);
        let digits = code_to_digits(code, &cfg).unwrap();
        prop_assert!(digits.iter().all(|d| (*d as usize) < cfg.levels()));
        prop_assert_eq!(digits_to_code(&digits, &cfg).unwrap(), code);
        let back = quantize(&dequantize(code, &cfg).unwrap(), &cfg).unwrap().0;
        prop_assert_eq!(back, code);
    }

    #[test]
    fn fsq_codes_stay_in_range(z in prop::collection::vec(-1e4f64..1e4, 8)) {
        let cfg = FsqConfig::default();
        let (code, lattice) = quantize(&z, &cfg).unwrap();
        prop_assert!((code.0 as usize) < cfg.codebook_size());
        prop_assert!(lattice.0.iter().all(|v| v.unsigned_abs() as usize <= cfg.k));
    }

    #[test]
    fn audio_rate_algebra(centis in 4usize..600) {
        let samples = centis * SAMPLE_RATE as usize / 100;
        let frames = log_mel(&vec![0.0; samples]).unwrap().frames();
        // One mel frame per 10 ms.
        prop_assert_eq!(frames, centis);
        prop_assert_eq!(MEL_RATE_HZ as usize * HOP, SAMPLE_RATE as usize);
        let enc = AudioEncoder::output_len(frames);
        prop_assert_eq!(enc, frames / 4);
        prop_assert_eq!(compressed_len(enc), enc.div_ceil(25));
    }

    #[test]
    fn vision_budget_never_exceeded(frames in 1usize..16, w in 16usize..2048, h in 16usize..2048, budget in 16usize..12000) {
        let store = ParamStore::new(DType::F32, 0);
        let enc = VisionEncoder::new(&store.root().pp("enc"), &store.root().pp("ad"), VisionEncoderConfig::default(), 8).unwrap();
        let n = enc.output_len(frames, w, h, budget).unwrap();
        prop_assert!(n <= budget);
        prop_assert!(n >= frames);
    }

    #[test]
    fn vocoder_factors_must_match_rate(factors in prop::collection::vec(1usize..10, 1..5)) {
        let cfg = VocoderConfig { factors: factors.clone(), ..VocoderConfig::default() };
        let product: usize = factors.iter().product();
        prop_assert_eq!(cfg.validate().is_ok(), product == 640 && 64 >> factors.len() > 0);
    }

    #[test]
    fn ledger_is_conserved(records in prop::collection::vec((0usize..4, 0u64..10_000), 0..200)) {
        let kinds = [TaskKind::Text, TaskKind::Image, TaskKind::Audio, TaskKind::Video];
        let mut ledger = MixtureLedger::default();
        let mut last = 0;
        for (k, tokens) in records {
            ledger.record(kinds[k], tokens);
            prop_assert!(ledger.is_conserved());
            prop_assert!(ledger.total >= last);
            last = ledger.total;
        }
    }

    #[test]
    fn triggers_fire_exactly_once(
        thresholds in prop::collection::vec(1u64..10_000, 0..5),
        steps in prop::collection::vec(0u64..3_000, 1..100),
    ) {
        let mut thresholds = thresholds;
        thresholds.sort_unstable();
        let stage = StageSpec {
            name: "T".into(),
            mixture: BTreeMap::from([(TaskKind::Text, 1.0)]),
            freeze_policy: FreezePolicy::Full,
            mask_factors: MaskFactors::default(),
            token_budget: 10_001,
            triggers: thresholds
                .iter()
                .map(|&t| Trigger { at_tokens: t, mutation: Mutation::ScaleLr { factor: t as f64 } })
                .collect(),
            context_length: 256,
        };
        let mut state = TriggerState::new(&stage);
        let mut ledger = MixtureLedger::default();
        let mut fired = Vec::new();
        for s in steps {
            let before = ledger.total;
            ledger.record(TaskKind::Text, s);
            for m in state.advance(&ledger, &stage).unwrap() {
                let Mutation::ScaleLr { factor } = m else { unreachable!() };
                // Fires on the step that crosses its threshold.
                prop_assert!(factor as u64 > before && factor as u64 <= ledger.total);
                fired.push(factor as u64);
            }
        }
        let expected: Vec<u64> = thresholds.iter().copied().filter(|t| *t <= ledger.total).collect();
        prop_assert_eq!(fired, expected);
    }

    #[test]
    fn assembly_never_targets_slots(plan in prop::collection::vec((0u8..5, 1usize..20), 1..8), f in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0)) {
        let l = small_layout();
        let width = 4;
        let mut segs = Vec::new();
        let mut order = Vec::new();
        for (i, (kind, n)) in plan.iter().enumerate() {
            let k = match kind {
                0 => SegmentKind::TextIds((0..*n).map(|j| l.global_id(Region::Text, (i + j) % 24).unwrap()).collect()),
                1 => SegmentKind::VisionDiscrete((0..GRID_CELLS as u32).map(|j| j % 6).collect()),
                2 => SegmentKind::AudioDiscrete((0..*n as u32).map(|j| j % 9).collect()),
                3 => SegmentKind::VisionContinuous(Tensor::full(i as f32, (*n, width), &Device::Cpu).unwrap()),
                _ => SegmentKind::AudioContinuous(Tensor::full(i as f32, (*n, width), &Device::Cpu).unwrap()),
            };
            if k.is_continuous() {
                order.push(i as f32);
            }
            segs.push(Segment::new(k));
        }
        let factors = MaskFactors::new(f.0, f.1, f.2).unwrap();
        let input = assemble(&segs, &l, &factors).unwrap();
        let pos = input.positions();
        for (t, target) in input.targets().iter().enumerate() {
            if matches!(pos[t + 1], Position::Slot { .. }) {
                prop_assert!(target.is_none());
                prop_assert_eq!(input.weights()[t], 0.0);
            }
        }
        // Streams keep segment order.
        let seen: Vec<f32> = input.streams().iter().map(|t| t.flatten_all().unwrap().to_vec1::<f32>().unwrap()[0]).collect();
        prop_assert_eq!(seen, order);

        // Weights are linear in the factors with no cross terms.
        let unit = |t, v, a| assemble(&segs, &l, &MaskFactors::new(t, v, a).unwrap()).unwrap().weights().to_vec();
        let (wt, wv, wa) = (unit(1.0, 0.0, 0.0), unit(0.0, 1.0, 0.0), unit(0.0, 0.0, 1.0));
        for i in 0..wt.len() {
            let combined = f.0 * wt[i] + f.1 * wv[i] + f.2 * wa[i];
            prop_assert!((input.weights()[i] - combined).abs() <= 1e-12 * combined.abs().max(1.0));
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), scale in 1e-9f64..1.0, batch in 1usize..64) {
        let mut cfg = RunConfig::new(seed);
        cfg.training.budget_scale = scale;
        cfg.training.batch_size = batch;
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn vocoder_length_contract(n in 1usize..500, seed in any::<u32>()) {
        let store = ParamStore::new(DType::F32, 3);
        let voc = UnitVocoder::new(&store.root(), VocoderConfig::default()).unwrap();
        let spk = SpeakerEmbedding::from_values((0..64).map(|i| ((i as u32 ^ seed) % 7) as f32 - 3.0).collect()).unwrap();
        let codes: Vec<Code> = (0..n as u32).map(|i| Code(i.wrapping_mul(2_654_435_761).wrapping_add(seed) % 6561)).collect();
        prop_assert_eq!(voc.synthesize(&codes, &spk).unwrap().len(), n * 640);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(shapes in prop::collection::vec(prop::collection::vec(1usize..6, 1..4), 1..6), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors: BTreeMap<String, Tensor> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n: usize = s.iter().product();
                let v: Vec<f32> = (0..n).map(|_| rand::Rng::random::<f32>(&mut rng) * 2.0 - 1.0).collect();
                (format!("t{i}.w"), Tensor::from_vec(v, s.as_slice(), &Device::Cpu).unwrap())
            })
            .collect();
        save_tensors(dir.path(), &tensors).unwrap();
        let back = load_tensors(dir.path()).unwrap();
        prop_assert_eq!(back.len(), tensors.len());
        for (k, t) in &tensors {
            let b = &back[k];
            prop_assert_eq!(b.dims(), t.dims());
            let x: Vec<u32> = t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect();
            let y: Vec<u32> = b.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(x, y);
        }
    }
}

#[test]
fn realized_mixture_stays_within_three_sigma() {
    let stages = builtin_stages(DEFAULT_BUDGET_SCALE).unwrap();
    let p2 = find_stage(&stages, "P2").unwrap();
    let sampler = MixtureSampler::new(&p2.mixture).unwrap();
    let fractions = p2.fractions();
    let (trials, n) = (200, 2000);
    let mut inside = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts: BTreeMap<TaskKind, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(sampler.draw(&mut rng)).or_default() += 1;
        }
        let ok = fractions.iter().all(|(k, p)| {
            let got = counts.get(k).copied().unwrap_or(0) as f64 / n as f64;
            (got - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
        });
        inside += ok as usize;
    }
    assert!(inside as f64 >= 0.99 * trials as f64, "{inside}/{trials} trials inside the band");
}

#[test]
fn p2_trigger_restores_vision_weight() {
    let stages = builtin_stages(DEFAULT_BUDGET_SCALE).unwrap();
    let p2 = find_stage(&stages, "P2").unwrap();
    assert_eq!(p2.mask_factors.vision, 0.5);
    assert_eq!(
        p2.triggers,
        vec![Trigger {
            at_tokens: p2.token_budget / 2,
            mutation: Mutation::SetMaskFactor { modality: Modality::Vision, value: 1.0 }
        }]
    );
}
