use candle_core::{DType, Device, Tensor};

use super::*;
use crate::nn::gradcheck::check_gradients;
use crate::nn::{AdamWConfig, ParamStore};

fn tiny_cfg() -> VocoderConfig {
    VocoderConfig {
        sample_rate: 1600,
        factors: vec![4, 4, 4],
        codebook_size: 16,
        code_dim: 8,
        speaker_dim: 8,
        channels: 16,
        dilations: vec![1],
    }
}

fn spk(dim: usize, seed: u32) -> SpeakerEmbedding {
    SpeakerEmbedding::from_values((0..dim).map(|i| ((i as u32 * 7 + seed * 13) % 11) as f32 - 5.0).collect()).unwrap()
}

fn voiced(f0: f64, formant: f64, secs: f64, phase: f64) -> Vec<f32> {
    let n = (secs * 16_000.0) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let mut s = 0.0;
            for h in 1..=12 {
                let f = f0 * h as f64;
                let amp = (-((f - formant) / 600.0).powi(2)).exp();
                s += amp * (2.0 * std::f64::consts::PI * f * t + phase * h as f64).sin();
            }
            (0.2 * s) as f32
        })
        .collect()
}

#[test]
fn output_length_is_codes_times_hop() {
    let store = ParamStore::new(DType::F32, 1);
    let voc = UnitVocoder::new(&store.root(), VocoderConfig::default()).unwrap();
    let s = spk(64, 1);
    for n in [1usize, 3, 7] {
        let codes: Vec<Code> = (0..n as u32).map(|i| Code(i * 911 % 6561)).collect();
        assert_eq!(voc.synthesize(&codes, &s).unwrap().len(), n * 640);
    }
    assert!(voc.synthesize(&[Code(6561)], &s).is_err());
    assert!(voc.synthesize(&[Code(0)], &spk(8, 1)).is_err());
}

#[test]
fn snake_vanishes_for_small_alpha() {
    let x = Tensor::from_vec((0..201).map(|i| (i as f64 - 100.0) / 1000.0).collect::<Vec<_>>(), (1, 1, 201), &Device::Cpu).unwrap();
    let a = Tensor::new(&[1e-4f64], &Device::Cpu).unwrap();
    let y = snake(&x, &a).unwrap();
    let d: f64 = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
    assert!(d < 1e-6, "{d}");
}

#[test]
fn snake_alpha_gradients_match_differences() {
    let store = ParamStore::new(DType::F64, 4);
    let voc = UnitVocoder::new(&store.root(), tiny_cfg()).unwrap();
    let codes: Vec<Code> = (0..10).map(|i| Code(i % 16)).collect();
    let target = Tensor::from_vec((0..640).map(|i| (i as f64 * 0.05).sin() * 0.3).collect::<Vec<_>>(), (1, 640), &Device::Cpu).unwrap();
    let s = spk(8, 2);
    let report = check_gradients(
        &store,
        || vocoder_loss(&voc.forward(&codes, &s)?, &target),
        |n| n.contains("alpha"),
        20,
        1e-6,
        3,
    )
    .unwrap();
    assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
}

#[test]
fn speaker_embedding_changes_output() {
    let store = ParamStore::new(DType::F32, 2);
    let voc = UnitVocoder::new(&store.root(), VocoderConfig::default()).unwrap();
    let codes = vec![Code(5), Code(100), Code(4000)];
    let a = voc.synthesize(&codes, &spk(64, 1)).unwrap();
    let b = voc.synthesize(&codes, &spk(64, 2)).unwrap();
    let diff: f32 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-3, "{diff}");
}

#[test]
fn speaker_embed_is_unit_norm_and_separates_voices() {
    let a1 = speaker_embed(&voiced(110.0, 700.0, 1.0, 0.0), 64).unwrap();
    let a2 = speaker_embed(&voiced(112.0, 720.0, 1.0, 1.3), 64).unwrap();
    let b1 = speaker_embed(&voiced(230.0, 2200.0, 1.0, 0.4), 64).unwrap();
    for e in [&a1, &a2, &b1] {
        assert!((e.norm() - 1.0).abs() < 1e-5);
        assert_eq!(e.dim(), 64);
    }
    assert!(a1.cosine(&a2) > a1.cosine(&b1));
    assert!(speaker_embed(&voiced(110.0, 700.0, 0.4, 0.0), 64).is_err());
}

#[test]
fn target_alignment_tolerates_one_token() {
    assert_eq!(align_target(&[0.5; 700], 1, 640).unwrap().len(), 640);
    assert_eq!(align_target(&[0.5; 600], 1, 640).unwrap()[639], 0.0);
    assert!(align_target(&[0.5; 1400], 1, 640).is_err());
}

#[test]
fn training_reduces_loss() {
    let store = ParamStore::new(DType::F32, 9);
    let voc = UnitVocoder::new(&store.root(), tiny_cfg()).unwrap();
    let batch: Vec<VocoderExample> = (0..2)
        .map(|k| VocoderExample {
            codes: (0..10).map(|i| Code((i + k * 3) % 16)).collect(),
            wave: (0..640).map(|i| ((i as f64) * (0.1 + 0.05 * k as f64)).sin() as f32 * 0.4).collect(),
            speaker: spk(8, k),
        })
        .collect();
    let mut opt = AdamW::new(AdamWConfig { lr: 3e-3, ..AdamWConfig::default() });
    let first = train_step(&voc, &store, &mut opt, &batch).unwrap();
    let mut last = first;
    for _ in 0..60 {
        last = train_step(&voc, &store, &mut opt, &batch).unwrap();
    }
    assert!(last < first * 0.8, "{first} -> {last}");
}
