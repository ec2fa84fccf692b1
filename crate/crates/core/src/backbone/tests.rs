use candle_core::{DType, Device, Tensor, D};

use super::*;
use crate::interleave::{assemble, MaskFactors, ModelInput, Segment, SegmentKind};
use crate::nn::gradcheck::check_gradients;
use crate::nn::{AdamW, AdamWConfig, Gradients, ParamStore};
use crate::vocab::{build_layout, expansion_freeze_mask, FreezePolicy, ParamRegistry, Region, TokenId, VocabLayout, DEFAULT_SPECIALS};

fn small_layout() -> VocabLayout {
    build_layout(&DEFAULT_SPECIALS, 24, 6, 9).unwrap()
}

fn tiny_cfg(layers: usize) -> BackboneConfig {
    BackboneConfig { layers, hidden: 16, heads: 2, context_length: 64, mlp_ratio: 2, rope_theta: 10_000.0 }
}

fn model(dtype: DType, seed: u64) -> (ParamStore, Backbone, VocabLayout) {
    let layout = small_layout();
    let store = ParamStore::new(dtype, seed);
    let m = Backbone::new(&store.root().pp("backbone"), tiny_cfg(2), &MtpConfig::default(), layout.total()).unwrap();
    (store, m, layout)
}

fn ids_input(layout: &VocabLayout, ids: &[u32]) -> ModelInput {
    let ids: Vec<TokenId> = ids.iter().map(|&i| TokenId(i)).collect();
    ModelInput::from_ids(&ids, layout, &MaskFactors::default()).unwrap()
}

fn to_vec3(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    t.to_dtype(DType::F64).unwrap().to_vec3().unwrap()
}

#[test]
fn softmax_rows_normalised() {
    let (_s, m, l) = model(DType::F32, 1);
    let input = ids_input(&l, &[2, 20, 21, 22, 3]);
    let out = m.forward(&[&input], true).unwrap();
    let p = crate::nn::softmax_last(&out.logits).unwrap().sum(D::Minus1).unwrap();
    for row in to_vec3(&p.unsqueeze(2).unwrap()).concat().concat() {
        assert!((row - 1.0).abs() < 1e-6);
    }
    assert_eq!(out.mtp_logits.unwrap().dims(), out.logits.dims());
}

#[test]
fn batch_permutation_equivariance() {
    let (_s, m, l) = model(DType::F64, 2);
    let a = ids_input(&l, &[2, 17, 18, 19]);
    let b = ids_input(&l, &[2, 30, 31, 32]);
    let ab = to_vec3(&m.forward(&[&a, &b], false).unwrap().logits);
    let ba = to_vec3(&m.forward(&[&b, &a], false).unwrap().logits);
    assert_eq!(ab[0], ba[1]);
    assert_eq!(ab[1], ba[0]);
}

#[test]
fn causality_by_perturbation() {
    let (_s, m, l) = model(DType::F64, 3);
    let base: Vec<u32> = (0..10).map(|i| 16 + i).collect();
    let ref_logits = to_vec3(&m.forward(&[&ids_input(&l, &base)], false).unwrap().logits);
    for t in 0..base.len() {
        let mut p = base.clone();
        p[t] = 16 + ((p[t] - 16 + 7) % 24);
        let got = to_vec3(&m.forward(&[&ids_input(&l, &p)], false).unwrap().logits);
        for s in 0..t {
            assert_eq!(got[0][s], ref_logits[0][s], "position {s} saw change at {t}");
        }
        assert_ne!(got[0][t], ref_logits[0][t]);
    }
}

#[test]
fn kv_cache_matches_full_forward() {
    let (_s, m, l) = model(DType::F64, 4);
    let ids = [2u32, 20, 21, 22, 23, 24];
    let full = to_vec3(&m.forward(&[&ids_input(&l, &ids)], false).unwrap().logits);
    let mut sess = BackboneSession::new(&m);
    let mut got = vec![sess.start(&ids_input(&l, &ids[..3])).unwrap()];
    for &i in &ids[3..] {
        got.push(sess.step(TokenId(i)).unwrap());
    }
    for (k, row) in got.iter().enumerate() {
        for (a, b) in row.iter().zip(&full[0][2 + k]) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}

#[test]
fn errors() {
    let (_s, m, l) = model(DType::F32, 5);
    let long: Vec<u32> = vec![20; 65];
    assert!(m.forward(&[&ids_input(&l, &long)], false).is_err());
    assert!(m.embed_token(TokenId(l.total() as u32)).is_err());
    let logits = Tensor::zeros((2, 3), DType::F32, &Device::Cpu).unwrap();
    assert!(weighted_cross_entropy(&logits, &[0, 1], &[0.0, 0.0]).is_err());
}

#[test]
fn weighted_ce_matches_hand_computation() {
    let logits = Tensor::new(&[[1.0f64, 2.0, 3.0], [0.0, 0.0, 0.0]], &Device::Cpu).unwrap();
    let ce = weighted_cross_entropy(&logits, &[2, 0], &[1.0, 3.0]).unwrap();
    let lse0 = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    let expect = ((lse0 - 3.0) + 3.0 * 3f64.ln()) / 4.0;
    assert!((ce.to_scalar::<f64>().unwrap() - expect).abs() < 1e-12);
}

#[test]
fn mtp_decomposition() {
    let (_s, m, l) = model(DType::F64, 6);
    let input = ids_input(&l, &[2, 20, 21, 22, 23, 24, 3]);
    let out = m.forward(&[&input], true).unwrap();
    let with = backbone_loss(&out, &[&input], &MtpConfig::default()).unwrap();
    let total = with.total.to_scalar::<f64>().unwrap();
    let recomposed = with.main + 0.2 * with.aux.unwrap();
    assert!(((total - recomposed) / total).abs() < 1e-6);
    let zero = MtpConfig { weight: 0.0, ..MtpConfig::default() };
    let plain = backbone_loss(&out, &[&input], &zero).unwrap();
    assert_eq!(plain.total.to_scalar::<f64>().unwrap(), with.main);
    assert!(backbone_loss(&out, &[&input], &MtpConfig { weight: -1.0, ..zero }).is_err());
}

#[test]
fn gradient_check_two_layer_toy() {
    let (store, m, l) = model(DType::F64, 7);
    let input = ids_input(&l, &[2, 20, 21, 33, 23, 3]);
    let report = check_gradients(
        &store,
        || {
            let out = m.forward(&[&input], true)?;
            Ok(backbone_loss(&out, &[&input], &MtpConfig::default())?.total)
        },
        |_| true,
        40,
        1e-6,
        11,
    )
    .unwrap();
    assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
}

#[test]
fn vocab_expansion_step_moves_only_modality_rows() {
    let (store, m, l) = model(DType::F32, 8);
    let mask = expansion_freeze_mask(&l, FreezePolicy::VocabExpansion, &ParamRegistry::from_store(&store)).unwrap();
    let segs = vec![
        Segment::text(vec![l.global_id(Region::Text, 3).unwrap()]),
        Segment::new(SegmentKind::AudioDiscrete(vec![1, 2, 3, 4])),
    ];
    let input = assemble(&segs, &l, &MaskFactors::default()).unwrap();
    let before = store.snapshot().unwrap();
    let out = m.forward(&[&input], true).unwrap();
    let loss = backbone_loss(&out, &[&input], &MtpConfig::default()).unwrap();
    let grads = Gradients::from_loss(&loss.total, &store).unwrap();
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-2, ..AdamWConfig::default() });
    opt.step(&store, &grads, Some(&mask)).unwrap();
    let after = store.snapshot().unwrap();
    let modality = l.modality_rows();
    for (name, b) in &before {
        let a = &after[name];
        let rows_param = ["backbone.embed.weight", "backbone.head.weight", "backbone.mtp.head.weight"].contains(&name.as_str());
        if rows_param {
            let bv: Vec<Vec<f32>> = b.to_vec2().unwrap();
            let av: Vec<Vec<f32>> = a.to_vec2().unwrap();
            for r in 0..bv.len() {
                if !modality.contains(&r) {
                    assert_eq!(bv[r], av[r], "{name} row {r}");
                }
            }
            if name == "backbone.head.weight" {
                assert!(modality.clone().any(|r| bv[r] != av[r]));
            }
        } else {
            let bv: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
            let av: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(bv, av, "{name} changed");
        }
    }
}

#[test]
fn sampler_respects_spans() {
    let l = small_layout();
    let vs = l.special(crate::vocab::VISION_START).unwrap();
    let a_s = l.special(crate::vocab::AUDIO_START).unwrap();
    let prompt = ids_input(&l, &[2]);
    for seed in 0..50 {
        let mut p = RandomLogits::new(l.total(), seed).with_boost(vs, 3.0).with_boost(a_s, 3.0);
        let settings = SamplerSettings { temperature: 1.0, top_k: 0, seed };
        let out = generate(&mut p, &prompt, &l, &settings, 800).unwrap();
        for s in &out.spans {
            if let SpanEvent::Vision(ids) = s {
                assert_eq!(ids.len(), 729);
                assert!(ids.iter().all(|&i| i < 6));
            }
        }
    }
}

#[test]
fn greedy_generation_is_deterministic() {
    let (_s, m, l) = model(DType::F32, 9);
    let prompt = ids_input(&l, &[2, 13, 20]);
    let settings = SamplerSettings { temperature: 0.0, top_k: 0, seed: 1 };
    let a = generate(&mut BackboneSession::new(&m), &prompt, &l, &settings, 30).unwrap();
    let settings2 = SamplerSettings { seed: 99, ..settings };
    let b = generate(&mut BackboneSession::new(&m), &prompt, &l, &settings2, 30).unwrap();
    assert_eq!(a.tokens, b.tokens);
}

#[test]
fn prompt_inside_span_is_continued() {
    let l = small_layout();
    let vs = l.special(crate::vocab::VISION_START).unwrap().0;
    let v0 = l.global_id(Region::Vision, 0).unwrap().0;
    let mut ids = vec![2, vs];
    ids.extend(std::iter::repeat_n(v0, 728));
    let prompt = ids_input(&l, &ids);
    let state = SamplerState::from_prompt(&prompt, &l).unwrap();
    assert_eq!(state.mode, SamplerMode::VisionSpan(728));
    let mut p = RandomLogits::new(l.total(), 0);
    let out = generate(&mut p, &prompt, &l, &SamplerSettings::default(), 2).unwrap();
    assert_eq!(l.region_of(out.tokens[0]).unwrap(), Region::Vision);
    assert_eq!(out.tokens[1], l.special(crate::vocab::VISION_END).unwrap());
}
