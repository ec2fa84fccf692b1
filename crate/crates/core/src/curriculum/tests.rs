use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::CorpusKind;
use crate::interleave::{MaskFactors, ModelInput};
use crate::vocab::{FreezePolicy, TokenId, VocabLayout};

struct Stub {
    layout: VocabLayout,
    per_kind: usize,
}

impl ItemBuilder for Stub {
    fn available(&self, _kind: CorpusKind) -> usize {
        self.per_kind
    }

    fn build(&mut self, task: TaskKind, index: usize, _rng: &mut ChaCha8Rng, f: &MaskFactors) -> crate::Result<ModelInput> {
        let n = 2 + task as usize + index % 3;
        let ids: Vec<TokenId> = (0..n).map(|i| TokenId(20 + i as u32)).collect();
        ModelInput::from_ids(&ids, &self.layout, f)
    }
}

fn stage(name: &str) -> StageSpec {
    find_stage(&builtin_stages(DEFAULT_BUDGET_SCALE).unwrap(), name).unwrap().clone()
}

#[test]
fn builtin_order_and_shapes() {
    let stages = builtin_stages(DEFAULT_BUDGET_SCALE).unwrap();
    let names: Vec<&str> = stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, STAGE_ORDER);
    assert_eq!(stage("P1").freeze_policy, FreezePolicy::VocabExpansion);
    assert_eq!(stage("P1").token_budget, 302_000);
    assert_eq!(stage("P2").token_budget, 2_300_000);
}

#[test]
fn p2_mixture_normalises() {
    let f = stage("P2").fractions();
    let want = [(TaskKind::Text, 0.2), (TaskKind::Image, 0.65), (TaskKind::Audio, 0.15)];
    for (k, w) in want {
        let got = f.iter().find(|(x, _)| *x == k).unwrap().1;
        assert!((got - w).abs() < 1e-12, "{k}: {got}");
    }
}

#[test]
fn s1_text_share() {
    let f = stage("S1").fractions();
    assert!((f.iter().find(|(k, _)| *k == TaskKind::Text).unwrap().1 - 0.502).abs() < 1e-12);
    let s3 = stage("S3").fractions();
    assert!((s3.iter().find(|(k, _)| *k == TaskKind::Video).unwrap().1 - 0.413).abs() < 1e-12);
}

#[test]
fn context_ladder() {
    assert_eq!(text_context_for("T1").unwrap(), 256);
    assert_eq!(context_for(&stage("P3")), 1024);
    let ladder: Vec<usize> = TEXT_CONTEXT_LADDER
        .iter()
        .map(|(_, c)| *c)
        .chain(["P1", "P2", "P3"].iter().map(|n| context_for(&stage(n))))
        .collect();
    assert!(ladder.windows(2).all(|w| w[0] <= w[1]), "{ladder:?}");
}

#[test]
fn p2_trigger_fires_once_at_midpoint() {
    let s = stage("P2");
    let mut st = TriggerState::new(&s);
    let mut ledger = MixtureLedger::default();
    let mut factors = s.mask_factors;
    assert_eq!(factors.vision, 0.5);
    let mut fired = Vec::new();
    for _ in 0..(s.token_budget / 10_000) {
        ledger.record(TaskKind::Image, 10_000);
        for m in st.advance(&ledger, &s).unwrap() {
            m.apply_to_mask(&mut factors);
            fired.push((ledger.total, m));
        }
    }
    assert_eq!(fired.len(), 1);
    assert_eq!(fired[0].0, s.token_budget / 2);
    assert_eq!(factors.vision, 1.0);
}

#[test]
fn straddled_triggers_fire_in_order() {
    let mut s = stage("P1");
    s.triggers = vec![
        Trigger { at_tokens: 10, mutation: Mutation::ScaleLr { factor: 0.5 } },
        Trigger { at_tokens: 20, mutation: Mutation::SetMaskFactor { modality: Modality::Audio, value: 0.0 } },
    ];
    s.validate().unwrap();
    let mut st = TriggerState::new(&s);
    let mut ledger = MixtureLedger::default();
    ledger.record(TaskKind::Image, 25);
    let fired = st.advance(&ledger, &s).unwrap();
    assert_eq!(fired, vec![s.triggers[0].mutation, s.triggers[1].mutation]);
    ledger.record(TaskKind::Image, 25);
    assert!(st.advance(&ledger, &s).unwrap().is_empty());
}

#[test]
fn no_triggers_never_fire() {
    let s = stage("S1");
    let mut st = TriggerState::new(&s);
    let mut ledger = MixtureLedger::default();
    for _ in 0..5 {
        ledger.record(TaskKind::Text, 1_000_000);
        assert!(st.advance(&ledger, &s).unwrap().is_empty());
    }
}

#[test]
fn invalid_stage_rejected() {
    let mut s = stage("P2");
    s.triggers[0].at_tokens = s.token_budget;
    assert!(s.validate().is_err());
    let mut s = stage("P1");
    s.mixture.insert(TaskKind::Text, 0.0);
    assert!(s.validate().is_err());
}

#[test]
fn sampling_is_deterministic_and_conserving() {
    let s = stage("S2");
    let sampler = MixtureSampler::new(&s.mixture).unwrap();
    let run = || {
        let mut b = Stub { layout: VocabLayout::default_layout(), per_kind: 5 };
        let mut cursor = CorpusCursor::cycling();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ledger = MixtureLedger::default();
        let mut kinds = Vec::new();
        for _ in 0..20 {
            let items =
                sample_batch(&s, &sampler, &mut b, &mut cursor, &mut rng, &s.mask_factors, 3, &mut ledger).unwrap();
            assert!(ledger.is_conserved());
            kinds.extend(items.iter().map(|i| (i.task, i.input.len())));
        }
        kinds
    };
    assert_eq!(run(), run());
}

#[test]
fn single_kind_mixture() {
    let s = stage("E3");
    let sampler = MixtureSampler::new(&s.mixture).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!((0..1000).all(|_| sampler.draw(&mut rng) == TaskKind::Asr));
}

#[test]
fn exhausted_corpus_without_cycling() {
    let s = stage("E3");
    let sampler = MixtureSampler::new(&s.mixture).unwrap();
    let mut b = Stub { layout: VocabLayout::default_layout(), per_kind: 2 };
    let mut cursor = CorpusCursor::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ledger = MixtureLedger::default();
    assert!(sample_batch(&s, &sampler, &mut b, &mut cursor, &mut rng, &s.mask_factors, 3, &mut ledger).is_err());
    let mut empty = Stub { layout: VocabLayout::default_layout(), per_kind: 0 };
    assert!(sample_batch(&s, &sampler, &mut empty, &mut CorpusCursor::cycling(), &mut rng, &s.mask_factors, 1, &mut ledger)
        .is_err());
}

#[test]
fn stages_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let stages = builtin_stages(1e-7).unwrap();
    let path = dir.path().join("stages.json");
    write_stages(&path, &stages).unwrap();
    assert_eq!(read_stages(&path).unwrap(), stages);
}
