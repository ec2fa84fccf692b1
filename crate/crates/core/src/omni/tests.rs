use super::*;
use crate::corpus::Corpus;
use crate::curriculum::{builtin_stages, find_stage};
use crate::vocab::TextTokenizer;

fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::toy(seed);
    cfg.training.max_steps_per_stage = Some(2);
    cfg
}

fn model(cfg: &RunConfig) -> (OmniModel, Corpus) {
    let corpus = Corpus::generate(&cfg.corpus, cfg.seed).unwrap();
    let text = TextTokenizer::train(&corpus.texts(), cfg.layout.size(crate::vocab::Region::Text)).unwrap();
    (OmniModel::new(cfg.clone(), text).unwrap(), corpus)
}

#[test]
fn default_config_is_consistent() {
    RunConfig::new(0).validate().unwrap();
    let mut bad = RunConfig::new(0);
    bad.vision_tokenizer.codebook_size = 256;
    assert!(bad.validate().is_err());
    let mut bad = RunConfig::new(0);
    bad.vocoder.factors = vec![8, 5, 4, 2];
    assert!(bad.validate().is_err());
}

#[test]
fn config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(5);
    cfg.save(&dir.path().join("c.json")).unwrap();
    assert_eq!(RunConfig::load(&dir.path().join("c.json")).unwrap(), cfg);
}

#[test]
fn every_task_builds() {
    let cfg = tiny_config(1);
    let (m, corpus) = model(&cfg);
    let mut b = OmniBuilder::new(&m, &corpus);
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    for task in crate::curriculum::TaskKind::ALL {
        let input =
            crate::curriculum::ItemBuilder::build(&mut b, task, 0, &mut rng, &crate::interleave::MaskFactors::default())
                .unwrap();
        crate::interleave::validate_spans(&input, m.layout()).unwrap();
        assert!(input.weights().iter().any(|w| *w > 0.0), "{task}");
    }
}

#[test]
fn stage_run_is_deterministic_and_stamped() {
    let cfg = tiny_config(2);
    let run = || {
        let (mut m, corpus) = model(&cfg);
        train_components(&mut m, &corpus).unwrap();
        let stages = builtin_stages(cfg.training.budget_scale).unwrap();
        let mut log = Vec::new();
        let p1 = train_stage(&m, &corpus, find_stage(&stages, "P1").unwrap(), 0, None, &mut log).unwrap();
        let e1 = train_stage(&m, &corpus, find_stage(&stages, "E1").unwrap(), 3, None, &mut log).unwrap();
        assert_ne!(p1.mask_version, e1.mask_version);
        let lines: Vec<StepMetrics> =
            String::from_utf8(log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        for l in &lines {
            let want = if l.stage == "P1" { p1.mask_version } else { e1.mask_version };
            assert_eq!(l.mask_version, want);
        }
        (p1.final_loss, e1.final_loss)
    };
    let a = run();
    assert!(a.0.is_some_and(f64::is_finite) && a.1.is_some_and(f64::is_finite));
    assert_eq!(a, run());
}

#[test]
fn stale_mask_is_rejected() {
    let cfg = tiny_config(3);
    let (m, _) = model(&cfg);
    let stages = builtin_stages(1e-9).unwrap();
    let mask = StageMask::new(&m, find_stage(&stages, "P1").unwrap()).unwrap();
    assert!(mask.checked(find_stage(&stages, "P1").unwrap()).is_ok());
    assert!(mask.checked(find_stage(&stages, "P2").unwrap()).is_err());
}

#[test]
fn strip_think_removes_span() {
    let layout = crate::vocab::VocabLayout::default_layout();
    let open = layout.special(crate::vocab::THINK_OPEN).unwrap();
    let close = layout.special(crate::vocab::THINK_CLOSE).unwrap();
    let t = |i: u32| crate::vocab::TokenId(100 + i);
    let toks = vec![open, t(1), t(2), close, t(3), t(4)];
    assert_eq!(strip_think(&toks, &layout).unwrap(), vec![t(3), t(4)]);
    assert_eq!(strip_think(&[t(1), open, t(2)], &layout).unwrap(), vec![t(1)]);
}
