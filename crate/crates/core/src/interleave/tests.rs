use candle_core::{DType, Device, Tensor};

use super::*;
use crate::vocab::{Region, TokenId, VocabLayout, THINK_CLOSE, THINK_OPEN};

fn layout() -> VocabLayout {
    VocabLayout::default_layout()
}

fn text(l: &VocabLayout, local: &[usize]) -> Vec<TokenId> {
    local.iter().map(|&i| l.global_id(Region::Text, i).unwrap()).collect()
}

fn slots(n: usize) -> Tensor {
    Tensor::ones((n, 8), DType::F32, &Device::Cpu).unwrap()
}

#[test]
fn empty_conversation() {
    assert!(render_template(&[], &layout()).unwrap().is_empty());
}

#[test]
fn user_image_then_text() {
    let l = layout();
    let turn = Turn::new(
        Role::User,
        vec![
            Segment::new(SegmentKind::VisionContinuous(slots(3))),
            Segment::text(text(&l, &[5, 6])),
        ],
    );
    let segs = render_template(&[turn], &l).unwrap();
    let input = assemble(&segs, &l, &MaskFactors::default()).unwrap();
    let expect = [
        "<|im_start|>", "user", "<|vision_start|>", "<slot>", "<slot>", "<slot>", "<|vision_end|>", "t5", "t6",
        "<|im_end|>",
    ];
    assert_eq!(input.render(&l).unwrap(), expect);
    validate_spans(&input, &l).unwrap();
}

#[test]
fn think_block_on_assistant_only() {
    let l = layout();
    let think = text(&l, &[1, 2]);
    let turns = [
        Turn::new(Role::User, vec![Segment::text(text(&l, &[3]))]),
        Turn::new(Role::Assistant, vec![Segment::text(text(&l, &[4]))]).with_think(think.clone()),
    ];
    let input = assemble(&render_template(&turns, &l).unwrap(), &l, &MaskFactors::default()).unwrap();
    let r = input.render(&l).unwrap();
    let open = r.iter().position(|s| s == THINK_OPEN).unwrap();
    let close = r.iter().position(|s| s == THINK_CLOSE).unwrap();
    let answer = r.iter().position(|s| s == "t4").unwrap();
    assert_eq!(&r[open - 2..open], ["<|im_start|>", "assistant"]);
    assert_eq!(&r[open + 1..close], ["t1", "t2"]);
    assert!(close < answer);

    let bad = [Turn::new(Role::User, vec![]).with_think(think)];
    assert!(render_template(&bad, &l).is_err());
    assert!("moderator".parse::<Role>().is_err());
    let twice = [Turn::new(Role::User, vec![]), Turn::new(Role::User, vec![])];
    assert!(render_template(&twice, &l).is_err());
}

#[test]
fn vision_factor_applies_to_every_vision_target() {
    let l = layout();
    let segs = vec![
        Segment::text(text(&l, &[1])),
        Segment::new(SegmentKind::VisionDiscrete((0..729).map(|i| i % 512).collect())),
    ];
    let input = assemble(&segs, &l, &MaskFactors::new(1.0, 0.5, 1.0).unwrap()).unwrap();
    let mut seen = 0;
    for (t, w) in input.targets().iter().zip(input.weights()) {
        if l.region_of(t.unwrap()).unwrap() == Region::Vision {
            assert_eq!(*w, 0.5);
            seen += 1;
        } else {
            assert_eq!(*w, 1.0);
        }
    }
    assert_eq!(seen, 729);
    let h = input.loss_weights_histogram(&l).unwrap();
    assert_eq!(h.vision, 364.5);
}

#[test]
fn continuous_input_only_answer_is_weighted() {
    let l = layout();
    let segs = vec![
        Segment::new(SegmentKind::VisionContinuous(slots(4))),
        Segment::text(text(&l, &[7, 8, 9])),
    ];
    let input = assemble(&segs, &l, &MaskFactors::default()).unwrap();
    let weighted: Vec<String> = input
        .targets()
        .iter()
        .zip(input.weights())
        .filter(|(_, w)| **w > 0.0)
        .map(|(t, _)| format!("t{}", l.resolve(t.unwrap()).unwrap().1))
        .collect();
    assert_eq!(weighted, ["t7", "t8", "t9"]);
}

#[test]
fn target_count_oracle() {
    let l = layout();
    let segs = vec![
        Segment::text(text(&l, &[1, 2, 3])),
        Segment::new(SegmentKind::AudioDiscrete(vec![0, 6560, 3280])),
        Segment::new(SegmentKind::VisionDiscrete(vec![0; 729])),
    ];
    let input = assemble(&segs, &l, &MaskFactors::default()).unwrap();
    // 3 text + 3 audio + 729 vision + 4 wrapper controls, minus the first position
    let n = 3 + 3 + 729 + 4 - 1;
    assert_eq!(input.targets().len(), n);
    assert_eq!(input.weights().iter().filter(|w| **w > 0.0).count(), n);
}

#[test]
fn invalid_inputs() {
    let l = layout();
    let short = vec![Segment::new(SegmentKind::VisionDiscrete(vec![0; 728]))];
    assert!(assemble(&short, &l, &MaskFactors::default()).is_err());
    let bad_id = vec![Segment::new(SegmentKind::AudioDiscrete(vec![6561]))];
    assert!(assemble(&bad_id, &l, &MaskFactors::default()).is_err());
    let out_of_vocab = vec![Segment::text(vec![TokenId(l.total() as u32)])];
    assert!(assemble(&out_of_vocab, &l, &MaskFactors::default()).is_err());
    let vision_in_text = vec![Segment::text(vec![l.global_id(Region::Vision, 0).unwrap()])];
    assert!(assemble(&vision_in_text, &l, &MaskFactors::default()).is_err());
    assert!(MaskFactors::new(1.0, -0.1, 1.0).is_err());
}

#[test]
fn edit_pair_and_audio_understanding() {
    let l = layout();
    let mut segs = vec![
        Segment::new(SegmentKind::VisionContinuous(slots(2))).edit_source(),
        Segment::new(SegmentKind::VisionDiscrete(vec![3; 729])),
    ];
    segs.extend(audio_understanding(slots(5), vec![1, 2]));
    let input = assemble(&segs, &l, &MaskFactors::default()).unwrap();
    validate_spans(&input, &l).unwrap();
    let r = input.render(&l).unwrap();
    assert_eq!(&r[..5], ["<|vision_start|>", "<slot>", "<slot>", "<|vision_end|>", "<|edit|>"]);
    let tail: Vec<&str> = r[r.len() - 11..].iter().map(|s| s.as_str()).collect();
    assert_eq!(
        tail,
        [
            "<|audio_start|>", "<slot>", "<slot>", "<slot>", "<slot>", "<slot>", "<|audio_end|>",
            "<|audio_start|>", "a1", "a2", "<|audio_end|>"
        ]
    );
    let lone = vec![Segment::new(SegmentKind::VisionContinuous(slots(2))).edit_source()];
    assert!(assemble(&lone, &l, &MaskFactors::default()).is_err());
}

#[test]
fn jsonl_dump() {
    let l = layout();
    let input = assemble(
        &[Segment::new(SegmentKind::AudioContinuous(slots(1))), Segment::text(text(&l, &[1]))],
        &l,
        &MaskFactors::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.jsonl");
    write_jsonl(&path, &[input.clone(), input]).unwrap();
    let body = std::fs::read_to_string(&path).unwrap();
    assert_eq!(body.lines().count(), 2);
    let v: serde_json::Value = serde_json::from_str(body.lines().next().unwrap()).unwrap();
    assert_eq!(v["inputs"][1], serde_json::json!({"slot": {"stream": 0, "row": 0}}));
    assert_eq!(v["targets"][0], serde_json::Value::Null);
}
