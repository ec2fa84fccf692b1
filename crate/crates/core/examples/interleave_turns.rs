//! Assembles a chat with an image, a speech clip and a think block, then
//! prints each position with its target weight.

use candle_core::{DType, Device, Tensor};
use omnistack::interleave::{assemble, render_template, validate_spans, MaskFactors, Role, Segment, SegmentKind, Turn};
use omnistack::vision::GRID_CELLS;
use omnistack::vocab::{build_layout, Region, DEFAULT_SPECIALS};

fn main() -> anyhow::Result<()> {
    let layout = build_layout(&DEFAULT_SPECIALS, 64, 16, 27)?;
    let text = |s: &str| -> anyhow::Result<Segment> {
        let ids = s.bytes().map(|b| layout.global_id(Region::Text, b as usize % 64)).collect::<Result<_, _>>()?;
        Ok(Segment::text(ids))
    };
    let audio = Tensor::zeros((3, 8), DType::F32, &Device::Cpu)?;
    let turns = vec![
        Turn::new(Role::User, vec![text("what is this")?, Segment::new(SegmentKind::AudioContinuous(audio))]),
        Turn::new(
            Role::Assistant,
            vec![text("a circle")?, Segment::new(SegmentKind::VisionDiscrete((0..GRID_CELLS as u32).map(|i| i % 16).collect()))],
        )
        .with_think(vec![layout.global_id(Region::Text, 5)?]),
    ];
    let segments = render_template(&turns, &layout)?;
    let input = assemble(&segments, &layout, &MaskFactors::new(1.0, 0.5, 1.0)?)?;
    validate_spans(&input, &layout)?;
    println!("{} positions, {} injection slots", input.len(), input.num_slots());
    let names = input.render(&layout)?;
    for (i, name) in names.iter().enumerate().filter(|(i, _)| *i < 40 || *i + 4 > names.len()) {
        let w = if i == 0 { 0.0 } else { input.weights()[i - 1] };
        println!("{i:>4} {name:<24} weight {w}");
    }
    let hist = input.loss_weights_histogram(&layout)?;
    println!("loss weight: text {} vision {} audio {}", hist.get(Region::Text), hist.get(Region::Vision), hist.get(Region::Audio));
    Ok(())
}
