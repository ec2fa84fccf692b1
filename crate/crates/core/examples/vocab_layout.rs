//! Prints the unified vocabulary: region ranges, control tokens and a few
//! id round trips.

use omnistack::vocab::{Region, TokenId, VocabLayout, AUDIO_START, VISION_START};

fn main() -> anyhow::Result<()> {
    let layout = VocabLayout::default_layout();
    println!("{} ids", layout.total());
    for r in Region::ALL {
        let range = layout.range(r);
        println!("{:>8}: {:>5}..{:<5} ({} ids)", r.name(), range.start, range.end, range.len());
    }
    for name in [VISION_START, AUDIO_START] {
        println!("{name} = {}", layout.special(name)?.0);
    }
    for id in [0u32, 16, 1040, 1551, 1552, 8112] {
        let (region, local) = layout.resolve(TokenId(id))?;
        println!("id {id:>4} -> {} #{local}", region.name());
    }
    Ok(())
}
