//! Overfits the flow decoder and the vocoder on their small fixed sets.

use omnistack::eval::{decoder_overfit, vocoder_overfit};

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let v = vocoder_overfit(seed, 1000)?;
    println!(
        "vocoder: loss {:.4} -> {:.4} ({:.0}% lower) after {} steps, {:.0}s",
        v.first_loss,
        v.best_loss,
        100.0 * v.reduction(),
        v.steps,
        v.seconds
    );
    let d = decoder_overfit(seed, 2000, 25.0)?;
    println!(
        "decoder: {:.2} dB against the codec round-trip ({:.2} dB against pixels) after {} steps, {:.0}s",
        d.psnr_db, d.pixel_psnr_db, d.steps, d.seconds
    );
    Ok(())
}
