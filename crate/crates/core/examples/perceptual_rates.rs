//! Continuous perception paths: audio at 100 -> 25 -> 1 Hz and vision
//! embeddings pooled under the image and video token budgets.

use candle_core::DType;
use omnistack::encoders::{
    log_mel, AudioEncoder, AudioEncoderConfig, TemporalCompressor, TokenBudget, VisionEncoder, VisionEncoderConfig,
};
use omnistack::nn::ParamStore;

fn main() -> anyhow::Result<()> {
    let store = ParamStore::new(DType::F32, 0);
    let enc = AudioEncoder::new(&store.root().pp("audio"), AudioEncoderConfig::default())?;
    let comp = TemporalCompressor::new(&store.root().pp("comp"), enc.width())?;
    let wave: Vec<f32> = (0..160_000).map(|i| (i as f32 * 0.031).sin() * 0.3).collect();
    let mel = log_mel(&wave)?;
    let emb = enc.encode(&mel, DType::F32)?;
    let slow = comp.forward(&emb)?;
    println!("10 s audio: {} mel frames -> {} embeddings -> {} compressed", mel.frames(), emb.len(), slow.len());

    let vis = VisionEncoder::new(&store.root().pp("vis"), &store.root().pp("ad"), VisionEncoderConfig::default(), 64)?;
    let budget = TokenBudget::default();
    for (frames, w, h) in [(1, 384, 384), (1, 1920, 1080), (1, 4096, 4096), (16, 1280, 720), (64, 640, 360)] {
        let b = budget.for_frames(frames);
        println!("{frames:>2} frame(s) {w}x{h}: {} embeddings (budget {b})", vis.output_len(frames, w, h, b)?);
    }
    Ok(())
}
