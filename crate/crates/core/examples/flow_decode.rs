//! Vision-token conditioning geometry and guided flow sampling.

use candle_core::DType;
use omnistack::decoder::{
    gaussian, latent_size, sample, tokens_to_cond, train_step, ConcatDit, DecoderConfig, GuidanceConfig, LatentCodec, LatentGrid,
};
use omnistack::nn::{AdamW, AdamWConfig, ParamStore};
use rand::SeedableRng;
use omnistack::vision::{VisionTokenGrid, VisionTokenizer, VisionTokenizerConfig, GRID_CELLS};

fn main() -> anyhow::Result<()> {
    let (w, h) = latent_size(928, 624);
    println!("928x624 image -> {w}x{h} latent grid");

    let store = ParamStore::new(DType::F32, 0);
    let tok = VisionTokenizer::new(&store.root().pp("tok"), VisionTokenizerConfig::default())?;
    let grid = VisionTokenGrid::new((0..GRID_CELLS as u32).map(|i| i * 7 % 512).collect(), 512)?;
    let cond = tokens_to_cond(&tok, &grid, 12, 8)?.unsqueeze(0)?;
    println!("cond grid {:?}", cond.dims());

    // Briefly fit both decoders to one latent so their velocities differ.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let target = gaussian(&[1, 3, 8, 12], DType::F32, &mut rng)?;
    let mut nets = Vec::new();
    for (name, cfg, steps) in [("main", DecoderConfig::main(), 40), ("bad", DecoderConfig::bad(), 2)] {
        let s = ParamStore::new(DType::F32, 1);
        let net = ConcatDit::new(&s.root().pp(name), cfg)?;
        let mut opt = AdamW::new(AdamWConfig { lr: 1e-3, ..AdamWConfig::default() });
        for _ in 0..steps {
            train_step(&net, &s, &mut opt, &target, &cond, &mut rng)?;
        }
        nets.push((s, net));
    }
    let (main, bad) = (&nets[0].1, &nets[1].1);
    let mut images = Vec::new();
    for scale in [1.0, 1.75] {
        let latent = sample(main, Some(bad), &cond, 8, &GuidanceConfig { scale }, 3)?;
        let img = LatentCodec.decode(&LatentGrid::new(latent.squeeze(0)?)?, 96, 64)?;
        println!("guidance {scale}: {}x{} image", img.width(), img.height());
        images.push(img);
    }
    let diff = images[0].data().iter().zip(images[1].data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    println!("max pixel difference between guidance scales: {diff:.4}");
    Ok(())
}
