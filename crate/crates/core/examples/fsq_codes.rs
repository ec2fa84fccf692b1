//! Finite scalar quantization: lattice anchors, digit round trips and a
//! speech clip tokenized at 25 codes per second.

use candle_core::DType;
use omnistack::corpus::speech_clip;
use omnistack::encoders::AudioEncoderConfig;
use omnistack::fsq::{code_to_digits, dequantize, quantize, AudioTokenizer, FsqConfig};
use omnistack::nn::ParamStore;
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let cfg = FsqConfig::default();
    println!("{} dims x {} levels = {} codes", cfg.dims, cfg.levels(), cfg.codebook_size());
    for z in [[0.0; 8], [-1e3; 8], [1e3; 8], [0.9, -0.9, 0.2, 0.0, 0.5, -0.4, 3.0, -3.0]] {
        let (code, lattice) = quantize(&z, &cfg)?;
        println!("{z:?} -> code {:>4} digits {:?} lattice {:?}", code.0, code_to_digits(code, &cfg)?, lattice.0);
        assert_eq!(quantize(&dequantize(code, &cfg)?, &cfg)?.0, code);
    }

    let store = ParamStore::new(DType::F32, 0);
    let tok = AudioTokenizer::new(&store.root().pp("enc"), &store.root().pp("fsq"), AudioEncoderConfig::default(), cfg)?;
    let clip = speech_clip(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 0, 10);
    let codes = tok.tokenize(&clip.wave)?;
    let secs = clip.wave.len() as f64 / 16_000.0;
    println!("\"{}\": {secs:.2} s -> {} codes", clip.transcript, codes.len());
    println!("first codes: {:?}", codes.iter().take(10).map(|c| c.0).collect::<Vec<_>>());
    Ok(())
}
