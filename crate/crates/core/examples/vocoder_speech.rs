//! Synthesizes speech from audio codes for two speakers and writes WAVs.

use candle_core::DType;
use omnistack::corpus::speech_clip;
use omnistack::encoders::{write_wav, SAMPLE_RATE};
use omnistack::fsq::Code;
use omnistack::nn::ParamStore;
use omnistack::vocoder::{speaker_embed, UnitVocoder, VocoderConfig};
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let cfg = VocoderConfig::default();
    let store = ParamStore::new(DType::F32, 0);
    let voc = UnitVocoder::new(&store.root(), cfg.clone())?;
    println!("factors {:?} -> {} samples per code, {} parameters", cfg.factors, cfg.hop(), store.num_params());
    let codes: Vec<Code> = (0..25u32).map(|i| Code(i * 263 % 6561)).collect();
    let out = std::env::temp_dir();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for speaker in 0..2 {
        let reference = speech_clip(&mut rng, speaker, 12);
        let spk = speaker_embed(&reference.wave, cfg.speaker_dim)?;
        let wave = voc.synthesize(&codes, &spk)?;
        let path = out.join(format!("omnistack-speaker{speaker}.wav"));
        write_wav(&path, &wave, SAMPLE_RATE)?;
        println!("speaker {speaker}: {} codes -> {} samples -> {}", codes.len(), wave.len(), path.display());
    }
    Ok(())
}
