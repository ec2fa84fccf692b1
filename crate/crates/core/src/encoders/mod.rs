//! Continuous understanding path: log-mel frontend, 25 Hz audio encoder,
//! adapters, 25→1 Hz compressor and the budgeted vision encoder.

mod audio;
mod mel;
mod vision;

pub use audio::{
    compressed_len, Adapter, AudioEncoder, AudioEncoderConfig, ContinuousEmbedding, EmbeddingModality,
    TemporalCompressor, AUDIO_RATE_HZ, COMPRESSED_RATE_HZ, COMPRESS_WINDOW,
};
pub use mel::{
    log_mel, mel_filterbank, read_wav, write_wav, MelFrames, MelFrontend, HOP, MEL_RATE_HZ, N_FFT, N_MELS,
    SAMPLE_RATE,
};
pub use vision::{pooling_factor, TokenBudget, VisionEncoder, VisionEncoderConfig};
