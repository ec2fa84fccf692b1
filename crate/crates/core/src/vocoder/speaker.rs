use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::{MelFrontend, N_MELS, SAMPLE_RATE};
use crate::error::{OmniError, Result};

/// Shortest reference clip accepted for speaker conditioning.
pub const MIN_REFERENCE_SECS: f64 = 0.5;
pub const DEFAULT_SPEAKER_DIM: usize = 64;

const PROJECTION_SEED: u64 = 0x5eed_5bea_c0de;

/// Unit-norm speaker vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    values: Vec<f32>,
}

impl SpeakerEmbedding {
    /// Normalises `values` to unit length.
    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OmniError::NonFinite);
        }
        let norm = values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(OmniError::InvalidArgument("speaker vector has zero norm".into()));
        }
        Ok(Self { values: values.iter().map(|v| (*v as f64 / norm) as f32).collect() })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() / (self.norm() * other.norm())
    }
}

/// Log-mel mean/std pooling, a fixed seeded projection, then L2 normalisation.
pub fn speaker_embed(wave: &[f32], dim: usize) -> Result<SpeakerEmbedding> {
    let min = (MIN_REFERENCE_SECS * SAMPLE_RATE as f64) as usize;
    if wave.len() < min {
        return Err(OmniError::InvalidArgument(format!(
            "reference audio is {:.3}s, need at least {MIN_REFERENCE_SECS}s",
            wave.len() as f64 / SAMPLE_RATE as f64
        )));
    }
    if dim == 0 {
        return Err(OmniError::InvalidArgument("speaker dimension must be positive".into()));
    }
    let mel = MelFrontend::new().compute(wave)?;
    let n = mel.frames() as f64;
    let mut mean = vec![0.0f64; N_MELS];
    for i in 0..mel.frames() {
        for (m, v) in mean.iter_mut().zip(mel.frame(i)) {
            *m += *v as f64 / n;
        }
    }
    let mut std = vec![0.0f64; N_MELS];
    for i in 0..mel.frames() {
        for ((s, v), m) in std.iter_mut().zip(mel.frame(i)).zip(&mean) {
            *s += (*v as f64 - m).powi(2) / n;
        }
    }
    // Level offset removed so the envelope shape dominates.
    let level = mean.iter().sum::<f64>() / N_MELS as f64;
    let feats: Vec<f64> = mean.iter().map(|m| m - level).chain(std.iter().map(|s| s.sqrt())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = 1.0 / (feats.len() as f64).sqrt();
    let mut out = vec![0.0f32; dim];
    for o in out.iter_mut() {
        let mut acc = 0.0;
        for f in &feats {
            let w: f64 = StandardNormal.sample(&mut rng);
            acc += w * scale * f;
        }
        *o = acc as f32;
    }
    SpeakerEmbedding::from_values(out)
}
