use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::LATENT_FACTOR;
use crate::error::{OmniError, Result};
use crate::vision::GRID;

/// Training-resolution settings of one decoder phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase: u8,
    /// Square pixel size the source image is resized to.
    pub source_px: usize,
    /// Square pixel size of each training window.
    pub train_px: usize,
    pub crop: bool,
    /// Multiplier on the base learning rate.
    pub lr_scale: f64,
}

/// 1: low-resolution crops, 2: full-resolution crops, 3: full images,
/// 4: full images at a tenth of the learning rate.
pub fn phase_schedule(phase: u8) -> Result<PhaseConfig> {
    Ok(match phase {
        1 => PhaseConfig { phase, source_px: 108, train_px: 64, crop: true, lr_scale: 1.0 },
        2 => PhaseConfig { phase, source_px: 216, train_px: 96, crop: true, lr_scale: 1.0 },
        3 => PhaseConfig { phase, source_px: 96, train_px: 96, crop: false, lr_scale: 1.0 },
        4 => PhaseConfig { phase, source_px: 96, train_px: 96, crop: false, lr_scale: 0.1 },
        other => {
            return Err(OmniError::OutOfRange { what: "decoder phase", value: other as usize, limit: 5 })
        }
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Pixel window of a crop together with the token sub-grid it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
    /// Token columns/rows `[col0, col0 + tokens)` and `[row0, row0 + tokens)`.
    pub col0: usize,
    pub row0: usize,
    pub tokens: usize,
}

impl PhaseConfig {
    /// Pixels per vision token at this phase's source size, if integral.
    pub fn token_stride(&self) -> Option<usize> {
        (self.source_px % GRID == 0).then_some(self.source_px / GRID)
    }

    /// Crop offsets are multiples of this, so windows align with both the
    /// token grid and the latent grid.
    pub fn crop_stride(&self) -> Result<usize> {
        let s = self.token_stride().ok_or_else(|| {
            OmniError::InvalidArgument(format!("source size {} is not a multiple of {GRID}", self.source_px))
        })?;
        Ok(s / gcd(s, LATENT_FACTOR) * LATENT_FACTOR)
    }

    pub fn sample_crop<R: Rng>(&self, rng: &mut R) -> Result<CropWindow> {
        if !self.crop {
            return Ok(CropWindow { x0: 0, y0: 0, size: self.source_px, col0: 0, row0: 0, tokens: GRID });
        }
        let stride = self.crop_stride()?;
        let ts = self.token_stride().expect("checked by crop_stride");
        if self.train_px > self.source_px || self.train_px % ts != 0 {
            return Err(OmniError::InvalidArgument("crop does not tile the token grid".into()));
        }
        let slots = (self.source_px - self.train_px) / stride + 1;
        let x0 = rng.random_range(0..slots) * stride;
        let y0 = rng.random_range(0..slots) * stride;
        Ok(CropWindow { x0, y0, size: self.train_px, col0: x0 / ts, row0: y0 / ts, tokens: self.train_px / ts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn schedule() {
        let p3 = phase_schedule(3).unwrap();
        let p4 = phase_schedule(4).unwrap();
        assert_eq!(p4.lr_scale, 0.1 * p3.lr_scale);
        assert_eq!(phase_schedule(1).unwrap().train_px, 64);
        assert_eq!(phase_schedule(2).unwrap().train_px, 96);
        assert_eq!(p3.train_px, 96);
        assert!(phase_schedule(0).is_err());
        assert!(phase_schedule(5).is_err());
    }

    #[test]
    fn crops_align_with_tokens() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for phase in [1u8, 2] {
            let cfg = phase_schedule(phase).unwrap();
            let ts = cfg.token_stride().unwrap();
            for _ in 0..200 {
                let c = cfg.sample_crop(&mut rng).unwrap();
                assert_eq!(c.x0 % ts, 0);
                assert_eq!(c.y0 % 8, 0);
                assert!(c.x0 + c.size <= cfg.source_px);
                assert_eq!(c.col0 * ts, c.x0);
                assert!(c.col0 + c.tokens <= GRID);
            }
        }
    }
}
