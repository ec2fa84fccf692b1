use candle_core::{DType, Device, Tensor};

use crate::error::{OmniError, Result};
use crate::nn::resize::{adaptive_avg_pool, bilinear};
use crate::vision::ImageBuffer;

pub const LATENT_FACTOR: usize = 8;
pub const LATENT_CHANNELS: usize = 3;

/// Latent size for a pixel size: one latent cell per 8×8 pixel block.
pub fn latent_size(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(LATENT_FACTOR), height.div_ceil(LATENT_FACTOR))
}

/// `C × H × W` latent, stored as a `(C, H, W)` tensor.
#[derive(Debug, Clone)]
pub struct LatentGrid {
    values: Tensor,
}

impl LatentGrid {
    pub fn new(values: Tensor) -> Result<Self> {
        let (_, h, w) = values.dims3()?;
        if h == 0 || w == 0 {
            return Err(OmniError::Shape("latent grid must be non-empty".into()));
        }
        Ok(Self { values })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    /// `(width, height)` in latent cells.
    pub fn size(&self) -> (usize, usize) {
        let d = self.values.dims();
        (d[2], d[1])
    }
}

/// Stand-in autoencoder: exact 8× area downsampling, bilinear upsampling back.
#[derive(Debug, Clone, Copy, Default)]
pub struct LatentCodec;

impl LatentCodec {
    pub fn encode(&self, img: &ImageBuffer, dtype: DType) -> Result<LatentGrid> {
        let (lw, lh) = latent_size(img.width(), img.height());
        let x = Tensor::from_vec(img.to_chw(), (3, img.height(), img.width()), &Device::Cpu)?.to_dtype(dtype)?;
        LatentGrid::new(adaptive_avg_pool(&x, lh, lw)?)
    }

    pub fn decode(&self, latent: &LatentGrid, width: usize, height: usize) -> Result<ImageBuffer> {
        if width == 0 || height == 0 {
            return Err(OmniError::InvalidArgument("decode size must be non-zero".into()));
        }
        let up = bilinear(latent.tensor(), height, width)?.clamp(0.0, 1.0)?;
        let data: Vec<f32> = up.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        ImageBuffer::from_chw(width, height, &data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_constant_roundtrip() {
        assert_eq!(latent_size(928, 624), (116, 78));
        assert_eq!(latent_size(384, 384), (48, 48));
        let img = ImageBuffer::filled(64, 32, [0.2, 0.5, 0.9]).unwrap();
        let lat = LatentCodec.encode(&img, DType::F32).unwrap();
        assert_eq!(lat.size(), (8, 4));
        let back = LatentCodec.decode(&lat, 64, 32).unwrap();
        assert!(back.mse(&img).unwrap() < 1e-12);
    }
}
