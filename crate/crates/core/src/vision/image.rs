use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::nn::resize::bilinear_weights;

pub const TOKENIZER_INPUT: usize = 384;

/// RGB image with values in `[0, 1]`, stored row-major as `h × w × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f32>,
    original: (usize, usize),
}

/// Width and height of an image before any square resize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectRecord {
    pub width: usize,
    pub height: usize,
}

impl AspectRecord {
    /// Reduced `width:height`.
    pub fn ratio(&self) -> (usize, usize) {
        let g = gcd(self.width, self.height).max(1);
        (self.width / g, self.height / g)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(OmniError::InvalidArgument(format!(
                "degenerate image {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(OmniError::Shape(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(OmniError::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            data,
            original: (width, height),
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn original_aspect(&self) -> AspectRecord {
        AspectRecord {
            width: self.original.0,
            height: self.original.1,
        }
    }

    pub fn with_original_aspect(mut self, aspect: AspectRecord) -> Self {
        self.original = (aspect.width, aspect.height);
        self
    }

    /// Channel-first copy `(3, h, w)`.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[c * n + i] = self.data[i * 3 + c];
            }
        }
        out
    }

    pub fn from_chw(width: usize, height: usize, chw: &[f32]) -> Result<Self> {
        let n = width * height;
        if chw.len() != 3 * n {
            return Err(OmniError::Shape(format!("{} values for 3x{height}x{width}", chw.len())));
        }
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[i * 3 + c] = chw[c * n + i].clamp(0.0, 1.0);
            }
        }
        Self::new(width, height, data)
    }

    /// Bilinear resample; the aspect record is carried over unchanged.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(OmniError::InvalidArgument(format!(
                "cannot resize to {width}x{height}"
            )));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let wy = bilinear_weights(height, self.height);
        let wx = bilinear_weights(width, self.width);
        // rows first
        let mut tmp = vec![0.0f64; height * self.width * 3];
        for oy in 0..height {
            for iy in 0..self.height {
                let w = wy[oy * self.height + iy];
                if w == 0.0 {
                    continue;
                }
                for x in 0..self.width * 3 {
                    tmp[oy * self.width * 3 + x] += w * self.data[iy * self.width * 3 + x] as f64;
                }
            }
        }
        let mut out = vec![0.0f32; height * width * 3];
        for oy in 0..height {
            for ox in 0..width {
                let mut acc = [0.0f64; 3];
                for ix in 0..self.width {
                    let w = wx[ox * self.width + ix];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..3 {
                        acc[c] += w * tmp[(oy * self.width + ix) * 3 + c];
                    }
                }
                for c in 0..3 {
                    out[(oy * width + ox) * 3 + c] = (acc[c] as f32).clamp(0.0, 1.0);
                }
            }
        }
        Ok(Self {
            width,
            height,
            data: out,
            original: self.original,
        })
    }

    /// Pixel window `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(OmniError::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Self::new(w, h, data)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| OmniError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| OmniError::Image(format!("{}: {e}", path.display())))
    }

    pub fn mse(&self, other: &ImageBuffer) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(OmniError::Shape("images differ in size".into()));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        Ok(s / self.data.len() as f64)
    }
}

/// Peak signal-to-noise ratio for unit-range images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let mse = a.mse(b)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Bilinear resample to the fixed 384×384 tokenizer input, recording the
/// original width and height for inverse mapping at decode time.
pub fn resize_square(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.width == 0 || img.height == 0 {
        return Err(OmniError::InvalidArgument("degenerate image".into()));
    }
    let aspect = AspectRecord {
        width: img.width,
        height: img.height,
    };
    Ok(img
        .resize(TOKENIZER_INPUT, TOKENIZER_INPUT)?
        .with_original_aspect(aspect))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_resize_records_aspect() {
        let img = ImageBuffer::filled(928, 624, [0.2, 0.4, 0.6]).unwrap();
        let sq = resize_square(&img).unwrap();
        assert_eq!((sq.width(), sq.height()), (384, 384));
        assert_eq!(sq.original_aspect(), AspectRecord { width: 928, height: 624 });
        assert_eq!(
            sq.original_aspect().ratio(),
            AspectRecord { width: 116, height: 78 }.ratio()
        );
    }

    #[test]
    fn identity_and_constant_extension() {
        let img = ImageBuffer::from_fn(384, 384, |x, y| [x as f32 / 384.0, y as f32 / 384.0, 0.5]).unwrap();
        assert_eq!(resize_square(&img).unwrap().data(), img.data());
        let one = ImageBuffer::filled(1, 1, [0.1, 0.9, 0.3]).unwrap();
        let big = resize_square(&one).unwrap();
        assert!(big.data().chunks(3).all(|p| p == [0.1, 0.9, 0.3]));
    }

    #[test]
    fn rejects_degenerate() {
        assert!(ImageBuffer::new(0, 4, vec![]).is_err());
        assert!(ImageBuffer::new(1, 1, vec![2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(5, 3, |x, y| [x as f32 / 4.0, y as f32 / 2.0, 1.0]).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = ImageBuffer::load_png(&p).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }
}
