use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::nn::{Linear, Params};

/// Lattice geometry: `dims` coordinates, each with `2k + 1` levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsqConfig {
    pub dims: usize,
    pub k: usize,
    /// Input scale `s` of the squash `tanh(s x) / tanh(s)`.
    pub bound_scale: f64,
}

impl Default for FsqConfig {
    /// `3^8 = 6561` codes.
    fn default() -> Self {
        Self {
            dims: 8,
            k: 1,
            bound_scale: 1.0,
        }
    }
}

impl FsqConfig {
    pub fn new(dims: usize, k: usize, bound_scale: f64) -> Result<Self> {
        let cfg = Self { dims, k, bound_scale };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.k == 0 {
            return Err(OmniError::InvalidArgument("FSQ needs dims >= 1 and k >= 1".into()));
        }
        if !(self.bound_scale.is_finite() && self.bound_scale > 0.0) {
            return Err(OmniError::InvalidArgument("FSQ bound scale must be positive".into()));
        }
        (self.levels() as u64)
            .checked_pow(self.dims as u32)
            .filter(|n| *n <= u32::MAX as u64)
            .ok_or_else(|| OmniError::InvalidArgument("FSQ codebook does not fit in u32".into()))?;
        // Every grid value j/K must round back to j, or dequantize would not
        // invert quantize.
        let k = self.k as f64;
        if let Some(j) = (0..=self.k).find(|&j| (k * self.squash(j as f64 / k)).round() as usize != j) {
            return Err(OmniError::InvalidArgument(format!(
                "FSQ bound scale {} moves grid level {j} of K = {}; use a smaller scale",
                self.bound_scale, self.k
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        2 * self.k + 1
    }

    pub fn codebook_size(&self) -> usize {
        self.levels().pow(self.dims as u32)
    }

    /// Smooth odd saturating map with `squash(±1) = ±1`.
    pub fn squash(&self, x: f64) -> f64 {
        (self.bound_scale * x).tanh() / self.bound_scale.tanh()
    }
}

/// Index into the `(2K+1)^D` codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Code(pub u32);

/// Integer lattice point with components in `-K..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticePoint(pub Vec<i32>);

pub fn bound_round(z: &[f64], cfg: &FsqConfig) -> Result<LatticePoint> {
    if z.len() != cfg.dims {
        return Err(OmniError::Shape(format!(
            "FSQ input has {} components, expected {}",
            z.len(),
            cfg.dims
        )));
    }
    let k = cfg.k as f64;
    z.iter()
        .map(|&v| {
            if v.is_nan() {
                return Err(OmniError::NonFinite);
            }
            // infinite inputs saturate past the grid and clamp to +-K
            Ok((k * cfg.squash(v)).round().clamp(-k, k) as i32)
        })
        .collect::<Result<Vec<_>>>()
        .map(LatticePoint)
}

/// Little-endian positional value: `sum digits[i] * (2K+1)^i`.
pub fn digits_to_code(digits: &[u32], cfg: &FsqConfig) -> Result<Code> {
    if digits.len() != cfg.dims {
        return Err(OmniError::Shape(format!(
            "{} digits given, expected {}",
            digits.len(),
            cfg.dims
        )));
    }
    let base = cfg.levels() as u32;
    let mut value = 0u32;
    for &d in digits.iter().rev() {
        if d >= base {
            return Err(OmniError::OutOfRange {
                what: "FSQ digit",
                value: d as usize,
                limit: base as usize,
            });
        }
        value = value * base + d;
    }
    Ok(Code(value))
}

pub fn code_to_digits(code: Code, cfg: &FsqConfig) -> Result<Vec<u32>> {
    check_code(code, cfg)?;
    let base = cfg.levels() as u32;
    let mut v = code.0;
    Ok((0..cfg.dims)
        .map(|_| {
            let d = v % base;
            v /= base;
            d
        })
        .collect())
}

fn check_code(code: Code, cfg: &FsqConfig) -> Result<()> {
    let n = cfg.codebook_size();
    if code.0 as usize >= n {
        return Err(OmniError::OutOfRange {
            what: "FSQ code",
            value: code.0 as usize,
            limit: n,
        });
    }
    Ok(())
}

pub fn quantize(z: &[f64], cfg: &FsqConfig) -> Result<(Code, LatticePoint)> {
    let point = bound_round(z, cfg)?;
    let digits: Vec<u32> = point.0.iter().map(|&c| (c + cfg.k as i32) as u32).collect();
    Ok((digits_to_code(&digits, cfg)?, point))
}

/// Lattice point of `code`, scaled by `1/K` onto the `[-1, 1]` grid.
pub fn dequantize(code: Code, cfg: &FsqConfig) -> Result<Vec<f64>> {
    let k = cfg.k as f64;
    Ok(code_to_digits(code, cfg)?
        .into_iter()
        .map(|d| (d as f64 - k) / k)
        .collect())
}

pub fn lattice_of(code: Code, cfg: &FsqConfig) -> Result<LatticePoint> {
    let k = cfg.k as i32;
    Ok(LatticePoint(
        code_to_digits(code, cfg)?
            .into_iter()
            .map(|d| d as i32 - k)
            .collect(),
    ))
}

/// Straight-through quantization of a `(..., D)` tensor.
///
/// The forward value equals `dequantize(quantize(z))`; the backward pass sees
/// only the squash, as if rounding were the identity.
pub fn quantize_ste(z: &Tensor, cfg: &FsqConfig) -> Result<Tensor> {
    let last = *z.dims().last().unwrap_or(&0);
    if last != cfg.dims {
        return Err(OmniError::Shape(format!(
            "FSQ tensor last dim {last}, expected {}",
            cfg.dims
        )));
    }
    let k = cfg.k as f64;
    let scaled = (z.affine(cfg.bound_scale, 0.0)?.tanh()? * (k / cfg.bound_scale.tanh()))?;
    let rounded = scaled.detach().round()?.clamp(-k, k)?;
    let residual = (rounded - &scaled)?.detach();
    Ok(((scaled + residual)? / k)?)
}

/// Codes for every row of a `(n, D)` tensor.
pub fn quantize_rows(z: &Tensor, cfg: &FsqConfig) -> Result<Vec<Code>> {
    let rows: Vec<Vec<f64>> = z.to_dtype(candle_core::DType::F64)?.to_vec2()?;
    rows.iter()
        .map(|r| {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(OmniError::NonFinite);
            }
            quantize(r, cfg).map(|(c, _)| c)
        })
        .collect()
}

/// Learned affine pair into and out of the `D`-dimensional FSQ space.
#[derive(Clone, Debug)]
pub struct FsqProjection {
    cfg: FsqConfig,
    down: Linear,
    up: Linear,
}

impl FsqProjection {
    pub fn new(p: &Params, width: usize, cfg: FsqConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            down: Linear::new(&p.pp("down"), width, cfg.dims, true)?,
            up: Linear::new(&p.pp("up"), cfg.dims, width, true)?,
        })
    }

    pub fn config(&self) -> &FsqConfig {
        &self.cfg
    }

    pub fn project_down(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(x)
    }

    /// `(n, width) -> codes`.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Code>> {
        quantize_rows(&self.down.forward(x)?, &self.cfg)
    }

    /// Quantize with straight-through gradients and project back up.
    pub fn forward_ste(&self, x: &Tensor) -> Result<Tensor> {
        let q = quantize_ste(&self.down.forward(x)?, &self.cfg)?;
        self.up.forward(&q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_levels_must_be_fixed_points() {
        let cfg = |k, bound_scale| FsqConfig { dims: 2, k, bound_scale };
        assert!(cfg(4, 1.0).validate().is_ok());
        assert!(cfg(5, 1.0).validate().is_err());
        assert!(cfg(5, 0.5).validate().is_ok());
    }

    #[test]
    fn anchors() {
        let cfg = FsqConfig::default();
        assert_eq!(cfg.codebook_size(), 6561);
        assert_eq!(digits_to_code(&[0; 8], &cfg).unwrap(), Code(0));
        assert_eq!(digits_to_code(&[2; 8], &cfg).unwrap(), Code(6560));
        assert_eq!(digits_to_code(&[1; 8], &cfg).unwrap(), Code(3280));
        let (c, p) = quantize(&[0.0; 8], &cfg).unwrap();
        assert_eq!(c, Code(3280));
        assert_eq!(p, LatticePoint(vec![0; 8]));
        assert_eq!(dequantize(Code(0), &cfg).unwrap(), vec![-1.0; 8]);
        assert_eq!(dequantize(Code(3280), &cfg).unwrap(), vec![0.0; 8]);
        assert_eq!(dequantize(Code(6560), &cfg).unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn bound_round_cases() {
        let cfg = FsqConfig::default();
        let mut z = [0.0; 8];
        z[0] = 0.9;
        z[1] = -0.9;
        assert_eq!(bound_round(&z, &cfg).unwrap().0, vec![1, -1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bound_round(&[f64::INFINITY; 8], &cfg).unwrap().0, vec![1; 8]);
        let cfg3 = FsqConfig::new(2, 3, 1.0).unwrap();
        assert_eq!(bound_round(&[1e9, -1e9], &cfg3).unwrap().0, vec![3, -3]);
    }

    #[test]
    fn errors() {
        let cfg = FsqConfig::default();
        assert!(matches!(bound_round(&[f64::NAN; 8], &cfg), Err(OmniError::NonFinite)));
        assert!(quantize(&[0.0; 7], &cfg).is_err());
        assert!(digits_to_code(&[3, 0, 0, 0, 0, 0, 0, 0], &cfg).is_err());
        assert!(dequantize(Code(6561), &cfg).is_err());
        assert!(FsqConfig::new(0, 1, 1.0).is_err());
        assert!(FsqConfig::new(8, 0, 1.0).is_err());
    }

    #[test]
    fn exhaustive_roundtrip() {
        let cfg = FsqConfig::default();
        for c in 0..6561u32 {
            let digits = code_to_digits(Code(c), &cfg).unwrap();
            assert_eq!(digits_to_code(&digits, &cfg).unwrap(), Code(c));
            let z = dequantize(Code(c), &cfg).unwrap();
            assert_eq!(quantize(&z, &cfg).unwrap().0, Code(c));
        }
    }
}
