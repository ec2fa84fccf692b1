//! Separable linear resampling expressed as matrix products so that it is
//! differentiable end to end.

use candle_core::{DType, Device, Tensor};

use crate::error::Result;

/// Bilinear interpolation weights `(out, in)` with half-pixel centres and
/// edge clamping. Equal sizes give the identity.
pub fn bilinear_weights(out_len: usize, in_len: usize) -> Vec<f64> {
    let mut w = vec![0.0; out_len * in_len];
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = src - i0 as f64;
        w[o * in_len + i0] += 1.0 - frac;
        w[o * in_len + i1] += frac;
    }
    w
}

/// Adaptive average pooling weights `(out, in)`: output cell `o` averages
/// input cells `floor(o*in/out) .. ceil((o+1)*in/out)`.
pub fn adaptive_pool_weights(out_len: usize, in_len: usize) -> Vec<f64> {
    let mut w = vec![0.0; out_len * in_len];
    for o in 0..out_len {
        let start = o * in_len / out_len;
        let end = ((o + 1) * in_len).div_ceil(out_len);
        let n = (end - start) as f64;
        for i in start..end {
            w[o * in_len + i] = 1.0 / n;
        }
    }
    w
}

fn weights_tensor(w: Vec<f64>, out_len: usize, in_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(w, (out_len, in_len), device)?.to_dtype(dtype)?)
}

/// Applies row weights `(oh, h)` and column weights `(ow, w)` to the last two
/// dimensions of `x`.
pub fn separable(x: &Tensor, rows: &Tensor, cols: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let rank = dims.len();
    let (h, w) = (dims[rank - 2], dims[rank - 1]);
    let lead: usize = dims[..rank - 2].iter().product();
    let oh = rows.dims()[0];
    let ow = cols.dims()[0];
    // plain 2-D products only; batched matmul with broadcast operands is avoided
    let y = x.reshape((lead * h, w))?.matmul(&cols.t()?)?;
    let y = y.reshape((lead, h, ow))?.transpose(1, 2)?.contiguous()?;
    let y = y.reshape((lead * ow, h))?.matmul(&rows.t()?)?;
    let y = y.reshape((lead, ow, oh))?.transpose(1, 2)?.contiguous()?;
    let mut out = dims[..rank - 2].to_vec();
    out.extend([oh, ow]);
    Ok(y.reshape(out)?)
}

/// Bilinear resize of the last two dimensions to `(oh, ow)`.
pub fn bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let rank = x.rank();
    let (h, w) = (x.dims()[rank - 2], x.dims()[rank - 1]);
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let rows = weights_tensor(bilinear_weights(oh, h), oh, h, x.dtype(), x.device())?;
    let cols = weights_tensor(bilinear_weights(ow, w), ow, w, x.dtype(), x.device())?;
    separable(x, &rows, &cols)
}

/// Adaptive average pool of the last two dimensions to `(oh, ow)`.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let rank = x.rank();
    let (h, w) = (x.dims()[rank - 2], x.dims()[rank - 1]);
    let rows = weights_tensor(adaptive_pool_weights(oh, h), oh, h, x.dtype(), x.device())?;
    let cols = weights_tensor(adaptive_pool_weights(ow, w), ow, w, x.dtype(), x.device())?;
    separable(x, &rows, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_stochastic_rows() {
        for (o, i) in [(27, 24), (5, 3), (3, 5), (1, 7), (7, 1)] {
            for w in [bilinear_weights(o, i), adaptive_pool_weights(o, i)] {
                for r in 0..o {
                    let s: f64 = w[r * i..(r + 1) * i].iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_size_bilinear_is_identity() {
        let w = bilinear_weights(27, 27);
        for r in 0..27 {
            for c in 0..27 {
                assert_eq!(w[r * 27 + c], if r == c { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn constant_field_stays_constant() {
        let x = Tensor::full(0.25f64, (2, 27, 27), &Device::Cpu).unwrap();
        let y = bilinear(&x, 78, 116).unwrap();
        assert_eq!(y.dims(), &[2, 78, 116]);
        let v: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|a| (a - 0.25).abs() < 1e-12));
    }
}
