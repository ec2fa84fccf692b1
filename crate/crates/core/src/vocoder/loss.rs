use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor};

use crate::error::{OmniError, Result};

/// `(n_fft, hop)` pairs of the multi-resolution STFT loss.
pub const STFT_RESOLUTIONS: [(usize, usize); 3] = [(512, 128), (256, 64), (128, 32)];

const MAG_EPS: f64 = 1e-7;

/// Hann-windowed DFT rows as a conv kernel `(2 * bins, 1, n_fft)`; real rows first.
fn dft_kernel(n_fft: usize, dtype: DType) -> Result<Tensor> {
    let bins = n_fft / 2 + 1;
    let mut data = vec![0.0f64; 2 * bins * n_fft];
    for k in 0..bins {
        for n in 0..n_fft {
            let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos();
            let ang = 2.0 * PI * (k * n) as f64 / n_fft as f64;
            data[k * n_fft + n] = w * ang.cos();
            data[(bins + k) * n_fft + n] = -w * ang.sin();
        }
    }
    Ok(Tensor::from_vec(data, (2 * bins, 1, n_fft), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Magnitude spectrogram `(b, bins, frames)` of `(b, samples)`.
pub fn stft_magnitude(x: &Tensor, n_fft: usize, hop: usize) -> Result<Tensor> {
    let (_, len) = x.dims2()?;
    if len < n_fft {
        return Err(OmniError::Shape(format!("{len} samples is shorter than an STFT window of {n_fft}")));
    }
    let spec = x.unsqueeze(1)?.conv1d(&dft_kernel(n_fft, x.dtype())?, 0, hop, 1, 1)?;
    let bins = n_fft / 2 + 1;
    let re = spec.narrow(1, 0, bins)?;
    let im = spec.narrow(1, bins, bins)?;
    Ok(((re.sqr()? + im.sqr()?)? + MAG_EPS)?.sqrt()?)
}

/// Spectral convergence plus log-magnitude L1, summed over resolutions,
/// plus waveform L1. Zero when `pred == target`.
pub fn vocoder_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(OmniError::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    let mut total = (pred - target)?.abs()?.mean_all()?;
    for (n_fft, hop) in STFT_RESOLUTIONS {
        let p = stft_magnitude(pred, n_fft, hop)?;
        let t = stft_magnitude(target, n_fft, hop)?;
        let diff = (&t - &p)?;
        let sc = (diff.sqr()?.sum_all()?.sqrt()? / t.sqr()?.sum_all()?.sqrt()?)?;
        let mag = (t.log()? - p.log()?)?.abs()?.mean_all()?;
        total = ((total + sc)? + mag)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_matches_fft_magnitude() {
        let n = 128;
        let x: Vec<f32> = (0..n).map(|i| ((i * 7 % 13) as f32 - 6.0) / 6.0).collect();
        let t = Tensor::from_vec(x.clone(), (1, n), &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap();
        let mag: Vec<f64> = stft_magnitude(&t, n, 32).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                rustfft::num_complex::Complex::new(*v as f64 * w, 0.0)
            })
            .collect();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        for k in 0..=n / 2 {
            let want = (buf[k].norm_sqr() + MAG_EPS).sqrt();
            assert!((mag[k] - want).abs() < 1e-9, "bin {k}: {} vs {want}", mag[k]);
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let x = Tensor::randn(0f32, 0.3, (2, 1024), &Device::Cpu).unwrap();
        let l: f32 = vocoder_loss(&x, &x).unwrap().to_scalar().unwrap();
        assert_eq!(l, 0.0);
        let y = (&x * 0.5).unwrap();
        let l: f32 = vocoder_loss(&y, &x).unwrap().to_scalar().unwrap();
        assert!(l > 0.1);
    }
}
