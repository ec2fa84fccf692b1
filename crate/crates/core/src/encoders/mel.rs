use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{OmniError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 400;
pub const HOP: usize = 160;
pub const N_MELS: usize = 128;
pub const MEL_RATE_HZ: f64 = 100.0;
const LOG_FLOOR: f64 = 1e-10;

/// Log-mel frames at 100 Hz, row-major `frames × 128`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrames {
    data: Vec<f32>,
    frames: usize,
}

impl MelFrames {
    pub fn new(data: Vec<f32>, frames: usize) -> Result<Self> {
        if data.len() != frames * N_MELS {
            return Err(OmniError::Shape(format!(
                "mel data of {} values is not {frames}x{N_MELS}",
                data.len()
            )));
        }
        Ok(Self { data, frames })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * N_MELS..(i + 1) * N_MELS]
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames as f64 / MEL_RATE_HZ
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters `(n_mels, n_fft/2+1)` spanning 0 Hz to Nyquist.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
        for (k, &f) in bin_hz.iter().enumerate() {
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[m * bins + k] = w;
        }
    }
    fb
}

/// Reusable STFT + mel projection.
pub struct MelFrontend {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<f64>,
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFrontend {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        // periodic Hann
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        Self {
            fft,
            window,
            filters: mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE),
        }
    }

    /// 128-channel log-mel power spectrogram. The signal is zero-padded by
    /// half a window on both sides and the trailing frame is dropped, so a
    /// waveform of `n` samples gives `floor(n / 160)` frames.
    pub fn compute(&self, wave: &[f32]) -> Result<MelFrames> {
        if wave.is_empty() {
            return Err(OmniError::InvalidArgument("empty waveform".into()));
        }
        let frames = wave.len() / HOP;
        if frames == 0 {
            return Err(OmniError::InvalidArgument(format!(
                "waveform of {} samples is shorter than one hop",
                wave.len()
            )));
        }
        let half = N_FFT / 2;
        let bins = N_FFT / 2 + 1;
        let mut out = Vec::with_capacity(frames * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; bins];
        for f in 0..frames {
            let start = (f * HOP) as isize - half as isize;
            for (n, slot) in buf.iter_mut().enumerate() {
                let i = start + n as isize;
                let s = if i >= 0 && (i as usize) < wave.len() {
                    wave[i as usize] as f64
                } else {
                    0.0
                };
                *slot = Complex::new(s * self.window[n], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for m in 0..N_MELS {
                let row = &self.filters[m * bins..(m + 1) * bins];
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                out.push(e.max(LOG_FLOOR).ln() as f32);
            }
        }
        MelFrames::new(out, frames)
    }
}

pub fn log_mel(wave: &[f32]) -> Result<MelFrames> {
    MelFrontend::new().compute(wave)
}

/// Reads a mono 16 kHz WAV file as floats in [-1, 1].
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| OmniError::Wav(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(OmniError::Wav(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(OmniError::Wav(format!(
            "expected {SAMPLE_RATE} Hz, got {} Hz",
            spec.sample_rate
        )));
    }
    match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale).map_err(|e| OmniError::Wav(e.to_string())))
                .collect()
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map_err(|e| OmniError::Wav(e.to_string())))
            .collect(),
    }
}

/// Writes 16-bit PCM mono at `sample_rate`; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| OmniError::Wav(e.to_string()))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| OmniError::Wav(e.to_string()))?;
    }
    w.finalize().map_err(|e| OmniError::Wav(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_counts() {
        let fe = MelFrontend::new();
        assert_eq!(fe.compute(&vec![0.1; 160_000]).unwrap().frames(), 1000);
        assert_eq!(fe.compute(&vec![0.1; 160]).unwrap().frames(), 1);
        assert_eq!(fe.compute(&vec![0.1; 319]).unwrap().frames(), 1);
        assert!(fe.compute(&[]).is_err());
    }

    #[test]
    fn silence_is_constant_floor() {
        let mel = log_mel(&vec![0.0; 1600]).unwrap();
        let floor = (1e-10f64).ln() as f32;
        assert!(mel.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_lands_in_expected_band() {
        let wave: Vec<f32> = (0..16_000)
            .map(|n| (2.0 * std::f32::consts::PI * 1000.0 * n as f32 / 16_000.0).sin())
            .collect();
        let mel = log_mel(&wave).unwrap();
        let row = mel.frame(50);
        let peak = (0..N_MELS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let fb = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE);
        // 1 kHz is bin 25 of the 400-point transform
        let best = (0..N_MELS)
            .max_by(|&a, &b| fb[a * 201 + 25].total_cmp(&fb[b * 201 + 25]))
            .unwrap();
        assert!(peak.abs_diff(best) <= 1, "peak {peak} expected near {best}");
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wave: Vec<f32> = (0..800).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        write_wav(&path, &wave, SAMPLE_RATE).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 800);
        assert!(back.iter().zip(&wave).all(|(a, b)| (a - b).abs() < 1e-4));
    }
}
