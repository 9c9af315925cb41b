//! Magnitude/phase STFT analysis, weighted overlap-add synthesis and the
//! frame utilities the rest of the pipeline consumes.

mod wav;

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::{Error, Result};

pub use wav::{encode_wav, read_wav, write_wav};

/// Denominator floor for the squared-window overlap-add normalization.
const OLA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hamming,
}

impl Window {
    /// Symmetric window of `len` points.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hamming if len == 1 => vec![1.0],
            Window::Hamming => (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub n_bins: usize,
    pub sample_rate: u32,
    pub window: Window,
}

impl Default for StftConfig {
    /// 30 ms Hamming window at 16 kHz, 60% overlap, 512-point FFT.
    fn default() -> Self {
        StftConfig {
            window_len: 480,
            hop: 192,
            fft_len: 512,
            n_bins: 257,
            sample_rate: 16_000,
            window: Window::Hamming,
        }
    }
}

impl StftConfig {
    /// Builds a config with `n_bins` derived from `fft_len`.
    pub fn new(window_len: usize, hop: usize, fft_len: usize, sample_rate: u32) -> Result<Self> {
        let cfg = StftConfig {
            window_len,
            hop,
            fft_len,
            n_bins: fft_len / 2 + 1,
            sample_rate,
            window: Window::Hamming,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 || self.fft_len == 0 || self.sample_rate == 0 {
            return Err(Error::Config(
                "stft fields must be strictly positive".into(),
            ));
        }
        if self.hop >= self.window_len {
            return Err(Error::Config(format!(
                "hop ({}) must be smaller than window_len ({})",
                self.hop, self.window_len
            )));
        }
        if self.window_len > self.fft_len {
            return Err(Error::Config(format!(
                "window_len ({}) exceeds fft_len ({})",
                self.window_len, self.fft_len
            )));
        }
        if self.n_bins != self.fft_len / 2 + 1 {
            return Err(Error::Config(format!(
                "n_bins ({}) must equal fft_len/2 + 1 ({})",
                self.n_bins,
                self.fft_len / 2 + 1
            )));
        }
        Ok(())
    }

    /// Number of analysis frames for a signal of `n_samples`. Every sample
    /// is covered; a trailing partial frame is zero-padded.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples <= self.window_len {
            1
        } else {
            (n_samples - self.window_len).div_ceil(self.hop) + 1
        }
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_len as f64
    }
}

/// Magnitude and phase of a one-sided STFT, `n_bins x n_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mag: Array2<f64>,
    pub phase: Array2<f64>,
    pub config: StftConfig,
    /// Length of the analyzed signal; `istft` trims its output to it.
    pub n_samples: usize,
}

impl Spectrogram {
    pub fn new(
        mag: Array2<f64>,
        phase: Array2<f64>,
        config: StftConfig,
        n_samples: usize,
    ) -> Result<Self> {
        config.validate()?;
        if mag.dim() != phase.dim() {
            return Err(shape_err(format!(
                "magnitude {:?} and phase {:?} differ",
                mag.dim(),
                phase.dim()
            )));
        }
        if mag.nrows() != config.n_bins {
            return Err(shape_err(format!(
                "{} rows but config has {} bins",
                mag.nrows(),
                config.n_bins
            )));
        }
        if mag.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::InvalidInput("magnitudes must be nonnegative".into()));
        }
        Ok(Spectrogram {
            mag,
            phase,
            config,
            n_samples,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.mag.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.mag.ncols()
    }

    /// Same phase and geometry, different magnitude.
    pub fn with_magnitude(&self, mag: Array2<f64>) -> Result<Spectrogram> {
        Spectrogram::new(mag, self.phase.clone(), self.config, self.n_samples)
    }
}

/// Short-time Fourier transform. Frame `t` covers samples
/// `[t * hop, t * hop + window_len)`; only the first `n_bins` points of each
/// FFT are kept.
pub fn stft(audio: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if audio.is_empty() {
        return Err(Error::InvalidInput("empty audio".into()));
    }
    let n_frames = cfg.n_frames(audio.len());
    let window = cfg.window.coefficients(cfg.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_len);

    let mut mag = Array2::zeros((cfg.n_bins, n_frames));
    let mut phase = Array2::zeros((cfg.n_bins, n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_len];
    for t in 0..n_frames {
        let start = t * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (n, w) in window.iter().enumerate() {
            if let Some(&x) = audio.get(start + n) {
                buf[n].re = x * w;
            }
        }
        fft.process(&mut buf);
        for k in 0..cfg.n_bins {
            mag[[k, t]] = buf[k].norm();
            phase[[k, t]] = buf[k].arg();
        }
    }
    Spectrogram::new(mag, phase, *cfg, audio.len())
}

/// Weighted overlap-add inverse of [`stft`], normalized by the summed
/// squared window.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let cfg = &spec.config;
    cfg.validate()?;
    if spec.mag.dim() != spec.phase.dim() || spec.mag.nrows() != cfg.n_bins {
        return Err(shape_err(format!(
            "spectrogram {:?}/{:?} does not match {} bins",
            spec.mag.dim(),
            spec.phase.dim(),
            cfg.n_bins
        )));
    }
    let n_frames = spec.n_frames();
    let window = cfg.window.coefficients(cfg.window_len);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(cfg.fft_len);
    let span = (n_frames.max(1) - 1) * cfg.hop + cfg.window_len;
    let mut out = vec![0.0; span];
    let mut norm = vec![0.0; span];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_len];
    let scale = 1.0 / cfg.fft_len as f64;

    for t in 0..n_frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for k in 0..cfg.n_bins {
            let c = Complex::from_polar(spec.mag[[k, t]], spec.phase[[k, t]]);
            buf[k] = c;
            let mirror = cfg.fft_len - k;
            if k > 0 && mirror < cfg.fft_len && mirror >= cfg.n_bins {
                buf[mirror] = c.conj();
            }
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for (n, w) in window.iter().enumerate() {
            out[start + n] += buf[n].re * scale * w;
            norm[start + n] += w * w;
        }
    }
    for (o, d) in out.iter_mut().zip(&norm) {
        *o /= d.max(OLA_FLOOR);
    }
    out.resize(spec.n_samples, 0.0);
    Ok(out)
}

/// Splits a nonnegative column into its unit-norm direction and its l2 norm.
/// The all-zero column maps to `(0, 0)`.
pub fn normalize_frame(col: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let norm = col.dot(&col).sqrt();
    if norm > 0.0 {
        (col.mapv(|v| v / norm), norm)
    } else {
        (Array1::zeros(col.len()), 0.0)
    }
}

/// Normalizes every column, returning the unit-norm matrix and the norms.
pub fn normalize_columns(mag: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = Array2::zeros(mag.dim());
    let mut norms = Vec::with_capacity(mag.ncols());
    for (t, col) in mag.axis_iter(Axis(1)).enumerate() {
        let (unit, n) = normalize_frame(col);
        out.column_mut(t).assign(&unit);
        norms.push(n);
    }
    (out, norms)
}

/// Concatenates each column with its `(frames - 1) / 2` neighbors on either
/// side. Neighbors past the ends replicate the edge column.
pub fn stack_frames(mag: ArrayView2<f64>, frames: usize) -> Result<Array2<f64>> {
    if frames == 0 || frames % 2 == 0 {
        return Err(Error::Config(format!(
            "frame context must be odd and positive, got {frames}"
        )));
    }
    let (n_bins, n_frames) = mag.dim();
    let half = (frames - 1) / 2;
    let mut out = Array2::zeros((frames * n_bins, n_frames));
    for t in 0..n_frames {
        for j in 0..frames {
            let src = (t + j).saturating_sub(half).min(n_frames.saturating_sub(1));
            out.slice_mut(s![j * n_bins..(j + 1) * n_bins, t])
                .assign(&mag.column(src));
        }
    }
    Ok(out)
}
