//! Synthetic two-source audio for tests, demos and benchmarks.
//!
//! Source one is noise shaped into "syllables": short segments of band-pass
//! filtered noise with a moving center frequency and a smooth amplitude
//! envelope, separated by short pauses. Source two is harmonic tones with
//! decaying envelopes, one or two notes at a time. Both occupy roughly
//! 100 Hz to 4 kHz, so they overlap in frequency and differ in spectral
//! shape: flat bands against harmonic combs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RMS of every generated signal.
pub const TARGET_RMS: f64 = 0.1;

fn normalize_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = crate::metrics::rms(&x);
    if rms > 0.0 {
        let g = TARGET_RMS / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Direct-form biquad band-pass with unit peak gain.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new() -> Self {
        BandPass {
            b0: 0.0,
            b2: 0.0,
            a1: 0.0,
            a2: 0.0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tune(&mut self, center_hz: f64, q: f64, sample_rate: f64) {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        self.b0 = alpha / a0;
        self.b2 = -alpha / a0;
        self.a1 = -2.0 * w0.cos() / a0;
        self.a2 = (1.0 - alpha) / a0;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Noise syllables, `n_samples` long.
pub fn speech_like(n_samples: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n_samples];
    let mut lo = BandPass::new();
    let mut hi = BandPass::new();
    let mut t = 0;
    while t < n_samples {
        let len = ((rng.random_range(0.12..0.30)) * fs) as usize;
        let pause = ((rng.random_range(0.0..0.08)) * fs) as usize;
        let start_hz: f64 = rng.random_range(400.0..2500.0);
        let end_hz: f64 = (start_hz * rng.random_range(0.7..1.4)).clamp(300.0, 3500.0);
        let amp: f64 = rng.random_range(0.4..1.0);
        let q = rng.random_range(0.4..1.0);
        for i in 0..len.min(n_samples - t) {
            let p = i as f64 / len as f64;
            if i % 32 == 0 {
                let c = start_hz + (end_hz - start_hz) * p;
                lo.tune(c, q, fs);
                hi.tune(c, q, fs);
            }
            let env = amp * (PI * p).sin().powi(2);
            let noise: f64 = rng.random_range(-1.0..1.0);
            out[t + i] = env * hi.step(lo.step(noise));
        }
        t += len + pause;
    }
    normalize_rms(out)
}

/// Harmonic notes, `n_samples` long.
pub fn music_like(n_samples: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n_samples];
    let mut t = 0;
    while t < n_samples {
        let len = ((rng.random_range(0.25..0.6)) * fs) as usize;
        let voices = if rng.random_bool(0.4) { 2 } else { 1 };
        for _ in 0..voices {
            // A semitone grid from 110 Hz to about 880 Hz.
            let f0 = 110.0 * 2f64.powf(rng.random_range(0..36) as f64 / 12.0);
            let decay = rng.random_range(2.0..6.0);
            let amp: f64 = rng.random_range(0.5..1.0);
            let n_harm = ((4000.0 / f0) as usize).max(1);
            let phases: Vec<f64> = (0..n_harm)
                .map(|_| rng.random_range(0.0..2.0 * PI))
                .collect();
            let end = (t + len).min(n_samples);
            for (i, o) in out[t..end].iter_mut().enumerate() {
                let time = i as f64 / fs;
                let attack = (time / 0.01).min(1.0);
                let env = amp * attack * (-decay * time).exp();
                let mut s = 0.0;
                for (k, ph) in phases.iter().enumerate() {
                    let h = (k + 1) as f64;
                    s += (2.0 * PI * f0 * h * time + ph).sin() / h;
                }
                *o += env * s;
            }
        }
        t += len;
    }
    normalize_rms(out)
}
