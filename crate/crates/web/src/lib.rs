//! Browser demo: trains small models on synthetic audio once, then lets the
//! page remix, separate and inspect the solver.
//!
//! [`DemoCore`] holds the logic and runs natively; the `wasm_bindgen`
//! wrappers only convert errors and data for JavaScript.

use unmix::energymin::solve_frame;
use unmix::metrics::{mix_at_smr, sdr, sir, snr, Mixture};
use unmix::nmf::{decompose_mixture, initial_estimates, train_dictionary};
use unmix::pipeline::{self, initialize_frame, Mode, TrainedModels};
use unmix::signal::{normalize_columns, stack_frames, stft};
use unmix::synth::{music_like, speech_like};
use unmix::{Error, Result, RunConfig, Source};
use wasm_bindgen::prelude::*;

/// Seconds of synthetic training audio per source.
const TRAIN_SECONDS: usize = 8;
/// Seconds of the demo mixture.
const MIX_SECONDS: usize = 3;

/// Configuration sized for interactive use in a browser tab.
pub fn demo_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(seed);
    cfg.nmf.rank = 24;
    cfg.nmf.train_iters = 60;
    cfg.nmf.decompose_iters = 60;
    cfg.dnn.hidden = Some(vec![40, 20]);
    cfg.dnn.rbm_epochs = 5;
    cfg.dnn.bp_epochs = 40;
    cfg.dnn.batch_size = 64;
    cfg.dnn.learning_rate = 0.2;
    cfg.energy.max_iter = 50;
    cfg
}

#[derive(Debug, Clone)]
pub struct SeparationView {
    pub n_bins: usize,
    pub n_frames: usize,
    /// Source-one mask, frame-major (`frame * n_bins + bin`).
    pub mask1: Vec<f64>,
    /// Mixture magnitude in dB, frame-major.
    pub mixture_db: Vec<f64>,
    /// SDR, SIR, SNR of the source-one estimate.
    pub scores: [f64; 3],
    pub audio1: Vec<f64>,
    pub audio2: Vec<f64>,
    pub mixture: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DemoCore {
    pub cfg: RunConfig,
    pub models: TrainedModels,
    seed: u64,
}

impl DemoCore {
    pub fn train(seed: u64) -> Result<Self> {
        let cfg = demo_config(seed);
        let rate = cfg.stft.sample_rate;
        let n = TRAIN_SECONDS * rate as usize;
        let a = speech_like(n, rate, seed.wrapping_mul(2));
        let b = music_like(n, rate, seed.wrapping_mul(2) + 1);
        let out = pipeline::train_all(&a, &b, &cfg)?;
        Ok(DemoCore {
            cfg,
            models: out.models,
            seed,
        })
    }

    pub fn mixture(&self, smr_db: f64) -> Result<Mixture> {
        let rate = self.cfg.stft.sample_rate;
        let n = MIX_SECONDS * rate as usize;
        let s = speech_like(n, rate, self.seed.wrapping_add(1000));
        let m = music_like(n, rate, self.seed.wrapping_add(2000));
        mix_at_smr(&s, &m, smr_db)
    }

    /// Separates the demo mixture at `smr_db` with the given energy weights.
    pub fn separate(
        &self,
        smr_db: f64,
        lambda: f64,
        beta: f64,
        nmf_only: bool,
    ) -> Result<SeparationView> {
        let mut cfg = self.cfg.clone();
        cfg.energy.lambda = lambda;
        cfg.energy.beta = beta;
        let mix = self.mixture(smr_db)?;
        let mode = if nmf_only { Mode::NmfOnly } else { Mode::Full };
        let r = pipeline::separate(&mix.mixture, &self.models, &cfg, mode)?;
        let (n_bins, n_frames) = r.mask1.dim();
        let mask1 = r.mask1.t().iter().copied().collect();
        let mixture_db = r
            .mixture
            .mag
            .t()
            .iter()
            .map(|&v| 20.0 * v.max(1e-6).log10())
            .collect();
        let scores = [
            sdr(&r.audio1, &mix.source1)?,
            sir(&r.audio1, &mix.source1, &mix.source2)?,
            snr(&r.audio1, &mix.source1)?,
        ];
        Ok(SeparationView {
            n_bins,
            n_frames,
            mask1,
            mixture_db,
            scores,
            audio1: r.audio1,
            audio2: r.audio2,
            mixture: mix.mixture,
        })
    }

    /// Divergence after every iteration of dictionary training on source one.
    pub fn nmf_trace(&self, rank: usize, iters: usize) -> Result<Vec<f64>> {
        let rate = self.cfg.stft.sample_rate;
        let audio = speech_like(2 * rate as usize, rate, self.seed.wrapping_mul(2));
        let mag = stft(&audio, &self.cfg.stft)?.mag;
        Ok(train_dictionary(mag.view(), rank, iters, self.seed, Source::One)?.trace)
    }

    /// Total energy after every accepted solver step for one mixture frame.
    pub fn frame_descent(&self, smr_db: f64, frame: usize) -> Result<Vec<f64>> {
        let mix = self.mixture(smr_db)?;
        let y = stft(&mix.mixture, &self.cfg.stft)?.mag;
        if frame >= y.ncols() {
            return Err(Error::InvalidInput(format!(
                "frame {frame} of {}",
                y.ncols()
            )));
        }
        let m = &self.models;
        let d = decompose_mixture(
            y.view(),
            &m.nmf1,
            &m.nmf2,
            self.cfg.nmf.decompose_iters,
            self.cfg.nmf.seed,
        )?;
        let (s1, s2) = initial_estimates(
            y.view(),
            m.nmf1.dictionary.view(),
            m.nmf2.dictionary.view(),
            &d.gains,
        )?;
        let e = &self.cfg.energy;
        let Some(mut p) = initialize_frame(
            y.column(frame),
            s1.column(frame),
            s2.column(frame),
            e.lambda,
            e.beta,
        ) else {
            return Ok(Vec::new());
        };
        let l = self.cfg.dnn.frames;
        p.x1 = stack_frames(normalize_columns(s1.view()).0.view(), l)?
            .column(frame)
            .to_owned();
        p.x2 = stack_frames(normalize_columns(s2.view()).0.view(), l)?
            .column(frame)
            .to_owned();
        Ok(solve_frame(&m.dnn, p, e)?.trace)
    }
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    core: DemoCore,
}

#[wasm_bindgen]
impl Demo {
    /// Trains the demo models; takes a few seconds.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        Ok(Demo {
            core: DemoCore::train(seed as u64).map_err(js_err)?,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.core.cfg.stft.sample_rate
    }

    pub fn separate(
        &self,
        smr_db: f64,
        lambda: f64,
        beta: f64,
        nmf_only: bool,
    ) -> Result<Separation, JsError> {
        Ok(Separation {
            view: self
                .core
                .separate(smr_db, lambda, beta, nmf_only)
                .map_err(js_err)?,
        })
    }

    pub fn nmf_trace(&self, rank: usize, iters: usize) -> Result<Vec<f64>, JsError> {
        self.core.nmf_trace(rank, iters).map_err(js_err)
    }

    pub fn frame_descent(&self, smr_db: f64, frame: usize) -> Result<Vec<f64>, JsError> {
        self.core.frame_descent(smr_db, frame).map_err(js_err)
    }
}

#[wasm_bindgen]
pub struct Separation {
    view: SeparationView,
}

#[wasm_bindgen]
impl Separation {
    pub fn n_bins(&self) -> usize {
        self.view.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.view.n_frames
    }

    pub fn mask1(&self) -> Vec<f64> {
        self.view.mask1.clone()
    }

    pub fn mixture_db(&self) -> Vec<f64> {
        self.view.mixture_db.clone()
    }

    /// `[sdr, sir, snr]` of the source-one estimate in dB.
    pub fn scores(&self) -> Vec<f64> {
        self.view.scores.to_vec()
    }

    pub fn audio1(&self) -> Vec<f32> {
        self.view.audio1.iter().map(|&v| v as f32).collect()
    }

    pub fn audio2(&self) -> Vec<f32> {
        self.view.audio2.iter().map(|&v| v as f32).collect()
    }

    pub fn mixture(&self) -> Vec<f32> {
        self.view.mixture.iter().map(|&v| v as f32).collect()
    }
}
