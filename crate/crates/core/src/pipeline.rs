//! Training and separation stages.
//!
//! Training learns one IS-NMF dictionary per source and a joint classifier on
//! unit-norm magnitude frames. Separation decomposes the mixture against both
//! dictionaries, turns the soft-mask estimates into per-frame starting
//! points, solves every frame's energy independently and rebuilds both
//! sources with a Wiener mask on the mixture magnitude and the mixture phase.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dnn::{accuracy, pretrain_rbm_stack, train_supervised, DnnModel};
use crate::energymin::{solve_frame, EnergyBreakdown, FrameProblem, FrameSolution, Termination};
use crate::error::shape_err;
use crate::nmf::{
    decompose_mixture, initial_estimates, source_parts, train_dictionary, NmfFit, NmfModel,
};
use crate::signal::{
    istft, normalize_columns, normalize_frame, stack_frames, stft, Spectrogram, StftConfig,
};
use crate::{Error, Result, Source};

/// Wiener denominators at or below this split the bin evenly.
const WIENER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub nmf1: NmfModel,
    pub nmf2: NmfModel,
    pub dnn: DnnModel,
}

impl TrainedModels {
    /// Checks that the models fit each other and the STFT configuration.
    pub fn check(&self, stft_cfg: &StftConfig) -> Result<()> {
        if self.nmf1.source != Source::One || self.nmf2.source != Source::Two {
            return Err(Error::InvalidInput(
                "NMF models must be for source 1 and source 2, in that order".into(),
            ));
        }
        let n_bins = stft_cfg.n_bins;
        for m in [&self.nmf1, &self.nmf2] {
            if m.n_features() != n_bins {
                return Err(shape_err(format!(
                    "NMF model for source {} has {} features, STFT gives {n_bins} bins",
                    m.source.id(),
                    m.n_features()
                )));
            }
        }
        if self.dnn.frame_dim() != n_bins {
            return Err(shape_err(format!(
                "classifier expects {}-bin frames, STFT gives {n_bins}",
                self.dnn.frame_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTraining {
    pub model: DnnModel,
    pub rbm_errors: Vec<Vec<f64>>,
    pub bp_loss: Vec<f64>,
    /// Frame accuracy on the training set.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub models: TrainedModels,
    pub nmf_traces: [Vec<f64>; 2],
    pub classifier: ClassifierTraining,
}

pub fn magnitude(audio: &[f64], cfg: &StftConfig) -> Result<Array2<f64>> {
    Ok(stft(audio, cfg)?.mag)
}

/// Trains one source's dictionary on the magnitude spectrogram of `audio`.
pub fn train_nmf(audio: &[f64], source: Source, cfg: &RunConfig) -> Result<NmfFit> {
    cfg.validate()?;
    let mag = magnitude(audio, &cfg.stft)?;
    train_dictionary(
        mag.view(),
        cfg.nmf.rank,
        cfg.nmf.train_iters,
        cfg.nmf.seed,
        source,
    )
}

/// Classifier inputs for one source: unit-norm frames stacked with their
/// neighbors, keeping only frames whose center is not silent.
pub fn classifier_inputs(mag: &Array2<f64>, frames: usize) -> Result<Array2<f64>> {
    let (unit, norms) = normalize_columns(mag.view());
    let stacked = stack_frames(unit.view(), frames)?;
    let keep: Vec<usize> = (0..norms.len()).filter(|&t| norms[t] > 0.0).collect();
    Ok(stacked.select(Axis(1), &keep))
}

/// Inputs and one-hot labels for both sources, source one first.
pub fn labeled_dataset(
    mag1: &Array2<f64>,
    mag2: &Array2<f64>,
    frames: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let x1 = classifier_inputs(mag1, frames)?;
    let x2 = classifier_inputs(mag2, frames)?;
    let (n1, n2) = (x1.ncols(), x2.ncols());
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidInput(
            "a training source has no non-silent frames".into(),
        ));
    }
    let x = ndarray::concatenate(Axis(1), &[x1.view(), x2.view()]).expect("same row count");
    let mut labels = Array2::zeros((2, n1 + n2));
    labels.row_mut(0).slice_mut(ndarray::s![..n1]).fill(1.0);
    labels.row_mut(1).slice_mut(ndarray::s![n1..]).fill(1.0);
    Ok((x, labels))
}

/// RBM pretraining followed by supervised backprop on labeled frames.
pub fn train_classifier(
    mag1: &Array2<f64>,
    mag2: &Array2<f64>,
    cfg: &RunConfig,
) -> Result<ClassifierTraining> {
    cfg.validate()?;
    if mag1.nrows() != cfg.stft.n_bins || mag2.nrows() != cfg.stft.n_bins {
        return Err(shape_err(
            "training spectrograms do not match the STFT bin count",
        ));
    }
    let frames = cfg.dnn.frames;
    let (x, labels) = labeled_dataset(mag1, mag2, frames)?;
    let train = cfg.dnn.train_config();
    let sizes = cfg.dnn.layer_sizes(cfg.stft.n_bins);
    let stack = pretrain_rbm_stack(x.view(), &sizes, frames, &train)?;
    let fit = train_supervised(stack.model, x.view(), labels.view(), &train)?;
    let train_accuracy = accuracy(&fit.model, x.view(), labels.view())?;
    Ok(ClassifierTraining {
        model: fit.model,
        rbm_errors: stack.errors,
        bp_loss: fit.loss,
        train_accuracy,
    })
}

/// Both dictionaries and the classifier.
pub fn train_all(audio1: &[f64], audio2: &[f64], cfg: &RunConfig) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let mag1 = magnitude(audio1, &cfg.stft)?;
    let mag2 = magnitude(audio2, &cfg.stft)?;
    let fit1 = train_dictionary(
        mag1.view(),
        cfg.nmf.rank,
        cfg.nmf.train_iters,
        cfg.nmf.seed,
        Source::One,
    )?;
    let fit2 = train_dictionary(
        mag2.view(),
        cfg.nmf.rank,
        cfg.nmf.train_iters,
        cfg.nmf.seed.wrapping_add(1),
        Source::Two,
    )?;
    let classifier = train_classifier(&mag1, &mag2, cfg)?;
    Ok(TrainingOutcome {
        models: TrainedModels {
            nmf1: fit1.model,
            nmf2: fit2.model,
            dnn: classifier.model.clone(),
        },
        nmf_traces: [fit1.trace, fit2.trace],
        classifier,
    })
}

/// Starting point for one frame from the NMF estimates.
///
/// `x_i = s_i / ||s_i||`, `u = ||s_1|| / ||y||`, `v = ||s_2|| / ||y||`, and
/// `y` is scaled to unit norm. Returns `None` for a silent mixture frame.
pub fn initialize_frame(
    y: ArrayView1<f64>,
    s1: ArrayView1<f64>,
    s2: ArrayView1<f64>,
    lambda: f64,
    beta: f64,
) -> Option<FrameProblem> {
    let (y_unit, y_norm) = normalize_frame(y);
    if y_norm == 0.0 {
        return None;
    }
    let (x1, n1) = normalize_frame(s1);
    let (x2, n2) = normalize_frame(s2);
    Some(FrameProblem {
        y: y_unit,
        x1,
        x2,
        u: n1 / y_norm,
        v: n2 / y_norm,
        lambda,
        beta,
    })
}

/// `m1 = (u x1)^2 / ((u x1)^2 + (v x2)^2)`, `m2 = 1 - m1`; bins where both
/// vanish get 0.5.
pub fn wiener_masks(
    x1: ArrayView1<f64>,
    x2: ArrayView1<f64>,
    u: f64,
    v: f64,
) -> (Array1<f64>, Array1<f64>) {
    let m1: Array1<f64> = x1
        .iter()
        .zip(x2)
        .map(|(&a, &b)| {
            let p1 = (u * a).powi(2);
            let p2 = (v * b).powi(2);
            let den = p1 + p2;
            if den > WIENER_FLOOR {
                p1 / den
            } else {
                0.5
            }
        })
        .collect();
    let m2 = m1.mapv(|m| 1.0 - m);
    (m1, m2)
}

/// Applies the Wiener masks to an unnormalized mixture column.
pub fn wiener_reconstruct(
    x1: ArrayView1<f64>,
    x2: ArrayView1<f64>,
    u: f64,
    v: f64,
    y: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let (m1, _) = wiener_masks(x1, x2, u, v);
    let s1 = &m1 * &y;
    let s2 = &y - &s1;
    (s1, s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// NMF initialization, energy minimization and Wiener reconstruction.
    Full,
    /// The NMF soft-mask estimates only.
    NmfOnly,
}

/// One line of the run report.
#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub skipped: bool,
    pub u: f64,
    pub v: f64,
    pub initial: Option<EnergyBreakdown>,
    #[serde(rename = "final")]
    pub final_energy: Option<EnergyBreakdown>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub mask1_mean: f64,
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub mode: Mode,
    pub mixture: Spectrogram,
    pub s1_hat: Spectrogram,
    pub s2_hat: Spectrogram,
    pub mask1: Array2<f64>,
    pub mask2: Array2<f64>,
    /// Per-frame `(u, v)` after solving (or at initialization for NMF only).
    pub gains: Vec<(f64, f64)>,
    pub frames: Vec<FrameReport>,
    /// Divergence of the mixture decomposition after every iteration.
    pub nmf_trace: Vec<f64>,
    /// Per-frame solver traces; empty for NMF only.
    pub energy_traces: Vec<Vec<f64>>,
    pub audio1: Vec<f64>,
    pub audio2: Vec<f64>,
}

impl SeparationResult {
    /// One JSON object per frame, one per line.
    pub fn write_report<W: Write>(&self, mut out: W) -> Result<()> {
        for f in &self.frames {
            serde_json::to_writer(&mut out, f).map_err(|e| Error::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn solve_all(
    problems: Vec<Option<FrameProblem>>,
    model: &DnnModel,
    cfg: &RunConfig,
) -> Result<Vec<Option<FrameSolution>>> {
    let solve = |p: Option<FrameProblem>| p.map(|p| solve_frame(model, p, &cfg.energy)).transpose();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        problems.into_par_iter().map(solve).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        problems.into_iter().map(solve).collect()
    }
}

/// Separates `mix` into two sources.
pub fn separate(
    mix: &[f64],
    models: &TrainedModels,
    cfg: &RunConfig,
    mode: Mode,
) -> Result<SeparationResult> {
    cfg.validate()?;
    models.check(&cfg.stft)?;
    if mode == Mode::Full && models.dnn.context_frames != cfg.dnn.frames {
        return Err(Error::Config(format!(
            "classifier uses {} context frames, configuration asks for {}",
            models.dnn.context_frames, cfg.dnn.frames
        )));
    }
    let mixture = stft(mix, &cfg.stft)?;
    let y = &mixture.mag;
    let decomposition = decompose_mixture(
        y.view(),
        &models.nmf1,
        &models.nmf2,
        cfg.nmf.decompose_iters,
        cfg.nmf.seed,
    )?;
    let (s_init1, s_init2) = initial_estimates(
        y.view(),
        models.nmf1.dictionary.view(),
        models.nmf2.dictionary.view(),
        &decomposition.gains,
    )?;
    let n_frames = mixture.n_frames();
    let mut mask1 = Array2::zeros(y.dim());
    let mut frames = Vec::with_capacity(n_frames);
    let mut gains = Vec::with_capacity(n_frames);
    let mut energy_traces = Vec::new();

    match mode {
        Mode::NmfOnly => {
            let (p1, p2) = source_parts(&models.nmf1, &models.nmf2, &decomposition.gains);
            let (m1, _) = crate::nmf::soft_masks(p1.view(), p2.view())?;
            mask1 = m1;
            for t in 0..n_frames {
                let (u, v) = match initialize_frame(
                    y.column(t),
                    s_init1.column(t),
                    s_init2.column(t),
                    0.0,
                    0.0,
                ) {
                    Some(p) => (p.u, p.v),
                    None => (0.0, 0.0),
                };
                gains.push((u, v));
                frames.push(FrameReport {
                    frame: t,
                    skipped: y.column(t).iter().all(|&v| v == 0.0),
                    u,
                    v,
                    initial: None,
                    final_energy: None,
                    iterations: 0,
                    termination: None,
                    mask1_mean: mask1.column(t).mean().unwrap_or(0.5),
                });
            }
        }
        Mode::Full => {
            let l = cfg.dnn.frames;
            let (unit1, _) = normalize_columns(s_init1.view());
            let (unit2, _) = normalize_columns(s_init2.view());
            let ctx1 = stack_frames(unit1.view(), l)?;
            let ctx2 = stack_frames(unit2.view(), l)?;
            let problems: Vec<Option<FrameProblem>> = (0..n_frames)
                .map(|t| {
                    initialize_frame(
                        y.column(t),
                        s_init1.column(t),
                        s_init2.column(t),
                        cfg.energy.lambda,
                        cfg.energy.beta,
                    )
                    .map(|mut p| {
                        p.x1 = ctx1.column(t).to_owned();
                        p.x2 = ctx2.column(t).to_owned();
                        p
                    })
                })
                .collect();
            let solutions = solve_all(problems, &models.dnn, cfg)?;
            for (t, sol) in solutions.into_iter().enumerate() {
                let report = match sol {
                    Some(sol) => {
                        let p = &sol.problem;
                        let (m1, _) = wiener_masks(p.x1_center(), p.x2_center(), p.u, p.v);
                        mask1.column_mut(t).assign(&m1);
                        gains.push((p.u, p.v));
                        energy_traces.push(sol.trace.clone());
                        FrameReport {
                            frame: t,
                            skipped: false,
                            u: p.u,
                            v: p.v,
                            initial: Some(sol.initial),
                            final_energy: Some(sol.final_energy),
                            iterations: sol.iterations,
                            termination: Some(sol.termination),
                            mask1_mean: m1.mean().unwrap_or(0.5),
                        }
                    }
                    None => {
                        mask1.column_mut(t).fill(0.5);
                        gains.push((0.0, 0.0));
                        energy_traces.push(Vec::new());
                        FrameReport {
                            frame: t,
                            skipped: true,
                            u: 0.0,
                            v: 0.0,
                            initial: None,
                            final_energy: None,
                            iterations: 0,
                            termination: None,
                            mask1_mean: 0.5,
                        }
                    }
                };
                frames.push(report);
            }
        }
    }

    let mask2 = mask1.mapv(|m| 1.0 - m);
    let mag1 = &mask1 * y;
    let mag2 = y - &mag1;
    let s1_hat = mixture.with_magnitude(mag1)?;
    let s2_hat = mixture.with_magnitude(mag2)?;
    let audio1 = istft(&s1_hat)?;
    let audio2 = istft(&s2_hat)?;
    Ok(SeparationResult {
        mode,
        mixture,
        s1_hat,
        s2_hat,
        mask1,
        mask2,
        gains,
        frames,
        nmf_trace: decomposition.trace,
        energy_traces,
        audio1,
        audio2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energymin::error_energy;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initialization_of_a_partition_has_zero_error_energy() {
        let y = array![3.0, 1.0, 2.0, 0.5];
        let s1 = array![1.0, 0.25, 2.0, 0.0];
        let s2 = &y - &s1;
        let p = initialize_frame(y.view(), s1.view(), s2.view(), 5.0, 3.0).unwrap();
        let e = error_energy(p.x1.view(), p.x2.view(), p.y.view(), p.u, p.v);
        assert!(e < 1e-30);
        let recon = &p.x1 * p.u + &p.x2 * p.v;
        let (yn, _) = normalize_frame(y.view());
        assert!((recon - yn).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn zero_second_estimate() {
        let y = array![1.0, 2.0];
        let p = initialize_frame(y.view(), y.view(), array![0.0, 0.0].view(), 5.0, 3.0).unwrap();
        assert_eq!(p.v, 0.0);
        assert!(p.x2.iter().all(|&x| x == 0.0));
        assert!((p.u - 1.0).abs() < 1e-15);
        assert!(initialize_frame(array![0.0, 0.0].view(), y.view(), y.view(), 5.0, 3.0).is_none());
    }

    #[test]
    fn gains_of_partitioning_estimates_sum_to_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let y = Array1::from_shape_simple_fn(16, || rng.random_range(0.0..1.0));
            let m = Array1::from_shape_simple_fn(16, || rng.random_range(0.0..1.0));
            let s1 = &m * &y;
            let s2 = &y - &s1;
            let p = initialize_frame(y.view(), s1.view(), s2.view(), 5.0, 3.0).unwrap();
            assert!(p.u >= 0.0 && p.v >= 0.0);
            assert!(p.u + p.v >= 1.0 - 1e-9, "{} {}", p.u, p.v);
        }
    }

    #[test]
    fn wiener_examples() {
        let y = array![4.0, 6.0];
        let (s1, s2) = wiener_reconstruct(
            array![1.0, 0.0].view(),
            array![0.0, 1.0].view(),
            1.0,
            2.0,
            y.view(),
        );
        assert_eq!((s1, s2), (array![4.0, 0.0], array![0.0, 6.0]));

        let x = array![0.3, 0.4, 0.5];
        let (s1, s2) =
            wiener_reconstruct(x.view(), x.view(), 0.0, 0.0, array![1.0, 1.0, 1.0].view());
        assert_eq!(s1, s2);
        let (s1, s2) = wiener_reconstruct(
            x.view(),
            array![0.1, 0.7, 0.2].view(),
            1.0,
            0.0,
            array![1.0, 2.0, 3.0].view(),
        );
        assert_eq!((s1, s2), (array![1.0, 2.0, 3.0], array![0.0, 0.0, 0.0]));
        let (m1, m2) = wiener_masks(x.view(), (&x * 2.0).view(), 2.0, 1.0);
        assert!(m1.iter().chain(m2.iter()).all(|&m| (m - 0.5).abs() < 1e-15));
    }

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.stft = StftConfig::new(128, 64, 128, 8000).unwrap();
        cfg.nmf.rank = 8;
        cfg.nmf.train_iters = 30;
        cfg.nmf.decompose_iters = 30;
        cfg.dnn.hidden = Some(vec![16, 8]);
        cfg.dnn.rbm_epochs = 5;
        cfg.dnn.bp_epochs = 40;
        cfg.dnn.batch_size = 32;
        cfg.dnn.learning_rate = 0.5;
        cfg.energy.max_iter = 30;
        cfg
    }

    fn tiny_sources() -> (Vec<f64>, Vec<f64>) {
        (
            crate::synth::speech_like(8000, 8000, 1),
            crate::synth::music_like(8000, 8000, 2),
        )
    }

    #[test]
    fn end_to_end_partitions_and_descends() {
        let cfg = tiny_config();
        let (a, b) = tiny_sources();
        let out = train_all(&a, &b, &cfg).unwrap();
        let mix = crate::metrics::mix_at_smr(&a[..4000], &b[..4000], 0.0)
            .unwrap()
            .mixture;
        for mode in [Mode::Full, Mode::NmfOnly] {
            let r = separate(&mix, &out.models, &cfg, mode).unwrap();
            let sum = &r.s1_hat.mag + &r.s2_hat.mag;
            assert!((sum - &r.mixture.mag).iter().all(|d| d.abs() < 1e-9));
            let msum = &r.mask1 + &r.mask2;
            assert!(msum.iter().all(|s| (s - 1.0).abs() < 1e-9));
            assert!(r.mask1.iter().all(|&m| (0.0..=1.0).contains(&m)));
            assert_eq!(r.frames.len(), r.mixture.n_frames());
            assert_eq!(r.audio1.len(), mix.len());
            for f in &r.frames {
                if let (Some(i), Some(e)) = (f.initial, f.final_energy) {
                    assert!(e.total <= i.total);
                }
            }
            let mut buf = Vec::new();
            r.write_report(&mut buf).unwrap();
            assert_eq!(
                String::from_utf8(buf).unwrap().lines().count(),
                r.frames.len()
            );
        }
    }

    #[test]
    fn separation_is_deterministic_and_solutions_match_their_energy() {
        let cfg = tiny_config();
        let (a, b) = tiny_sources();
        let out = train_all(&a, &b, &cfg).unwrap();
        let again = train_all(&a, &b, &cfg).unwrap();
        assert_eq!(out.models, again.models);
        let mix = crate::metrics::mix_at_smr(&a[..3000], &b[..3000], 5.0)
            .unwrap()
            .mixture;
        let r1 = separate(&mix, &out.models, &cfg, Mode::Full).unwrap();
        let r2 = separate(&mix, &out.models, &cfg, Mode::Full).unwrap();
        assert_eq!(r1.audio1, r2.audio1);
        assert_eq!(r1.mask1, r2.mask1);
        let f = r1.frames.iter().find(|f| !f.skipped).unwrap();
        assert!(f.final_energy.unwrap().total.is_finite());
    }

    #[test]
    fn mismatched_models_fail_before_processing() {
        let cfg = tiny_config();
        let models = TrainedModels {
            nmf1: NmfModel::new(Array2::ones((10, 2)), Source::One).unwrap(),
            nmf2: NmfModel::new(Array2::ones((10, 2)), Source::Two).unwrap(),
            dnn: DnnModel::zeros(&[10, 3, 2], 1).unwrap(),
        };
        assert!(separate(&[0.1; 1000], &models, &cfg, Mode::Full).is_err());
        let mut cfg3 = tiny_config();
        cfg3.dnn.frames = 3;
        let ok = TrainedModels {
            nmf1: NmfModel::new(Array2::ones((65, 2)), Source::One).unwrap(),
            nmf2: NmfModel::new(Array2::ones((65, 2)), Source::Two).unwrap(),
            dnn: DnnModel::zeros(&[65, 3, 2], 1).unwrap(),
        };
        assert!(separate(&[0.1; 1000], &ok, &cfg, Mode::Full).is_ok());
        assert!(separate(&[0.1; 1000], &ok, &cfg3, Mode::Full).is_err());
    }
}
