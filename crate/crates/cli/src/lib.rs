//! The `unmix` command line: train models, separate mixtures, score results.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use unmix::metrics::{self, EvalRow};
use unmix::persist::{load_dnn, load_nmf, save_dnn, save_nmf, write_atomic};
use unmix::pipeline::{self, Mode, TrainedModels};
use unmix::signal::{read_wav, write_wav};
use unmix::{RunConfig, Source};

#[derive(Debug, Parser)]
#[command(
    name = "unmix",
    version,
    about = "Single-channel two-source separation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Sectioned key-value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized stage, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Context frames per classifier input (odd).
    #[arg(long = "frames", global = true, value_name = "L")]
    pub frames: Option<usize>,
    /// Worker threads for per-frame solving.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn an IS-NMF dictionary for one source.
    TrainNmf {
        /// Which source the audio belongs to (1 or 2).
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        source: u8,
        #[arg(long)]
        out: PathBuf,
        /// Training audio, concatenated in order.
        #[arg(required = true)]
        wavs: Vec<PathBuf>,
    },
    /// Train the joint two-output classifier.
    TrainDnn {
        #[arg(long = "source1", required = true, num_args = 1..)]
        source1: Vec<PathBuf>,
        #[arg(long = "source2", required = true, num_args = 1..)]
        source2: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Separate a mixture into two WAV files plus a per-frame report.
    Separate {
        mix: PathBuf,
        #[arg(long)]
        nmf1: Option<PathBuf>,
        #[arg(long)]
        nmf2: Option<PathBuf>,
        #[arg(long)]
        dnn: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Skip energy minimization and output the NMF soft-mask estimates.
        #[arg(long)]
        nmf_only: bool,
    },
    /// Score two estimates against two references and write CSV rows.
    Evaluate {
        #[arg(long, num_args = 2, required = true)]
        estimates: Vec<PathBuf>,
        #[arg(long, num_args = 2, required = true)]
        references: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Row label; defaults to the first estimate's file stem.
        #[arg(long)]
        utterance: Option<String>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        smr: f64,
        #[arg(long, default_value = "dnn")]
        method: String,
        /// Add rows to an existing CSV instead of replacing it.
        #[arg(long)]
        append: bool,
    },
    /// Mix two signals at a given source-to-source level ratio.
    Mix {
        #[arg(long)]
        source1: PathBuf,
        #[arg(long)]
        source2: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        smr: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the level-matched references here.
        #[arg(long)]
        refs_dir: Option<PathBuf>,
    },
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    Ok(cfg)
}

fn effective_config(g: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = load_config(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(l) = g.frames {
        cfg.dnn.frames = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and concatenates WAV files, requiring the configured sample rate.
fn read_audio(paths: &[PathBuf], cfg: &RunConfig) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for p in paths {
        let (samples, rate) = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
        ensure!(
            rate == cfg.stft.sample_rate,
            "{} is sampled at {rate} Hz, configuration expects {} Hz",
            p.display(),
            cfg.stft.sample_rate
        );
        out.extend(samples);
    }
    ensure!(!out.is_empty(), "no audio samples in {paths:?}");
    Ok(out)
}

fn read_any_rate(p: &Path) -> Result<(Vec<f64>, u32)> {
    read_wav(p).with_context(|| format!("reading {}", p.display()))
}

fn pick(arg: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    arg.clone()
        .or_else(|| fallback.clone())
        .with_context(|| format!("no {what} given on the command line or in [paths]"))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.global)?;
    if let Some(n) = cli.global.threads {
        ensure!(n > 0, "--threads must be positive");
        // Ignore the error if a pool already exists (repeated calls in one process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::TrainNmf { source, out, wavs } => {
            let audio = read_audio(&wavs, &cfg)?;
            let source = Source::from_id(source)?;
            let fit = pipeline::train_nmf(&audio, source, &cfg)?;
            save_nmf(&out, &fit.model)?;
            println!(
                "source {}: divergence {:.6e} -> {:.6e} over {} iterations, wrote {}",
                source.id(),
                fit.trace[0],
                fit.trace.last().copied().unwrap_or(f64::NAN),
                fit.trace.len() - 1,
                out.display()
            );
        }
        Command::TrainDnn {
            source1,
            source2,
            out,
        } => {
            let a = read_audio(&source1, &cfg)?;
            let b = read_audio(&source2, &cfg)?;
            let mag1 = pipeline::magnitude(&a, &cfg.stft)?;
            let mag2 = pipeline::magnitude(&b, &cfg.stft)?;
            let t = pipeline::train_classifier(&mag1, &mag2, &cfg)?;
            save_dnn(&out, &t.model)?;
            println!(
                "layers {:?}, final loss {:.6}, training accuracy {:.4}, wrote {}",
                t.model.layer_sizes(),
                t.bp_loss.last().copied().unwrap_or(f64::NAN),
                t.train_accuracy,
                out.display()
            );
        }
        Command::Separate {
            mix,
            nmf1,
            nmf2,
            dnn,
            out_dir,
            nmf_only,
        } => {
            let paths = &cfg.paths;
            let out_dir = pick(&out_dir, &paths.out_dir, "output directory")?;
            let models = TrainedModels {
                nmf1: load_nmf(&pick(&nmf1, &paths.nmf1, "source-1 NMF model")?)?,
                nmf2: load_nmf(&pick(&nmf2, &paths.nmf2, "source-2 NMF model")?)?,
                dnn: load_dnn(&pick(&dnn, &paths.dnn, "classifier model")?)?,
            };
            let audio = read_audio(std::slice::from_ref(&mix), &cfg)?;
            let mode = if nmf_only { Mode::NmfOnly } else { Mode::Full };
            let result = pipeline::separate(&audio, &models, &cfg, mode)?;
            fs::create_dir_all(&out_dir)?;
            let mut report = Vec::new();
            result.write_report(&mut report)?;
            write_wav(
                out_dir.join("source1.wav"),
                &result.audio1,
                cfg.stft.sample_rate,
            )?;
            write_wav(
                out_dir.join("source2.wav"),
                &result.audio2,
                cfg.stft.sample_rate,
            )?;
            write_atomic(&out_dir.join("report.jsonl"), &report)?;
            let solved = result.frames.iter().filter(|f| !f.skipped).count();
            println!(
                "{} frames ({solved} solved), wrote {}",
                result.frames.len(),
                out_dir.display()
            );
        }
        Command::Evaluate {
            estimates,
            references,
            out,
            utterance,
            smr,
            method,
            append,
        } => {
            let est: Vec<_> = estimates
                .iter()
                .map(|p| read_any_rate(p))
                .collect::<Result<_>>()?;
            let refs: Vec<_> = references
                .iter()
                .map(|p| read_any_rate(p))
                .collect::<Result<_>>()?;
            let name = utterance.unwrap_or_else(|| {
                estimates[0]
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "utterance".into())
            });
            let mut rows = Vec::new();
            for i in 0..2 {
                let (e, r, n) = (&est[i].0, &refs[i].0, &refs[1 - i].0);
                if e.len() != r.len() || r.len() != n.len() {
                    bail!(
                        "length mismatch: estimate {} has {} samples, references have {} and {}",
                        estimates[i].display(),
                        e.len(),
                        r.len(),
                        n.len()
                    );
                }
                let report = metrics::evaluate(e, r, n, smr)?;
                rows.push(EvalRow::new(
                    format!("{name}#s{}", i + 1),
                    method.clone(),
                    &report,
                ));
            }
            let mut bytes = if append && out.exists() {
                fs::read(&out)?
            } else {
                Vec::new()
            };
            if !bytes.is_empty() {
                metrics::read_csv(&bytes[..])
                    .with_context(|| format!("{} is not an evaluation CSV", out.display()))?;
            }
            let header = bytes.is_empty();
            metrics::write_csv(&mut bytes, &rows, header)?;
            write_atomic(&out, &bytes)?;
            for r in &rows {
                println!(
                    "{}: sdr {:.3} sir {:.3} snr {:.3}",
                    r.utterance, r.sdr, r.sir, r.snr
                );
            }
        }
        Command::Mix {
            source1,
            source2,
            smr,
            out,
            refs_dir,
        } => {
            let (a, ra) = read_any_rate(&source1)?;
            let (b, rb) = read_any_rate(&source2)?;
            ensure!(ra == rb, "sample rates differ ({ra} vs {rb} Hz)");
            let n = a.len().min(b.len());
            let m = metrics::mix_at_smr(&a[..n], &b[..n], smr)?;
            write_wav(&out, &m.mixture, ra)?;
            if let Some(dir) = refs_dir {
                fs::create_dir_all(&dir)?;
                write_wav(dir.join("source1.wav"), &m.source1, ra)?;
                write_wav(dir.join("source2.wav"), &m.source2, ra)?;
            }
            println!("mixed {n} samples at {smr} dB, wrote {}", out.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_override_defaults_and_flags_override_sections() {
        let cfg: RunConfig =
            toml::from_str("[energy]\nlambda = 2.5\n[dnn]\nframes = 3\nseed = 4\n").unwrap();
        assert_eq!(cfg.energy.lambda, 2.5);
        assert_eq!(cfg.energy.beta, 3.0);
        assert_eq!(cfg.dnn.layer_sizes(257), vec![771, 100, 50, 500, 2]);

        let cli = Cli::try_parse_from([
            "unmix",
            "train-nmf",
            "--source",
            "2",
            "--out",
            "m",
            "a.wav",
            "--seed",
            "7",
            "--frames",
            "5",
        ])
        .unwrap();
        let cfg = effective_config(&cli.global).unwrap();
        assert_eq!((cfg.nmf.seed, cfg.dnn.seed, cfg.dnn.frames), (7, 7, 5));
    }

    #[test]
    fn source_must_be_one_or_two() {
        assert!(Cli::try_parse_from([
            "unmix",
            "train-nmf",
            "--source",
            "3",
            "--out",
            "m",
            "a.wav"
        ])
        .is_err());
    }
}
