//! Projection-based separation metrics and SMR mixing.
//!
//! The target part of an estimate is its orthogonal projection onto the
//! reference. Ratios whose denominator (or numerator) vanishes are capped at
//! `±MAX_DB`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAX_DB: f64 = 300.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "signals have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    Ok(())
}

fn nonzero(sig: &[f64], what: &str) -> Result<()> {
    if energy(sig) == 0.0 {
        return Err(Error::InvalidInput(format!("{what} has zero energy")));
    }
    Ok(())
}

/// `10 log10(num / den)`, clamped to `[-MAX_DB, MAX_DB]`.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { MAX_DB } else { 0.0 };
    }
    if num <= 0.0 {
        return -MAX_DB;
    }
    (10.0 * (num / den).log10()).clamp(-MAX_DB, MAX_DB)
}

/// `(<estimate, reference> / <reference, reference>) * reference`.
pub fn project(estimate: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    check_pair(estimate, reference)?;
    nonzero(reference, "reference")?;
    let a = dot(estimate, reference) / energy(reference);
    Ok(reference.iter().map(|r| a * r).collect())
}

/// Target energy over the energy of everything else in the estimate.
pub fn sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let target = project(estimate, reference)?;
    let distortion: f64 = estimate
        .iter()
        .zip(&target)
        .map(|(e, t)| (e - t).powi(2))
        .sum();
    Ok(ratio_db(energy(&target), distortion))
}

/// Target energy over the energy of the part of the residual that projects
/// onto the interfering source.
pub fn sir(estimate: &[f64], reference: &[f64], interference: &[f64]) -> Result<f64> {
    check_pair(estimate, interference)?;
    nonzero(interference, "interference")?;
    let target = project(estimate, reference)?;
    let residual: Vec<f64> = estimate.iter().zip(&target).map(|(e, t)| e - t).collect();
    let interf = project(&residual, interference)?;
    Ok(ratio_db(energy(&target), energy(&interf)))
}

/// `10 log10(||reference||^2 / ||reference - estimate||^2)`.
pub fn snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(estimate, reference)?;
    nonzero(reference, "reference")?;
    let err: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (r - e).powi(2))
        .sum();
    Ok(ratio_db(energy(reference), err))
}

pub fn rms(sig: &[f64]) -> f64 {
    if sig.is_empty() {
        0.0
    } else {
        (energy(sig) / sig.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Vec<f64>,
    /// Source one as mixed (unchanged).
    pub source1: Vec<f64>,
    /// Source two scaled to the requested level.
    pub source2: Vec<f64>,
    pub smr_db: f64,
}

/// Scales `source2` so that `20 log10(rms(source1) / rms(scaled source2))`
/// equals `smr_db`, then adds the two.
pub fn mix_at_smr(source1: &[f64], source2: &[f64], smr_db: f64) -> Result<Mixture> {
    check_pair(source1, source2)?;
    nonzero(source1, "source 1")?;
    nonzero(source2, "source 2")?;
    if !smr_db.is_finite() {
        return Err(Error::InvalidInput("SMR must be finite".into()));
    }
    let gain = rms(source1) / (rms(source2) * 10f64.powf(smr_db / 20.0));
    let scaled: Vec<f64> = source2.iter().map(|m| m * gain).collect();
    let mixture = source1.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    Ok(Mixture {
        mixture,
        source1: source1.to_vec(),
        source2: scaled,
        smr_db,
    })
}

/// Metrics of one estimate against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub snr_db: f64,
    pub smr_db: f64,
}

pub fn evaluate(
    estimate: &[f64],
    reference: &[f64],
    interference: &[f64],
    smr_db: f64,
) -> Result<EvalReport> {
    Ok(EvalReport {
        sdr_db: sdr(estimate, reference)?,
        sir_db: sir(estimate, reference, interference)?,
        snr_db: snr(estimate, reference)?,
        smr_db,
    })
}

/// One CSV line; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub utterance: String,
    pub smr_db: f64,
    pub method: String,
    pub sdr: f64,
    pub sir: f64,
    pub snr: f64,
}

impl EvalRow {
    pub fn new(
        utterance: impl Into<String>,
        method: impl Into<String>,
        report: &EvalReport,
    ) -> Self {
        EvalRow {
            utterance: utterance.into(),
            smr_db: report.smr_db,
            method: method.into(),
            sdr: report.sdr_db,
            sir: report.sir_db,
            snr: report.snr_db,
        }
    }
}

pub const CSV_COLUMNS: [&str; 6] = ["utterance", "smr_db", "method", "sdr", "sir", "snr"];

pub fn write_csv<W: Write>(out: W, rows: &[EvalRow], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(header)
        .from_writer(out);
    if header && rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Format(format!("unexpected CSV columns {headers:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean of every metric per `(smr_db, method)`, in first-seen order, with
/// utterance `"mean"`.
pub fn summarize(rows: &[EvalRow]) -> Vec<EvalRow> {
    let mut groups: Vec<(EvalRow, usize)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|(g, _)| g.smr_db == r.smr_db && g.method == r.method)
        {
            Some((g, n)) => {
                g.sdr += r.sdr;
                g.sir += r.sir;
                g.snr += r.snr;
                *n += 1;
            }
            None => groups.push((
                EvalRow {
                    utterance: "mean".into(),
                    ..r.clone()
                },
                1,
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut g, n)| {
            let n = n as f64;
            g.sdr /= n;
            g.sir /= n;
            g.snr /= n;
            g
        })
        .collect()
}
