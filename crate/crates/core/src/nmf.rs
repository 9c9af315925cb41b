//! Itakura-Saito NMF: dictionary training, supervised gain decomposition of
//! a mixture against fixed dictionaries, and soft-mask source estimates.

use ndarray::{concatenate, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::shape_err;
use crate::{Error, Result, Source, EPSILON_FLOOR};

/// Below this the soft-mask denominator is treated as silence.
const MASK_FLOOR: f64 = 1e-12;

/// A trained per-source dictionary, `n_features x rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfModel {
    pub dictionary: Array2<f64>,
    pub source: Source,
}

impl NmfModel {
    pub fn new(dictionary: Array2<f64>, source: Source) -> Result<Self> {
        if dictionary
            .iter()
            .any(|&v| !(v >= EPSILON_FLOOR) || !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "dictionary entries must be finite and >= the epsilon floor".into(),
            ));
        }
        Ok(NmfModel { dictionary, source })
    }

    pub fn n_features(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn rank(&self) -> usize {
        self.dictionary.ncols()
    }
}

/// Gains for the concatenated dictionary `[B1, B2]`: the first `rank1` rows
/// belong to source one.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub gains: Array2<f64>,
    pub rank1: usize,
}

impl GainMatrix {
    pub fn split(&self) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        self.gains.view().split_at(Axis(0), self.rank1)
    }
}

#[derive(Debug, Clone)]
pub struct NmfFit {
    pub model: NmfModel,
    pub gains: Array2<f64>,
    /// Divergence before the first update and after every iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub gains: GainMatrix,
    pub trace: Vec<f64>,
}

/// `sum(V/W - ln(V/W) - 1)` with `V` floored at [`EPSILON_FLOOR`].
pub fn is_divergence(v: ArrayView2<f64>, w: ArrayView2<f64>) -> Result<f64> {
    if v.dim() != w.dim() {
        return Err(shape_err(format!("V {:?} vs W {:?}", v.dim(), w.dim())));
    }
    let mut total = 0.0;
    for (&a, &b) in v.iter().zip(w.iter()) {
        if !(b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "model entries must be positive, found {b}"
            )));
        }
        let r = a.max(EPSILON_FLOOR) / b;
        total += r - r.ln() - 1.0;
    }
    Ok(total)
}

fn check_factors(v: ArrayView2<f64>, b: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<()> {
    if b.nrows() != v.nrows() || g.ncols() != v.ncols() || b.ncols() != g.nrows() {
        return Err(shape_err(format!(
            "V {:?} cannot be factored as {:?} x {:?}",
            v.dim(),
            b.dim(),
            g.dim()
        )));
    }
    Ok(())
}

/// `V / (BG)^2` and `1 / BG`, the two factors shared by both updates. `V` is
/// floored exactly as in [`is_divergence`], so the updates descend the
/// quantity that is reported.
fn ratio_terms(
    v: ArrayView2<f64>,
    b: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut approx = b.dot(&g);
    approx.mapv_inplace(|x| x.max(f64::MIN_POSITIVE));
    let weighted = Zip::from(v)
        .and(&approx)
        .map_collect(|&x, &a| x.max(EPSILON_FLOOR) / (a * a));
    approx.mapv_inplace(f64::recip);
    (weighted, approx)
}

fn apply_ratio(target: &mut Array2<f64>, num: &Array2<f64>, den: &Array2<f64>) {
    Zip::from(target).and(num).and(den).for_each(|t, &n, &d| {
        *t = (*t * n / d).max(EPSILON_FLOOR);
    });
}

/// One multiplicative gain update, `G <- G * B'(V/(BG)^2) / B'(1/BG)`.
pub fn update_gains(
    v: ArrayView2<f64>,
    b: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_factors(v, b, g)?;
    let (weighted, inv) = ratio_terms(v, b, g);
    let num = b.t().dot(&weighted);
    let den = b.t().dot(&inv);
    let mut out = g.to_owned();
    apply_ratio(&mut out, &num, &den);
    Ok(out)
}

/// One multiplicative dictionary update, `B <- B * (V/(BG)^2)G' / (1/BG)G'`.
pub fn update_dictionary(
    v: ArrayView2<f64>,
    b: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_factors(v, b, g)?;
    let (weighted, inv) = ratio_terms(v, b, g);
    let num = weighted.dot(&g.t());
    let den = inv.dot(&g.t());
    let mut out = b.to_owned();
    apply_ratio(&mut out, &num, &den);
    Ok(out)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        (rng.random_range(0.1..1.1) * scale).max(EPSILON_FLOOR)
    })
}

fn mean(v: ArrayView2<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.sum() / v.len() as f64
    }
}

/// Fits `S ~ B G` by alternating gain and dictionary updates from a seeded
/// positive random start.
pub fn train_dictionary(
    s_train: ArrayView2<f64>,
    rank: usize,
    n_iter: usize,
    seed: u64,
    source: Source,
) -> Result<NmfFit> {
    if rank == 0 {
        return Err(Error::Config("dictionary rank must be positive".into()));
    }
    if s_train.ncols() < rank {
        return Err(Error::InvalidInput(format!(
            "{} training frames is fewer than the rank {}",
            s_train.ncols(),
            rank
        )));
    }
    if s_train.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(
            "training data must be nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Start with BG on the order of the data mean; IS is scale-sensitive.
    let scale = (mean(s_train).max(EPSILON_FLOOR) / rank as f64).sqrt() / 0.6;
    let mut b = uniform_matrix(&mut rng, s_train.nrows(), rank, scale);
    let mut g = uniform_matrix(&mut rng, rank, s_train.ncols(), scale);

    let mut trace = Vec::with_capacity(n_iter + 1);
    trace.push(is_divergence(s_train, b.dot(&g).view())?);
    for _ in 0..n_iter {
        g = update_gains(s_train, b.view(), g.view())?;
        b = update_dictionary(s_train, b.view(), g.view())?;
        trace.push(is_divergence(s_train, b.dot(&g).view())?);
    }
    Ok(NmfFit {
        model: NmfModel::new(b, source)?,
        gains: g,
        trace,
    })
}

/// Gains-only decomposition of a mixture against the fixed dictionaries
/// `[B1, B2]`.
///
/// Gains start uniform in `[0.1, 1.1]` times a scale chosen so that the
/// initial reconstruction matches the mixture's mean level. That scale makes
/// the whole decomposition equivariant to the mixture's gain.
pub fn decompose_mixture(
    y_mag: ArrayView2<f64>,
    b1: &NmfModel,
    b2: &NmfModel,
    n_iter: usize,
    seed: u64,
) -> Result<Decomposition> {
    if b1.n_features() != y_mag.nrows() || b2.n_features() != y_mag.nrows() {
        return Err(shape_err(format!(
            "mixture has {} features, dictionaries have {} and {}",
            y_mag.nrows(),
            b1.n_features(),
            b2.n_features()
        )));
    }
    let b = concatenate(Axis(1), &[b1.dictionary.view(), b2.dictionary.view()])
        .expect("row counts checked");
    let row_mass = b.sum() / b.nrows() as f64;
    let scale = mean(y_mag) / row_mass;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = uniform_matrix(&mut rng, b.ncols(), y_mag.ncols(), scale);

    let mut trace = Vec::with_capacity(n_iter + 1);
    trace.push(is_divergence(y_mag, b.dot(&g).view())?);
    for _ in 0..n_iter {
        g = update_gains(y_mag, b.view(), g.view())?;
        trace.push(is_divergence(y_mag, b.dot(&g).view())?);
    }
    Ok(Decomposition {
        gains: GainMatrix {
            gains: g,
            rank1: b1.rank(),
        },
        trace,
    })
}

/// Elementwise `p1 / (p1 + p2)` and its complement; bins where both parts
/// vanish are split evenly.
pub fn soft_masks(p1: ArrayView2<f64>, p2: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if p1.dim() != p2.dim() {
        return Err(shape_err(format!("{:?} vs {:?}", p1.dim(), p2.dim())));
    }
    let m1 = Zip::from(p1).and(p2).map_collect(|&a, &b| {
        let den = a + b;
        if den > MASK_FLOOR {
            a / den
        } else {
            0.5
        }
    });
    let m2 = m1.mapv(|m| 1.0 - m);
    Ok((m1, m2))
}

/// Soft-mask initial estimates `S_i = (B_i G_i) / (B_1 G_1 + B_2 G_2) * Y`.
pub fn initial_estimates(
    y_mag: ArrayView2<f64>,
    b1: ArrayView2<f64>,
    b2: ArrayView2<f64>,
    gains: &GainMatrix,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (g1, g2) = gains.split();
    if b1.ncols() != g1.nrows() || b2.ncols() != g2.nrows() {
        return Err(shape_err("dictionary ranks do not match the gain split"));
    }
    let p1 = b1.dot(&g1);
    let p2 = b2.dot(&g2);
    if p1.dim() != y_mag.dim() {
        return Err(shape_err(format!(
            "mixture {:?} vs model {:?}",
            y_mag.dim(),
            p1.dim()
        )));
    }
    let (m1, _) = soft_masks(p1.view(), p2.view())?;
    let s1 = &m1 * &y_mag;
    let s2 = &y_mag - &s1;
    Ok((s1, s2))
}

/// Splits the concatenated reconstruction `[B1 B2] G` into its two parts.
pub fn source_parts(
    b1: &NmfModel,
    b2: &NmfModel,
    gains: &GainMatrix,
) -> (Array2<f64>, Array2<f64>) {
    let (g1, g2) = gains.split();
    (b1.dictionary.dot(&g1), b2.dictionary.dot(&g2))
}
