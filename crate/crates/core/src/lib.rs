//! Single-channel separation of a two-source mixture.
//!
//! The training stage learns an Itakura-Saito NMF dictionary for each source
//! and a joint sigmoid network that scores how much a normalized magnitude
//! frame looks like source one or source two. The separation stage
//! initializes each mixture frame from the NMF soft masks, then minimizes a
//! per-frame energy in which both spectral estimates must satisfy the
//! classifier and add up to the mixture. The optimized estimates feed a
//! Wiener mask applied to the mixture magnitude, and the mixture phase is
//! reused for resynthesis.
//!
//! Module map:
//!
//! * [`signal`]: STFT/ISTFT, frame normalization and stacking, WAV I/O
//! * [`nmf`]: IS divergence, multiplicative updates, soft-mask estimates
//! * [`dnn`]: the two-output network, RBM pretraining, backprop, input gradient
//! * [`energymin`]: the per-frame energy, its gradient and the L-BFGS solve
//! * [`pipeline`]: training and separation orchestration
//! * [`metrics`]: SDR/SIR/SNR and SMR mixing
//! * [`persist`]: the `UNMX` model container
//! * [`synth`]: synthetic two-source corpus used by tests and demos

pub mod config;
pub mod dnn;
pub mod energymin;
mod error;
pub mod metrics;
pub mod nmf;
pub mod persist;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};

/// Which of the two sources a model or estimate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Source {
    One,
    Two,
}

impl Source {
    pub fn id(self) -> u8 {
        match self {
            Source::One => 1,
            Source::Two => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Source> {
        match id {
            1 => Ok(Source::One),
            2 => Ok(Source::Two),
            other => Err(Error::InvalidInput(format!(
                "source id must be 1 or 2, got {other}"
            ))),
        }
    }

    /// Output index of this source in the classifier.
    pub fn index(self) -> usize {
        self.id() as usize - 1
    }
}

/// Floor applied to NMF factors and to data entries inside log terms.
pub const EPSILON_FLOOR: f64 = 1e-12;
