//! Run configuration shared by training and separation.
//!
//! Every section has defaults, so an empty configuration is valid. Field
//! names match the keys of the sectioned text config read by the CLI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dnn::TrainConfig;
use crate::energymin::SolverConfig;
use crate::signal::StftConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfConfig {
    pub rank: usize,
    pub train_iters: usize,
    pub decompose_iters: usize,
    pub seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            rank: 128,
            train_iters: 200,
            decompose_iters: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    /// Stacked context frames per classifier input (odd).
    pub frames: usize,
    /// Hidden layer sizes; when absent, 100-50-200 for one frame and
    /// 100-50-500 otherwise.
    pub hidden: Option<Vec<usize>>,
    pub rbm_epochs: usize,
    pub bp_epochs: usize,
    pub output_only_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DnnConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        DnnConfig {
            frames: 1,
            hidden: None,
            rbm_epochs: t.rbm_epochs,
            bp_epochs: t.bp_epochs,
            output_only_epochs: t.output_only_epochs,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            seed: t.seed,
        }
    }
}

impl DnnConfig {
    pub fn hidden_layers(&self) -> Vec<usize> {
        match &self.hidden {
            Some(h) => h.clone(),
            None if self.frames == 1 => vec![100, 50, 200],
            None => vec![100, 50, 500],
        }
    }

    /// `[L * n_bins, hidden..., 2]`.
    pub fn layer_sizes(&self, n_bins: usize) -> Vec<usize> {
        let mut sizes = vec![self.frames * n_bins];
        sizes.extend(self.hidden_layers());
        sizes.push(2);
        sizes
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rbm_epochs: self.rbm_epochs,
            bp_epochs: self.bp_epochs,
            output_only_epochs: self.output_only_epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// Optional default file locations; command-line arguments take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub nmf1: Option<PathBuf>,
    pub nmf2: Option<PathBuf>,
    pub dnn: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub nmf: NmfConfig,
    pub dnn: DnnConfig,
    pub energy: SolverConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.nmf.rank == 0 {
            return Err(Error::Config("nmf.rank must be positive".into()));
        }
        if self.nmf.train_iters == 0 {
            return Err(Error::Config("nmf.train_iters must be positive".into()));
        }
        if self.dnn.frames == 0 || self.dnn.frames % 2 == 0 {
            return Err(Error::Config(format!(
                "dnn.frames must be odd, got {}",
                self.dnn.frames
            )));
        }
        let hidden = self.dnn.hidden_layers();
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(
                "dnn.hidden needs at least one nonzero layer".into(),
            ));
        }
        self.dnn.train_config().validate()?;
        self.energy.validate()
    }

    /// Every seed in the configuration derived from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.nmf.seed = seed;
        self.dnn.seed = seed;
        self
    }
}
