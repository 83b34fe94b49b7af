use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::validate_capacity;
use crate::nn::OptimizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TilMode {
    /// Binary masks everywhere.
    Wsn,
    /// Binary masks for trained tasks; the forward-transfer probe uses the
    /// accumulated mask with small background noise.
    Softnet,
}

impl std::str::FromStr for TilMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wsn" => Ok(TilMode::Wsn),
            "softnet" => Ok(TilMode::Softnet),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected wsn or softnet)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilRunConfig {
    /// Percent of weights per layer selected for each task.
    pub capacity: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub seed: u64,
    pub mode: TilMode,
    pub epsilon: f64,
    pub hidden: Vec<usize>,
    /// Probe every unseen task before training it and record `R_i`.
    pub forward_transfer: bool,
}

impl Default for TilRunConfig {
    fn default() -> Self {
        Self {
            capacity: 30.0,
            epochs: 5,
            batch_size: 64,
            optimizer: OptimizerSpec::adam(1e-3),
            seed: 0,
            mode: TilMode::Wsn,
            epsilon: 1e-3,
            hidden: vec![64, 64],
            forward_transfer: true,
        }
    }
}

impl TilRunConfig {
    pub fn validate(&self) -> Result<()> {
        validate_capacity(self.capacity)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        if self.mode == TilMode::Softnet && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}
