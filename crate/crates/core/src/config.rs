//! Run configuration read from a TOML file.
//!
//! ```toml
//! mode = "evaluate"
//! seed = 7
//! output_dir = "out"
//!
//! [input]
//! scores = "scores.csv"
//!
//! [evaluation]
//! warmup_size = 200
//! history_size = 200
//! rho_grid = [0.5, 1.0, 2.0]
//! tau_grid = [1.0, "natural"]
//! schemes = ["local_dm", "equal", "global_opt", "local_opt"]
//! ```
//!
//! Command-line flags override values from the file; unset values fall back
//! to the defaults of each section.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PoolError, Result};
use crate::evaluation::{EvaluationConfig, Scheme};
use crate::pools::ScalingRule;
use crate::simulation::SimulationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Evaluate,
    Gridsearch,
    PoolOnce,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Evaluate => "evaluate",
            Mode::Gridsearch => "gridsearch",
            Mode::PoolOnce => "pool-once",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PoolError;

    fn from_str(s: &str) -> Result<Self> {
        [Mode::Simulate, Mode::Evaluate, Mode::Gridsearch, Mode::PoolOnce]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PoolError::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    /// Score CSV; when absent, `evaluate` and `gridsearch` simulate data and
    /// run the built-in regression experts.
    pub scores: Option<PathBuf>,
    /// JSON array of the experts' predictive densities at the query point.
    pub densities: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolOnceConfig {
    pub z: Vec<f64>,
    pub scheme: Scheme,
    pub rho: f64,
    pub tau: ScalingRule,
}

impl Default for PoolOnceConfig {
    fn default() -> Self {
        Self {
            z: Vec::new(),
            scheme: Scheme::LocalDm,
            rho: 1.0,
            tau: ScalingRule::Natural,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub input: InputPaths,
    pub evaluation: EvaluationConfig,
    pub simulation: SimulationConfig,
    pub pool_once: PoolOnceConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PoolError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| PoolError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PoolError::Config(e.to_string()))
    }

    /// Whether the run draws random numbers.
    pub fn is_stochastic(&self) -> bool {
        match self.mode {
            Some(Mode::Simulate) => true,
            Some(Mode::Evaluate | Mode::Gridsearch) => self.input.scores.is_none(),
            _ => false,
        }
    }

    /// Check mode-specific requirements and propagate the top-level seed.
    pub fn finalize(mut self) -> Result<Self> {
        let mode = self.mode.ok_or_else(|| PoolError::Config("mode is required".into()))?;
        if self.is_stochastic() && self.seed.is_none() {
            return Err(PoolError::Config(format!("mode `{mode}` needs a seed")));
        }
        if let Some(seed) = self.seed {
            self.evaluation.seed = seed;
            self.simulation.dgp.seed = seed;
        }
        match mode {
            Mode::Simulate => self.simulation.validate()?,
            Mode::Evaluate | Mode::Gridsearch => {
                if self.output_dir.is_none() {
                    return Err(PoolError::Config(format!("mode `{mode}` needs output_dir")));
                }
            }
            Mode::PoolOnce => {
                if self.input.scores.is_none() {
                    return Err(PoolError::Config("mode `pool-once` needs input.scores".into()));
                }
                if self.pool_once.z.is_empty() {
                    return Err(PoolError::Config("mode `pool-once` needs pool_once.z".into()));
                }
            }
        }
        if mode == Mode::Simulate && self.output_dir.is_none() {
            return Err(PoolError::Config("mode `simulate` needs output_dir".into()));
        }
        Ok(self)
    }
}
