//! Run configuration: loss weights, robust-loss constants, and pipeline
//! knobs, loadable from a JSON file with individual flag overrides on top.

use std::path::Path;

use occwarp::loss::{LossWeights, NormalizationMode, RobustLossConfig};
use occwarp::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything the pipeline subcommands need to run. Field order is the JSON
/// report order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weights: LossWeights,
    pub robust: RobustLossConfig,
    pub norm: NormalizationMode,
    /// Mutual occlusion-masking rounds.
    pub iterations: usize,
    /// Pyramid levels of the flow branch.
    pub levels: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            robust: RobustLossConfig::default(),
            norm: NormalizationMode::Max,
            iterations: 1,
            levels: 6,
            seed: 7,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.robust.validate()?;
        if self.iterations == 0 {
            return Err(Error::param("iterations must be at least 1"));
        }
        if self.levels == 0 {
            return Err(Error::param("levels must be at least 1"));
        }
        Ok(())
    }

    /// Defaults, optionally replaced by a JSON config file.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => Self::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::param(format!("config {}: {e}", path.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Command-line flags win over the config file.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        iterations: Option<usize>,
        levels: Option<usize>,
        norm: Option<NormalizationMode>,
    ) -> Result<()> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(iterations) = iterations {
            self.iterations = iterations;
        }
        if let Some(levels) = levels {
            self.levels = levels;
        }
        if let Some(norm) = norm {
            self.norm = norm;
        }
        self.validate()
    }
}
