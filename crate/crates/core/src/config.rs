//! Run configuration: one TOML file with a table per component.
//!
//! ```toml
//! [reward]
//! variant = "bilateral"
//!
//! [train]
//! steps = 315
//! seed = 0
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curator::CurationConfig;
use crate::error::{Error, Result};
use crate::rewards::{RewardConfig, RewardVariant};
use crate::tgrpo::TgrpoConfig;
use crate::toytrain::LoopConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory that `train` writes its report, summary, policy and cache to.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("bilateral-run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub reward: RewardConfig,
    pub tgrpo: TgrpoConfig,
    pub train: LoopConfig,
    pub curate: CurationConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    /// Apply the shared command-line overrides. `seed` sets both the training
    /// seed and the curation seed.
    pub fn apply_overrides(&mut self, seed: Option<u64>, variant: Option<RewardVariant>) {
        if let Some(seed) = seed {
            self.train.seed = seed;
            self.curate.random_seed = seed;
        }
        if let Some(variant) = variant {
            self.reward.variant = variant;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.tgrpo.validate()?;
        self.train.validate()?;
        self.curate.validate()
    }
}
