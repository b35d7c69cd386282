//! Environment thresholds and reward settings.
//!
//! Defaults can be overridden by a TOML or JSON file named by `GRIDGYM_CONFIG`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::IoError;

pub const CONFIG_ENV: &str = "GRIDGYM_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFormula {
    /// Mean over all lines of `max(0, 1 - rho^2)`.
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub gamma: f64,
    pub formula: RewardFormula,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            formula: RewardFormula::Margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Consecutive steps a line may sit at rho >= 1 before it is tripped.
    pub max_overload_steps: u32,
    /// Loading at which a line trips immediately during a cascade.
    pub hard_overload_rho: f64,
    /// Episode fails when served load drops below this fraction of demand.
    pub blackout_fraction: f64,
    pub line_cooldown: u32,
    pub substation_cooldown: u32,
    /// Overrides the chronics step length when set.
    pub step_minutes: Option<u32>,
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_overload_steps: 2,
            hard_overload_rho: 1.5,
            blackout_fraction: 0.9,
            line_cooldown: 3,
            substation_cooldown: 3,
            step_minutes: None,
            reward: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        let g = self.reward.gamma;
        if !(g > 0.0 && g <= 1.0) {
            return Err(format!("gamma must lie in (0, 1], got {g}"));
        }
        if !(self.hard_overload_rho >= 1.0) {
            return Err(format!(
                "hard_overload_rho must be at least 1, got {}",
                self.hard_overload_rho
            ));
        }
        if !(0.0..=1.0).contains(&self.blackout_fraction) {
            return Err(format!(
                "blackout_fraction must lie in [0, 1], got {}",
                self.blackout_fraction
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let format_err = |message: String| IoError::Format {
            path: path.to_path_buf(),
            message,
        };
        let cfg: EnvConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| format_err(e.to_string()))?,
        };
        cfg.validate().map_err(format_err)?;
        Ok(cfg)
    }

    /// Defaults, overridden by the file in `GRIDGYM_CONFIG` when set.
    pub fn from_env() -> Result<Self, IoError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(path) if !path.is_empty() => Self::load(path),
            _ => Ok(Self::default()),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
