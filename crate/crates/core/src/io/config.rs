//! Run configuration (TOML).
//!
//! ```toml
//! [mixture]
//! setting = "balls_urns"
//! m = 8
//! context = 64
//! seed = 0
//!
//! [grid]
//! diversities = [1, 4, 16, 64]
//! checkpoints = [1000, 3000, 10000, 30000]
//!
//! [eval]
//! size = 500
//! seed = 1
//!
//! [fit]
//! split_seed = 0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hbayes::FitOptions;
use crate::metrics::DistanceKind;
use crate::taskgen::{MixtureSpec, SettingKind, DEFAULT_EVAL_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub setting: SettingKind,
    pub m: usize,
    pub context: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub diversities: Vec<usize>,
    #[serde(default)]
    pub checkpoints: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_size")]
    pub size: usize,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
    /// Median-of-means blocks; defaults to ceil(sqrt(n)) capped at 64.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_blocks: Option<usize>,
}

fn default_eval_size() -> usize {
    DEFAULT_EVAL_SIZE
}

fn default_eval_seed() -> u64 {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_EVAL_SIZE,
            seed: default_eval_seed(),
            n_blocks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_true")]
    pub apply_threshold: bool,
    /// Scales K_G; K_M is left as measured.
    #[serde(default = "default_multiplier")]
    pub complexity_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceKind>,
}

fn default_restarts() -> usize {
    8
}

fn default_true() -> bool {
    true
}

fn default_multiplier() -> f64 {
    1.0
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            split_seed: 0,
            restarts: default_restarts(),
            apply_threshold: true,
            complexity_multiplier: 1.0,
            distance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mixture: MixtureConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.diversities.is_empty() {
            return Err(Error::Config("grid.diversities is empty".into()));
        }
        if !self.grid.diversities.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("grid.diversities must be strictly increasing".into()));
        }
        if !self.grid.checkpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("grid.checkpoints must be strictly increasing".into()));
        }
        if self.eval.size == 0 {
            return Err(Error::Config("eval.size must be positive".into()));
        }
        if self.eval.n_blocks == Some(0) {
            return Err(Error::Config("eval.n_blocks must be positive".into()));
        }
        if !(self.fit.complexity_multiplier > 0.0 && self.fit.complexity_multiplier.is_finite()) {
            return Err(Error::Config("fit.complexity_multiplier must be positive".into()));
        }
        for &d in &self.grid.diversities {
            self.spec(d).validate()?;
        }
        Ok(())
    }

    pub fn spec(&self, d: usize) -> MixtureSpec {
        let mx = &self.mixture;
        let spec = MixtureSpec::new(mx.setting, d, mx.m, mx.context, mx.seed);
        match mx.sigma2 {
            Some(s) => spec.with_sigma2(s),
            None => spec,
        }
    }

    pub fn distance(&self) -> DistanceKind {
        self.fit
            .distance
            .unwrap_or_else(|| DistanceKind::for_setting(self.mixture.setting))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            split_seed: self.fit.split_seed,
            restarts: self.fit.restarts,
            apply_threshold: self.fit.apply_threshold,
            ..FitOptions::default()
        }
    }

    /// All (N, D) cells the grid spans, D-major.
    pub fn cells(&self) -> Vec<(u64, usize)> {
        let mut out = Vec::new();
        for &d in &self.grid.diversities {
            for &n in &self.grid.checkpoints {
                out.push((n, d));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[mixture]
setting = "linear_regression"
m = 8
context = 16
seed = 3

[grid]
diversities = [1, 4, 16]
checkpoints = [100, 1000]

[eval]
size = 50
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.eval.seed, 1);
        assert_eq!(cfg.fit.restarts, 8);
        assert!(cfg.fit.apply_threshold);
        assert_eq!(cfg.spec(4).sigma2, 8.0 / 256.0);
        assert_eq!(cfg.distance(), DistanceKind::DimNormalizedMSE);
        assert_eq!(cfg.cells().len(), 6);
    }

    #[test]
    fn round_trips() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml(&SAMPLE.replace("[1, 4, 16]", "[4, 1]")).is_err());
        assert!(RunConfig::from_toml(&SAMPLE.replace("seed = 3", "seed = 3\nbogus = 1")).is_err());
        assert!(RunConfig::from_toml(&SAMPLE.replace("context = 16", "context = 0")).is_err());
    }
}
