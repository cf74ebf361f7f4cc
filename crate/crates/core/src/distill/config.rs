use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block distillation hyperparameters, read from a TOML file.
///
/// ```toml
/// alpha = 0.2
/// beta = 0.1
/// dropout_rate = 0.6
/// sinks_per_block = 4
/// thresholds = [0.5]
/// seed = 7
/// steps = 300
/// lr_max = 3e-3
/// lr_min = 3e-4
/// batch_size = 4
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub alpha: f64,
    pub beta: f64,
    pub dropout_rate: f64,
    pub sinks_per_block: usize,
    /// Segmenter thresholds used to build the corpus; recorded in the manifest.
    pub thresholds: Vec<f64>,
    pub seed: u64,
    pub steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Reuse teacher passes across steps; results are identical either way.
    pub cache_teacher: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
            dropout_rate: 0.6,
            sinks_per_block: 4,
            thresholds: vec![0.5],
            seed: 0,
            steps: 200,
            lr_max: 3e-3,
            lr_min: 3e-4,
            batch_size: 4,
            weight_decay: 0.0,
            cache_teacher: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha {} and beta {} must be non-negative", self.alpha, self.beta));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1]", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("thresholds must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let cfg = DistillConfig::from_toml("alpha = 0.5\nsteps = 3\nthresholds = [0.3, 0.5]\n").unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.beta, 0.1);
        assert_eq!(cfg.thresholds, vec![0.3, 0.5]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(DistillConfig::from_toml("dropout_rate = 1.5"), Err(Error::Config(_))));
        assert!(matches!(DistillConfig::from_toml("alpah = 0.1"), Err(Error::Config(_))));
        assert!(matches!(DistillConfig::from_toml("steps = \"x\""), Err(Error::Config(_))));
    }
}
