//! Experiment configuration: one JSON document, CLI flags overriding
//! top-level fields, and a single environment escape hatch for the seed
//! (`TAGSEP_SEED`). A config plus seed determines every output byte.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::Rates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Closed-form outputs only: speed, drift, marginals, MGF curve.
    Analytic,
    /// Law of large numbers for the tagged displacement.
    Lln,
    /// Site-1 occupation fractions against the marginal system.
    Marginal,
    /// Regeneration-cycle means against 1/(m-w) and m/(m-w).
    Regen,
    /// E[exp(g(b) tau)] against the MGF mixture over a b grid.
    MgfCheck,
    /// Mean-one check of the exponential martingale at fixed t.
    MartingaleCheck,
    /// Renewal-reward CLT variance and normality of standardized runs.
    Clt,
    /// Capped-chain exact MGF ladder against the closed form.
    OracleMgf,
    /// Capped-chain stationary site-1 distribution.
    OracleStationary,
    /// Conditional Bernoulli exchangeability of white cups.
    Exchangeability,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Analytic => "analytic",
            ExperimentKind::Lln => "lln",
            ExperimentKind::Marginal => "marginal",
            ExperimentKind::Regen => "regen",
            ExperimentKind::MgfCheck => "mgf-check",
            ExperimentKind::MartingaleCheck => "martingale-check",
            ExperimentKind::Clt => "clt",
            ExperimentKind::OracleMgf => "oracle-mgf",
            ExperimentKind::OracleStationary => "oracle-stationary",
            ExperimentKind::Exchangeability => "exchangeability",
        }
    }
}

/// Verdict thresholds for the statistical checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Maximum |z| accepted when comparing an estimate with its target.
    pub z_max: f64,
    /// Minimum p-value accepted by hypothesis tests.
    pub p_min: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            z_max: 3.0,
            p_min: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rates: Rates,
    pub experiment: Option<ExperimentKind>,
    /// Horizon for trajectory experiments (lln, marginal, clt).
    pub horizon: f64,
    /// Trajectory or martingale replicas.
    pub replicas: u64,
    /// Regeneration cycles for cycle-based experiments.
    pub cycles: u64,
    /// b grid for mgf-check and the analytic curve.
    pub b_grid: Vec<f64>,
    /// Cap ladder for the oracle experiments.
    pub cap_m: Vec<usize>,
    /// b value behind s = g(b) for oracle-mgf and the coupled martingale.
    pub mgf_b: f64,
    /// Stopping time for martingale-check.
    pub martingale_t: f64,
    /// Explicit (a, b, c, d); when absent the coupled parameters at
    /// `mgf_b` are used.
    pub martingale_params: Option<[f64; 4]>,
    /// Growth-suppression cap for cycle simulations (capped-MC runs).
    pub cap: Option<usize>,
    /// Cup-lattice truncation length.
    pub lattice_len: usize,
    /// Snapshot time for the exchangeability experiment.
    pub snapshot_t: f64,
    /// Queried site sets (size <= 3) for the exchangeability experiment.
    pub site_sets: Vec<Vec<usize>>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 means all available cores. Results are identical
    /// at every level.
    pub parallelism: usize,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rates: Rates::new(1.0, 1.0, 2.0, 0.5).unwrap(),
            experiment: None,
            horizon: 20_000.0,
            replicas: 16,
            cycles: 100_000,
            b_grid: vec![-0.02, -0.05, -0.1],
            cap_m: vec![6, 8, 10, 12],
            mgf_b: -0.05,
            martingale_t: 2.0,
            martingale_params: None,
            cap: None,
            lattice_len: 64,
            snapshot_t: 5.0,
            site_sets: vec![vec![2], vec![2, 3], vec![4, 7, 11]],
            seed: 20240501,
            output_dir: PathBuf::from("out"),
            parallelism: 0,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid {what}: {detail}")]
    Invalid { what: String, detail: String },
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |what: &str, detail: String| {
            Err(ConfigError::Invalid {
                what: what.into(),
                detail,
            })
        };
        if !(self.horizon > 0.0) {
            return fail("horizon", format!("must be > 0, got {}", self.horizon));
        }
        if self.replicas == 0 {
            return fail("replicas", "must be >= 1".into());
        }
        if self.lattice_len < 5 {
            return fail(
                "lattice_len",
                format!("must be >= 5, got {}", self.lattice_len),
            );
        }
        for set in &self.site_sets {
            if set.is_empty() || set.len() > 3 {
                return fail("site_sets", format!("set size must be 1..=3: {set:?}"));
            }
            if set.iter().any(|&s| s < 1 || s > self.lattice_len) {
                return fail("site_sets", format!("site out of range: {set:?}"));
            }
        }
        if !(0.0 < self.snapshot_t) {
            return fail("snapshot_t", "must be > 0".into());
        }
        Ok(())
    }

    /// The number of worker threads to use.
    pub fn threads(&self) -> usize {
        if self.parallelism == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            self.parallelism
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad: Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"not_a_field": 1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 7, "replicas": 4}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.replicas, 4);
        assert_eq!(cfg.cycles, ExperimentConfig::default().cycles);
    }

    #[test]
    fn validation_catches_bad_sets() {
        let mut cfg = ExperimentConfig::default();
        cfg.site_sets = vec![vec![1, 2, 3, 4]];
        assert!(cfg.validate().is_err());
        cfg.site_sets = vec![vec![0]];
        assert!(cfg.validate().is_err());
        cfg.site_sets = vec![vec![999]];
        assert!(cfg.validate().is_err());
    }
}
