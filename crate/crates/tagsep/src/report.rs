//! Machine-readable run reports: a JSON summary (pretty-printed, keys
//! sorted) plus CSV detail files. Reports carry no timestamps, so repeated
//! runs at a fixed seed are byte-identical; wall-clock timing goes to
//! stderr only.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("merge needs at least one report")]
    EmptyMerge,
    #[error("merge configs differ (beyond the seed): {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One estimated (or exactly computed) quantity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    /// Standard error; `None` together with `exact = true` marks an exact
    /// (non-Monte-Carlo) quantity.
    pub se: Option<f64>,
    /// Sample count behind the estimate, when applicable.
    pub n: Option<u64>,
    pub exact: bool,
}

impl Estimate {
    pub fn exact(name: &str, value: f64) -> Self {
        Estimate {
            name: name.into(),
            value,
            se: None,
            n: None,
            exact: true,
        }
    }

    pub fn sampled(name: &str, value: f64, se: f64, n: u64) -> Self {
        Estimate {
            name: name.into(),
            value,
            se: Some(se),
            n: Some(n),
            exact: false,
        }
    }
}

/// Outcome of one acceptance rule inside an experiment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    /// Exact formula values used as targets, echoed for self-containment.
    pub targets: BTreeMap<String, f64>,
    pub estimates: Vec<Estimate>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(experiment: &str, config: ExperimentConfig) -> Self {
        RunReport {
            experiment: experiment.into(),
            config,
            targets: BTreeMap::new(),
            estimates: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn target(&mut self, name: &str, value: f64) {
        self.targets.insert(name.into(), value);
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    /// Pretty JSON with sorted keys (via an intermediate `Value`).
    pub fn to_json(&self) -> Result<String, ReportError> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }

    pub fn write_json(&self, dir: &Path) -> Result<PathBuf, ReportError> {
        std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(format!("{}_summary.json", self.experiment));
        std::fs::write(&path, self.to_json()?).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

/// Write a CSV detail file: header row, UTF-8, `.` decimal separator. All
/// emitted fields are numbers or bare identifiers, so RFC-4180 quoting
/// never triggers.
pub fn write_csv(
    dir: &Path,
    name: &str,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<PathBuf, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    let mut buf = Vec::new();
    writeln!(buf, "{header}").expect("in-memory write");
    for row in rows {
        writeln!(buf, "{row}").expect("in-memory write");
    }
    std::fs::write(&path, buf).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Pool reports produced by identical configs (seeds may differ).
///
/// Sampled estimates are combined as means of group means weighted by the
/// per-group sample counts; the pooled standard error is
/// `sqrt(sum SE_i^2 n_i^2) / sum n_i`. Exact estimates must agree and pass
/// through unchanged. Verdicts are not pooled; the merged report records
/// where it came from instead.
pub fn merge_reports(reports: &[RunReport]) -> Result<RunReport, ReportError> {
    let first = reports.first().ok_or(ReportError::EmptyMerge)?;
    for r in &reports[1..] {
        let mut a = first.config.clone();
        let mut b = r.config.clone();
        a.seed = 0;
        b.seed = 0;
        a.output_dir.clear();
        b.output_dir.clear();
        if a != b {
            return Err(ReportError::ConfigMismatch(format!(
                "{} vs {}",
                first.experiment, r.experiment
            )));
        }
        if r.experiment != first.experiment {
            return Err(ReportError::ConfigMismatch("experiment names differ".into()));
        }
    }
    let mut merged = RunReport::new(&first.experiment, first.config.clone());
    merged.targets = first.targets.clone();
    for est in &first.estimates {
        if est.exact {
            merged.estimates.push(est.clone());
            continue;
        }
        let mut num = 0.0;
        let mut denom = 0.0;
        let mut var_num = 0.0;
        for r in reports {
            let e = r
                .estimate(&est.name)
                .ok_or_else(|| ReportError::ConfigMismatch(format!("missing {}", est.name)))?;
            let n = e.n.unwrap_or(1) as f64;
            num += n * e.value;
            denom += n;
            let se = e.se.unwrap_or(0.0);
            var_num += se * se * n * n;
        }
        merged.estimates.push(Estimate {
            name: est.name.clone(),
            value: num / denom,
            se: Some(var_num.sqrt() / denom),
            n: Some(denom as u64),
            exact: false,
        });
    }
    merged
        .notes
        .push(format!("pooled from {} reports", reports.len()));
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_with(seed: u64, value: f64, se: f64, n: u64) -> RunReport {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        let mut rep = RunReport::new("lln", cfg);
        rep.estimates.push(Estimate::sampled("x_over_t", value, se, n));
        rep
    }

    #[test]
    fn merge_pools_equal_counts_as_plain_average() {
        let merged =
            merge_reports(&[report_with(1, 1.0, 0.1, 10), report_with(2, 3.0, 0.1, 10)])
                .unwrap();
        let e = merged.estimate("x_over_t").unwrap();
        assert_eq!(e.value, 2.0);
        // SE = sqrt(2 * (0.1 * 10)^2) / 20 = 0.1/sqrt(2).
        assert!((e.se.unwrap() - 0.1 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn merge_rejects_empty_and_mismatched() {
        assert!(matches!(merge_reports(&[]), Err(ReportError::EmptyMerge)));
        let a = report_with(1, 1.0, 0.1, 10);
        let mut b = report_with(2, 1.0, 0.1, 10);
        b.config.replicas += 1;
        assert!(matches!(
            merge_reports(&[a, b]),
            Err(ReportError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn json_is_sorted_and_stable() {
        let rep = report_with(1, 1.0, 0.1, 10);
        let one = rep.to_json().unwrap();
        let two = rep.to_json().unwrap();
        assert_eq!(one, two);
        let config_pos = one.find("\"config\"").unwrap();
        let verdict_pos = one.find("\"verdicts\"").unwrap();
        assert!(config_pos < verdict_pos);
    }
}
