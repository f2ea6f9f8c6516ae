//! Machine-readable outputs.
//!
//! Reports are JSON with a `schema_version`. They hold only values that are
//! pure functions of (config, seed); wall-clock times go to a separate
//! timings file so two runs of the same config give byte-identical reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pading_core::pipeline::{AblationTable, GzslReport, LossCurves};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Output of `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Resolved config, key to value.
    pub config: BTreeMap<String, String>,
    pub strategy: String,
    /// `None` for strategies without a generator.
    pub generator_kind: Option<String>,
    /// Stage names in execution order; their times are in the timings file.
    pub stages: Vec<String>,
    pub pretrain_seen_mean: f64,
    pub report: GzslReport,
    pub curves: LossCurves,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Output of `ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub config: BTreeMap<String, String>,
    /// `rows` for a strategy comparison, `sweep` for a primitive sweep.
    pub kind: String,
    pub table: AblationTable,
    pub warnings: Vec<String>,
}

/// Wall-clock seconds per stage of one `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

trait Versioned {
    fn version(&self) -> u32;
}

impl Versioned for RunReport {
    fn version(&self) -> u32 {
        self.schema_version
    }
}

impl Versioned for AblationReport {
    fn version(&self) -> u32 {
        self.schema_version
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_versioned<T: DeserializeOwned + Versioned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: T = serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if value.version() != SCHEMA_VERSION {
        return Err(CliError::Schema {
            path: path.to_path_buf(),
            found: value.version(),
            expected: SCHEMA_VERSION,
        });
    }
    Ok(value)
}

impl RunReport {
    pub fn load(path: &Path) -> CliResult<Self> {
        read_versioned(path)
    }
}

impl AblationReport {
    pub fn load(path: &Path) -> CliResult<Self> {
        read_versioned(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pading_core::data::Group;
    use pading_core::pipeline::{ClassAccuracy, StepLosses};

    fn sample() -> RunReport {
        RunReport {
            schema_version: SCHEMA_VERSION,
            config: [("lambda".to_string(), "0.002".to_string())].into(),
            strategy: "full".into(),
            generator_kind: Some("primitive".into()),
            stages: vec!["pretrain".into(), "evaluate".into()],
            pretrain_seen_mean: 0.1 + 0.2,
            report: GzslReport {
                per_class: vec![ClassAccuracy {
                    class: "seen00".into(),
                    group: Group::Seen,
                    correct: 1,
                    total: 3,
                    accuracy: Some(1.0 / 3.0),
                }],
                seen_mean: 1.0 / 3.0,
                unseen_mean: 0.0,
                hm: 0.0,
                excluded: vec!["unseen00".into()],
            },
            curves: LossCurves {
                pretrain: vec![std::f64::consts::PI, 1e-300],
                generator: vec![StepLosses {
                    mmd: 0.7,
                    disentangle: 2.0 / 7.0,
                    align: 1e-17,
                    total: 0.7000000000000001,
                }],
                finetune: vec![],
            },
            artifacts: vec!["report.json".into()],
        }
    }

    #[test]
    fn run_report_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let r = sample();
        write_json(&path, &r).unwrap();
        let back = RunReport::load(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.pretrain_seen_mean.to_bits(), r.pretrain_seen_mean.to_bits());
    }

    #[test]
    fn other_schema_versions_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_json(&path, &RunReport {
            schema_version: 99,
            ..sample()
        })
        .unwrap();
        assert!(matches!(RunReport::load(&path), Err(CliError::Schema { found: 99, .. })));
    }

    #[test]
    fn missing_report_is_an_io_error() {
        let err = RunReport::load(Path::new("/nonexistent/report.json")).unwrap_err();
        assert!(matches!(err, CliError::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }
}
