//! Structured experiment reports (`report_v1`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hermite_basis::EIGENVALUE_CONVENTION;
use crate::random_ensembles::EnsembleSpec;

pub const REPORT_SCHEMA: &str = "report_v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Tabular data for plotting.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Curve {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub name: String,
    pub eigenvalue_convention: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub resolution: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSpec>,
    #[serde(default)]
    pub statistics: BTreeMap<String, Statistic>,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub curves: BTreeMap<String, Curve>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            name: name.into(),
            eigenvalue_convention: EIGENVALUE_CONVENTION.to_string(),
            seed: None,
            resolution: BTreeMap::new(),
            ensemble: None,
            statistics: BTreeMap::new(),
            verdicts: Vec::new(),
            curves: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_ensemble(mut self, spec: &EnsembleSpec) -> Self {
        self.seed = Some(spec.seed);
        self.ensemble = Some(*spec);
        self
    }

    pub fn resolution(&mut self, key: &str, value: impl Into<serde_json::Value>) -> &mut Self {
        self.resolution.insert(key.to_string(), value.into());
        self
    }

    pub fn stat(&mut self, name: &str, value: f64) -> &mut Self {
        self.statistics.insert(name.to_string(), Statistic { value, std_error: None });
        self
    }

    pub fn stat_se(&mut self, name: &str, value: f64, std_error: f64) -> &mut Self {
        self.statistics.insert(
            name.to_string(),
            Statistic {
                value,
                std_error: Some(std_error),
            },
        );
        self
    }

    pub fn verdict(&mut self, name: &str, passed: bool, detail: impl Into<String>) -> &mut Self {
        self.verdicts.push(Verdict {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
        self
    }

    pub fn curve(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<f64>>) -> &mut Self {
        self.curves.insert(
            name.to_string(),
            Curve {
                columns: columns.iter().map(|c| c.to_string()).collect(),
                rows,
            },
        );
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.statistics.get(name).map(|s| s.value)
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failed_verdicts(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| !v.passed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut r = Report::new("demo").with_seed(7);
        r.stat("x", 1.5).stat_se("y", 2.0, 0.1).verdict("ok", true, "fine");
        r.curve("c", &["a", "b"], vec![vec![1.0, 2.0]]);
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(back.passed());
        assert_eq!(back.schema, "report_v1");
    }
}
