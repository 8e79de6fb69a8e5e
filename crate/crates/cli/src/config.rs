//! Run configuration: TOML file, `--set key=value` overrides, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hermite_lab::acceptance::Tier;
use hermite_lab::picard_solver::SolverConfig;
use hermite_lab::random_ensembles::{EnsembleSpec, Family};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub tier: Tier,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    /// Directory for on-disk basis tables.
    pub cache_dir: Option<PathBuf>,
    pub basis: BasisConfig,
    pub field: FieldConfig,
    pub ensemble: EnsembleSection,
    pub solver: SolverConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            tier: Tier::Reference,
            workers: None,
            out: None,
            cache_dir: None,
            basis: BasisConfig::default(),
            field: FieldConfig::default(),
            ensemble: EnsembleSection::default(),
            solver: SolverConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub dim: usize,
    pub max_degree: Option<usize>,
    pub quad_per_axis: Option<usize>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            max_degree: None,
            quad_per_axis: None,
        }
    }
}

/// Base field `Σ c_n h_n` in mode order; `flat_modes = k` means `c_n = k^{-1/2}` for `n < k`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub coeffs: Option<Vec<f64>>,
    pub flat_modes: Option<usize>,
    pub amplitude: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub family: Family,
    pub gamma: Option<f64>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            family: Family::Gaussian,
            gamma: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_samples: Option<usize>,
    pub draws: Option<usize>,
    pub q_grid: Option<Vec<u32>>,
    pub t_grid: Option<Vec<f64>>,
    pub rho_grid: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub s_values: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub time_nodes: Option<usize>,
    pub p: Option<u32>,
    pub p_max: Option<u32>,
    pub p_exp: Option<f64>,
    pub n_max: Option<usize>,
    pub nonlinearity_p: Option<u32>,
    pub criteria: Option<Vec<usize>>,
}

impl RunConfig {
    /// Reads `path` (if any), applies `key.path=value` overrides and parses.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for s in sets {
            apply_override(&mut table, s)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow::anyhow!("invalid config: {}", e.message()))?;
        Ok(cfg)
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec> {
        Ok(EnsembleSpec::new(self.ensemble.family, self.ensemble.gamma, self.seed)?)
    }

    /// Tier-scaled sample count unless set explicitly.
    pub fn samples(&self, reference: usize) -> usize {
        self.experiment.n_samples.unwrap_or(match self.tier {
            Tier::Smoke => reference / 10,
            Tier::Reference => reference,
            Tier::Extended => reference * 4,
        })
    }
}

/// `a.b.c=value`, where the value is parsed as TOML and falls back to a string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` is not of the form key=value");
    };
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &["solver.N=16".into(), "ensemble.family=rademacher".into(), "experiment.eps=[0.1, 0.2]".into()],
        )
        .unwrap();
        assert_eq!(cfg.solver.max_degree, 16);
        assert_eq!(cfg.ensemble.family, Family::Rademacher);
        assert_eq!(cfg.experiment.eps, Some(vec![0.1, 0.2]));
    }

    #[test]
    fn unknown_field_is_named() {
        let err = RunConfig::load(None, &["solver.bogus=1".into()]).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }
}
