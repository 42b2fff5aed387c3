//! JSON run configuration of the command-line runner.
//!
//! Unknown keys are rejected. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::HurstParam;
use crate::fraccalc::TimeGrid;
use crate::harness::TestFunction;
use crate::models::{catalog_lookup, CoefficientFn, ModelSpec, Theorem};
use crate::weights::DirectionVector;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Covcheck,
    Fraccheck,
    Simulate,
    Verify,
    Bound,
}

/// A catalog coefficient by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientRef {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl CoefficientRef {
    fn build(&self, shape: (usize, usize), input_dim: usize) -> Result<CoefficientFn> {
        catalog_lookup(&self.name, &self.params, shape, input_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Grushin {
        x0: Vec<f64>,
        y0: Vec<f64>,
        /// Dimension of `B̃`; defaults to `len(y0)`.
        l: Option<usize>,
        sigma: CoefficientRef,
    },
    General {
        x0: Vec<f64>,
        y0: Vec<f64>,
        l: Option<usize>,
        b1: CoefficientRef,
        b2: CoefficientRef,
        /// Rows of the constant `σ1`; defaults to the identity.
        sigma1: Option<Vec<Vec<f64>>>,
        sigma2: CoefficientRef,
    },
}

fn default_hurst() -> f64 {
    0.75
}
fn default_horizon() -> f64 {
    1.0
}
fn default_steps() -> usize {
    256
}
fn default_samples() -> usize {
    10_000
}
fn default_seed() -> u64 {
    1
}
fn default_p() -> f64 {
    2.0
}
fn default_one() -> usize {
    1
}
fn default_theorems() -> Vec<Theorem> {
    vec![Theorem::M]
}
fn default_function() -> TestFunction {
    TestFunction::sin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    #[serde(default = "default_hurst")]
    pub hurst: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// Stacked directions `(v1, v2)`.
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
    #[serde(default = "default_function")]
    pub test_function: TestFunction,
    #[serde(default = "default_theorems")]
    pub theorems: Vec<Theorem>,
    /// verify: also compare the weights of every pair of theorems.
    #[serde(default)]
    pub compare: bool,
    /// verify: repeat every case on the grid with twice the steps.
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub epsilon_tilde: Option<f64>,
    #[serde(default)]
    pub horizons: Vec<f64>,
    /// bound: further seeds for the stability check.
    #[serde(default)]
    pub extra_seeds: Vec<u64>,
    /// covcheck / fraccheck; defaults to `[hurst]`.
    #[serde(default)]
    pub hurst_values: Vec<f64>,
    /// covcheck: also run the sampler statistics.
    #[serde(default)]
    pub sampler_check: bool,
    /// simulate: number of paths.
    #[serde(default = "default_one")]
    pub paths: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Schema-level checks; model assumptions are checked when the model is built.
    pub fn validate(&self) -> Result<()> {
        HurstParam::new(self.hurst)
            .map_err(|_| Error::Config(format!("H = {} is outside the supported range [1/2, 1)", self.hurst)))?;
        for &h in &self.hurst_values {
            HurstParam::new(h).map_err(|_| Error::Config(format!("H = {h} is outside the supported range [1/2, 1)")))?;
        }
        TimeGrid::new(self.horizon, self.steps).map_err(|e| Error::Config(e.to_string()))?;
        if self.samples < 2 {
            return Err(Error::Config(format!("samples must be at least 2, got {}", self.samples)));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be positive".into()));
        }
        if self.horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("horizons must be positive".into()));
        }
        let needs_model = matches!(self.subcommand, Subcommand::Simulate | Subcommand::Verify | Subcommand::Bound);
        if needs_model && self.model.is_none() {
            return Err(Error::Config(format!("{:?} needs a model block", self.subcommand).to_lowercase()));
        }
        if matches!(self.subcommand, Subcommand::Verify | Subcommand::Bound) && self.directions.is_empty() {
            return Err(Error::Config("at least one direction is required".into()));
        }
        if self.subcommand == Subcommand::Bound && self.horizons.is_empty() {
            return Err(Error::Config("bound needs a list of horizons".into()));
        }
        if self.subcommand == Subcommand::Verify && self.theorems.is_empty() {
            return Err(Error::Config("at least one theorem is required".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn hurst_list(&self) -> Vec<f64> {
        if self.hurst_values.is_empty() {
            vec![self.hurst]
        } else {
            self.hurst_values.clone()
        }
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        let model = self.model.as_ref().ok_or_else(|| Error::Config("missing model block".into()))?;
        let hurst = HurstParam::new(self.hurst)?;
        let grid = self.grid()?;
        match model {
            ModelConfig::Grushin { x0, y0, l, sigma } => {
                let (d1, d2) = (x0.len(), y0.len());
                let l = l.unwrap_or(d2);
                ModelSpec::grushin(sigma.build((d2, l), d1)?, x0.clone(), y0.clone(), hurst, grid)
            }
            ModelConfig::General { x0, y0, l, b1, b2, sigma1, sigma2 } => {
                let (d1, d2) = (x0.len(), y0.len());
                let l = l.unwrap_or(d2);
                let sigma1 = match sigma1 {
                    None => DMatrix::identity(d1, d1),
                    Some(rows) => {
                        if rows.len() != d1 || rows.iter().any(|r| r.len() != d1) {
                            return Err(Error::ShapeMismatch(format!("sigma1 must be {d1}×{d1}")));
                        }
                        DMatrix::from_fn(d1, d1, |i, j| rows[i][j])
                    }
                };
                ModelSpec::general(
                    b1.build((d1, 1), d1)?,
                    b2.build((d2, 1), d1)?,
                    sigma1,
                    sigma2.build((d2, l), d1)?,
                    x0.clone(),
                    y0.clone(),
                    hurst,
                    grid,
                )
            }
        }
    }

    pub fn direction_vectors(&self, d1: usize, d2: usize) -> Result<Vec<DirectionVector>> {
        self.directions
            .iter()
            .map(|v| {
                if v.len() != d1 + d2 {
                    return Err(Error::ShapeMismatch(format!("direction of length {}, model needs {}", v.len(), d1 + d2)));
                }
                DirectionVector::split(v, d1)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VERIFY: &str = r#"{
        "subcommand": "verify",
        "hurst": 0.75, "steps": 64, "samples": 100,
        "model": {"kind": "grushin", "x0": [0.3], "y0": [0.0],
                  "sigma": {"name": "sine-affine", "params": [2, 1, 1]}},
        "directions": [[1, 0], [0, 1]],
        "theorems": ["3.1", "3.2"]
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::from_json(VERIFY).unwrap();
        assert_eq!(cfg.theorems, vec![Theorem::M, Theorem::MTilde]);
        assert_eq!(cfg.test_function, TestFunction::sin());
        let model = cfg.build_model().unwrap();
        assert_eq!((model.d1, model.d2, model.l), (1, 1, 1));
        assert_eq!(cfg.direction_vectors(1, 1).unwrap()[1].v2, vec![1.0]);
        assert!(cfg.direction_vectors(2, 1).is_err());
    }

    #[test]
    fn rejects_schema_violations() {
        let bad_h = VERIFY.replace("\"hurst\": 0.75", "\"hurst\": 0.3");
        let err = RunConfig::from_json(&bad_h).unwrap_err().to_string();
        assert!(err.contains("[1/2, 1)"), "{err}");
        assert!(RunConfig::from_json(&VERIFY.replace("\"samples\"", "\"sample_count\"")).is_err());
        assert!(RunConfig::from_json(r#"{"subcommand": "verify"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"subcommand": "explode"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"subcommand": "fraccheck"}"#).is_ok());
    }

    #[test]
    fn general_model_block() {
        let cfg = RunConfig::from_json(
            r#"{"subcommand": "simulate",
                "model": {"kind": "general", "x0": [0, 0], "y0": [0, 0],
                          "b1": {"name": "linear-drift", "params": [1]},
                          "b2": {"name": "sine-affine", "params": [0, 1, 1]},
                          "sigma1": [[1, 0], [0, 2]],
                          "sigma2": {"name": "sine-affine", "params": [2, 1, 1]}}}"#,
        )
        .unwrap();
        let model = cfg.build_model().unwrap();
        assert_eq!((model.d1, model.d2, model.l), (2, 2, 2));
    }
}
