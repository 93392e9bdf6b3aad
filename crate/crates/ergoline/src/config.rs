//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use ergoline_core::coupling::StartSpec;
use ergoline_core::lyapunov::{FitFamily, GridSpec, LyapunovSpec};
use ergoline_core::process::{ProcessModel, SimConfig};
use ergoline_core::rate::PhiSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A rate function given directly or fitted by the drift checker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiChoice {
    Fit { fit: FitFamily },
    Spec(PhiSpec),
}

/// Which product decomposition the bound uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    /// U ≡ 1, h = Ψ
    Tv,
    /// U = V-power from the Young split (exact e^{kt}·V for linear φ)
    #[default]
    Young,
}

/// Parameters of g(x) ≤ −a(1 + cx)^{α−1} for the feasibility check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilityInput {
    pub a: f64,
    pub c: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditInput {
    pub x0: f64,
    pub t_grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryInput {
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub thin: Option<u64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

impl Default for StationaryInput {
    fn default() -> Self {
        Self { x0: 0.0, burn_in: None, thin: None, bins: default_bins() }
    }
}

fn default_bins() -> usize {
    50
}

fn default_p() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ProcessModel,
    pub lyapunov: LyapunovSpec,
    pub phi: PhiChoice,
    #[serde(default = "default_p")]
    pub young_p: f64,
    #[serde(default)]
    pub weight: WeightChoice,
    pub start: Option<StartSpec>,
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub require_certificate: bool,
    #[serde(default)]
    pub feasibility: Option<FeasibilityInput>,
    #[serde(default)]
    pub audit: Option<AuditInput>,
    #[serde(default)]
    pub stationary: Option<StationaryInput>,
}

/// A parsed config plus the hash of its raw bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let raw = std::fs::read(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let config: ExperimentConfig =
            serde_json::from_slice(&raw).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })?;
        config.validate()?;
        Ok(LoadedConfig { config, sha256: sha256_hex(&raw) })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.lyapunov.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let PhiChoice::Spec(phi) = &self.phi {
            phi.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if !(self.young_p > 1.0) {
            return bad(format!("young_p = {} must exceed 1", self.young_p));
        }
        if let Some(StartSpec::Points { x1, x2 }) = &self.start {
            if !(*x1 >= 0.0 && x1 <= x2) {
                return bad(format!("start points must satisfy 0 <= x1 <= x2, got x1 = {x1}, x2 = {x2}"));
            }
        }
        if let Some(sim) = &self.sim {
            sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            for &t in &self.checkpoints {
                if !(t >= 0.0 && t <= sim.horizon) {
                    return bad(format!("checkpoint {t} is outside [0, horizon = {}]", sim.horizon));
                }
            }
        }
        if !(self.grid.lo > 0.0 && self.grid.hi > self.grid.lo && self.grid.points >= 2) {
            return bad(format!("bad grid {:?}", self.grid));
        }
        Ok(())
    }

    pub fn sim(&self) -> Result<&SimConfig, ConfigError> {
        self.sim.as_ref().ok_or_else(|| ConfigError::Invalid("this command needs a `sim` section".into()))
    }

    pub fn start(&self) -> Result<&StartSpec, ConfigError> {
        self.start.as_ref().ok_or_else(|| ConfigError::Invalid("this command needs a `start` section".into()))
    }

    pub fn x2(&self) -> Option<f64> {
        match self.start {
            Some(StartSpec::Points { x2, .. }) => Some(x2),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "model": {"family": "diffusion", "drift": "-1", "sigma": "1"},
        "lyapunov": {"family": "exp", "lambda": 1.0},
        "phi": {"family": "linear", "k": 0.5},
        "start": {"x1": 0.0, "x2": 2.0},
        "sim": {"dt": 0.001, "horizon": 4.0, "n_paths": 100, "master_seed": 1},
        "checkpoints": [1.0, 2.0, 4.0]
    }"#;

    #[test]
    fn parses_example() {
        let c: ExperimentConfig = serde_json::from_str(EXAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.weight, WeightChoice::Young);
        assert!(c.require_certificate);
        assert_eq!(c.x2(), Some(2.0));
    }

    #[test]
    fn parses_fit_and_laws() {
        let src = r#"{
            "model": {"family": "jump_diffusion", "drift": "-3*(x+1)^-0.5", "sigma": "1",
                      "intensity": 2, "kernel": {"type": "exp_displacement", "rate": "(x+1)^0.5"}},
            "lyapunov": {"family": "power_affine", "lambda": 1.0, "beta": 2.0},
            "phi": {"fit": {"family": "power", "gamma": 0.5}},
            "weight": "tv",
            "start": {"law1": {"type": "point_mass", "at": 0.0}, "law2": {"type": "exponential", "rate": 1.0}}
        }"#;
        let c: ExperimentConfig = serde_json::from_str(src).unwrap();
        assert_eq!(c.phi, PhiChoice::Fit { fit: FitFamily::Power { gamma: Some(0.5) } });
        assert!(matches!(c.start, Some(StartSpec::Laws { .. })));
    }

    #[test]
    fn bad_expression_reports_offset() {
        let src = EXAMPLE.replace("\"-1\"", "\"-1 + * x\"");
        let e = serde_json::from_str::<ExperimentConfig>(&src).unwrap_err().to_string();
        assert!(e.contains("byte"), "{e}");
    }

    #[test]
    fn unordered_start_is_invalid() {
        let src = EXAMPLE.replace("\"x1\": 0.0, \"x2\": 2.0", "\"x1\": 3.0, \"x2\": 2.0");
        let c: ExperimentConfig = serde_json::from_str(&src).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
