//! JSON run configuration.
//!
//! ```json
//! {
//!   "ensemble": { "family": "scalar_theta_drift", "n_nodes": 16 },
//!   "problem": { "x0": [0.0], "xf": [1.0], "t_f": 1.0, "eps": 1.0,
//!                "penalty_a": 1e6, "steps_k": 256 },
//!   "controller": "discrete",
//!   "n_paths": 100, "seed": 7,
//!   "study": { "a_list": [1e2, 1e6], "k_list": [64, 512], "n_paths": 1000, "base_seed": 0 },
//!   "output_dir": "out"
//! }
//! ```
//!
//! The ensemble is given by exactly one of `nodes` (explicit list of
//! `{theta, weight, A, B}` with row-major nested arrays), `family` (a
//! built-in, see [`Family`]) or `file` (path to a JSON document holding one of
//! the other two forms, relative to the config file).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bridge::BridgeProblem;
use crate::ensemble::{ensemble_from_nodes, EnsembleSpec, Family, NodeSpec, DEFAULT_NODES};
use crate::error::{BridgeError, Result};
use crate::gramian::DEFAULT_THRESHOLD;

pub const DEFAULT_EPS: f64 = 1.0;
pub const DEFAULT_PENALTY: f64 = 1e6;
pub const DEFAULT_STEPS: usize = 256;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControllerChoice {
    #[default]
    Discrete,
    Continuous,
    Markov,
    Deterministic,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    x0: Option<Vec<f64>>,
    xf: Option<Vec<f64>>,
    t_f: f64,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_penalty")]
    penalty_a: f64,
    #[serde(default = "default_steps")]
    steps_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub a_list: Vec<f64>,
    pub k_list: Vec<usize>,
    #[serde(default = "default_study_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub base_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    ensemble: Value,
    problem: RawProblem,
    #[serde(default)]
    controller: ControllerChoice,
    #[serde(default)]
    study: Option<StudyConfig>,
    #[serde(default = "default_paths")]
    n_paths: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}
fn default_penalty() -> f64 {
    DEFAULT_PENALTY
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_paths() -> usize {
    1
}
fn default_study_paths() -> usize {
    1000
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ensemble: EnsembleSpec,
    /// Name of the built-in family, when one was used.
    pub family: Option<String>,
    pub problem: BridgeProblem,
    pub controller: ControllerChoice,
    pub study: Option<StudyConfig>,
    pub n_paths: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threshold: f64,
}

fn config_err(msg: impl Into<String>) -> BridgeError {
    BridgeError::Config(msg.into())
}

fn ensemble_from_value(value: &Value, base_dir: &Path, allow_file: bool) -> Result<(EnsembleSpec, Option<String>)> {
    let obj = value
        .as_object()
        .ok_or_else(|| config_err("field `ensemble` must be an object"))?;
    let sources: Vec<&str> = ["nodes", "family", "file"]
        .into_iter()
        .filter(|k| obj.contains_key(*k))
        .collect();
    if sources.len() != 1 {
        return Err(config_err(format!(
            "field `ensemble` needs exactly one of `nodes`, `family`, `file` (found {})",
            if sources.is_empty() { "none".to_string() } else { sources.join(", ") }
        )));
    }
    match sources[0] {
        "nodes" => {
            if obj.len() != 1 {
                return Err(config_err("field `ensemble`: `nodes` takes no sibling fields"));
            }
            let nodes: Vec<NodeSpec> = serde_json::from_value(obj["nodes"].clone())
                .map_err(|e| config_err(format!("field `ensemble.nodes`: {e}")))?;
            let ens = ensemble_from_nodes(&nodes)
                .map_err(|e| config_err(format!("field `ensemble.nodes`: {e}")))?;
            Ok((ens, None))
        }
        "family" => {
            let mut fam_obj = obj.clone();
            let n_nodes = match fam_obj.remove("n_nodes") {
                None => DEFAULT_NODES,
                Some(v) => v
                    .as_u64()
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| config_err("field `ensemble.n_nodes` must be a positive integer"))?
                    as usize,
            };
            let family: Family = serde_json::from_value(Value::Object(fam_obj))
                .map_err(|e| config_err(format!("field `ensemble.family`: {e}")))?;
            let ens = family
                .build(n_nodes)
                .map_err(|e| config_err(format!("field `ensemble.family`: {e}")))?;
            Ok((ens, Some(family.name().to_string())))
        }
        _ => {
            if !allow_file {
                return Err(config_err("ensemble file may not reference another file"));
            }
            let rel = obj["file"]
                .as_str()
                .ok_or_else(|| config_err("field `ensemble.file` must be a string"))?;
            let path = base_dir.join(rel);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| config_err(format!("field `ensemble.file`: {}: {e}", path.display())))?;
            let inner: Value = serde_json::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            ensemble_from_value(&inner, path.parent().unwrap_or(base_dir), false)
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let (ensemble, family) = ensemble_from_value(&raw.ensemble, base_dir, true)?;
        let d = ensemble.state_dim();
        let p = raw.problem;
        let problem = BridgeProblem {
            x0: p.x0.unwrap_or_else(|| vec![0.0; d]),
            xf: p.xf.unwrap_or_else(|| vec![0.0; d]),
            t_f: p.t_f,
            eps: p.eps,
            penalty_a: p.penalty_a,
            steps_k: p.steps_k,
        };
        problem
            .validate(&ensemble)
            .map_err(|e| config_err(format!("field `problem`: {e}")))?;
        if raw.controller == ControllerChoice::Markov && !ensemble.is_brownian() {
            return Err(config_err(
                "field `controller`: `markov` is only valid for the brownian family (A = 0, B = I)",
            ));
        }
        if !(raw.threshold > 0.0 && raw.threshold < 1.0) {
            return Err(config_err("field `threshold` must lie in (0, 1)"));
        }
        Ok(RunConfig {
            ensemble,
            family,
            problem,
            controller: raw.controller,
            study: raw.study,
            n_paths: raw.n_paths,
            seed: raw.seed,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            threshold: raw.threshold,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }
}
