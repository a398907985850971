//! Monte Carlo endpoint verification and the (a, k) convergence study.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{synthesize_discrete, BridgeProblem, ContinuousFeedforward};
use crate::control::Controller;
use crate::ensemble::EnsembleSpec;
use crate::error::{BridgeError, Result};
use crate::noise::NoisePath;
use crate::sim::{simulate_ensemble_lean, SimulationRecord};
use crate::stats::{quantile, Summary};

/// Final window excluded from comparisons against the limiting controller,
/// in fine-grid steps.
pub const ENDPOINT_WINDOW_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointStats {
    pub n_paths: usize,
    pub base_seed: u64,
    pub error_p50: f64,
    pub error_p90: f64,
    pub error_p99: f64,
    pub error_max: f64,
    pub mean_endpoint: Vec<f64>,
    pub mean_endpoint_stderr: Vec<f64>,
    pub running_cost: Summary,
    pub penalized_cost: Summary,
    #[serde(skip)]
    pub errors: Vec<f64>,
}

/// What endpoint statistics need from one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    pub endpoint_error: f64,
    pub endpoint: DVector<f64>,
    pub running_cost: f64,
    pub penalized_cost: f64,
}

impl From<&SimulationRecord> for PathOutcome {
    fn from(rec: &SimulationRecord) -> Self {
        PathOutcome {
            endpoint_error: rec.endpoint_error,
            endpoint: rec.averaged_state.last().cloned().unwrap_or_default(),
            running_cost: rec.running_cost,
            penalized_cost: rec.penalized_cost,
        }
    }
}

impl EndpointStats {
    pub fn from_outcomes(outcomes: &[PathOutcome], base_seed: u64) -> Self {
        let errors: Vec<f64> = outcomes.iter().map(|r| r.endpoint_error).collect();
        let d = outcomes.first().map_or(0, |o| o.endpoint.len());
        let per_coord: Vec<Summary> = (0..d)
            .map(|c| Summary::of(&outcomes.iter().map(|r| r.endpoint[c]).collect::<Vec<_>>()))
            .collect();
        EndpointStats {
            n_paths: outcomes.len(),
            base_seed,
            error_p50: quantile(&errors, 0.5),
            error_p90: quantile(&errors, 0.9),
            error_p99: quantile(&errors, 0.99),
            error_max: errors.iter().copied().fold(0.0, f64::max),
            mean_endpoint: per_coord.iter().map(|s| s.mean).collect(),
            mean_endpoint_stderr: per_coord.iter().map(|s| s.stderr).collect(),
            running_cost: Summary::of(&outcomes.iter().map(|r| r.running_cost).collect::<Vec<_>>()),
            penalized_cost: Summary::of(&outcomes.iter().map(|r| r.penalized_cost).collect::<Vec<_>>()),
            errors,
        }
    }
}

/// Seed of path `index` in a run starting at `base_seed`.
pub fn path_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Simulates `n_paths` seeded paths (`base_seed + index`) in parallel.
pub fn verify_endpoint<C>(
    ens: &EnsembleSpec,
    prob: &BridgeProblem,
    controller: &C,
    n_paths: usize,
    base_seed: u64,
) -> Result<EndpointStats>
where
    C: Controller + Clone + Send + Sync,
{
    if n_paths < 2 {
        return Err(BridgeError::invalid("endpoint verification needs at least 2 paths"));
    }
    prob.validate(ens)?;
    let m = ens.input_dim();
    let outcomes = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let noise = NoisePath::generate(path_seed(base_seed, p), prob.steps_k, prob.dt(), m);
            let mut c = controller.clone();
            let rec = simulate_ensemble_lean(ens, prob, &mut c, &noise)?;
            Ok(PathOutcome::from(&rec))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EndpointStats::from_outcomes(&outcomes, base_seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCell {
    pub penalty_a: f64,
    pub steps_k: usize,
    /// Σ ‖u_{a,k}(t_i) − u*(t_i)‖² Δt over the reference grid.
    pub distance: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub reference_steps: usize,
    pub excluded_window: f64,
    pub n_paths: usize,
    pub base_seed: u64,
    pub cells: Vec<ConvergenceCell>,
    /// Per-cell, per-path distances (same order as `cells`), for paired
    /// comparisons.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl ConvergenceReport {
    pub fn cell(&self, penalty_a: f64, steps_k: usize) -> Option<&ConvergenceCell> {
        self.cells
            .iter()
            .find(|c| c.penalty_a == penalty_a && c.steps_k == steps_k)
    }

    pub fn samples_for(&self, penalty_a: f64, steps_k: usize) -> Option<&[f64]> {
        self.cells
            .iter()
            .position(|c| c.penalty_a == penalty_a && c.steps_k == steps_k)
            .map(|i| self.samples[i].as_slice())
    }
}

fn strictly_increasing<T: PartialOrd>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Distance of the discrete controllers on every (a, k) cell to the limiting
/// feedforward controller on the finest grid, with paired noise paths.
pub fn convergence_study(
    ens: &EnsembleSpec,
    prob: &BridgeProblem,
    a_list: &[f64],
    k_list: &[usize],
    n_paths: usize,
    base_seed: u64,
) -> Result<ConvergenceReport> {
    if a_list.is_empty() || k_list.is_empty() {
        return Err(BridgeError::invalid("a_list and k_list must be nonempty"));
    }
    if !strictly_increasing(a_list) || !strictly_increasing(k_list) {
        return Err(BridgeError::invalid("a_list and k_list must be strictly increasing"));
    }
    if a_list.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(BridgeError::invalid("penalties must be positive and finite"));
    }
    if n_paths < 2 {
        return Err(BridgeError::invalid("study needs at least 2 paths"));
    }
    let k_ref = *k_list.last().unwrap();
    if k_list.iter().any(|k| *k == 0 || !k_ref.is_multiple_of(*k)) {
        return Err(BridgeError::invalid("every k must divide the finest k"));
    }
    if k_ref <= ENDPOINT_WINDOW_STEPS {
        return Err(BridgeError::invalid(format!(
            "finest k must exceed the {ENDPOINT_WINDOW_STEPS}-step endpoint window"
        )));
    }
    let ref_prob = prob.with_steps(k_ref);
    ref_prob.validate(ens)?;
    let reference = ContinuousFeedforward::new(ens, &ref_prob)?;

    let mut cells = Vec::new();
    let mut laws = Vec::new();
    for &a in a_list {
        for &k in k_list {
            laws.push((k, synthesize_discrete(ens, &prob.with_penalty(a).with_steps(k))?));
            cells.push((a, k));
        }
    }

    let dt_ref = ref_prob.dt();
    let last = k_ref - ENDPOINT_WINDOW_STEPS;
    let m = ens.input_dim();
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let fine = NoisePath::generate(path_seed(base_seed, p), k_ref, dt_ref, m);
            let mut ev = reference.law.evaluator();
            let reference_u: Vec<DVector<f64>> = (0..=last)
                .map(|i| ev.control(i, &fine.increments[..i]))
                .collect();
            laws.iter()
                .map(|(k, gains)| {
                    let r = k_ref / k;
                    let coarse = fine.coarsen(r)?;
                    let mut ev = gains.law.evaluator();
                    let mut dist = 0.0;
                    let mut u = ev.control(0, &[]);
                    for (i, u_ref) in reference_u.iter().enumerate() {
                        if i % r == 0 && i > 0 {
                            u = ev.control(i / r, &coarse.increments[..i / r]);
                        }
                        dist += (&u - u_ref).norm_squared() * dt_ref;
                    }
                    Ok(dist)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let samples: Vec<Vec<f64>> = (0..cells.len())
        .map(|c| per_path.iter().map(|row| row[c]).collect())
        .collect();
    Ok(ConvergenceReport {
        reference_steps: k_ref,
        excluded_window: ENDPOINT_WINDOW_STEPS as f64 * dt_ref,
        n_paths,
        base_seed,
        cells: cells
            .into_iter()
            .zip(&samples)
            .map(|((a, k), s)| ConvergenceCell {
                penalty_a: a,
                steps_k: k,
                distance: Summary::of(s),
            })
            .collect(),
        samples,
    })
}
