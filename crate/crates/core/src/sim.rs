//! Euler–Maruyama simulation of the controlled ensemble and direct
//! evaluation of the θ-averaged output process.

use nalgebra::DVector;

use crate::bridge::BridgeProblem;
use crate::control::{Controller, Step};
use crate::ensemble::EnsembleSpec;
use crate::error::{BridgeError, Result};
use crate::gramian::GramianTable;
use crate::noise::NoisePath;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub grid: Vec<f64>,
    pub noise: NoisePath,
    /// `per_node_states[n][i] = X(t_i, θ_n)`; empty for averaged-only runs.
    pub per_node_states: Vec<Vec<DVector<f64>>>,
    pub averaged_state: Vec<DVector<f64>>,
    /// u(t_i), i < k.
    pub control: Vec<DVector<f64>>,
    pub running_cost: f64,
    pub penalized_cost: f64,
    pub endpoint_error: f64,
}

fn check_inputs(ens: &EnsembleSpec, prob: &BridgeProblem, noise: &NoisePath) -> Result<()> {
    prob.validate(ens)?;
    if noise.steps() != prob.steps_k || noise.dim() != ens.input_dim() {
        return Err(BridgeError::invalid(format!(
            "noise path has {} steps of dimension {}, expected {} of dimension {}",
            noise.steps(),
            noise.dim(),
            prob.steps_k,
            ens.input_dim()
        )));
    }
    if (noise.dt - prob.dt()).abs() > 1e-12 * prob.dt() {
        return Err(BridgeError::invalid("noise path step size does not match the problem"));
    }
    Ok(())
}

fn finish(
    prob: &BridgeProblem,
    noise: &NoisePath,
    per_node_states: Vec<Vec<DVector<f64>>>,
    averaged_state: Vec<DVector<f64>>,
    control: Vec<DVector<f64>>,
) -> SimulationRecord {
    let mut rec = SimulationRecord {
        grid: prob.grid(),
        noise: noise.clone(),
        per_node_states,
        averaged_state,
        control,
        running_cost: 0.0,
        penalized_cost: 0.0,
        endpoint_error: 0.0,
    };
    let (running, penalized) = evaluate_cost(&rec, prob);
    rec.running_cost = running;
    rec.penalized_cost = penalized;
    rec.endpoint_error = (rec.averaged_state[prob.steps_k].clone() - prob.xf_vec()).norm();
    rec
}

/// Euler–Maruyama for every node, all driven by the one shared noise path:
/// `X_{i+1} = X_i + (A X_i + B u_i) Δt + √ε B ΔW_i`.
pub fn simulate_ensemble<C: Controller + ?Sized>(
    ens: &EnsembleSpec,
    prob: &BridgeProblem,
    controller: &mut C,
    noise: &NoisePath,
) -> Result<SimulationRecord> {
    run_ensemble(ens, prob, controller, noise, true)
}

/// As [`simulate_ensemble`] but drops the per-node trajectories.
pub fn simulate_ensemble_lean<C: Controller + ?Sized>(
    ens: &EnsembleSpec,
    prob: &BridgeProblem,
    controller: &mut C,
    noise: &NoisePath,
) -> Result<SimulationRecord> {
    run_ensemble(ens, prob, controller, noise, false)
}

fn run_ensemble<C: Controller + ?Sized>(
    ens: &EnsembleSpec,
    prob: &BridgeProblem,
    controller: &mut C,
    noise: &NoisePath,
    keep_nodes: bool,
) -> Result<SimulationRecord> {
    check_inputs(ens, prob, noise)?;
    controller.reset();
    let k = prob.steps_k;
    let dt = prob.dt();
    let sqrt_eps = prob.eps.sqrt();
    let d = ens.state_dim();
    let nodes = ens.nodes();

    let x0 = prob.x0_vec();
    let mut states: Vec<DVector<f64>> = vec![x0.clone(); nodes.len()];
    let mut per_node: Vec<Vec<DVector<f64>>> = if keep_nodes {
        (0..nodes.len()).map(|_| vec![x0.clone()]).collect()
    } else {
        Vec::new()
    };
    let mut averaged = Vec::with_capacity(k + 1);
    averaged.push(x0);
    let mut controls = Vec::with_capacity(k);
    let mut scratch = DVector::zeros(d);

    for i in 0..k {
        let t = i as f64 * dt;
        let u = controller.control(&Step {
            index: i,
            time: t,
            t_f: prob.t_f,
            state: &averaged[i],
            past_increments: &noise.increments[..i],
        })?;
        // Input seen by every node over the step: u Δt + √ε ΔW.
        let forcing = dt * &u + sqrt_eps * &noise.increments[i];
        let mut avg = DVector::zeros(d);
        for (n, (node, x)) in nodes.iter().zip(states.iter_mut()).enumerate() {
            scratch.copy_from(x);
            x.gemv(dt, &node.a, &scratch, 1.0);
            x.gemv(1.0, &node.b, &forcing, 1.0);
            avg.axpy(node.weight, x, 1.0);
            if keep_nodes {
                per_node[n].push(x.clone());
            }
        }
        if avg.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::Divergence {
                step: i + 1,
                time: (i + 1) as f64 * dt,
            });
        }
        averaged.push(avg);
        controls.push(u);
    }
    Ok(finish(prob, noise, per_node, averaged, controls))
}

/// Left-endpoint evaluation of the averaged output process,
/// `x(t_i) = Ψ(t_i) x0 + Σ_{j<i} Φ(t_i, t_j)(u_j Δt + √ε ΔW_j)`.
///
/// `table` must be built for `(prob.t_f, prob.steps_k)`.
pub fn simulate_average<C: Controller + ?Sized>(
    ens: &EnsembleSpec,
    prob: &BridgeProblem,
    table: &GramianTable,
    controller: &mut C,
    noise: &NoisePath,
) -> Result<SimulationRecord> {
    check_inputs(ens, prob, noise)?;
    let k = prob.steps_k;
    if table.steps() != k || (table.t_f - prob.t_f).abs() > 1e-12 * prob.t_f {
        return Err(BridgeError::invalid("Gramian table does not match the problem grid"));
    }
    controller.reset();
    let dt = prob.dt();
    let sqrt_eps = prob.eps.sqrt();
    let x0 = prob.x0_vec();

    let mut forcing: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut averaged = Vec::with_capacity(k + 1);
    let mut controls = Vec::with_capacity(k);
    averaged.push(x0.clone());
    for i in 0..k {
        let u = controller.control(&Step {
            index: i,
            time: i as f64 * dt,
            t_f: prob.t_f,
            state: &averaged[i],
            past_increments: &noise.increments[..i],
        })?;
        forcing.push(dt * &u + sqrt_eps * &noise.increments[i]);
        controls.push(u);

        let n = i + 1;
        let mut x = &table.mean_at[n] * &x0;
        for (j, f) in forcing.iter().enumerate() {
            x.gemv(1.0, table.phi_between(n, j), f, 1.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::Divergence {
                step: n,
                time: n as f64 * dt,
            });
        }
        averaged.push(x);
    }
    Ok(finish(prob, noise, Vec::new(), averaged, controls))
}

/// `(½ Σ uᵢᵀuᵢ Δt, that + a‖x_k − xf‖²)`.
pub fn evaluate_cost(record: &SimulationRecord, prob: &BridgeProblem) -> (f64, f64) {
    let dt = prob.dt();
    let running = 0.5 * dt * record.control.iter().map(|u| u.norm_squared()).sum::<f64>();
    let miss = record
        .averaged_state
        .last()
        .map_or(0.0, |x| (x - prob.xf_vec()).norm_squared());
    (running, running + prob.penalty_a * miss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{MarkovControl, SampledControl, ZeroControl};
    use crate::ensemble::Family;
    use crate::gramian::deterministic_steer;
    use crate::linalg::mat_exp;

    fn prob(k: usize, eps: f64) -> BridgeProblem {
        BridgeProblem {
            x0: vec![0.0],
            xf: vec![0.0],
            t_f: 1.0,
            eps,
            penalty_a: 1e6,
            steps_k: k,
        }
    }

    #[test]
    fn uncontrolled_flow_tracks_exponential() {
        let ens = Family::ScalarThetaDrift { scale: 1.0 }.build(4).unwrap();
        let p = BridgeProblem {
            x0: vec![1.0],
            ..prob(1000, 0.0)
        };
        let noise = NoisePath::generate(1, 1000, p.dt(), 1);
        let rec = simulate_ensemble(&ens, &p, &mut ZeroControl { dim: 1 }, &noise).unwrap();
        for (node, traj) in ens.nodes().iter().zip(&rec.per_node_states) {
            let exact = mat_exp(&node.a, 1.0).unwrap()[(0, 0)];
            assert!((traj[1000][0] - exact).abs() < 2e-3, "{} vs {exact}", traj[1000][0]);
        }
        for (i, x) in rec.averaged_state.iter().enumerate() {
            let sum: f64 = ens
                .nodes()
                .iter()
                .zip(&rec.per_node_states)
                .map(|(n, tr)| n.weight * tr[i][0])
                .sum();
            assert!((x[0] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_closed_loop_matches_discrete_state_solution() {
        let ens = Family::Brownian { dim: 1 }.build(1).unwrap();
        let k = 256;
        let p = prob(k, 1.0);
        let noise = NoisePath::generate(9, k, p.dt(), 1);
        let rec = simulate_ensemble(&ens, &p, &mut MarkovControl, &noise).unwrap();
        let dt = p.dt();
        // x(t_i) = √ε (t_f − t_i) Σ_{j<i} ΔW_j/(t_f − t_j): agreement up to O(√Δt)
        let mut sum = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..k {
            let x = (1.0 - i as f64 * dt) * sum;
            worst = worst.max((rec.averaged_state[i][0] - x).abs());
            sum += noise.increments[i][0] / (1.0 - i as f64 * dt);
        }
        assert!(worst < 5.0 * dt.sqrt(), "{worst}");
        assert!((rec.averaged_state[k][0] - noise.increments[k - 1][0]).abs() < 1e-12);
    }

    #[test]
    fn averaged_process_without_forcing() {
        let ens = Family::ScalarThetaDrift { scale: 1.0 }.build(8).unwrap();
        let p = prob(16, 0.0);
        let table = GramianTable::build(&ens, 1.0, 16).unwrap();
        let noise = NoisePath::generate(3, 16, p.dt(), 1);
        let rec = simulate_average(&ens, &p, &table, &mut ZeroControl { dim: 1 }, &noise).unwrap();
        assert!(rec.averaged_state.iter().all(|x| x[0] == 0.0));
        assert!(rec.per_node_states.is_empty());
    }

    #[test]
    fn averaged_brownian_is_the_random_walk() {
        let ens = Family::Brownian { dim: 2 }.build(2).unwrap();
        let p = BridgeProblem {
            x0: vec![0.0, 0.0],
            xf: vec![0.0, 0.0],
            ..prob(32, 1.0)
        };
        let table = GramianTable::build(&ens, 1.0, 32).unwrap();
        let noise = NoisePath::generate(5, 32, p.dt(), 2);
        let rec = simulate_average(&ens, &p, &table, &mut ZeroControl { dim: 2 }, &noise).unwrap();
        for (x, w) in rec.averaged_state.iter().zip(noise.wiener_values()) {
            assert!((x - w).norm() < 1e-14);
        }
    }

    #[test]
    fn average_and_ensemble_agree_under_refinement() {
        // Self-consistency: the gap between the two discretizations shrinks
        // at least linearly with Δt.
        let ens = Family::ScalarThetaDrift { scale: 1.0 }.build(8).unwrap();
        let gap = |k: usize| {
            let p = BridgeProblem {
                x0: vec![1.0],
                xf: vec![0.5],
                ..prob(k, 1.0)
            };
            let table = GramianTable::build(&ens, 1.0, k).unwrap();
            let fine = NoisePath::generate(11, 512, 1.0 / 512.0, 1);
            let noise = fine.coarsen(512 / k).unwrap();
            let steer = deterministic_steer(&ens, &p.x0_vec(), &p.xf_vec(), 1.0).unwrap();
            let mut c = SampledControl::from_steering(&steer, &p.grid()).unwrap();
            let a = simulate_average(&ens, &p, &table, &mut c, &noise).unwrap();
            let e = simulate_ensemble(&ens, &p, &mut c, &noise).unwrap();
            a.averaged_state
                .iter()
                .zip(&e.averaged_state)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max)
        };
        let (g128, g256, g512) = (gap(128), gap(256), gap(512));
        assert!(g256 < 0.6 * g128 && g512 < 0.6 * g256, "{g128} {g256} {g512}");
    }

    #[test]
    fn divergence_is_reported() {
        let ens = Family::ScalarThetaDrift { scale: 1e6 }.build(2).unwrap();
        let p = BridgeProblem {
            x0: vec![1.0],
            t_f: 100.0,
            ..prob(100, 0.0)
        };
        let noise = NoisePath::generate(0, 100, p.dt(), 1);
        let r = simulate_ensemble(&ens, &p, &mut ZeroControl { dim: 1 }, &noise);
        assert!(matches!(r, Err(BridgeError::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn cost_values() {
        let ens = Family::Brownian { dim: 1 }.build(1).unwrap();
        let p = prob(10, 0.0);
        let noise = NoisePath::generate(0, 10, p.dt(), 1);
        let rec = simulate_ensemble(&ens, &p, &mut ZeroControl { dim: 1 }, &noise).unwrap();
        assert_eq!(evaluate_cost(&rec, &p), (0.0, 0.0));

        let mut ones = SampledControl {
            values: vec![DVector::from_element(1, 1.0); 10],
        };
        let rec = simulate_ensemble(&ens, &p, &mut ones, &noise).unwrap();
        let (running, penalized) = evaluate_cost(&rec, &p);
        assert!((running - 0.5).abs() < 1e-14);
        assert!((penalized - (0.5 + 1e6)).abs() < 1e-6);
    }

    #[test]
    fn rejects_mismatched_noise() {
        let ens = Family::Brownian { dim: 1 }.build(1).unwrap();
        let p = prob(10, 1.0);
        let noise = NoisePath::generate(0, 8, p.dt(), 1);
        assert!(simulate_ensemble(&ens, &p, &mut ZeroControl { dim: 1 }, &noise).is_err());
    }
}
