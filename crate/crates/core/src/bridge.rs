//! Bridge controllers for the θ-averaged process.
//!
//! Three laws are provided:
//!
//! * [`synthesize_discrete`]: the optimum of the penalized discrete-time
//!   problem, a causal linear functional of past noise increments;
//! * [`ContinuousFeedforward`]: the a → ∞, k → ∞ limit evaluated on a grid
//!   with a left-endpoint Itô sum;
//! * [`markov_bridge_control`]: the state feedback `−x/(t_f − t)` that is
//!   only valid for the pure-noise family.
//!
//! Feedforward laws share one structure,
//! `u_i = Φ_iᵀ (c − √ε Σ_{j<i} N_j ΔW_j)`, so both are stored as the factors
//! `Φ_i` and `N_j` and evaluated by accumulating the sum, never as the k²
//! gain blocks `K[i][j] = Φ_iᵀ N_j`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSpec;
use crate::error::{BridgeError, Result};
use crate::gramian::{ControllabilityReport, GramianTable, DEFAULT_THRESHOLD};
use crate::linalg::spd_factor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeProblem {
    pub x0: Vec<f64>,
    pub xf: Vec<f64>,
    pub t_f: f64,
    pub eps: f64,
    pub penalty_a: f64,
    pub steps_k: usize,
}

impl BridgeProblem {
    pub fn validate(&self, ens: &EnsembleSpec) -> Result<()> {
        let d = ens.state_dim();
        if self.x0.len() != d || self.xf.len() != d {
            return Err(BridgeError::invalid(format!(
                "x0 and xf must have dimension {d}, got {} and {}",
                self.x0.len(),
                self.xf.len()
            )));
        }
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(BridgeError::invalid("t_f must be positive and finite"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(BridgeError::invalid("eps must be nonnegative"));
        }
        if !(self.penalty_a > 0.0) || self.penalty_a.is_nan() {
            return Err(BridgeError::invalid("penalty_a must be positive"));
        }
        if self.steps_k < 1 {
            return Err(BridgeError::invalid("steps_k must be at least 1"));
        }
        if self.x0.iter().chain(&self.xf).any(|v| !v.is_finite()) {
            return Err(BridgeError::invalid("endpoints must be finite"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_f / self.steps_k as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.steps_k).map(|i| i as f64 * self.dt()).collect()
    }

    pub fn x0_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }

    pub fn xf_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xf)
    }

    /// Target shifted by the free response: `xf − Ψ(t_f) x0`.
    pub fn shifted_target(&self, ens: &EnsembleSpec) -> Result<DVector<f64>> {
        let x0 = self.x0_vec();
        let xf = self.xf_vec();
        if x0.iter().all(|v| *v == 0.0) {
            return Ok(xf);
        }
        Ok(xf - ens.mean_map(self.t_f)? * x0)
    }

    pub fn with_penalty(&self, penalty_a: f64) -> Self {
        BridgeProblem {
            penalty_a,
            ..self.clone()
        }
    }

    pub fn with_steps(&self, steps_k: usize) -> Self {
        BridgeProblem {
            steps_k,
            ..self.clone()
        }
    }
}

/// Factored feedforward law `u_i = Φ_iᵀ (c − √ε Σ_{j<i} N_j ΔW_j)`.
#[derive(Debug, Clone)]
pub struct FeedforwardLaw {
    pub grid: Vec<f64>,
    pub eps: f64,
    /// Φ(t_f, t_i), i < k.
    pub phi: Vec<DMatrix<f64>>,
    /// N_j, j < k (d×m).
    pub noise_weights: Vec<DMatrix<f64>>,
    /// c (d).
    pub target_weight: DVector<f64>,
}

impl FeedforwardLaw {
    pub fn steps(&self) -> usize {
        self.phi.len()
    }

    /// Gain block `K[i][j]` mapping `ΔW_j` to `u_i` (the control carries an
    /// extra factor −√ε). `None` for non-causal pairs `j >= i`.
    pub fn gain(&self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        (j < i && i < self.steps()).then(|| self.phi[i].transpose() * &self.noise_weights[j])
    }

    /// Open-loop term `v_i = Φ_iᵀ c`.
    pub fn open_loop(&self, i: usize) -> DVector<f64> {
        self.phi[i].transpose() * &self.target_weight
    }

    /// Number of causal gain blocks, k(k−1)/2.
    pub fn gain_block_count(&self) -> usize {
        let k = self.steps();
        k * k.saturating_sub(1) / 2
    }

    /// Control at step `i` given exactly the increments `ΔW_0..ΔW_{i−1}`.
    pub fn control(&self, i: usize, past: &[DVector<f64>]) -> DVector<f64> {
        let mut acc = self.target_weight.clone();
        let s = self.eps.sqrt();
        for (j, dw) in past.iter().enumerate().take(i) {
            acc -= s * (&self.noise_weights[j] * dw);
        }
        self.phi[i].transpose() * acc
    }

    /// A per-path evaluator that accumulates the noise sum incrementally.
    pub fn evaluator(&self) -> LawEvaluator<'_> {
        LawEvaluator {
            law: self,
            acc: self.target_weight.clone(),
            next: 0,
        }
    }
}

/// Streaming evaluation of a [`FeedforwardLaw`]; O(d·m) work per step.
#[derive(Debug, Clone)]
pub struct LawEvaluator<'a> {
    law: &'a FeedforwardLaw,
    acc: DVector<f64>,
    next: usize,
}

impl LawEvaluator<'_> {
    /// `past` must hold at least the first `i` increments; steps must be
    /// visited in order.
    pub fn control(&mut self, i: usize, past: &[DVector<f64>]) -> DVector<f64> {
        assert!(i >= self.next, "feedforward law evaluated out of order");
        let s = self.law.eps.sqrt();
        while self.next < i {
            let j = self.next;
            self.acc -= s * (&self.law.noise_weights[j] * &past[j]);
            self.next += 1;
        }
        self.law.phi[i].transpose() * &self.acc
    }

    pub fn reset(&mut self) {
        self.acc = self.law.target_weight.clone();
        self.next = 0;
    }
}

/// Optimal causal controller of the penalized discrete problem.
///
/// With `M_j = Σ_{α=j}^{k−1} Φ_α Φ_αᵀ Δt + (1/2a) I`, the law is
/// `u_i = −√ε Σ_{j<i} Φ_iᵀ M_{j+1}⁻¹ Φ_j ΔW_j + Φ_iᵀ M_0⁻¹ (xf − Ψ(t_f) x0)`.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    pub law: FeedforwardLaw,
    pub penalty_a: f64,
    /// M_j for j = 0..=k; `M_k = (1/2a) I`.
    pub weighting: Vec<DMatrix<f64>>,
}

impl ControllerGains {
    pub fn steps(&self) -> usize {
        self.law.steps()
    }

    pub fn gain(&self, i: usize, j: usize) -> Option<DMatrix<f64>> {
        self.law.gain(i, j)
    }

    pub fn open_loop(&self) -> Vec<DVector<f64>> {
        (0..self.steps()).map(|i| self.law.open_loop(i)).collect()
    }

    /// Frobenius norm of the gain row `[K[i][0] … K[i][i−1]]` for each i.
    pub fn gain_row_norms(&self) -> Vec<f64> {
        (0..self.steps())
            .map(|i| {
                (0..i)
                    .map(|j| self.law.gain(i, j).unwrap().norm_squared())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Covariance of the terminal averaged state `x_k` of the discrete
    /// system under this law. The coefficient of `ΔW_j` in `x_k` collapses to
    /// `√ε (1/2a) M_{j+1}⁻¹ Φ_j`.
    pub fn endpoint_covariance(&self) -> DMatrix<f64> {
        let d = self.law.target_weight.len();
        let dt = self.law.grid[1] - self.law.grid[0];
        let scale = self.law.eps * dt / (4.0 * self.penalty_a * self.penalty_a);
        self.law
            .noise_weights
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, n| acc + scale * n * n.transpose())
    }
}

fn grid_phis(ens: &EnsembleSpec, prob: &BridgeProblem) -> Result<Vec<DMatrix<f64>>> {
    let dt = prob.dt();
    let k = prob.steps_k;
    (0..k)
        .into_par_iter()
        .map(|i| ens.phi_lag((k - i) as f64 * dt))
        .collect()
}

pub fn synthesize_discrete(ens: &EnsembleSpec, prob: &BridgeProblem) -> Result<ControllerGains> {
    prob.validate(ens)?;
    if !prob.penalty_a.is_finite() {
        return Err(BridgeError::invalid("discrete synthesis needs a finite penalty"));
    }
    let phi = grid_phis(ens, prob)?;
    let d = ens.state_dim();
    let k = prob.steps_k;
    let dt = prob.dt();

    let mut weighting = vec![DMatrix::zeros(d, d); k + 1];
    weighting[k] = DMatrix::identity(d, d) / (2.0 * prob.penalty_a);
    for j in (0..k).rev() {
        weighting[j] = &weighting[j + 1] + dt * &phi[j] * phi[j].transpose();
    }

    let factor = |j: usize| {
        spd_factor(&weighting[j]).ok_or_else(|| {
            BridgeError::invalid(format!("regularized weighting M_{j} lost positive definiteness"))
        })
    };
    let noise_weights = (0..k)
        .map(|j| Ok(factor(j + 1)?.solve(&phi[j])))
        .collect::<Result<Vec<_>>>()?;
    let target_weight = factor(0)?.solve(&prob.shifted_target(ens)?);

    Ok(ControllerGains {
        law: FeedforwardLaw {
            grid: prob.grid(),
            eps: prob.eps,
            phi,
            noise_weights,
            target_weight,
        },
        penalty_a: prob.penalty_a,
        weighting,
    })
}

/// Grid evaluation of the limiting (a → ∞) feedforward controller,
/// `u(t_i) = −√ε Σ_{j<i} Φ_iᵀ G_{t_f,t_j}⁻¹ Φ_j ΔW_j + Φ_iᵀ G_{t_f,0}⁻¹ (xf − Ψ(t_f) x0)`.
#[derive(Debug, Clone)]
pub struct ContinuousFeedforward {
    pub law: FeedforwardLaw,
}

impl ContinuousFeedforward {
    pub fn new(ens: &EnsembleSpec, prob: &BridgeProblem) -> Result<Self> {
        prob.validate(ens)?;
        let table = GramianTable::build(ens, prob.t_f, prob.steps_k)?;
        Self::from_table(ens, prob, &table)
    }

    pub fn from_table(ens: &EnsembleSpec, prob: &BridgeProblem, table: &GramianTable) -> Result<Self> {
        let k = prob.steps_k;
        if table.steps() != k || (table.t_f - prob.t_f).abs() > 1e-12 * prob.t_f {
            return Err(BridgeError::invalid("Gramian table does not match the problem grid"));
        }
        let solve = |j: usize, rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let g = &table.gram_at[j];
            let report = ControllabilityReport::from_gramian(g, DEFAULT_THRESHOLD);
            let singular = || BridgeError::NotControllable {
                time: table.grid[j],
                report: report.clone(),
            };
            if !report.invertible {
                return Err(singular());
            }
            spd_factor(g).map(|c| c.solve(rhs)).ok_or_else(singular)
        };
        let phi: Vec<_> = table.phi_at[..k].to_vec();
        // N_j is needed for j < i <= k-1 only; the last slot is never read.
        let mut noise_weights = (0..k.saturating_sub(1))
            .map(|j| solve(j, &phi[j]))
            .collect::<Result<Vec<_>>>()?;
        noise_weights.push(DMatrix::zeros(ens.state_dim(), ens.input_dim()));
        let target = prob.shifted_target(ens)?;
        let target_weight = solve(0, &DMatrix::from_column_slice(target.len(), 1, target.as_slice()))?
            .column(0)
            .into_owned();
        Ok(ContinuousFeedforward {
            law: FeedforwardLaw {
                grid: table.grid.clone(),
                eps: prob.eps,
                phi,
                noise_weights,
                target_weight,
            },
        })
    }
}

/// One-shot evaluation of the limiting feedforward control at `t_index`.
pub fn continuous_feedforward(
    ens: &EnsembleSpec,
    prob: &BridgeProblem,
    increments: &[DVector<f64>],
    t_index: usize,
) -> Result<DVector<f64>> {
    if t_index >= prob.steps_k {
        return Err(BridgeError::invalid(format!(
            "t_index {t_index} must be below k = {}",
            prob.steps_k
        )));
    }
    if increments.len() < t_index {
        return Err(BridgeError::invalid("noise path shorter than t_index"));
    }
    let ff = ContinuousFeedforward::new(ens, prob)?;
    Ok(ff.law.control(t_index, increments))
}

/// State feedback `−x / (t_f − t)` of the classical Brownian bridge.
pub fn markov_bridge_control(x: &DVector<f64>, t: f64, t_f: f64) -> Result<DVector<f64>> {
    if !(t < t_f) {
        return Err(BridgeError::invalid(format!(
            "Markov bridge control needs t < t_f, got t = {t}, t_f = {t_f}"
        )));
    }
    Ok(-x / (t_f - t))
}
