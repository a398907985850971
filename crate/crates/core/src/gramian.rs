//! Averaged controllability Gramians, minimum-energy steering and the
//! associated transition densities.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSpec;
use crate::error::{BridgeError, Result};
use crate::linalg::{spd_factor, sym_eig_range, symmetrize};
use crate::quadrature::{composite, gauss_legendre};

/// Relative eigenvalue floor below which a Gramian counts as singular.
pub const DEFAULT_THRESHOLD: f64 = 1e-10;
/// Gauss–Legendre points per time panel.
pub const PANEL_ORDER: usize = 4;
/// Panels per unit of time used when the caller does not pick a count.
pub const PANELS_PER_UNIT_TIME: f64 = 32.0;

pub fn default_panels(span: f64) -> usize {
    ((span * PANELS_PER_UNIT_TIME).ceil() as usize).max(8)
}

/// `∫_lo^hi Φ(σ)Φ(σ)ᵀ dσ` over lags σ, composite Gauss–Legendre.
pub fn lag_gramian(ens: &EnsembleSpec, lo: f64, hi: f64, panels: usize) -> Result<DMatrix<f64>> {
    let d = ens.state_dim();
    let mut g = DMatrix::zeros(d, d);
    if hi <= lo {
        return Ok(g);
    }
    for (sigma, w) in composite(lo, hi, panels, PANEL_ORDER).iter() {
        let p = ens.phi_lag(sigma)?;
        g += w * &p * p.transpose();
    }
    Ok(symmetrize(&g))
}

/// `G_{t,s} = ∫_s^t Φ(t,τ)Φ(t,τ)ᵀ dτ` using `panels` composite panels.
pub fn gramian(ens: &EnsembleSpec, t: f64, s: f64, panels: usize) -> Result<DMatrix<f64>> {
    if !(s.is_finite() && t.is_finite()) || s < 0.0 || s > t {
        return Err(BridgeError::invalid(format!(
            "gramian needs 0 <= s <= t, got s = {s}, t = {t}"
        )));
    }
    if panels < 1 {
        return Err(BridgeError::invalid("gramian needs at least one time panel"));
    }
    lag_gramian(ens, 0.0, t - s, panels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    pub invertible: bool,
    /// max/min eigenvalue; infinite (JSON null) when min <= 0.
    pub cond: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub threshold: f64,
}

impl ControllabilityReport {
    pub fn from_gramian(g: &DMatrix<f64>, threshold: f64) -> Self {
        let (min_eig, max_eig) = sym_eig_range(g);
        let cond = if min_eig > 0.0 {
            max_eig / min_eig
        } else {
            f64::INFINITY
        };
        ControllabilityReport {
            invertible: max_eig > 0.0 && min_eig > threshold * max_eig,
            cond,
            min_eig,
            max_eig,
            threshold,
        }
    }
}

pub fn check_avg_controllability(
    ens: &EnsembleSpec,
    t_f: f64,
    threshold: f64,
) -> Result<ControllabilityReport> {
    if !(t_f > 0.0) {
        return Err(BridgeError::invalid("t_f must be positive"));
    }
    let g = gramian(ens, t_f, 0.0, default_panels(t_f))?;
    Ok(ControllabilityReport::from_gramian(&g, threshold))
}

/// Solves `G x = r` for an invertible Gramian, or reports why not.
fn gramian_solve(g: &DMatrix<f64>, r: &DVector<f64>, time: f64) -> Result<DVector<f64>> {
    let report = ControllabilityReport::from_gramian(g, DEFAULT_THRESHOLD);
    if !report.invertible {
        return Err(BridgeError::NotControllable { time, report });
    }
    spd_factor(g)
        .map(|c| c.solve(r))
        .ok_or(BridgeError::NotControllable { time, report })
}

/// Φ(t_f, t_i) and G_{t_f, t_i} on the uniform grid t_i = i·t_f/k.
///
/// Time panels are aligned with the grid, so each G is a cumulative sum of
/// per-step lag integrals.
#[derive(Debug, Clone)]
pub struct GramianTable {
    pub t_f: f64,
    pub grid: Vec<f64>,
    /// `phi_at[i] = Φ(t_f, t_i)`.
    pub phi_at: Vec<DMatrix<f64>>,
    /// `gram_at[i] = G_{t_f, t_i}`; `gram_at[k]` is zero.
    pub gram_at: Vec<DMatrix<f64>>,
    /// `mean_at[l] = Σ w exp(A·l·Δt)`, indexed by lag steps.
    pub mean_at: Vec<DMatrix<f64>>,
    pub cond: f64,
}

impl GramianTable {
    pub fn build(ens: &EnsembleSpec, t_f: f64, k: usize) -> Result<Self> {
        if !(t_f > 0.0) || k == 0 {
            return Err(BridgeError::invalid("table needs t_f > 0 and k >= 1"));
        }
        let dt = t_f / k as f64;
        let grid: Vec<f64> = (0..=k).map(|i| i as f64 * dt).collect();
        let sub = ((dt * PANELS_PER_UNIT_TIME).ceil() as usize).max(1);
        let base = gauss_legendre(PANEL_ORDER);

        // Per-lag-step quantities are independent; evaluate in parallel.
        let per_lag: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = (0..=k)
            .into_par_iter()
            .map(|l| -> Result<_> {
                let lag = l as f64 * dt;
                let phi = ens.phi_lag(lag)?;
                let mean = ens.mean_map(lag)?;
                let d = ens.state_dim();
                let mut step = DMatrix::zeros(d, d);
                if l < k {
                    let h = dt / sub as f64;
                    for p in 0..sub {
                        let lo = lag + p as f64 * h;
                        for (sigma, w) in base.mapped(lo, lo + h).iter() {
                            let q = ens.phi_lag(sigma)?;
                            step += w * &q * q.transpose();
                        }
                    }
                }
                Ok((phi, mean, step))
            })
            .collect::<Result<Vec<_>>>()?;

        let d = ens.state_dim();
        let mut gram_by_lag = Vec::with_capacity(k + 1);
        let mut acc = DMatrix::zeros(d, d);
        gram_by_lag.push(acc.clone());
        for (_, _, step) in per_lag.iter().take(k) {
            acc += step;
            gram_by_lag.push(symmetrize(&acc));
        }
        let phi_at = (0..=k).map(|i| per_lag[k - i].0.clone()).collect();
        let gram_at: Vec<_> = (0..=k).map(|i| gram_by_lag[k - i].clone()).collect();
        let mean_at = per_lag.into_iter().map(|(_, m, _)| m).collect();
        let cond = ControllabilityReport::from_gramian(&gram_at[0], DEFAULT_THRESHOLD).cond;
        Ok(GramianTable {
            t_f,
            grid,
            phi_at,
            gram_at,
            mean_at,
            cond,
        })
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.t_f / self.steps() as f64
    }

    /// Φ(t_i, t_j) for j <= i, a function of the lag i - j only.
    pub fn phi_between(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.phi_at[self.steps() - (i - j)]
    }

    pub fn report(&self, i: usize, threshold: f64) -> ControllabilityReport {
        ControllabilityReport::from_gramian(&self.gram_at[i], threshold)
    }

    /// Smallest eigenvalue of G_{t_f, t_i} for every i < k.
    pub fn min_eig_profile(&self) -> Vec<f64> {
        self.gram_at[..self.steps()]
            .iter()
            .map(|g| sym_eig_range(g).0)
            .collect()
    }
}

/// Minimum-energy open-loop input steering the θ-average from `x0` to `xf`
/// when the noise is switched off.
#[derive(Debug, Clone)]
pub struct SteeringControl {
    ens: EnsembleSpec,
    t_f: f64,
    multiplier: DVector<f64>,
}

impl SteeringControl {
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        if !(0.0..=self.t_f).contains(&t) {
            return Err(BridgeError::invalid(format!("t = {t} outside [0, {}]", self.t_f)));
        }
        Ok(self.ens.phi_lag(self.t_f - t)?.transpose() * &self.multiplier)
    }

    /// `G_{t_f,0}⁻¹ (xf − Ψ(t_f) x0)`.
    pub fn multiplier(&self) -> &DVector<f64> {
        &self.multiplier
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }
}

fn displacement(
    ens: &EnsembleSpec,
    x0: &DVector<f64>,
    xf: &DVector<f64>,
    t_f: f64,
) -> Result<DVector<f64>> {
    let d = ens.state_dim();
    if x0.len() != d || xf.len() != d {
        return Err(BridgeError::invalid(format!(
            "endpoints must have dimension {d}, got {} and {}",
            x0.len(),
            xf.len()
        )));
    }
    if !(t_f > 0.0) {
        return Err(BridgeError::invalid("t_f must be positive"));
    }
    Ok(xf - ens.mean_map(t_f)? * x0)
}

pub fn deterministic_steer(
    ens: &EnsembleSpec,
    x0: &DVector<f64>,
    xf: &DVector<f64>,
    t_f: f64,
) -> Result<SteeringControl> {
    let r = displacement(ens, x0, xf, t_f)?;
    let g = gramian(ens, t_f, 0.0, default_panels(t_f))?;
    let multiplier = gramian_solve(&g, &r, 0.0)?;
    Ok(SteeringControl {
        ens: ens.clone(),
        t_f,
        multiplier,
    })
}

/// `½ ‖xf − Ψ(t_f) x0‖²` in the `G_{t_f,0}⁻¹` metric.
pub fn transport_cost(
    ens: &EnsembleSpec,
    x0: &DVector<f64>,
    xf: &DVector<f64>,
    t_f: f64,
) -> Result<f64> {
    let r = displacement(ens, x0, xf, t_f)?;
    let g = gramian(ens, t_f, 0.0, default_panels(t_f))?;
    let y = gramian_solve(&g, &r, 0.0)?;
    Ok(0.5 * r.dot(&y))
}

pub fn density_brownian(s: f64, x: &DVector<f64>, t: f64, y: &DVector<f64>) -> Result<f64> {
    if !(s < t) {
        return Err(BridgeError::invalid(format!("density needs s < t, got s = {s}, t = {t}")));
    }
    if x.len() != y.len() {
        return Err(BridgeError::invalid("x and y differ in dimension"));
    }
    let h = t - s;
    let d = x.len() as f64;
    Ok((2.0 * PI * h).powf(-0.5 * d) * (-(x - y).norm_squared() / (2.0 * h)).exp())
}

/// Gaussian kernel of the θ-averaged diffusion: mean `Ψ(t−s) x`, covariance
/// `ε G_{t,s}`.
pub fn density_gramian(
    ens: &EnsembleSpec,
    eps: f64,
    s: f64,
    x: &DVector<f64>,
    t: f64,
    y: &DVector<f64>,
) -> Result<f64> {
    if !(s < t) || s < 0.0 {
        return Err(BridgeError::invalid(format!("density needs 0 <= s < t, got s = {s}, t = {t}")));
    }
    if !(eps > 0.0) {
        return Err(BridgeError::invalid("density needs eps > 0"));
    }
    let d = ens.state_dim();
    if x.len() != d || y.len() != d {
        return Err(BridgeError::invalid(format!("x and y must have dimension {d}")));
    }
    let g = gramian(ens, t, s, default_panels(t - s))?;
    let report = ControllabilityReport::from_gramian(&g, DEFAULT_THRESHOLD);
    if !report.invertible {
        return Err(BridgeError::NotControllable { time: s, report });
    }
    let chol = spd_factor(&g).ok_or(BridgeError::NotControllable { time: s, report })?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let r = y - ens.mean_map(t - s)? * x;
    let quad = r.dot(&chol.solve(&r));
    let df = d as f64;
    let log_norm = -0.5 * df * (2.0 * PI * eps).ln() - 0.5 * log_det;
    Ok((log_norm - quad / (2.0 * eps)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Family;

    // Independent oracle: composite Simpson on the closed-form scalar
    // integrand ((e^σ − 1)/σ)², σ ∈ [0, 1].
    fn simpson_scalar_theta_gramian(n: usize) -> f64 {
        let f = |s: f64| {
            if s == 0.0 {
                1.0
            } else {
                let v = s.exp_m1() / s;
                v * v
            }
        };
        let h = 1.0 / n as f64;
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    fn scalar_theta() -> EnsembleSpec {
        Family::ScalarThetaDrift { scale: 1.0 }.build(16).unwrap()
    }

    #[test]
    fn simpson_oracle_value() {
        let g = simpson_scalar_theta_gramian(20_000);
        assert!((g - 1.779_446_276).abs() < 1e-8, "{g}");
    }

    #[test]
    fn brownian_gramian_is_scaled_identity() {
        let ens = Family::Brownian { dim: 2 }.build(4).unwrap();
        let g = gramian(&ens, 1.5, 0.25, 8).unwrap();
        assert!((g - DMatrix::<f64>::identity(2, 2) * 1.25).norm() < 1e-14);
    }

    #[test]
    fn scalar_theta_gramian_matches_simpson() {
        let g = gramian(&scalar_theta(), 1.0, 0.0, 32).unwrap()[(0, 0)];
        let oracle = simpson_scalar_theta_gramian(20_000);
        assert!((g - oracle).abs() < 1e-10 * oracle, "{g} vs {oracle}");
    }

    #[test]
    fn empty_interval_is_zero() {
        let g = gramian(&Family::ThreeStateCoupled.build(6).unwrap(), 0.7, 0.7, 4).unwrap();
        assert_eq!(g, DMatrix::zeros(3, 3));
    }

    #[test]
    fn rejects_reversed_interval() {
        assert!(gramian(&scalar_theta(), 0.5, 0.7, 4).is_err());
    }

    #[test]
    fn check_reports() {
        let r = check_avg_controllability(&Family::Brownian { dim: 1 }.build(4).unwrap(), 1.0, 1e-10)
            .unwrap();
        assert!(r.invertible);
        assert!((r.cond - 1.0).abs() < 1e-12);

        let r = check_avg_controllability(&Family::RankDeficientInput.build(4).unwrap(), 1.0, 1e-10)
            .unwrap();
        assert!(!r.invertible);

        let r = check_avg_controllability(&scalar_theta(), 1.0, 1e-10).unwrap();
        assert!(r.invertible);
        let oracle = simpson_scalar_theta_gramian(20_000);
        assert!((r.min_eig - oracle).abs() < 1e-9);
    }

    #[test]
    fn steer_trivial_cases() {
        let ens = Family::Brownian { dim: 1 }.build(4).unwrap();
        let zero = DVector::zeros(1);
        let u = deterministic_steer(&ens, &zero, &zero, 1.0).unwrap();
        assert_eq!(u.eval(0.3).unwrap()[0], 0.0);
        let u = deterministic_steer(&ens, &zero, &DVector::from_element(1, 1.0), 1.0).unwrap();
        for t in [0.0, 0.4, 1.0] {
            assert!((u.eval(t).unwrap()[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn steer_scalar_theta_closed_form() {
        let ens = scalar_theta();
        let u = deterministic_steer(&ens, &DVector::from_element(1, 1.0), &DVector::zeros(1), 1.0)
            .unwrap();
        let g = simpson_scalar_theta_gramian(20_000);
        for t in [0.0, 0.5, 0.9] {
            let s: f64 = 1.0 - t;
            let want = -(s.exp_m1() / s) / g * (std::f64::consts::E - 1.0);
            assert!((u.eval(t).unwrap()[0] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_gramian_is_an_error() {
        let ens = Family::RankDeficientInput.build(2).unwrap();
        let x = DVector::zeros(2);
        let r = deterministic_steer(&ens, &x, &DVector::from_vec(vec![1.0, 1.0]), 1.0);
        assert!(matches!(r, Err(BridgeError::NotControllable { .. })));
        assert!(matches!(transport_cost(&ens, &x, &x, 1.0), Err(BridgeError::NotControllable { .. })));
    }

    #[test]
    fn transport_cost_values() {
        let b = Family::Brownian { dim: 1 }.build(4).unwrap();
        let z = DVector::zeros(1);
        assert_eq!(transport_cost(&b, &z, &z, 1.0).unwrap(), 0.0);
        let c = transport_cost(&b, &z, &DVector::from_element(1, 2.0), 1.0).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
        let c = transport_cost(&scalar_theta(), &z, &DVector::from_element(1, 1.0), 1.0).unwrap();
        let want = 0.5 / simpson_scalar_theta_gramian(20_000);
        assert!((c - want).abs() < 1e-6 * want);
        assert!((c - 0.280_986_286).abs() < 1e-8);
    }

    #[test]
    fn brownian_density_values() {
        let z = DVector::zeros(1);
        let one = DVector::from_element(1, 1.0);
        assert!((density_brownian(0.0, &z, 1.0, &z).unwrap() - 0.398942).abs() < 1e-6);
        assert!((density_brownian(0.0, &z, 1.0, &one).unwrap() - 0.241971).abs() < 1e-6);
        let z2 = DVector::zeros(2);
        assert!((density_brownian(0.0, &z2, 2.0, &z2).unwrap() - 0.079577).abs() < 1e-6);
        assert!(density_brownian(1.0, &z, 1.0, &z).is_err());
    }

    #[test]
    fn gramian_density_values() {
        let z = DVector::zeros(1);
        let p = density_gramian(&scalar_theta(), 1.0, 0.0, &z, 1.0, &z).unwrap();
        assert!((p - 0.299_066_402).abs() < 1e-8, "{p}");

        let ens = Family::Brownian { dim: 2 }.build(4).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let y = DVector::from_vec(vec![-0.5, 0.9]);
        let a = density_gramian(&ens, 1.0, 0.2, &x, 1.1, &y).unwrap();
        let b = density_brownian(0.2, &x, 1.1, &y).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gramian_density_at_mean_is_peak() {
        let ens = scalar_theta();
        let x = DVector::from_element(1, 0.7);
        let mean = ens.mean_map(0.8).unwrap() * &x;
        let g = gramian(&ens, 1.0, 0.2, 32).unwrap()[(0, 0)];
        let eps = 0.3;
        let p = density_gramian(&ens, eps, 0.2, &x, 1.0, &mean).unwrap();
        assert!((p - (2.0 * PI * eps * g).powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn gramian_density_integrates_to_one() {
        let ens = scalar_theta();
        let x = DVector::from_element(1, 0.4);
        let eps = 0.5;
        // Fixed Gauss–Legendre rule over ±12 standard deviations.
        let mean = ens.mean_map(1.0).unwrap()[(0, 0)] * 0.4;
        let sd = (eps * 1.7794f64).sqrt();
        let rule = composite(mean - 12.0 * sd, mean + 12.0 * sd, 64, 8);
        let total: f64 = rule
            .iter()
            .map(|(y, w)| w * density_gramian(&ens, eps, 0.0, &x, 1.0, &DVector::from_element(1, y)).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn table_matches_direct_gramians() {
        let ens = Family::ThreeStateCoupled.build(8).unwrap();
        let table = GramianTable::build(&ens, 1.0, 16).unwrap();
        for i in [0, 5, 15] {
            let direct = gramian(&ens, 1.0, table.grid[i], 64).unwrap();
            assert!((&table.gram_at[i] - &direct).norm() < 1e-11 * direct.norm());
        }
        assert_eq!(table.gram_at[16], DMatrix::zeros(3, 3));
        assert!((&table.phi_at[16] - ens.mean_input()).norm() < 1e-14);
        assert_eq!(table.min_eig_profile().len(), 16);
    }
}
