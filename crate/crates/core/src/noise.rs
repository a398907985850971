//! Seeded Wiener increments.
//!
//! Each path owns a PCG-64 stream (128-bit state) seeded from a single `u64`;
//! Monte Carlo runs use `base_seed + path_index` so paths never share a
//! stream and any subset can be regenerated independently.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

use crate::error::{BridgeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub seed: u64,
    pub dt: f64,
    /// ΔW_i = W(t_{i+1}) − W(t_i), i = 0..k−1, each ~ N(0, dt·I_m).
    pub increments: Vec<DVector<f64>>,
}

impl NoisePath {
    pub fn generate(seed: u64, k: usize, dt: f64, m: usize) -> Self {
        let mut rng = Pcg64::seed_from_u64(seed);
        let sd = dt.sqrt();
        let increments = (0..k)
            .map(|_| DVector::from_fn(m, |_, _| sd * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        NoisePath {
            seed,
            dt,
            increments,
        }
    }

    pub fn from_increments(dt: f64, increments: Vec<DVector<f64>>) -> Self {
        NoisePath {
            seed: 0,
            dt,
            increments,
        }
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn dim(&self) -> usize {
        self.increments.first().map_or(0, DVector::len)
    }

    /// Same Brownian path sampled on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return Err(BridgeError::invalid(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps()
            )));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().skip(1).fold(c[0].clone(), |acc, v| acc + v))
            .collect();
        Ok(NoisePath {
            seed: self.seed,
            dt: self.dt * factor as f64,
            increments,
        })
    }

    /// W(t_i), i = 0..k, with W(0) = 0.
    pub fn wiener_values(&self) -> Vec<DVector<f64>> {
        let mut w = DVector::zeros(self.dim());
        let mut out = vec![w.clone()];
        for dw in &self.increments {
            w += dw;
            out.push(w.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bits() {
        let a = NoisePath::generate(42, 64, 0.01, 2);
        let b = NoisePath::generate(42, 64, 0.01, 2);
        assert_eq!(a, b);
        let c = NoisePath::generate(43, 64, 0.01, 2);
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn increments_have_the_right_moments() {
        // 10^5 paths of one scalar increment each.
        let dt = 0.25;
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|p| NoisePath::generate(p as u64, 1, dt, 1).increments[0][0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (dt / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean}");
        // Var of the sample variance is 2σ⁴/(n−1).
        assert!((var - dt).abs() < 4.0 * dt * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn coarsening_preserves_the_path() {
        let p = NoisePath::generate(7, 12, 1.0 / 12.0, 1);
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.steps(), 3);
        let wf = p.wiener_values();
        let wc = c.wiener_values();
        for (i, w) in wc.iter().enumerate() {
            assert!((w - &wf[4 * i]).norm() < 1e-14);
        }
        assert!(p.coarsen(5).is_err());
    }
}
