//! Parameterized ensembles of linear systems and their θ-averages.
//!
//! An ensemble is stored as a weighted node list `(θ_n, w_n, A_n, B_n)`, i.e. a
//! quadrature of the parameter measure. The uniform measure on [0, 1] is the
//! common case ([`build_uniform_ensemble`]); any finite weighted collection
//! of systems is accepted as well.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};
use crate::linalg::mat_exp;
use crate::quadrature::gauss_legendre;

pub const DEFAULT_NODES: usize = 16;
const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub theta: f64,
    pub weight: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Immutable, validated ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    state_dim: usize,
    input_dim: usize,
    nodes: Vec<Node>,
}

impl EnsembleSpec {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let first = nodes
            .first()
            .ok_or_else(|| BridgeError::invalid("ensemble needs at least one node"))?;
        let d = first.a.nrows();
        let m = first.b.ncols();
        if d == 0 || m == 0 {
            return Err(BridgeError::invalid("state and input dimensions must be positive"));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.a.shape() != (d, d) {
                return Err(BridgeError::invalid(format!(
                    "node {i}: A is {:?}, expected ({d}, {d})",
                    n.a.shape()
                )));
            }
            if n.b.shape() != (d, m) {
                return Err(BridgeError::invalid(format!(
                    "node {i}: B is {:?}, expected ({d}, {m})",
                    n.b.shape()
                )));
            }
            if !n.weight.is_finite() || n.weight < 0.0 {
                return Err(BridgeError::invalid(format!("node {i}: weight must be nonnegative")));
            }
            if !n.theta.is_finite() || n.a.iter().chain(n.b.iter()).any(|v| !v.is_finite()) {
                return Err(BridgeError::invalid(format!("node {i}: non-finite entry")));
            }
        }
        if nodes.windows(2).any(|w| w[0].theta >= w[1].theta) {
            return Err(BridgeError::invalid("node thetas must be strictly increasing"));
        }
        let total: f64 = nodes.iter().map(|n| n.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(BridgeError::invalid(format!(
                "node weights sum to {total}, expected 1"
            )));
        }
        Ok(EnsembleSpec {
            state_dim: d,
            input_dim: m,
            nodes,
        })
    }

    /// One-node ensemble (a classical time-invariant system).
    pub fn single(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        EnsembleSpec::new(vec![Node {
            theta: 0.0,
            weight: 1.0,
            a,
            b,
        }])
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Averaged impulse response `Σ w_n exp(A_n·lag) B_n` (d×m).
    pub fn phi_lag(&self, lag: f64) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.state_dim, self.input_dim);
        for n in &self.nodes {
            out += n.weight * mat_exp(&n.a, lag)? * &n.b;
        }
        Ok(out)
    }

    /// Averaged state-transition image `Σ w_n exp(A_n·lag)` (d×d), the map
    /// that carries a common initial state to the mean at time `lag`.
    pub fn mean_map(&self, lag: f64) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.state_dim, self.state_dim);
        for n in &self.nodes {
            out += n.weight * mat_exp(&n.a, lag)?;
        }
        Ok(out)
    }

    /// Σ w_n B_n.
    pub fn mean_input(&self) -> DMatrix<f64> {
        self.nodes
            .iter()
            .fold(DMatrix::zeros(self.state_dim, self.input_dim), |acc, n| {
                acc + n.weight * &n.b
            })
    }

    /// True when every node shares one (A, B) pair.
    pub fn is_constant(&self) -> bool {
        let f = &self.nodes[0];
        self.nodes.iter().all(|n| n.a == f.a && n.b == f.b)
    }

    /// True for the pure-noise family A ≡ 0, B ≡ I.
    pub fn is_brownian(&self) -> bool {
        self.state_dim == self.input_dim
            && self.nodes.iter().all(|n| {
                n.a.iter().all(|v| *v == 0.0)
                    && n.b == DMatrix::<f64>::identity(self.state_dim, self.state_dim)
            })
    }
}

/// Averaged impulse response `Φ(t_f, τ)`.
pub fn phi(ens: &EnsembleSpec, t_f: f64, tau: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=t_f).contains(&tau) {
        return Err(BridgeError::invalid(format!(
            "tau = {tau} outside [0, t_f = {t_f}]"
        )));
    }
    ens.phi_lag(t_f - tau)
}

/// Discretizes the uniform measure on [0, 1] with an `n_nodes`-point
/// Gauss–Legendre rule and samples `family` at the nodes.
pub fn build_uniform_ensemble<F>(family: F, n_nodes: usize) -> Result<EnsembleSpec>
where
    F: Fn(f64) -> (DMatrix<f64>, DMatrix<f64>),
{
    if n_nodes < 1 {
        return Err(BridgeError::invalid("n_nodes must be at least 1"));
    }
    let rule = gauss_legendre(n_nodes).mapped(0.0, 1.0);
    let total: f64 = rule.weights.iter().sum();
    let nodes = rule
        .iter()
        .map(|(theta, w)| {
            let (a, b) = family(theta);
            Node {
                theta,
                weight: w / total,
                a,
                b,
            }
        })
        .collect();
    EnsembleSpec::new(nodes)
}

/// Row-major JSON matrix: a list of rows.
pub type MatrixRows = Vec<Vec<f64>>;

pub fn matrix_from_rows(rows: &MatrixRows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(BridgeError::invalid("empty matrix"));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(BridgeError::invalid("ragged matrix rows"));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> MatrixRows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Built-in parameter families, selectable by name from JSON
/// (`{"family": "scalar_theta_drift", ...}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// A ≡ 0, B ≡ I_dim.
    Brownian {
        #[serde(default = "one")]
        dim: usize,
    },
    /// Scalar A(θ) = scale·θ, B = 1.
    ScalarThetaDrift {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// A(θ) = a0 + θ·a1 with fixed B. Defaults to a spring–damper with
    /// uncertain stiffness and damping: A(θ) = [[0, 1], [-θ, -θ]], B = [0, 1]ᵀ.
    ShiftedDrift {
        #[serde(default = "default_shift_a0")]
        a0: MatrixRows,
        #[serde(default = "default_shift_a1")]
        a1: MatrixRows,
        #[serde(default = "default_shift_b")]
        b: MatrixRows,
    },
    /// 3 states, 2 inputs; A(θ) for distinct θ do not commute.
    ThreeStateCoupled,
    /// A ≡ 0 (2×2), B ≡ [1, 0]ᵀ: the second coordinate is unreachable.
    RankDeficientInput,
    /// One fixed (A, B) for every θ.
    ConstantSystem { a: MatrixRows, b: MatrixRows },
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_shift_a0() -> MatrixRows {
    vec![vec![0.0, 1.0], vec![0.0, 0.0]]
}
fn default_shift_a1() -> MatrixRows {
    vec![vec![0.0, 0.0], vec![-1.0, -1.0]]
}
fn default_shift_b() -> MatrixRows {
    vec![vec![0.0], vec![1.0]]
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Brownian { .. } => "brownian",
            Family::ScalarThetaDrift { .. } => "scalar_theta_drift",
            Family::ShiftedDrift { .. } => "shifted_drift",
            Family::ThreeStateCoupled => "three_state_coupled",
            Family::RankDeficientInput => "rank_deficient_input",
            Family::ConstantSystem { .. } => "constant_system",
        }
    }

    pub fn build(&self, n_nodes: usize) -> Result<EnsembleSpec> {
        match self {
            Family::Brownian { dim } => {
                let d = *dim;
                if d == 0 {
                    return Err(BridgeError::invalid("brownian family needs dim >= 1"));
                }
                build_uniform_ensemble(
                    |_| (DMatrix::zeros(d, d), DMatrix::identity(d, d)),
                    n_nodes,
                )
            }
            Family::ScalarThetaDrift { scale } => {
                let s = *scale;
                build_uniform_ensemble(
                    |th| (DMatrix::from_element(1, 1, s * th), DMatrix::from_element(1, 1, 1.0)),
                    n_nodes,
                )
            }
            Family::ShiftedDrift { a0, a1, b } => {
                let a0 = matrix_from_rows(a0)?;
                let a1 = matrix_from_rows(a1)?;
                let b = matrix_from_rows(b)?;
                if a0.shape() != a1.shape() {
                    return Err(BridgeError::invalid("shifted_drift: a0 and a1 differ in shape"));
                }
                build_uniform_ensemble(|th| (&a0 + th * &a1, b.clone()), n_nodes)
            }
            Family::ThreeStateCoupled => build_uniform_ensemble(
                |th| {
                    let a = DMatrix::from_row_slice(
                        3,
                        3,
                        &[-0.5, 1.0, 0.0, 0.0, -th, 1.0, th, 0.0, -1.0],
                    );
                    let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0 + th]);
                    (a, b)
                },
                n_nodes,
            ),
            Family::RankDeficientInput => build_uniform_ensemble(
                |_| (DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 1, &[1.0, 0.0])),
                n_nodes,
            ),
            Family::ConstantSystem { a, b } => {
                let a = matrix_from_rows(a)?;
                let b = matrix_from_rows(b)?;
                build_uniform_ensemble(|_| (a.clone(), b.clone()), n_nodes)
            }
        }
    }
}

/// Explicit node as written in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub theta: f64,
    pub weight: f64,
    #[serde(rename = "A")]
    pub a: MatrixRows,
    #[serde(rename = "B")]
    pub b: MatrixRows,
}

pub fn ensemble_from_nodes(specs: &[NodeSpec]) -> Result<EnsembleSpec> {
    let nodes = specs
        .iter()
        .map(|s| {
            Ok(Node {
                theta: s.theta,
                weight: s.weight,
                a: matrix_from_rows(&s.a)?,
                b: matrix_from_rows(&s.b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleSpec::new(nodes)
}
