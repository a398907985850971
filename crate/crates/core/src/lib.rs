//! Stochastic bridges for ensembles of parameter-perturbed linear systems.
//!
//! The θ-average of an ensemble `dX = A(θ)X dt + B(θ)(u dt + √ε dW)` driven
//! by one shared Wiener process is pinned at both ends by a control that
//! depends on the noise history rather than on the current state. This crate
//! computes the averaged Gramians, synthesizes that controller (discrete
//! penalized optimum and its continuous limit), simulates the controlled
//! ensemble and runs Monte Carlo verification studies.

// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod cli;
pub mod config;
pub mod control;
pub mod ensemble;
pub mod error;
pub mod gramian;
pub mod linalg;
pub mod noise;
pub mod quadrature;
pub mod sim;
pub mod stats;
pub mod study;

pub use bridge::{
    continuous_feedforward, markov_bridge_control, synthesize_discrete, BridgeProblem,
    ContinuousFeedforward, ControllerGains, FeedforwardLaw,
};
pub use control::{AnyController, Controller, FeedforwardControl, MarkovControl, SampledControl, Step, ZeroControl};
pub use ensemble::{build_uniform_ensemble, phi, EnsembleSpec, Family, Node};
pub use error::{BridgeError, Result};
pub use gramian::{
    check_avg_controllability, density_brownian, density_gramian, deterministic_steer, gramian,
    transport_cost, ControllabilityReport, GramianTable, SteeringControl,
};
pub use linalg::mat_exp;
pub use noise::NoisePath;
pub use sim::{evaluate_cost, simulate_average, simulate_ensemble, SimulationRecord};
pub use study::{convergence_study, verify_endpoint, ConvergenceReport, EndpointStats};
