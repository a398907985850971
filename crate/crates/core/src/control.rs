//! Controllers as seen by the simulator.
//!
//! A controller is queried once per step, in order, with the current
//! θ-averaged state and the increments completed so far. It never sees
//! `ΔW_i` or later when producing `u_i`.

use nalgebra::DVector;

use crate::bridge::{markov_bridge_control, ControllerGains, ContinuousFeedforward, LawEvaluator};
use crate::error::Result;
use crate::gramian::SteeringControl;

pub struct Step<'a> {
    pub index: usize,
    pub time: f64,
    pub t_f: f64,
    pub state: &'a DVector<f64>,
    pub past_increments: &'a [DVector<f64>],
}

pub trait Controller {
    fn control(&mut self, step: &Step<'_>) -> Result<DVector<f64>>;

    /// Called before each path.
    fn reset(&mut self) {}
}

#[derive(Debug, Clone)]
pub struct ZeroControl {
    pub dim: usize,
}

impl Controller for ZeroControl {
    fn control(&mut self, _step: &Step<'_>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.dim))
    }
}

/// `−x/(t_f − t)`.
#[derive(Debug, Clone, Default)]
pub struct MarkovControl;

impl Controller for MarkovControl {
    fn control(&mut self, step: &Step<'_>) -> Result<DVector<f64>> {
        markov_bridge_control(step.state, step.time, step.t_f)
    }
}

/// Noise-blind steering input sampled on the simulation grid.
#[derive(Debug, Clone)]
pub struct SampledControl {
    pub values: Vec<DVector<f64>>,
}

impl SampledControl {
    pub fn from_steering(steer: &SteeringControl, grid: &[f64]) -> Result<Self> {
        let values = grid[..grid.len() - 1]
            .iter()
            .map(|t| steer.eval(*t))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledControl { values })
    }
}

impl Controller for SampledControl {
    fn control(&mut self, step: &Step<'_>) -> Result<DVector<f64>> {
        Ok(self.values[step.index].clone())
    }
}

/// Stochastic feedforward law driven by past increments.
#[derive(Debug, Clone)]
pub struct FeedforwardControl<'a> {
    eval: LawEvaluator<'a>,
}

impl<'a> FeedforwardControl<'a> {
    pub fn discrete(gains: &'a ControllerGains) -> Self {
        FeedforwardControl {
            eval: gains.law.evaluator(),
        }
    }

    pub fn continuous(ff: &'a ContinuousFeedforward) -> Self {
        FeedforwardControl {
            eval: ff.law.evaluator(),
        }
    }
}

impl Controller for FeedforwardControl<'_> {
    fn control(&mut self, step: &Step<'_>) -> Result<DVector<f64>> {
        Ok(self.eval.control(step.index, step.past_increments))
    }

    fn reset(&mut self) {
        self.eval.reset();
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn control(&mut self, step: &Step<'_>) -> Result<DVector<f64>> {
        (**self).control(step)
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

/// Closed set of the controllers above; `Clone + Send` so Monte Carlo
/// workers can each own a copy.
#[derive(Debug, Clone)]
pub enum AnyController<'a> {
    Zero(ZeroControl),
    Markov(MarkovControl),
    Sampled(SampledControl),
    Feedforward(FeedforwardControl<'a>),
}

impl Controller for AnyController<'_> {
    fn control(&mut self, step: &Step<'_>) -> Result<DVector<f64>> {
        match self {
            AnyController::Zero(c) => c.control(step),
            AnyController::Markov(c) => c.control(step),
            AnyController::Sampled(c) => c.control(step),
            AnyController::Feedforward(c) => c.control(step),
        }
    }

    fn reset(&mut self) {
        match self {
            AnyController::Zero(c) => c.reset(),
            AnyController::Markov(c) => c.reset(),
            AnyController::Sampled(c) => c.reset(),
            AnyController::Feedforward(c) => c.reset(),
        }
    }
}
