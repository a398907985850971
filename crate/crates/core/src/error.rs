use thiserror::Error;

use crate::gramian::ControllabilityReport;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The averaged Gramian needed at `time` is numerically singular.
    #[error("ensemble is not averaged controllable at t = {time}: min eigenvalue {min_eig:.3e}, cond {cond:.3e}", min_eig = report.min_eig, cond = report.cond)]
    NotControllable {
        time: f64,
        report: ControllabilityReport,
    },

    #[error("state diverged at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BridgeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BridgeError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, BridgeError>;
