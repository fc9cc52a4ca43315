//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("input is empty")]
    EmptyInput,

    #[error("record {id:?} has score {value} outside [0, 1]")]
    InvalidScore { id: String, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Diagrams disagree in bin count or bin weights where they must match.
    #[error("diagrams are not comparable: {0}")]
    ShapeMismatch(String),

    /// epsilon_ECE <= conf gap: no sample size can achieve the bound.
    #[error("confidence gap {conf_gap} dominates epsilon_ece {epsilon_ece}; the bound is unattainable")]
    GapDominates { epsilon_ece: f64, conf_gap: f64 },

    /// A bin sits exactly on the diagonal; no quadrant applies.
    #[error("bin {index} has zero gap; no miscalibration quadrant applies")]
    ZeroGap { index: usize },

    #[error("count mismatch for {context}: expected {expected}, got {got}")]
    CountMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// Logistic fit diverged: the classes are (numerically) separable.
    #[error("logistic fit diverged; data looks separable")]
    Separable,

    /// Logistic fit needs both outcome classes present.
    #[error("only one outcome class present; cannot fit")]
    OneClass,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl CalibError {
    pub(crate) fn invalid_param(msg: impl Into<String>) -> Self {
        CalibError::InvalidParam(msg.into())
    }
}
