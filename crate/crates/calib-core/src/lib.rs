//! Calibration engineering for binary classifiers.
//!
//! The crate is organised around the reliability diagram: [`metrics`] bins
//! scored predictions and measures expected calibration error, [`bounds`]
//! answers "how much data do I need before that measurement means anything",
//! [`targeting`] turns miscalibrated bins into generation specs for synthetic
//! data, [`calibrate`] provides the classical post-hoc calibrators, and
//! [`toy`] runs the 1-D logistic simulation that demonstrates the whole loop
//! end to end.
//!
//! Everything is deterministic given explicit seeds. With the default
//! `parallel` feature the Monte Carlo and multi-seed entry points fan out via
//! rayon; results are bit-identical to the sequential fallback because every
//! trial derives its own RNG stream.

pub mod bounds;
pub mod calibrate;
pub mod error;
pub mod metrics;
pub mod record;
pub mod targeting;
pub mod toy;

mod numeric;

pub use error::CalibError;
pub use metrics::{bin_records, BinningConfig, DiagramMode, ReliabilityDiagram};
pub use record::PredictionRecord;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CalibError>;
