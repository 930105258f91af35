//! Simulation and analysis of two-way ranging (TWR) between transceivers
//! with drifting clocks.
//!
//! The crate is organized around the lifecycle of a ranging experiment:
//!
//! - [`timebase`] — unit-safe time quantities, affine clock models, and the
//!   timestamping-noise model.
//! - [`protocol`] — generation of the six timestamps of a TWR transaction
//!   (optionally with constant-velocity relative motion) and the SS-TWR /
//!   DS-TWR time-of-flight estimators.
//! - [`analytics`] — closed-form bias and variance models for both
//!   estimators, plus the Cramer-Rao lower bound via the measurement
//!   Jacobian.
//! - [`optimizer`] — the averaged-uncertainty objective over the second
//!   response delay and its closed-form (depressed cubic) minimizer.
//! - [`harness`] — Monte Carlo trials, parameter sweeps, and discrete-event
//!   ranging sessions with reproducible seeding and CSV output.

pub mod analytics;
pub mod harness;
pub mod optimizer;
pub mod protocol;
pub mod timebase;

/// Speed of light in m/s, used for all time-to-distance conversions.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates a type invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A time interval required to be nonzero (or positive) degenerated.
    #[error("degenerate interval: {0}")]
    DegenerateInterval(&'static str),
    /// The Fisher information matrix cannot be inverted reliably.
    #[error("information matrix numerically singular (condition number {condition:.3e})")]
    SingularInformation { condition: f64 },
    /// The optimality cubic has no positive real root.
    #[error("optimality cubic has no positive root")]
    NoPositiveRoot,
    /// A ranging session shorter than a single transaction.
    #[error("session duration shorter than one transaction")]
    ZeroMeasurements,
    /// DS-TWR estimation was requested on an SS-only timestamp set.
    #[error("timestamp set has no second-response timestamps (ss-only mode)")]
    SsOnlyTimestamps,
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Render a float for CSV output with 12 significant digits.
///
/// All CSV columns use this format so identical runs produce byte-identical
/// files on every platform.
pub fn csv_float(x: f64) -> String {
    format!("{x:.11e}")
}

pub use timebase::{ClockParams, NoiseDistribution, NoiseModel, RandomStream, Seconds, SecondsSq};
