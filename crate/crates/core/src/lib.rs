//! Recursive ellipsoidal set-membership state estimation for discrete-time
//! linear time-varying systems with zonotope-bounded process noise and
//! sporadic interval, one-sided and equality measurements.
//!
//! The estimator keeps an ellipsoid `E(x̂, ςP)` that is guaranteed to contain
//! the true state. Shape matrices may be singular (degenerate ellipsoids), so
//! every size measure works with pseudo-determinants and pseudo-inverses.

pub mod correction;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod numerics;
pub mod prediction;

pub use correction::{CaseLabel, CorrectionCriterion, InconsistencyPolicy, Measurement, MeasurementKind};
pub use error::{Error, Result};
pub use estimator::{Diagnostics, Estimator, EstimatorConfig, EstimatorState};
pub use geometry::{Ellipsoid, Halfspace, Hyperplane, Membership, Strip, Zonotope};
pub use numerics::{SymMatrix, Tolerances};
pub use prediction::{PredictionCriterion, ProcessModel};
