//! Scenario ingestion, truth simulation, experiment driver and output.

pub mod emit;
pub mod run;
pub mod scenario;
pub mod simulate;

pub use emit::{emit, Format, Manifest};
pub use run::{containment_fraction, run, AuditReport, RunOptions, RunOutput, StepRecord};
pub use scenario::{Scenario, Template};
pub use simulate::{simulate_truth, Truth};
