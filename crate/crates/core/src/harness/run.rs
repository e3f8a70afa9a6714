//! Experiment driver with inline consistency audits.

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correction::{CaseLabel, CorrectionCriterion, Measurement};
use crate::error::Result;
use crate::estimator::{Estimator, EstimatorConfig};
use crate::geometry::Ellipsoid;
use crate::harness::scenario::{Expanded, Scenario};
use crate::harness::simulate::{simulate_truth, Truth};

/// Membership tolerance for the true state.
pub const CONTAINMENT_TOL: f64 = 1e-9;
/// Relative tolerance for the center satisfying processed measurements.
pub const ACCEPT_TOL: f64 = 1e-9;
/// Relative slack when checking that `ς_k` does not grow.
pub const SIGMA_MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub xhat: Vec<f64>,
    pub sigma: f64,
    pub rank: usize,
    pub pvol: f64,
    pub ssal: f64,
    pub err: f64,
    pub contained: bool,
    /// One letter per measurement: F fused, N no information, P tangency point, E empty.
    pub cases: String,
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Steps whose ellipsoid misses the true state.
    pub containment: Vec<usize>,
    /// `(step, measurement index)` pairs where the center violates a processed measurement.
    pub acceptability: Vec<(usize, usize)>,
    /// Steps where `ς_k` grew under the worst-case criterion.
    pub sigma_increase: Vec<usize>,
    /// Monte Carlo points of `E_pred ∩ S_k` that escaped the corrected set.
    pub mc_escapes: usize,
    pub mc_checked: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.containment.is_empty() && self.acceptability.is_empty() && self.sigma_increase.is_empty() && self.mc_escapes == 0
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: EstimatorConfig,
    pub seed: u64,
    /// Monte Carlo audit points per correction step (0 disables).
    pub samples: usize,
    /// Fill the `ms` column with wall-clock step time.
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub audit: AuditReport,
    /// Ellipsoid after each step, `E_0 … E_N`.
    pub ellipsoids: Vec<Ellipsoid>,
    pub sigmas: Vec<f64>,
    pub diagnostics: Vec<(f64, f64)>,
    pub truth: Truth,
}

pub fn accept_tol(m: &Measurement, x: &DVector<f64>) -> f64 {
    ACCEPT_TOL * (1.0 + m.direction.norm() * x.norm())
}

fn record(k: usize, e: &Ellipsoid, sigma: f64, x: &DVector<f64>, cases: String, ms: f64) -> StepRecord {
    StepRecord {
        k,
        xhat: e.center.iter().copied().collect(),
        sigma,
        rank: e.rank,
        pvol: e.pseudo_volume(),
        ssal: e.ssal(),
        err: (x - &e.center).norm(),
        contained: e.contains(x, CONTAINMENT_TOL),
        cases,
        ms,
    }
}

/// Fraction of `points` inside `e`.
pub fn containment_fraction(e: &Ellipsoid, points: &[DVector<f64>], tol: f64) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let m = e.membership();
    points.iter().filter(|p| m.contains(p, tol)).count() as f64 / points.len() as f64
}

pub fn run(s: &Scenario, opts: &RunOptions) -> Result<RunOutput> {
    let expanded = s.expand()?;
    run_expanded(&expanded, s, opts)
}

pub fn run_expanded(expanded: &Expanded, s: &Scenario, opts: &RunOptions) -> Result<RunOutput> {
    let truth = simulate_truth(s, expanded, opts.seed)?;
    let mut config = opts.config.clone();
    config.sigma0 = expanded.initial.scale;
    let mut est = Estimator::new(config, expanded.initial.center.clone(), expanded.initial.shape.clone())?;

    let mut audit = AuditReport::default();
    let mut records = vec![record(0, est.ellipsoid(), est.state.sigma, &truth.states[0], String::new(), 0.0)];
    let mut ellipsoids = vec![est.ellipsoid().clone()];
    let mut sigmas = vec![est.state.sigma];
    let mut diagnostics = vec![(est.state.diagnostics.v, est.state.diagnostics.s)];
    if !records[0].contained {
        audit.containment.push(0);
    }

    for k in 1..=s.horizon {
        let model = &expanded.models[k - 1];
        let batch = &truth.measurements[k];
        let x = &truth.states[k];
        let started = Instant::now();
        let prev_sigma = est.state.sigma;
        let report = est.step(model, batch)?;
        let ms = if opts.timing { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        let e = est.ellipsoid().clone();

        let cases: String = report.labels.iter().map(CaseLabel::code).collect();
        let rec = record(k, &e, est.state.sigma, x, cases, ms);
        if !rec.contained {
            audit.containment.push(k);
        }
        for (i, (m, label)) in batch.iter().zip(&report.labels).enumerate() {
            if *label != CaseLabel::Empty && !m.is_satisfied(&e.center, accept_tol(m, &e.center)) {
                audit.acceptability.push((k, i));
            }
        }
        if est.config.corr == CorrectionCriterion::SigmaMin && est.state.sigma > prev_sigma * (1.0 + SIGMA_MONOTONE_TOL) {
            audit.sigma_increase.push(k);
        }
        if opts.samples > 0 && !batch.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let pts: Vec<DVector<f64>> = report
                .predicted
                .sample_with(opts.samples, &mut rng)
                .into_iter()
                .filter(|p| batch.iter().zip(&report.labels).all(|(m, l)| *l == CaseLabel::Empty || m.is_satisfied(p, 0.0)))
                .collect();
            audit.mc_checked += pts.len();
            let member = e.membership();
            audit.mc_escapes += pts.iter().filter(|p| !member.contains(p, CONTAINMENT_TOL)).count();
        }
        records.push(rec);
        ellipsoids.push(e);
        sigmas.push(est.state.sigma);
        diagnostics.push((est.state.diagnostics.v, est.state.diagnostics.s));
    }
    Ok(RunOutput { records, audit, ellipsoids, sigmas, diagnostics, truth })
}
