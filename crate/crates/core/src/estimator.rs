//! The recursive estimator: predict, correct, renormalise, and optionally
//! track the size bound factors and the sporadic observability gramians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correction::{correct_sweeps, CaseLabel, CorrectionCriterion, InconsistencyPolicy, Measurement, MeasurementKind};
use crate::error::{Error, Result};
use crate::geometry::Ellipsoid;
use crate::numerics::{matrix_rank, pseudo_det_general, pseudo_inverse, SymMatrix, Tolerances};
use crate::prediction::{predict, PredictionCriterion, PredictionScratch, ProcessModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub pred: PredictionCriterion,
    pub corr: CorrectionCriterion,
    pub sigma0: f64,
    pub tolerances: Tolerances,
    pub theta_refresh_period: usize,
    pub inconsistency: InconsistencyPolicy,
    /// Keep the stored scale at `ς₀` and fold changes into the shape matrix.
    pub normalize: bool,
    /// Maintain the size bound factors (costs a few extra decompositions per step).
    pub diagnostics: bool,
    /// Passes over a measurement batch; see [`correct_sweeps`]. `1` is a single
    /// sequential pass.
    pub max_sweeps: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            pred: PredictionCriterion::VolumeMin,
            corr: CorrectionCriterion::SigmaMin,
            sigma0: 1.0,
            tolerances: Tolerances::default(),
            theta_refresh_period: 50,
            inconsistency: InconsistencyPolicy::Skip,
            normalize: true,
            diagnostics: false,
            max_sweeps: 1000,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Validation(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Validation("max_sweeps must be at least 1".into()));
        }
        if self.theta_refresh_period == 0 {
            return Err(Error::Validation("theta_refresh_period must be at least 1".into()));
        }
        Ok(())
    }
}

/// Running products of the pseudo-volume (`v`) and SSAL (`s`) growth bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub v: f64,
    pub s: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics { v: 1.0, s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    /// The set `E(x̂_k, ς P_k)` guaranteed to contain the state.
    pub ellipsoid: Ellipsoid,
    pub step: usize,
    pub scratch: PredictionScratch,
    /// `ς_k`, the scale the unnormalised recursion would carry.
    pub sigma: f64,
    pub sigma_history: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl EstimatorState {
    pub fn new(ellipsoid: Ellipsoid) -> Self {
        let sigma = ellipsoid.scale;
        EstimatorState {
            ellipsoid,
            step: 0,
            scratch: PredictionScratch::default(),
            sigma,
            sigma_history: vec![sigma],
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Everything produced by one call to [`Estimator::step`].
#[derive(Debug, Clone)]
pub struct StepReport {
    pub predicted: Ellipsoid,
    pub labels: Vec<CaseLabel>,
    pub betas: Vec<f64>,
    pub mus: Vec<f64>,
}

/// Rewrites the corrected ellipsoid with scale `ς₀`; the set is unchanged.
pub fn normalize(e: &Ellipsoid, sigma0: f64) -> Ellipsoid {
    if e.scale == sigma0 {
        return e.clone();
    }
    e.rescaled(sigma0)
}

/// One step's factors `(v, s)` of the size bounds.
///
/// `p` is the unit-scale shape fed to the prediction with scale `sigma`, and
/// `mus` are the per-generator parameters it used.
pub fn bound_factors(p: &SymMatrix, a: &DMatrix<f64>, r: &DMatrix<f64>, mus: &[f64], sigma: f64, tol: &Tolerances) -> (f64, f64) {
    let n = p.dim();
    let m = mus.len();
    if mus.iter().any(|mu| !mu.is_finite() || *mu <= 0.0) {
        return (f64::NAN, f64::NAN);
    }
    // χᵢ = Π_{j ≥ i} (1 + μⱼ)
    let mut chi = vec![1.0; m + 1];
    for i in (0..m).rev() {
        chi[i] = chi[i + 1] * (1.0 + mus[i]);
    }
    let a_check = a * chi[0].sqrt();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..m {
        let col = r.column(i);
        w += (col * col.transpose()) * (chi[i] / mus[i]);
    }
    let w = w / sigma;
    let theta = p.congruence(&a_check);
    let theta_pinv = pseudo_inverse(&theta, tol.rank);
    let proj = theta_pinv.as_matrix() * theta.as_matrix();
    let eye = DMatrix::<f64>::identity(n, n);
    let inner = &proj + (theta_pinv.as_matrix() + &eye - &proj) * &w;
    let p_proj = p.as_matrix() * pseudo_inverse(p, tol.rank).as_matrix();
    let lead = pseudo_det_general(&(&a_check * p_proj), tol.rank);
    let v = lead * lead * pseudo_det_general(&inner, tol.rank);
    let s = (&a_check * a_check.transpose()).trace() + w.trace() / p.trace();
    (v, s)
}

#[derive(Debug, Clone)]
pub struct Estimator {
    pub config: EstimatorConfig,
    pub state: EstimatorState,
}

impl Estimator {
    /// Starts from `E(x̂₀, ς₀ P₀)`.
    pub fn new(config: EstimatorConfig, center: DVector<f64>, shape: SymMatrix) -> Result<Self> {
        config.validate()?;
        let e = Ellipsoid::new(center, shape, config.sigma0, &config.tolerances)?;
        Ok(Estimator { config, state: EstimatorState::new(e) })
    }

    pub fn ellipsoid(&self) -> &Ellipsoid {
        &self.state.ellipsoid
    }

    /// Prediction through `model`, then correction with `measurements`.
    pub fn step(&mut self, model: &ProcessModel, measurements: &[Measurement]) -> Result<StepReport> {
        let cfg = &self.config;
        let tol = &cfg.tolerances;
        let prev = &self.state.ellipsoid;
        let pred = predict(prev, model, &cfg.pred, &mut self.state.scratch, tol, cfg.theta_refresh_period)?;

        if cfg.diagnostics {
            let (v, s) = bound_factors(&prev.shape, &model.a, &model.r, &pred.mus, prev.scale, tol);
            self.state.diagnostics.v *= v;
            self.state.diagnostics.s *= s;
        }

        let corr = correct_sweeps(&pred.ellipsoid, measurements, cfg.corr, cfg.inconsistency, tol, cfg.max_sweeps)?;
        let scale_ratio = corr.ellipsoid.scale / pred.ellipsoid.scale;
        self.state.sigma *= scale_ratio;
        self.state.ellipsoid = if cfg.normalize { normalize(&corr.ellipsoid, cfg.sigma0) } else { corr.ellipsoid };
        self.state.step += 1;
        self.state.sigma_history.push(self.state.sigma);
        Ok(StepReport { predicted: pred.ellipsoid, labels: corr.labels, betas: corr.betas, mus: pred.mus })
    }
}

/// Outcome of [`gramians`].
#[derive(Debug, Clone, PartialEq)]
pub struct GramianReport {
    /// Observability gramian over the window holding `h` measurement instants,
    /// `None` when fewer than `h` instants precede step `k`.
    pub obs: Option<SymMatrix>,
    /// Lookback length `s_k(h)`.
    pub window: Option<usize>,
    /// Controllability gramian over `[k − h, k)`.
    pub ctrl: SymMatrix,
    pub obs_eig_range: Option<(f64, f64)>,
    pub ctrl_eig_range: (f64, f64),
}

fn eig_range(m: &SymMatrix) -> (f64, f64) {
    let (vals, _) = m.eigen();
    (vals.min(), vals.max())
}

/// Directions that enter the observability gramian: all non-equality measurements.
pub fn gramian_directions(n: usize, measurements: &[Measurement]) -> Option<DMatrix<f64>> {
    let cols: Vec<DVector<f64>> =
        measurements.iter().filter(|m| m.kind() != MeasurementKind::Hyperplane).map(|m| m.direction.clone()).collect();
    if cols.is_empty() {
        None
    } else {
        let mut f = DMatrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            f.set_column(j, c);
        }
        Some(f)
    }
}

/// Observability gramian over the sporadic window ending at `k` and
/// controllability gramian over the `h` steps before `k`.
///
/// `models[i]` carries the state from `i` to `i + 1`; `dirs[i]` holds the
/// measurement directions at instant `i` (`None` when nothing was measured).
pub fn gramians(models: &[ProcessModel], dirs: &[Option<DMatrix<f64>>], k: usize, h: usize, tol: &Tolerances) -> Result<GramianReport> {
    if h == 0 {
        return Err(Error::Validation("gramian window needs h ≥ 1".into()));
    }
    let n = models.first().map(|m| m.dim()).ok_or_else(|| Error::Validation("no models".into()))?;
    if k > models.len() || k >= dirs.len() {
        return Err(Error::DimensionMismatch(format!("step {k} is beyond the recorded history")));
    }
    let check = |i: usize| -> Result<()> {
        if matrix_rank(&models[i].a, tol.rank) < n {
            Err(Error::SingularTransition { step: i })
        } else {
            Ok(())
        }
    };

    // Window: walk back from k until h measurement instants are collected.
    let mut count = 0;
    let mut start = None;
    for i in (0..=k).rev() {
        if dirs[i].is_some() {
            count += 1;
            if count == h {
                start = Some(i);
                break;
            }
        }
    }
    let (obs, window) = match start {
        Some(s0) => {
            let mut o = DMatrix::zeros(n, n);
            let mut phi = DMatrix::<f64>::identity(n, n);
            for i in s0..=k {
                if i > s0 {
                    check(i - 1)?;
                    phi = &models[i - 1].a * phi;
                }
                if let Some(Some(f)) = dirs.get(i) {
                    let t = phi.transpose() * f;
                    o += &t * t.transpose();
                }
            }
            (Some(SymMatrix::new(o)), Some(k - s0))
        }
        None => (None, None),
    };

    let mut c = DMatrix::zeros(n, n);
    let lo = k.saturating_sub(h);
    for i in lo..k {
        // Φ_{k, i+1} = A_{k−1} ⋯ A_{i+1}
        let mut phi = DMatrix::<f64>::identity(n, n);
        #[allow(clippy::needless_range_loop)]
        for j in (i + 1)..k {
            check(j)?;
            phi = &models[j].a * phi;
        }
        let t = phi * &models[i].r;
        c += &t * t.transpose();
    }
    let ctrl = SymMatrix::new(c);
    Ok(GramianReport { obs_eig_range: obs.as_ref().map(eig_range), obs, window, ctrl_eig_range: eig_range(&ctrl), ctrl })
}
