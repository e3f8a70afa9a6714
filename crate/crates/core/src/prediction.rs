//! Time update: map the ellipsoid through the dynamics, then absorb the
//! process-noise zonotope one generator (segment) at a time.
//!
//! For a generator `r` and a parameter `μ > 0` the Minkowski sum of `E(c, ςQ)`
//! and the segment `{t r : |t| ≤ 1}` is covered by
//! `E(c, ς (1 + μ)(Q + r rᵀ / (μ ς)))`. The two criteria pick `μ` to minimise
//! either the pseudo-volume or the (weighted) sum of squared semi-axes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Ellipsoid;
use crate::numerics::{matrix_rank, numeric_rank, pinv_rank_one_delta, pseudo_det, pseudo_inverse, range_split, SymMatrix, Tolerances};

/// One step of `x⁺ = A x + B τ + R w`, `‖w‖∞ ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub tau: DVector<f64>,
    /// Noise generators, one per column (`n × m`, `m` may be 0).
    pub r: DMatrix<f64>,
}

impl ProcessModel {
    /// Autonomous model without input or noise.
    pub fn autonomous(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        ProcessModel { a, b: DMatrix::zeros(n, 0), tau: DVector::zeros(0), r: DMatrix::zeros(n, 0) }
    }

    pub fn with_noise(mut self, r: DMatrix<f64>) -> Self {
        self.r = r;
        self
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn noise_order(&self) -> usize {
        self.r.ncols()
    }

    pub fn generator(&self, i: usize) -> DVector<f64> {
        self.r.column(i).into_owned()
    }

    /// Deterministic part `A x + B τ`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a * x;
        if self.b.ncols() > 0 {
            out += &self.b * &self.tau;
        }
        out
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("A is {}x{}", n, self.a.ncols())));
        }
        if self.b.nrows() != n || self.b.ncols() != self.tau.len() {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{} but tau has length {}",
                self.b.nrows(),
                self.b.ncols(),
                self.tau.len()
            )));
        }
        if self.r.nrows() != n {
            return Err(Error::DimensionMismatch(format!("R has {} rows, expected {n}", self.r.nrows())));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.a) || !finite(&self.b) || !finite(&self.r) || !self.tau.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("model entries must be finite".into()));
        }
        let rnorm = self.r.norm();
        for (j, col) in self.r.column_iter().enumerate() {
            let c = col.norm();
            if c == 0.0 || c <= tol.rank * rnorm {
                return Err(Error::Validation(format!("noise generator column {j} is zero; every generator must be nonzero")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum PredictionCriterion {
    #[default]
    VolumeMin,
    /// Weighted sum of squared semi-axes of `C E`; `None` means `C = I`.
    TraceMin { weight: Option<DMatrix<f64>> },
}

impl PredictionCriterion {
    pub fn trace() -> Self {
        PredictionCriterion::TraceMin { weight: None }
    }
}

/// State carried by the pseudo-volume recursion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionScratch {
    /// `Q†` of the last predicted shape.
    pub theta: Option<SymMatrix>,
    pub pdet: f64,
    pub rank: usize,
    /// Rank-one updates applied to `theta` since it was last recomputed.
    pub updates_since_refresh: usize,
}

#[derive(Debug, Clone)]
pub struct PredictionOutput {
    pub ellipsoid: Ellipsoid,
    /// `μ` used for each generator, in column order.
    pub mus: Vec<f64>,
}

/// Outer bound of `E ⊕ {t r : |t| ≤ 1}` for a given `μ`.
pub fn minkowski_segment(e: &Ellipsoid, r: &DVector<f64>, mu: f64, tol: &Tolerances) -> Ellipsoid {
    let shape = SymMatrix::new(e.shape.plus_outer(1.0 / (mu * e.scale), r).into_inner() * (1.0 + mu));
    let rank = numeric_rank(&shape, tol.rank);
    Ellipsoid { center: e.center.clone(), shape, scale: e.scale, rank }
}

/// Pseudo-volume-optimal `μ` for one generator.
///
/// `h = rᵀQ†r / ς` is only used when `r` lies in the range of `Q`.
pub fn mu_volume(q: usize, h: f64, v_is_zero: bool) -> Result<f64> {
    if q == 0 {
        return Err(Error::DegenerateDirection);
    }
    let qf = q as f64;
    if !v_is_zero {
        return Ok(1.0 / qf);
    }
    if h.is_nan() || h <= 0.0 {
        return Err(Error::DegenerateDirection);
    }
    // Positive root of q μ² + (q − 1) h μ − h = 0, written without cancellation.
    let disc = ((qf - 1.0) * h).powi(2) + 4.0 * qf * h;
    Ok(2.0 * h / (disc.sqrt() + (qf - 1.0) * h))
}

/// Trace-optimal `μ = √(rᵀCᵀCr / (ς tr(CQCᵀ)))`.
pub fn mu_trace(tr_q: f64, r_c_r: f64, sigma: f64) -> Result<f64> {
    if tr_q.is_nan() || tr_q <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    Ok((r_c_r / (sigma * tr_q)).sqrt())
}

fn mapped(e: &Ellipsoid, model: &ProcessModel) -> (DVector<f64>, SymMatrix) {
    (model.drift(&e.center), e.shape.congruence(&model.a))
}

fn initial_rank(e: &Ellipsoid, model: &ProcessModel, q0: &SymMatrix, tol: &Tolerances) -> usize {
    if matrix_rank(&model.a, tol.rank) == model.dim() {
        e.rank
    } else {
        numeric_rank(q0, tol.rank)
    }
}

/// Pseudo-volume-minimising prediction with incremental rank, pseudo-inverse
/// and pseudo-determinant bookkeeping.
pub fn predict_volume_min(
    e: &Ellipsoid,
    model: &ProcessModel,
    scratch: &mut PredictionScratch,
    tol: &Tolerances,
    refresh_period: usize,
) -> Result<PredictionOutput> {
    let sigma = e.scale;
    let (center, mut q) = mapped(e, model);
    let mut kappa = initial_rank(e, model, &q, tol);
    let mut theta = pseudo_inverse(&q, tol.rank);
    let mut pdet = pseudo_det(&q, tol.rank);
    let mut mus = Vec::with_capacity(model.noise_order());
    let period = refresh_period.max(1);

    for i in 0..model.noise_order() {
        let r = model.generator(i);
        if kappa == 0 {
            // Zero shape: the optimal bound is the segment itself (μ → ∞).
            let rr = r.norm_squared();
            q = SymMatrix::outer(&r).scaled(1.0 / sigma);
            theta = SymMatrix::outer(&r).scaled(sigma / (rr * rr));
            pdet = rr / sigma;
            kappa = 1;
            mus.push(f64::INFINITY);
            continue;
        }
        let mut split = range_split(&q, &theta, &r, tol.rank);
        // A full-rank shape spans everything; a small residual is roundoff in Θ.
        split.v_is_zero |= kappa == q.dim();
        let mu = if split.v_is_zero { mu_volume(kappa, r.dot(&split.u) / sigma, true)? } else { mu_volume(kappa, 0.0, false)? };
        let a = 1.0 / (mu * sigma);
        let b = 1.0 + mu;
        if split.v_is_zero {
            let factor = 1.0 + a * r.dot(&split.u);
            if factor <= 0.0 {
                return Err(Error::NonPositivePdet);
            }
            pdet *= b.powi(kappa as i32) * factor;
        } else {
            pdet *= b.powi(kappa as i32 + 1) * a * split.v.norm_squared();
            kappa += 1;
        }
        let delta = pinv_rank_one_delta(&split, &r, a);
        theta = SymMatrix::new((theta.as_matrix() + delta) / b);
        q = SymMatrix::new(q.plus_outer(a, &r).into_inner() * b);
        mus.push(mu);

        scratch.updates_since_refresh += 1;
        if scratch.updates_since_refresh >= period {
            theta = pseudo_inverse(&q, tol.rank);
            scratch.updates_since_refresh = 0;
        }
    }

    scratch.theta = Some(theta);
    scratch.pdet = pdet;
    scratch.rank = kappa;
    Ok(PredictionOutput { ellipsoid: Ellipsoid { center, shape: q, scale: sigma, rank: kappa }, mus })
}

/// Closed-form trace-minimising prediction.
pub fn predict_trace_min(e: &Ellipsoid, model: &ProcessModel, weight: Option<&DMatrix<f64>>, tol: &Tolerances) -> Result<PredictionOutput> {
    let sigma = e.scale;
    let (center, q0) = mapped(e, model);
    let m = model.noise_order();
    if m == 0 {
        let rank = initial_rank(e, model, &q0, tol);
        return Ok(PredictionOutput { ellipsoid: Ellipsoid { center, shape: q0, scale: sigma, rank }, mus: Vec::new() });
    }
    let n = model.dim();
    let weighted_norm = |r: &DVector<f64>| match weight {
        Some(c) => (c * r).norm(),
        None => r.norm(),
    };
    let tr_q0 = match weight {
        Some(c) => q0.congruence(c).trace(),
        None => q0.trace(),
    };

    let mut varpi = 0.0;
    let mut big_m = DMatrix::zeros(n, n);
    let mut norms = Vec::with_capacity(m);
    for i in 0..m {
        let r = model.generator(i);
        let rho = weighted_norm(&r);
        if rho.is_nan() || rho <= 0.0 {
            return Err(Error::DegenerateDirection);
        }
        varpi += rho;
        big_m += (&r * r.transpose()) / rho;
        norms.push(rho);
    }

    let shape = if tr_q0 > 0.0 {
        let vartheta = (sigma * tr_q0).sqrt();
        SymMatrix::new((q0.as_matrix() + big_m * (vartheta / sigma)) * (1.0 + varpi / vartheta))
    } else if q0.as_matrix().iter().all(|v| *v == 0.0) || weight.is_none() {
        // Zero shape: limit of the closed form as the trace goes to 0.
        SymMatrix::new(big_m * (varpi / sigma))
    } else {
        return Err(Error::ZeroTrace);
    };

    // Sequential μ: the weighted radius √(ς tr(C Qᵢ Cᵀ)) grows by ‖C rᵢ‖ per generator.
    let mut vartheta = (sigma * tr_q0.max(0.0)).sqrt();
    let mus = norms
        .iter()
        .map(|&rho| {
            let mu = if vartheta > 0.0 { rho / vartheta } else { f64::INFINITY };
            vartheta += rho;
            mu
        })
        .collect();

    let rank = numeric_rank(&shape, tol.rank);
    Ok(PredictionOutput { ellipsoid: Ellipsoid { center, shape, scale: sigma, rank }, mus })
}

/// The same bound built generator by generator with `μᵢ` from the trace rule.
pub fn predict_trace_sequential(e: &Ellipsoid, model: &ProcessModel, weight: Option<&DMatrix<f64>>, tol: &Tolerances) -> Result<Ellipsoid> {
    let (center, q0) = mapped(e, model);
    let mut cur = Ellipsoid { center, rank: numeric_rank(&q0, tol.rank), shape: q0, scale: e.scale };
    for i in 0..model.noise_order() {
        let r = model.generator(i);
        let (tr, rcr) = match weight {
            Some(c) => (cur.shape.congruence(c).trace(), (c * &r).norm_squared()),
            None => (cur.shape.trace(), r.norm_squared()),
        };
        let mu = mu_trace(tr, rcr, cur.scale)?;
        cur = minkowski_segment(&cur, &r, mu, tol);
    }
    Ok(cur)
}

/// Dispatches on the criterion.
pub fn predict(
    e: &Ellipsoid,
    model: &ProcessModel,
    criterion: &PredictionCriterion,
    scratch: &mut PredictionScratch,
    tol: &Tolerances,
    refresh_period: usize,
) -> Result<PredictionOutput> {
    if model.dim() != e.dim() {
        return Err(Error::DimensionMismatch(format!("model has dimension {} but the ellipsoid has {}", model.dim(), e.dim())));
    }
    match criterion {
        PredictionCriterion::VolumeMin => predict_volume_min(e, model, scratch, tol, refresh_period),
        PredictionCriterion::TraceMin { weight } => predict_trace_min(e, model, weight.as_ref(), tol),
    }
}
