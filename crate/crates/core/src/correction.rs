//! Measurement update.
//!
//! Each scalar measurement `y̲ ≤ fᵀx ≤ ȳ` is fused in turn. Bounds that lie
//! outside the ellipsoid's slab are first pulled in to the tangent values,
//! then the strip (or hyperplane) is intersected with the ellipsoid:
//!
//! ```text
//! P ← P − αβ φφᵀ,   x̂ ← x̂ + αβδ φ,   φ = P f,  α = 1/(fᵀPf)
//! ```
//!
//! The weight `β` is chosen by one of three criteria; `β = 1` is the exact
//! intersection with a hyperplane and drops the rank by one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Ellipsoid;
use crate::numerics::{eval_cubic, solve_cubic, SymMatrix, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CorrectionCriterion {
    /// Worst-case weighted error (the scale `ς`).
    #[default]
    SigmaMin,
    VolumeMin,
    SsalMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InconsistencyPolicy {
    /// Leave the ellipsoid untouched and carry on.
    #[default]
    Skip,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementKind {
    Strip,
    UpperHalfspace,
    LowerHalfspace,
    Hyperplane,
}

/// `lower ≤ fᵀx ≤ upper`; one bound may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub direction: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Measurement {
    pub fn new(direction: DVector<f64>, lower: f64, upper: f64) -> Result<Self> {
        classify(lower, upper, &direction)?;
        Ok(Measurement { direction, lower, upper })
    }

    pub fn kind(&self) -> MeasurementKind {
        classify(self.lower, self.upper, &self.direction).expect("validated on construction")
    }

    /// Half-width `γ` and midpoint of a finite interval.
    pub fn half_width_and_mid(&self) -> (f64, f64) {
        (0.5 * (self.upper - self.lower), 0.5 * (self.upper + self.lower))
    }

    pub fn is_satisfied(&self, x: &DVector<f64>, tol: f64) -> bool {
        let v = self.direction.dot(x);
        v >= self.lower - tol && v <= self.upper + tol
    }
}

/// Sorts raw bounds into the four measurement kinds.
pub fn classify(lower: f64, upper: f64, f: &DVector<f64>) -> Result<MeasurementKind> {
    let bad = || Error::InvalidBounds { lower, upper };
    if lower.is_nan() || upper.is_nan() || lower > upper {
        return Err(bad());
    }
    if lower == f64::NEG_INFINITY && upper == f64::INFINITY {
        return Err(bad());
    }
    if lower == f64::INFINITY || upper == f64::NEG_INFINITY {
        return Err(bad());
    }
    if f.is_empty() || f.iter().all(|v| *v == 0.0) || !f.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation("measurement direction must be finite and nonzero".into()));
    }
    Ok(if lower == upper {
        MeasurementKind::Hyperplane
    } else if lower == f64::NEG_INFINITY {
        MeasurementKind::UpperHalfspace
    } else if upper == f64::INFINITY {
        MeasurementKind::LowerHalfspace
    } else {
        MeasurementKind::Strip
    })
}

/// Per-measurement intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGeometry {
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub theta: f64,
    pub phi: DVector<f64>,
    /// The measurement direction `f`.
    pub direction: DVector<f64>,
    pub eta: f64,
    pub rho_bar: f64,
    pub rho_low: f64,
    /// Upper bound after clipping to the ellipsoid's slab.
    pub y_bar: f64,
    /// Lower bound after clipping to the ellipsoid's slab.
    pub y_low: f64,
}

impl FusionGeometry {
    /// `fᵀx̂`
    pub fn projected_center(&self) -> f64 {
        0.5 * (self.rho_bar - self.rho_low)
    }
}

pub fn fusion_geometry(e: &Ellipsoid, m: &Measurement, tol: &Tolerances) -> FusionGeometry {
    let f = &m.direction;
    let phi = e.shape.mul_vec(f);
    let theta = f.dot(&phi).max(0.0);
    let pnorm = e.shape.as_matrix().norm();
    let alpha = if theta > tol.rank * f.norm_squared() * pnorm && theta > 0.0 { 1.0 / theta } else { 0.0 };
    let eta = (e.scale * theta).sqrt();
    let fc = f.dot(&e.center);
    let rho_bar = eta + fc;
    let rho_low = 2.0 * eta - rho_bar;
    let y_bar = m.upper.min(rho_bar);
    let y_low = m.lower.max(-rho_low);
    FusionGeometry {
        alpha,
        delta: 0.5 * (y_bar + y_low - rho_bar + rho_low),
        gamma: 0.5 * (y_bar - y_low),
        theta,
        phi,
        direction: f.clone(),
        eta,
        rho_bar,
        rho_low,
        y_bar,
        y_low,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CaseLabel {
    /// The measurement set misses the ellipsoid.
    Empty,
    /// The measurement carries no information.
    NoOp,
    /// The intersection is a single tangency point.
    Point(DVector<f64>),
    Fuse,
}

impl CaseLabel {
    pub fn code(&self) -> char {
        match self {
            CaseLabel::Empty => 'E',
            CaseLabel::NoOp => 'N',
            CaseLabel::Point(_) => 'P',
            CaseLabel::Fuse => 'F',
        }
    }
}

fn case_eps(g: &FusionGeometry, tol: &Tolerances) -> f64 {
    tol.case * g.eta.max(1.0)
}

pub fn classify_case(e: &Ellipsoid, g: &FusionGeometry, m: &Measurement, tol: &Tolerances) -> CaseLabel {
    let eps = case_eps(g, tol);
    let lo_edge = -g.rho_low;
    let hi_edge = g.rho_bar;
    if m.upper < lo_edge - eps || m.lower > hi_edge + eps {
        return CaseLabel::Empty;
    }
    if g.alpha == 0.0 || (m.lower <= lo_edge + eps && m.upper >= hi_edge - eps) {
        return CaseLabel::NoOp;
    }
    // Tangency only from the outside: a bound even slightly inside the slab
    // leaves a cap whose width grows like the square root of its depth, and
    // collapsing that to a point would drop part of the set.
    let offset = (e.scale / g.theta).sqrt();
    if m.upper <= lo_edge {
        return CaseLabel::Point(&e.center - &g.phi * offset);
    }
    if m.lower >= hi_edge {
        return CaseLabel::Point(&e.center + &g.phi * offset);
    }
    CaseLabel::Fuse
}

/// Scale after a strip fusion with weight `β`.
pub fn scale_after(sigma: f64, alpha: f64, gamma: f64, delta: f64, beta: f64) -> f64 {
    sigma + alpha * beta * (gamma * gamma / (1.0 - beta) - delta * delta)
}

pub fn beta_sigma(gamma: f64, delta: f64) -> f64 {
    if delta.abs() > gamma {
        1.0 - gamma / delta.abs()
    } else {
        0.0
    }
}

/// `ln(ς(β)^q (1 − β))`, the log pseudo-volume objective up to constants.
pub fn volume_objective(q: usize, alpha: f64, gamma: f64, delta: f64, sigma: f64, beta: f64) -> f64 {
    q as f64 * scale_after(sigma, alpha, gamma, delta, beta).ln() + (1.0 - beta).ln()
}

/// `ς(β) tr(P − αβφφᵀ)`
pub fn ssal_objective(tr_p: f64, nu: f64, alpha: f64, gamma: f64, delta: f64, sigma: f64, beta: f64) -> f64 {
    scale_after(sigma, alpha, gamma, delta, beta) * (tr_p - alpha * beta * nu)
}

/// Pseudo-volume-optimal `β`.
///
/// For `q ≥ 2` the stationarity condition is `a₂β² + a₁β + a₀ = 0`. For `q = 1`
/// the objective `ς(β)(1 − β)` is a convex quadratic whose minimiser over
/// `[0, 1]` is taken directly; `1` means the exact intersection (see
/// [`correct`]).
pub fn beta_volume(q: usize, alpha: f64, gamma: f64, delta: f64, sigma: f64, eps_beta: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::Validation("pseudo-volume weight needs a nonzero rank".into()));
    }
    let qf = q as f64;
    let (g2, d2) = (gamma * gamma, delta * delta);
    let a0 = qf * alpha * (g2 - d2) - sigma;
    let a1 = (2.0 * qf + 1.0) * alpha * d2 + sigma - g2 * alpha;
    let a2 = -(qf + 1.0) * alpha * d2;
    if a0 >= 0.0 {
        return Ok(0.0);
    }
    if q == 1 {
        log::debug!("rank-one shape: pseudo-volume weight from the quadratic objective");
        if d2 == 0.0 {
            return Ok(1.0);
        }
        return Ok((-a0 / (2.0 * alpha * d2)).min(1.0));
    }
    let cap = 1.0 - eps_beta;
    let in_unit = |b: f64| b > 0.0 && b < 1.0 + 1e-12;
    let mut candidates = Vec::new();
    if a2 == 0.0 {
        candidates.push(-a0 / a1);
    } else {
        // A slightly negative discriminant is a roundoff-split double root.
        let s = (a1 * a1 - 4.0 * a0 * a2).max(0.0).sqrt();
        // Stable pair of roots.
        let t = -0.5 * (a1 + a1.signum() * s);
        if t != 0.0 {
            candidates.push(t / a2);
            candidates.push(a0 / t);
        } else {
            candidates.push(-a1 / (2.0 * a2));
        }
    }
    candidates
        .into_iter()
        .filter(|&b| in_unit(b))
        .map(|b| b.min(cap))
        .min_by(|&x, &y| volume_objective(q, alpha, gamma, delta, sigma, x).total_cmp(&volume_objective(q, alpha, gamma, delta, sigma, y)))
        .or_else(|| bisect_unit(|x| (a2 * x + a1) * x + a0).map(|b| b.min(cap)))
        .ok_or(Error::NoRootInUnit)
}

/// Root of `f` in `(0, 1]` by bisection, given `f(0) < 0 ≤ f(1)`.
///
/// Fallback for nearly double roots, where the closed forms lose the root to
/// cancellation even though the sign change guarantees one.
fn bisect_unit(f: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if !(f(lo) < 0.0 && f(hi) >= 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Coefficients `[b₃, b₂, b₁, b₀]` of the SSAL stationarity cubic.
pub fn ssal_cubic(tr_p: f64, nu: f64, alpha: f64, gamma: f64, delta: f64, sigma: f64) -> [f64; 4] {
    let (g2, d2) = (gamma * gamma, delta * delta);
    let b0 = -nu * sigma - tr_p * (d2 - g2);
    let b1 = 2.0 * (tr_p * d2 + nu * sigma + alpha * nu * (d2 - g2));
    let b2 = -nu * sigma - tr_p * d2 + alpha * nu * (g2 - 4.0 * d2);
    let b3 = 2.0 * alpha * nu * d2;
    [b3, b2, b1, b0]
}

fn polish(coeffs: [f64; 4], mut x: f64) -> f64 {
    let [b3, b2, b1, _] = coeffs;
    for _ in 0..3 {
        let d = (3.0 * b3 * x + 2.0 * b2) * x + b1;
        if d == 0.0 {
            break;
        }
        let next = x - eval_cubic(coeffs, x) / d;
        if !next.is_finite() || eval_cubic(coeffs, next).abs() >= eval_cubic(coeffs, x).abs() {
            break;
        }
        x = next;
    }
    x
}

/// SSAL-optimal `β`.
pub fn beta_ssal(tr_p: f64, nu: f64, alpha: f64, gamma: f64, delta: f64, sigma: f64, eps_beta: f64) -> Result<f64> {
    let coeffs = ssal_cubic(tr_p, nu, alpha, gamma, delta, sigma);
    let [b3, b2, b1, b0] = coeffs;
    if b0 >= 0.0 {
        return Ok(0.0);
    }
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let raw: Vec<f64> = if b3.abs() > 1e-10 * scale {
        solve_cubic(b3, b2, b1, b0)?.roots
    } else if b2.abs() > 1e-14 * scale {
        let disc = b1 * b1 - 4.0 * b2 * b0;
        if disc < 0.0 {
            Vec::new()
        } else {
            let t = -0.5 * (b1 + b1.signum() * disc.sqrt());
            if t == 0.0 {
                vec![-b1 / (2.0 * b2)]
            } else {
                vec![t / b2, b0 / t]
            }
        }
    } else {
        vec![-b0 / b1]
    };
    let cap = 1.0 - eps_beta;
    raw.into_iter()
        .map(|r| polish(coeffs, r))
        .filter(|&b| b > 0.0 && b < 1.0 + 1e-9)
        .map(|b| b.min(cap))
        .min_by(|&x, &y| {
            ssal_objective(tr_p, nu, alpha, gamma, delta, sigma, x).total_cmp(&ssal_objective(tr_p, nu, alpha, gamma, delta, sigma, y))
        })
        .or_else(|| bisect_unit(|x| eval_cubic(coeffs, x)).map(|b| b.min(cap)))
        .ok_or(Error::NoRootInUnit)
}

/// How the scale is updated by [`apply_fusion`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleRule {
    /// `ς − αβ²δ²` (hyperplanes and the worst-case criterion).
    Tight,
    /// `ς + αβ(γ²/(1 − β) − δ²)`
    General,
}

pub fn apply_fusion(e: &Ellipsoid, g: &FusionGeometry, beta: f64, rule: ScaleRule) -> Result<Ellipsoid> {
    if beta == 0.0 || g.alpha == 0.0 {
        return Ok(e.clone());
    }
    let ab = g.alpha * beta;
    let mut shape = SymMatrix::new(e.shape.as_matrix() - (&g.phi * g.phi.transpose()) * ab);
    let rank = if beta == 1.0 { e.rank.saturating_sub(1) } else { e.rank };
    if beta == 1.0 {
        // f is an exact null vector of the result; scrub the roundoff left along it.
        shape = if rank == 0 { SymMatrix::zeros(e.dim()) } else { project_out(&shape, &g.direction) };
    }
    let center = &e.center + &g.phi * (ab * g.delta);
    let scale = match rule {
        ScaleRule::Tight => e.scale - ab * beta * g.delta * g.delta,
        ScaleRule::General => scale_after(e.scale, g.alpha, g.gamma, g.delta, beta),
    };
    if scale.is_nan() || scale <= 0.0 || !scale.is_finite() {
        return Err(Error::NonPositiveScale(scale));
    }
    Ok(Ellipsoid { center, shape, scale, rank })
}

/// `ΠMΠ` with `Π = I − ffᵀ/‖f‖²`.
fn project_out(m: &SymMatrix, f: &DVector<f64>) -> SymMatrix {
    let n = f.len();
    let proj = DMatrix::<f64>::identity(n, n) - (f * f.transpose()) / f.norm_squared();
    SymMatrix::new(&proj * m.as_matrix() * &proj)
}

/// Exact intersection of a rank-one ellipsoid (a segment) with a strip.
fn segment_intersection(e: &Ellipsoid, g: &FusionGeometry) -> Result<Ellipsoid> {
    let scale = g.alpha * g.gamma * g.gamma;
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::NonPositiveScale(scale));
    }
    Ok(Ellipsoid { center: &e.center + &g.phi * (g.alpha * g.delta), shape: e.shape.clone(), scale, rank: e.rank })
}

#[derive(Debug, Clone)]
pub struct CorrectionOutput {
    pub ellipsoid: Ellipsoid,
    pub labels: Vec<CaseLabel>,
    pub betas: Vec<f64>,
}

/// Fuses a batch of measurements in input order.
pub fn correct(
    e: &Ellipsoid,
    measurements: &[Measurement],
    criterion: CorrectionCriterion,
    policy: InconsistencyPolicy,
    tol: &Tolerances,
) -> Result<CorrectionOutput> {
    correct_sweeps(e, measurements, criterion, policy, tol, 1)
}

/// Like [`correct`], then revisits measurements whose constraint the center
/// no longer meets, for at most `max_sweeps` passes in total.
///
/// A later fusion moves the center along `P f_j`, which can leave an earlier
/// strip. Every revisit is an ordinary fusion, so containment and the
/// worst-case scale bound carry over. Labels and weights report the first pass.
pub fn correct_sweeps(
    e: &Ellipsoid,
    measurements: &[Measurement],
    criterion: CorrectionCriterion,
    policy: InconsistencyPolicy,
    tol: &Tolerances,
    max_sweeps: usize,
) -> Result<CorrectionOutput> {
    let mut cur = e.clone();
    let mut labels = Vec::with_capacity(measurements.len());
    let mut betas = Vec::with_capacity(measurements.len());
    for (index, m) in measurements.iter().enumerate() {
        let (next, label, beta) = fuse_one(cur, m, index, criterion, policy, tol)?;
        cur = next;
        labels.push(label);
        betas.push(beta);
    }
    for _ in 1..max_sweeps {
        let mut moved = false;
        for (index, m) in measurements.iter().enumerate() {
            if labels[index] == CaseLabel::Empty || m.is_satisfied(&cur.center, revisit_slack(m, &cur.center, tol)) {
                continue;
            }
            let (next, _, beta) = fuse_one(cur, m, index, criterion, policy, tol)?;
            cur = next;
            moved |= beta > 0.0;
        }
        if !moved {
            break;
        }
    }
    if max_sweeps > 1
        && measurements
            .iter()
            .zip(&labels)
            .any(|(m, l)| *l != CaseLabel::Empty && !m.is_satisfied(&cur.center, revisit_slack(m, &cur.center, tol)))
    {
        log::warn!("center still violates a measurement after {max_sweeps} passes");
    }
    Ok(CorrectionOutput { ellipsoid: cur, labels, betas })
}

fn revisit_slack(m: &Measurement, c: &DVector<f64>, tol: &Tolerances) -> f64 {
    0.1 * tol.case * (1.0 + m.direction.norm() * c.norm())
}

fn fuse_one(
    mut cur: Ellipsoid,
    m: &Measurement,
    index: usize,
    criterion: CorrectionCriterion,
    policy: InconsistencyPolicy,
    tol: &Tolerances,
) -> Result<(Ellipsoid, CaseLabel, f64)> {
    if m.direction.len() != cur.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measurement {index} has dimension {} but the state has {}",
            m.direction.len(),
            cur.dim()
        )));
    }
    let g = fusion_geometry(&cur, m, tol);
    let label = classify_case(&cur, &g, m, tol);
    let mut beta = 0.0;
    match &label {
        CaseLabel::Empty => {
            if policy == InconsistencyPolicy::Abort {
                return Err(Error::InconsistentMeasurement { index });
            }
            log::warn!("measurement {index} misses the ellipsoid; skipped");
        }
        CaseLabel::NoOp => {}
        CaseLabel::Point(p) => {
            let n = cur.dim();
            cur = Ellipsoid { center: p.clone(), shape: SymMatrix::zeros(n), scale: cur.scale, rank: 0 };
            beta = 1.0;
        }
        CaseLabel::Fuse => {
            if m.lower == m.upper {
                // Exact hyperplane: the offset is measured from the raw value.
                let mut gh = g.clone();
                gh.delta = m.lower - g.projected_center();
                beta = 1.0;
                cur = apply_fusion(&cur, &gh, 1.0, ScaleRule::Tight)?;
            } else {
                let improves = -g.rho_low < g.y_low || g.y_bar < g.rho_bar;
                if improves {
                    let q = cur.rank;
                    match criterion {
                        CorrectionCriterion::SigmaMin => {
                            beta = beta_sigma(g.gamma, g.delta).min(1.0 - tol.beta);
                            cur = apply_fusion(&cur, &g, beta, ScaleRule::Tight)?;
                        }
                        CorrectionCriterion::VolumeMin | CorrectionCriterion::SsalMin if q == 1 => {
                            beta = beta_volume(1, g.alpha, g.gamma, g.delta, cur.scale, tol.beta)?;
                            if beta >= 1.0 - tol.beta {
                                beta = 1.0;
                                cur = segment_intersection(&cur, &g)?;
                            } else {
                                cur = apply_fusion(&cur, &g, beta, ScaleRule::General)?;
                            }
                        }
                        CorrectionCriterion::VolumeMin => {
                            beta = beta_volume(q.max(1), g.alpha, g.gamma, g.delta, cur.scale, tol.beta)?;
                            cur = apply_fusion(&cur, &g, beta, ScaleRule::General)?;
                        }
                        CorrectionCriterion::SsalMin => {
                            let nu = g.phi.norm_squared();
                            beta = beta_ssal(cur.shape.trace(), nu, g.alpha, g.gamma, g.delta, cur.scale, tol.beta)?;
                            cur = apply_fusion(&cur, &g, beta, ScaleRule::General)?;
                        }
                    }
                }
            }
        }
    }
    Ok((cur, label, beta))
}
