//! Rank-aware symmetric matrix primitives and the closed-form cubic solver.
//!
//! Every routine here is a pure function. Shape matrices of degenerate
//! ellipsoids are singular, so inverses and determinants are always the
//! Moore-Penrose pseudo-inverse and the pseudo-determinant (product of the
//! nonzero singular values), with "nonzero" decided by a relative tolerance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical thresholds shared by the whole estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative threshold deciding rank and the `v = 0` test of rank-one updates.
    pub rank: f64,
    /// Relative slack on measurement case boundaries.
    pub case: f64,
    /// Gap kept between strip-branch β and 1.
    pub beta: f64,
    /// Accuracy expected from the pseudo-inverse (Penrose conditions).
    pub pinv: f64,
    /// Allowed negative eigenvalue, relative to the spectral radius, for SPSD input.
    pub sym: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank: 1e-10, case: 1e-9, beta: 1e-12, pinv: 1e-9, sym: 1e-9 }
    }
}

/// Square symmetric matrix. Symmetry is enforced on construction by averaging
/// with the transpose, so `m[(i, j)] == m[(j, i)]` holds bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix requires a square matrix");
        let mut m = m;
        symmetrize_in_place(&mut m);
        SymMatrix(m)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    /// `r rᵀ`
    pub fn outer(r: &DVector<f64>) -> Self {
        SymMatrix::new(r * r.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn norm(&self) -> f64 {
        spectral_radius(&self.eigen().0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    /// `self + a r rᵀ`
    pub fn plus_outer(&self, a: f64, r: &DVector<f64>) -> Self {
        SymMatrix::new(&self.0 + (r * r.transpose()) * a)
    }

    /// `M x`
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }

    /// `xᵀ M x`
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    /// `A M Aᵀ` for a (possibly rectangular) `A`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Self {
        SymMatrix::new(a * &self.0 * a.transpose())
    }

    /// Eigenvalues and orthonormal eigenvectors (columns).
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.0.clone());
        (eig.eigenvalues, eig.eigenvectors)
    }

    pub fn is_spsd(&self, tol: &Tolerances) -> bool {
        let (vals, _) = self.eigen();
        let rad = spectral_radius(&vals);
        vals.iter().all(|&l| l >= -tol.sym * rad.max(1.0))
    }
}

impl std::ops::Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix::new(&self.0 + &rhs.0)
    }
}

impl std::ops::Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix::new(&self.0 - &rhs.0)
    }
}

pub(crate) fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn spectral_radius(vals: &DVector<f64>) -> f64 {
    vals.iter().fold(0.0_f64, |acc, &l| acc.max(l.abs()))
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numeric_rank(m: &SymMatrix, rel_tol: f64) -> usize {
    let (vals, _) = m.eigen();
    let smax = spectral_radius(&vals);
    if smax == 0.0 {
        return 0;
    }
    vals.iter().filter(|l| l.abs() > rel_tol * smax).count()
}

/// Rank of a general (possibly non-symmetric) matrix from its SVD.
pub fn matrix_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Product of the singular values of a general matrix above `rel_tol · σ_max`.
pub fn pseudo_det_general(m: &DMatrix<f64>, rel_tol: f64) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).product()
}

/// Moore-Penrose inverse through the spectral decomposition.
pub fn pseudo_inverse(m: &SymMatrix, rel_tol: f64) -> SymMatrix {
    let (vals, vecs) = m.eigen();
    let smax = spectral_radius(&vals);
    let n = m.dim();
    let mut out = DMatrix::zeros(n, n);
    if smax == 0.0 {
        return SymMatrix(out);
    }
    for (i, &l) in vals.iter().enumerate() {
        if l.abs() > rel_tol * smax {
            let v = vecs.column(i);
            out += (v * v.transpose()) / l;
        }
    }
    SymMatrix::new(out)
}

/// Pseudo-determinant; the empty product (zero matrix) is 1.
pub fn pseudo_det(m: &SymMatrix, rel_tol: f64) -> f64 {
    let (vals, _) = m.eigen();
    let smax = spectral_radius(&vals);
    if smax == 0.0 {
        return 1.0;
    }
    vals.iter().filter(|l| l.abs() > rel_tol * smax).map(|l| l.abs()).product()
}

/// Symmetric square root `S` with `S S = M`; eigenvalues below the rank threshold are dropped.
pub fn sqrt_spsd(m: &SymMatrix, tol: &Tolerances) -> Result<SymMatrix> {
    let (vals, vecs) = m.eigen();
    let smax = spectral_radius(&vals);
    let n = m.dim();
    let mut out = DMatrix::zeros(n, n);
    for (i, &l) in vals.iter().enumerate() {
        if l < -tol.sym * smax {
            return Err(Error::NotSpsd { min_eig: l });
        }
        if l > tol.rank * smax {
            let v = vecs.column(i);
            out += (v * v.transpose()) * l.sqrt();
        }
    }
    Ok(SymMatrix::new(out))
}

/// Split of `r` against the range of `Q`: `u = Q† r`, `v = (I − Q Q†) r`.
#[derive(Debug, Clone)]
pub struct RangeSplit {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// `‖v‖ ≤ ε_rank ‖r‖`: `r` lies (numerically) in the range of `Q`.
    pub v_is_zero: bool,
}

pub fn range_split(q: &SymMatrix, q_pinv: &SymMatrix, r: &DVector<f64>, eps_rank: f64) -> RangeSplit {
    let u = q_pinv.mul_vec(r);
    let v = r - q.mul_vec(&u);
    let v_is_zero = v.norm() <= eps_rank * r.norm();
    RangeSplit { u, v, v_is_zero }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOneDet {
    pub pdet: f64,
    pub rank: usize,
    pub v_is_zero: bool,
}

/// Pseudo-determinant and rank of `b (Q + a r rᵀ)` from those of `Q`.
#[allow(clippy::too_many_arguments)]
pub fn pdet_rank_one(
    q: &SymMatrix,
    pdet_q: f64,
    rank_q: usize,
    r: &DVector<f64>,
    a: f64,
    b: f64,
    q_pinv: &SymMatrix,
    eps_rank: f64,
) -> Result<RankOneDet> {
    let split = range_split(q, q_pinv, r, eps_rank);
    if split.v_is_zero {
        let factor = 1.0 + a * r.dot(&split.u);
        if factor <= 0.0 {
            return Err(Error::NonPositivePdet);
        }
        Ok(RankOneDet { pdet: b.powi(rank_q as i32) * pdet_q * factor, rank: rank_q, v_is_zero: true })
    } else {
        Ok(RankOneDet { pdet: b.powi(rank_q as i32 + 1) * pdet_q * a * split.v.norm_squared(), rank: rank_q + 1, v_is_zero: false })
    }
}

/// Correction term Δ with `(Q + a r rᵀ)† = Q† + Δ`.
pub(crate) fn pinv_rank_one_delta(split: &RangeSplit, r: &DVector<f64>, a: f64) -> DMatrix<f64> {
    let c = (1.0 + a * r.dot(&split.u)) / a;
    if split.v_is_zero {
        -(&split.u * split.u.transpose()) / c
    } else {
        // Normalised by ‖v‖², the squared distance of r from the range of Q.
        let vv = split.v.norm_squared();
        let uv = &split.u * split.v.transpose();
        ((&split.v * split.v.transpose()) * (c / vv) - &uv - uv.transpose()) / vv
    }
}

/// Pseudo-inverse of `b (Q + a r rᵀ)` from `Q†`.
pub fn pinv_rank_one(q: &SymMatrix, q_pinv: &SymMatrix, r: &DVector<f64>, a: f64, b: f64, eps_rank: f64) -> SymMatrix {
    let split = range_split(q, q_pinv, r, eps_rank);
    let delta = pinv_rank_one_delta(&split, r, a);
    SymMatrix::new((q_pinv.as_matrix() + delta) / b)
}

/// Real roots of a cubic together with its discriminant.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicRealRoots {
    /// Sorted ascending, at most three entries.
    pub roots: Vec<f64>,
    /// `18bcd − 4b³d + b²c² − 4c³ − 27d²` of the monic form.
    pub discriminant: f64,
}

pub fn eval_cubic(coeffs: [f64; 4], x: f64) -> f64 {
    let [b3, b2, b1, b0] = coeffs;
    ((b3 * x + b2) * x + b1) * x + b0
}

fn newton_polish(coeffs: [f64; 4], mut x: f64) -> f64 {
    let [b3, b2, b1, _] = coeffs;
    for _ in 0..3 {
        let f = eval_cubic(coeffs, x);
        let df = (3.0 * b3 * x + 2.0 * b2) * x + b1;
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let next = x - f / df;
        if !next.is_finite() || eval_cubic(coeffs, next).abs() >= f.abs() {
            break;
        }
        x = next;
    }
    x
}

/// Solves `b3 β³ + b2 β² + b1 β + b0 = 0` by Cardano's formulas on the
/// depressed cubic, with complex intermediates and a Newton polish of each
/// real root on the original polynomial.
pub fn solve_cubic(b3: f64, b2: f64, b1: f64, b0: f64) -> Result<CubicRealRoots> {
    let scale = b3.abs().max(b2.abs()).max(b1.abs()).max(b0.abs());
    if scale == 0.0 || b3.abs() <= 1e-14 * scale {
        return Err(Error::DegenerateLeadingCoefficient);
    }
    let (b, c, d) = (b2 / b3, b1 / b3, b0 / b3);
    let discriminant = 18.0 * b * c * d - 4.0 * b.powi(3) * d + b * b * c * c - 4.0 * c.powi(3) - 27.0 * d * d;

    // β = β̃ − b/3 turns the cubic into β̃³ + sβ̃ + t = 0.
    let s = c - b * b / 3.0;
    let t = d - b * c / 3.0 + 2.0 * b.powi(3) / 27.0;
    let u = (s / 3.0).powi(3) + (t / 2.0).powi(2);
    let sqrt_u = Complex64::new(u, 0.0).sqrt();
    let half_t = Complex64::new(-t / 2.0, 0.0);
    // Pick the larger-magnitude branch for v to avoid cancellation, then pair w = −s / (3v).
    let cand_plus = half_t + sqrt_u;
    let cand_minus = half_t - sqrt_u;
    let base = if cand_plus.norm() >= cand_minus.norm() { cand_plus } else { cand_minus };
    let v = base.powf(1.0 / 3.0);
    let w = if v.norm() == 0.0 { Complex64::new(0.0, 0.0) } else { -s / (3.0 * v) };
    let omega = Complex64::new(-0.5, 0.5 * 3f64.sqrt());
    let omega2 = omega * omega;
    let shift = b / 3.0;
    let complex_roots = [v + w - shift, omega * v + omega2 * w - shift, omega2 * v + omega * w - shift];

    let coeffs = [b3, b2, b1, b0];
    let mut roots: Vec<f64> = if discriminant > 0.0 {
        complex_roots.iter().map(|z| z.re).collect()
    } else {
        // One real root (Δ < 0) or a repeated root (Δ = 0): keep the roots whose
        // imaginary part is negligible, at least the most nearly real one.
        let mags: Vec<f64> = complex_roots.iter().map(|z| z.norm().max(1.0)).collect();
        let mut idx: Vec<usize> = (0..3).collect();
        idx.sort_by(|&i, &j| complex_roots[i].im.abs().total_cmp(&complex_roots[j].im.abs()));
        let mut keep = vec![complex_roots[idx[0]].re];
        if discriminant == 0.0 {
            for &i in &idx[1..] {
                if complex_roots[i].im.abs() <= 1e-7 * mags[i] {
                    keep.push(complex_roots[i].re);
                }
            }
        }
        keep
    };
    for r in roots.iter_mut() {
        *r = newton_polish(coeffs, *r);
    }
    roots.sort_by(f64::total_cmp);
    if discriminant == 0.0 {
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
    }
    Ok(CubicRealRoots { roots, discriminant })
}
