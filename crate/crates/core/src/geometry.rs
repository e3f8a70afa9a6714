//! Ellipsoids (possibly degenerate), strips, halfspaces, hyperplanes and zonotopes.
//!
//! An ellipsoid is stored as `E(c, ςP)`: center `c`, unit-scale shape `P`
//! and a separate positive scale `ς`. The set is
//! `{c + √ς · P^{1/2} z : ‖z‖ ≤ 1}`, so a singular `P` gives a flat ellipsoid
//! living in `c + R(P)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{numeric_rank, sqrt_spsd, SymMatrix, Tolerances};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: SymMatrix,
    pub scale: f64,
    pub rank: usize,
}

impl Ellipsoid {
    /// Validated constructor; the rank is computed from `shape`.
    pub fn new(center: DVector<f64>, shape: SymMatrix, scale: f64, tol: &Tolerances) -> Result<Self> {
        if center.len() != shape.dim() {
            return Err(Error::DimensionMismatch(format!(
                "center has length {} but shape is {}x{}",
                center.len(),
                shape.dim(),
                shape.dim()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::NonPositiveScale(scale));
        }
        if !shape.is_spsd(tol) {
            let (vals, _) = shape.eigen();
            return Err(Error::NotSpsd { min_eig: vals.min() });
        }
        let rank = numeric_rank(&shape, tol.rank);
        Ok(Ellipsoid { center, shape, scale, rank })
    }

    /// Unit ball of dimension `n` centered at the origin.
    pub fn unit_ball(n: usize) -> Self {
        Ellipsoid { center: DVector::zeros(n), shape: SymMatrix::identity(n), scale: 1.0, rank: n }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `ς P`, the full shape matrix of the set.
    pub fn scaled_shape(&self) -> SymMatrix {
        self.shape.scaled(self.scale)
    }

    /// Same set written with scale `s`: `(ς, P) → (s, (ς/s) P)`.
    pub fn rescaled(&self, s: f64) -> Self {
        Ellipsoid { center: self.center.clone(), shape: self.shape.scaled(self.scale / s), scale: s, rank: self.rank }
    }

    /// Semi-axis lengths, largest first.
    pub fn semi_axes(&self) -> Vec<f64> {
        let (vals, _) = self.scaled_shape().eigen();
        let mut out: Vec<f64> = vals.iter().map(|l| l.max(0.0).sqrt()).collect();
        out.sort_by(|a, b| b.total_cmp(a));
        out
    }

    /// Support function `h(x) = cᵀx + √(ς xᵀPx)`.
    pub fn support(&self, x: &DVector<f64>) -> f64 {
        self.center.dot(x) + (self.scale * self.shape.quad(x)).max(0.0).sqrt()
    }

    /// Membership test that tolerates degenerate shapes.
    ///
    /// The offset `d = x − c` is split along the eigenvectors of `ςP`. Components
    /// on eigenvalues above the rank threshold contribute `z²/λ` to the quadratic
    /// form; the remaining ones must be negligible relative to `1 + ‖d‖`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.membership().contains(x, tol)
    }

    /// Membership test with the eigen-decomposition done once, for checking many points.
    pub fn membership(&self) -> Membership<'_> {
        let (vals, vecs) = self.scaled_shape().eigen();
        let lmax = vals.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        let thresh = Tolerances::default().rank * lmax;
        Membership { center: &self.center, vals, vecs, thresh: if lmax > 0.0 { thresh } else { f64::INFINITY } }
    }

    /// `count` points uniformly distributed in the ellipsoid, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(count, &mut rng)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        if count == 0 {
            return Vec::new();
        }
        let n = self.dim();
        let root = sqrt_spsd(&self.shape, &Tolerances::default()).unwrap_or_else(|_| SymMatrix::zeros(n)).scaled(self.scale.sqrt());
        (0..count).map(|_| &self.center + root.mul_vec(&uniform_in_ball(n, rng))).collect()
    }

    /// Volume of the ellipsoid inside its own affine hull `c + R(P)`.
    pub fn pseudo_volume(&self) -> f64 {
        unit_ball_volume(self.rank) * self.pseudo_det().sqrt()
    }

    /// Product of the `rank` largest eigenvalues of `ςP`.
    pub fn pseudo_det(&self) -> f64 {
        let mut vals: Vec<f64> = self.scaled_shape().eigen().0.iter().map(|l| l.max(0.0)).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals.iter().take(self.rank).product()
    }

    /// Sum of squared semi-axis lengths, `ς tr(P)`.
    pub fn ssal(&self) -> f64 {
        self.scale * self.shape.trace()
    }

    /// Signed distance to a hyperplane; nonpositive exactly when they meet.
    pub fn signed_distance(&self, h: &Hyperplane) -> f64 {
        let d = &h.normal;
        ((h.offset - self.center.dot(d)).abs() - (self.scale * self.shape.quad(d)).max(0.0).sqrt()) / d.norm()
    }

    /// Image under `x ↦ A x + b`. The rank is kept when `A` is nonsingular.
    pub fn affine_image(&self, a: &DMatrix<f64>, b: &DVector<f64>, tol: &Tolerances) -> Self {
        let shape = self.shape.congruence(a);
        let rank = if crate::numerics::matrix_rank(a, tol.rank) == a.ncols() { self.rank } else { numeric_rank(&shape, tol.rank) };
        Ellipsoid { center: a * &self.center + b, shape, scale: self.scale, rank }
    }
}

/// Precomputed eigen-split of `ςP`; see [`Ellipsoid::contains`].
pub struct Membership<'a> {
    center: &'a DVector<f64>,
    vals: DVector<f64>,
    vecs: DMatrix<f64>,
    thresh: f64,
}

impl Membership<'_> {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let d = x - self.center;
        let dn = d.norm();
        let mut form = 0.0;
        let mut off_range_sq = 0.0;
        let mut off_allow = 0.0;
        for (i, &l) in self.vals.iter().enumerate() {
            let z = self.vecs.column(i).dot(&d);
            if l > self.thresh {
                form += z * z / l;
            } else {
                off_range_sq += z * z;
                off_allow += l.max(0.0);
            }
        }
        off_range_sq.sqrt() <= tol * (1.0 + dn) + off_allow.sqrt() && form <= 1.0 + tol
    }
}

/// Uniform point in the closed unit ball of `Rⁿ`.
pub fn uniform_in_ball<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    if n == 0 {
        return DVector::zeros(0);
    }
    loop {
        let g = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm: f64 = g.norm();
        if norm > 0.0 {
            let t: f64 = Uniform::new_inclusive(0.0, 1.0).unwrap().sample(rng);
            return g * (t.powf(1.0 / n as f64) / norm);
        }
    }
}

/// `π^{q/2} / Γ(q/2 + 1)` via `V_q = 2π/q · V_{q−2}`.
pub fn unit_ball_volume(q: usize) -> f64 {
    match q {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / q as f64 * unit_ball_volume(q - 2),
    }
}

/// `{x : |fᵀx − y| ≤ 1}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Strip {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (self.normal.dot(x) - self.offset).abs() <= 1.0 + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Upper,
    Lower,
}

/// `{x : fᵀx ≤ ȳ}`. A lower bound `fᵀx ≥ y̲` is stored as `(−f, −y̲)` with
/// `sense = Lower` to remember where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub bound: f64,
    pub sense: Sense,
}

impl Halfspace {
    pub fn upper(f: DVector<f64>, y: f64) -> Self {
        Halfspace { normal: f, bound: y, sense: Sense::Upper }
    }

    pub fn lower(f: DVector<f64>, y: f64) -> Self {
        Halfspace { normal: -f, bound: -y, sense: Sense::Lower }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.normal.dot(x) <= self.bound + tol
    }
}

/// `{x : fᵀx = y}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Hyperplane {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (self.normal.dot(x) - self.offset).abs() <= tol
    }
}

/// `{c + L w : ‖w‖∞ ≤ 1}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zonotope {
    pub center: DVector<f64>,
    pub generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        if generators.nrows() != center.len() {
            return Err(Error::DimensionMismatch(format!(
                "zonotope center has length {} but generators have {} rows",
                center.len(),
                generators.nrows()
            )));
        }
        for (j, col) in generators.column_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                return Err(Error::Validation(format!("generator column {j} is zero")));
            }
        }
        Ok(Zonotope { center, generators })
    }

    pub fn order(&self) -> usize {
        self.generators.ncols()
    }

    pub fn point(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.generators * w
    }
}
