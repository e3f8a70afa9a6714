//! Acceptance suite. Runs as a plain binary so every criterion prints its own
//! PASS/FAIL line; exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use sme_core::correction::{
    beta_sigma, beta_ssal, beta_volume, classify_case, correct, fusion_geometry, scale_after, ssal_objective, volume_objective,
    FusionGeometry,
};
use sme_core::geometry::uniform_in_ball;
use sme_core::harness::run::{run, RunOptions, RunOutput};
use sme_core::harness::scenario::{rows_from_matrix, KindMix, ModelSource, NoisePolicy, Scenario, Template};
use sme_core::numerics::{numeric_rank, pdet_rank_one, pinv_rank_one, pseudo_det, pseudo_inverse, solve_cubic, sqrt_spsd};
use sme_core::prediction::{mu_trace, mu_volume, predict, predict_trace_min, predict_trace_sequential, PredictionScratch};
use sme_core::{
    CaseLabel, CorrectionCriterion, Ellipsoid, EstimatorConfig, InconsistencyPolicy, Measurement, PredictionCriterion, ProcessModel,
    SymMatrix, Tolerances,
};

// Pinned tolerances.
const RANK_ONE_REL_TOL: f64 = 1e-8;
const GRID_POINTS: usize = 10_000;
/// A grid point only counts as beating the closed form by more than this (relative).
const GRID_SLACK_REL: f64 = 1e-12;
const CUBIC_RESIDUAL_TOL: f64 = 1e-8;
const SSAL_EQUIV_REL_TOL: f64 = 1e-10;
const MC_POINTS: usize = 10_000;
const CONTAIN_TOL: f64 = 1e-9;
const ACCEPT_TOL: f64 = 1e-9;
const SIGMA_MONO_REL: f64 = 1e-12;
const SIZE_MONO_REL: f64 = 1e-9;
/// Absolute eigenvalue slack for monotonicity checks, relative to the largest eigenvalue.
const EIG_ROUNDOFF: f64 = 1e-13;
/// Relative slack per accumulated bound factor.
const BOUND_REL: f64 = 1e-9;
/// Multiplier on `ε·Σ λmax/λᵢ` of `APAᵀ`, the first-order error of a determinant ratio through it.
const BOUND_COND_FACTOR: f64 = 4.0;
const RANK_TOL: f64 = 1e-10;

/// Uncontained steps, violated measurements, sigma increases, measurements, worst ulp ratio.
type E2eTally = (usize, usize, usize, usize, f64);
/// Steps, rank-deficient steps, mismatch notes, eigenvalue margins.
type LedgerTally = (usize, usize, Vec<String>, Vec<f64>);
type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

/// `U diag(λ) Uᵀ` with `rank` eigenvalues in `[0.1, 10]`; also returns `U`.
fn random_shape(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> (SymMatrix, DMatrix<f64>) {
    let u = random_orthogonal(rng, n);
    let lam = DVector::from_fn(n, |i, _| if i < rank { log_uniform(rng, -1.0, 1.0) } else { 0.0 });
    (SymMatrix::new(&u * DMatrix::from_diagonal(&lam) * u.transpose()), u)
}

fn random_ellipsoid(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Ellipsoid {
    let (shape, _) = random_shape(rng, n, rank);
    let c = gaussian(rng, n);
    let scale = rng.random_range(0.5..2.0);
    Ellipsoid::new(c, shape, scale, &Tolerances::default()).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, singular: bool) -> ProcessModel {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    if singular {
        let j = rng.random_range(0..n);
        a.column_mut(j).fill(0.0);
    }
    let r = DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.5..0.5));
    ProcessModel {
        a,
        b: DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0)),
        tau: DVector::from_element(1, rng.random_range(-1.0..1.0)),
        r,
    }
}

/// Pseudo-determinant, rank and pseudo-inverse from a full SVD.
fn svd_oracle(m: &DMatrix<f64>) -> (f64, usize, DMatrix<f64>) {
    let n = m.nrows();
    let fm = faer::Mat::<f64>::from_fn(n, m.ncols(), |i, j| m[(i, j)]);
    let svd = fm.svd().expect("svd converges");
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    let mut pdet = 1.0;
    let mut rank = 0;
    let mut pinv = DMatrix::zeros(m.ncols(), n);
    for k in 0..s.nrows() {
        if smax > 0.0 && s[k] > RANK_TOL * smax {
            pdet *= s[k];
            rank += 1;
            for i in 0..m.ncols() {
                for j in 0..n {
                    pinv[(i, j)] += v[(i, k)] * u[(j, k)] / s[k];
                }
            }
        }
    }
    (pdet, rank, pinv)
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

// 1 ------------------------------------------------------------------------

fn rank_one_identities() -> Outcome {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let draws = 1200;
    let (mut deficient, mut in_range) = (0, 0);
    let (mut worst_pdet, mut worst_pinv) = (0.0_f64, 0.0_f64);
    let mut failures = Vec::new();
    for i in 0..draws {
        let n = rng.random_range(1..=8);
        let q = rng.random_range(0..=n);
        let (qm, u) = random_shape(&mut rng, n, q);
        if q < n {
            deficient += 1;
        }
        let r = if q > 0 && q < n && rng.random_bool(0.5) {
            in_range += 1;
            u.columns(0, q) * gaussian(&mut rng, q)
        } else {
            gaussian(&mut rng, n)
        };
        let a = log_uniform(&mut rng, -2.0, 2.0);
        let b = rng.random_range(0.5..3.0);
        let q_pinv = pseudo_inverse(&qm, tol.rank);
        let got = pdet_rank_one(&qm, pseudo_det(&qm, tol.rank), q, &r, a, b, &q_pinv, tol.rank).unwrap();
        let got_pinv = pinv_rank_one(&qm, &q_pinv, &r, a, b, tol.rank);

        let updated = (qm.as_matrix() + &r * r.transpose() * a) * b;
        let (oracle_pdet, oracle_rank, oracle_pinv) = svd_oracle(&updated);

        let e_pdet = (got.pdet - oracle_pdet).abs() / oracle_pdet;
        let e_pinv = rel_diff(got_pinv.as_matrix(), &oracle_pinv);
        worst_pdet = worst_pdet.max(e_pdet);
        worst_pinv = worst_pinv.max(e_pinv);
        if e_pdet > RANK_ONE_REL_TOL || e_pinv > RANK_ONE_REL_TOL || got.rank != oracle_rank {
            failures.push(format!("draw {i}: n={n} q={q} pdet {e_pdet:.1e} pinv {e_pinv:.1e} rank {}/{}", got.rank, oracle_rank));
        }
    }
    let detail = format!(
        "{draws} draws ({deficient} rank-deficient, {in_range} with r in range); worst rel err pdet {worst_pdet:.1e}, pinv {worst_pinv:.1e} (tol {RANK_ONE_REL_TOL:.0e})"
    );
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {} failures, first: {}", failures.len(), failures[0]))
    }
}

// 2 ------------------------------------------------------------------------

fn log_grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID_POINTS).map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64)).collect()
}

fn unit_grid(include_one: bool) -> Vec<f64> {
    let d = if include_one { (GRID_POINTS - 1) as f64 } else { GRID_POINTS as f64 };
    (0..GRID_POINTS).map(|k| k as f64 / d).collect()
}

/// Every grid point that beats `x_star` must lie within one grid cell of it.
fn grid_check(f: impl Fn(f64) -> f64, x_star: f64, grid: &[f64]) -> std::result::Result<(), String> {
    let fs = f(x_star);
    if !fs.is_finite() {
        return Err(format!("objective not finite at {x_star}"));
    }
    for (i, &g) in grid.iter().enumerate() {
        let fg = f(g);
        if fg < fs - GRID_SLACK_REL * (1.0 + fs.abs()) {
            let cell = if i + 1 < grid.len() { grid[i + 1] - g } else { g - grid[i - 1] };
            if (g - x_star).abs() > cell {
                return Err(format!("grid point {g:.6e} gives {fg:.12e} < {fs:.12e} at {x_star:.6e}"));
            }
        }
    }
    Ok(())
}

/// A random measurement that falls in the fusion case for a random ellipsoid.
fn fuse_instance(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Option<(Ellipsoid, FusionGeometry)> {
    let tol = Tolerances::default();
    let e = random_ellipsoid(rng, n, rank);
    let f = gaussian(rng, n);
    let fc = f.dot(&e.center);
    let eta = (e.scale * e.shape.quad(&f)).sqrt();
    let mut y = [rng.random_range(fc - 1.3 * eta..fc + 1.3 * eta), rng.random_range(fc - 1.3 * eta..fc + 1.3 * eta)];
    y.sort_by(f64::total_cmp);
    if y[0] == y[1] {
        return None;
    }
    let m = Measurement::new(f, y[0], y[1]).ok()?;
    let g = fusion_geometry(&e, &m, &tol);
    (classify_case(&e, &g, &m, &tol) == CaseLabel::Fuse && g.alpha > 0.0).then_some((e, g))
}

fn parameter_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0002);
    let per = 500;
    let mut errors: Vec<String> = Vec::new();
    let mut counts = [0usize; 6];
    let mu_grid = log_grid(-6.0, 6.0);
    let beta_grid = unit_grid(false);
    let beta_grid_closed = unit_grid(true);

    // μ_v, both range cases.
    for i in 0..per {
        let q = rng.random_range(1..=8);
        let qf = q as f64;
        let res = if i % 2 == 0 {
            let h = log_uniform(&mut rng, -3.0, 3.0);
            let mu = mu_volume(q, h, true).unwrap();
            grid_check(|m| qf * (1.0 + m).ln() + (1.0 + h / m).ln(), mu, &mu_grid)
        } else {
            let mu = mu_volume(q, 0.0, false).unwrap();
            grid_check(|m| (qf + 1.0) * (1.0 + m).ln() - m.ln(), mu, &mu_grid)
        };
        counts[0] += 1;
        if let Err(e) = res {
            errors.push(format!("mu_v: {e}"));
        }
    }
    // μ_s: minimise (1 + μ)(T + ρ²/(μς)).
    for _ in 0..per {
        let t = log_uniform(&mut rng, -2.0, 2.0);
        let rho2 = log_uniform(&mut rng, -2.0, 2.0);
        let sigma = rng.random_range(0.5..2.0);
        let mu = mu_trace(t, rho2, sigma).unwrap();
        counts[1] += 1;
        if let Err(e) = grid_check(|m| (1.0 + m) * (t + rho2 / (m * sigma)), mu, &mu_grid) {
            errors.push(format!("mu_s: {e}"));
        }
    }
    // β_ς, β_v, β_s on fusion instances of random ellipsoids.
    while counts[2] < per || counts[3] < per || counts[5] < per {
        let n = rng.random_range(2..=6);
        let Some((e, g)) = fuse_instance(&mut rng, n, n) else { continue };
        let (a, gm, d, s) = (g.alpha, g.gamma, g.delta, e.scale);
        if counts[2] < per {
            counts[2] += 1;
            let b = beta_sigma(gm, d);
            if let Err(err) = grid_check(|x| scale_after(s, a, gm, d, x), b, &beta_grid) {
                errors.push(format!("beta_sigma: {err}"));
            }
        }
        if counts[3] < per {
            counts[3] += 1;
            let q = e.rank;
            let b = beta_volume(q, a, gm, d, s, 1e-12).unwrap();
            if let Err(err) = grid_check(|x| volume_objective(q, a, gm, d, s, x), b, &beta_grid) {
                errors.push(format!("beta_v q={q}: {err}"));
            }
        }
        if counts[5] < per {
            counts[5] += 1;
            let (tr, nu) = (e.shape.trace(), g.phi.norm_squared());
            let b = beta_ssal(tr, nu, a, gm, d, s, 1e-12).unwrap();
            if let Err(err) = grid_check(|x| ssal_objective(tr, nu, a, gm, d, s, x), b, &beta_grid) {
                errors.push(format!("beta_s: {err}"));
            }
        }
    }
    // β_v for rank-one shapes: (ς − αβδ²)(1 − β) + αβγ² over the closed interval [0, 1].
    while counts[4] < per {
        let n = rng.random_range(1..=6);
        let Some((e, g)) = fuse_instance(&mut rng, n, 1) else { continue };
        let (a, gm, d, s) = (g.alpha, g.gamma, g.delta, e.scale);
        counts[4] += 1;
        let b = beta_volume(1, a, gm, d, s, 1e-12).unwrap();
        let obj = |x: f64| (s - a * x * d * d) * (1.0 - x) + a * x * gm * gm;
        if let Err(err) = grid_check(obj, b, &beta_grid_closed) {
            errors.push(format!("beta_v q=1: {err}"));
        }
    }
    let detail = format!(
        "instances mu_v {}, mu_s {}, beta_sigma {}, beta_v {} (+{} rank-one), beta_s {}; grid {GRID_POINTS}",
        counts[0], counts[1], counts[2], counts[3], counts[4], counts[5]
    );
    if errors.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {} grid wins, first: {}", errors.len(), errors[0]))
    }
}

// 3 ------------------------------------------------------------------------

fn discriminant(b3: f64, b2: f64, b1: f64, b0: f64) -> f64 {
    18.0 * b3 * b2 * b1 * b0 - 4.0 * b2.powi(3) * b0 + b2 * b2 * b1 * b1 - 4.0 * b3 * b1.powi(3) - 27.0 * b3 * b3 * b0 * b0
}

fn cubic_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003);
    let mut failures = Vec::new();
    let mut worst = 0.0_f64;
    let (mut three, mut one) = (0, 0);
    for i in 0..1000 {
        let lead = {
            let s: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            s * log_uniform(&mut rng, -1.0, 1.0)
        };
        let (b3, b2, b1, b0) = match i % 3 {
            0 => {
                let mut c = || {
                    let s: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    s * log_uniform(&mut rng, -2.0, 2.0)
                };
                (c(), c(), c(), c())
            }
            1 => {
                // Three real roots at least 0.5 apart.
                let mut r = [0.0f64; 3];
                loop {
                    for v in r.iter_mut() {
                        *v = rng.random_range(-5.0..5.0);
                    }
                    r.sort_by(f64::total_cmp);
                    if r[1] - r[0] >= 0.5 && r[2] - r[1] >= 0.5 {
                        break;
                    }
                }
                let (s1, s2, s3) = (r[0] + r[1] + r[2], r[0] * r[1] + r[1] * r[2] + r[0] * r[2], r[0] * r[1] * r[2]);
                (lead, -lead * s1, lead * s2, -lead * s3)
            }
            _ => {
                // One real root and a complex pair p ± iw.
                let x: f64 = rng.random_range(-5.0..5.0);
                let p: f64 = rng.random_range(-5.0..5.0);
                let w: f64 = rng.random_range(0.5..5.0);
                let m2 = p * p + w * w;
                (lead, -lead * (x + 2.0 * p), lead * (2.0 * p * x + m2), -lead * x * m2)
            }
        };
        let sol = solve_cubic(b3, b2, b1, b0).unwrap();
        let disc = discriminant(b3, b2, b1, b0);
        let expected = if disc > 0.0 { 3 } else { 1 };
        if disc > 0.0 {
            three += 1;
        } else {
            one += 1;
        }
        if sol.roots.len() != expected || sol.discriminant.signum() != disc.signum() {
            failures.push(format!("cubic {i}: {} roots, discriminant {disc:e} (solver {:e})", sol.roots.len(), sol.discriminant));
        }
        for &x in &sol.roots {
            let res = (((b3 * x + b2) * x + b1) * x + b0).abs();
            let scale = b3.abs() * x.abs().powi(3) + b2.abs() * x * x + b1.abs() * x.abs() + b0.abs();
            let rel = res / scale;
            worst = worst.max(rel);
            if rel > CUBIC_RESIDUAL_TOL {
                failures.push(format!("cubic {i}: root {x:e} residual {rel:.1e}"));
            }
        }
    }
    let detail =
        format!("1000 cubics ({three} with 3 real roots, {one} with 1); worst scaled residual {worst:.1e} (tol {CUBIC_RESIDUAL_TOL:.0e})");
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {} failures, first: {}", failures.len(), failures[0]))
    }
}

// 4 ------------------------------------------------------------------------

fn ssal_prediction_equivalence() -> Outcome {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0004);
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for i in 0..200 {
        let n = rng.random_range(1..=6);
        let rank = rng.random_range(1..=n);
        let e = random_ellipsoid(&mut rng, n, rank);
        let m = rng.random_range(1..=3);
        let model = random_model(&mut rng, n, m, false);
        let weight = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let w = if i % 2 == 0 { None } else { Some(&weight) };
        let closed = predict_trace_min(&e, &model, w, &tol).unwrap().ellipsoid;
        let seq = predict_trace_sequential(&e, &model, w, &tol).unwrap();
        let d = rel_diff(closed.shape.as_matrix(), seq.shape.as_matrix());
        worst = worst.max(d);
        if d > SSAL_EQUIV_REL_TOL || closed.center != seq.center {
            failures.push(format!("instance {i}: n={n} m={m} rel diff {d:.1e}"));
        }
    }
    let detail = format!("200 instances (half with a random weight); worst rel diff {worst:.1e} (tol {SSAL_EQUIV_REL_TOL:.0e})");
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; first: {}", failures[0]))
    }
}

// 5 ------------------------------------------------------------------------

fn reachable_points(e: &Ellipsoid, model: &ProcessModel, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let m = model.noise_order();
    e.sample_with(MC_POINTS, rng)
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            // Half the noise draws are vertices of the box.
            let w = if i % 2 == 0 {
                DVector::from_fn(m, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            } else {
                DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0))
            };
            model.drift(&x) + &model.r * w
        })
        .collect()
}

fn is_hyperplane(m: &Measurement) -> bool {
    m.lower == m.upper
}

/// Points of `E ∩ S`. Equalities are imposed exactly on the unit-ball
/// preimage (a lower-dimensional ball); inequalities by rejection.
fn intersection_points(e: &Ellipsoid, batch: &[Measurement], rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = e.dim();
    let l = sqrt_spsd(&e.scaled_shape(), &Tolerances::default()).unwrap().into_inner();
    let hyper: Vec<&Measurement> = batch.iter().filter(|m| is_hyperplane(m)).collect();
    let (u0, basis) = if hyper.is_empty() {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let f = DMatrix::from_fn(hyper.len(), n, |i, j| hyper[i].direction[j]);
        let mm = &f * &l;
        let d = DVector::from_fn(hyper.len(), |i, _| hyper[i].lower - hyper[i].direction.dot(&e.center));
        let gram = SymMatrix::new(mm.transpose() * &mm);
        let (vals, vecs) = gram.eigen();
        let lmax = vals.max().max(0.0);
        let rhs = mm.transpose() * d;
        let mut u0 = DVector::zeros(n);
        let mut null = Vec::new();
        for (i, &lam) in vals.iter().enumerate() {
            let v = vecs.column(i).into_owned();
            if lam > 1e-14 * lmax && lam > 0.0 {
                u0 += &v * (v.dot(&rhs) / lam);
            } else {
                null.push(v);
            }
        }
        let basis = if null.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&null) };
        (u0, basis)
    };
    let radius = (1.0 - u0.norm_squared()).max(0.0).sqrt();
    let k = basis.ncols();
    let others: Vec<&Measurement> = batch.iter().filter(|m| !is_hyperplane(m)).collect();
    let mut out = Vec::with_capacity(MC_POINTS);
    let mut attempts = 0usize;
    while out.len() < MC_POINTS && attempts < 200 * MC_POINTS {
        attempts += 1;
        let u = &u0 + &basis * uniform_in_ball(k, rng) * radius;
        let x = &e.center + &l * u;
        if others.iter().all(|m| m.is_satisfied(&x, 0.0)) {
            out.push(x);
        }
    }
    out
}

fn random_batch(e: &Ellipsoid, rng: &mut ChaCha8Rng, style: usize) -> Vec<Measurement> {
    let n = e.dim();
    let l = sqrt_spsd(&e.scaled_shape(), &Tolerances::default()).unwrap();
    let anchor = &e.center + l.mul_vec(&(uniform_in_ball(n, rng) * 0.6));
    let count = rng.random_range(1..=3);
    (0..count)
        .map(|j| {
            let f = gaussian(rng, n);
            let y = f.dot(&anchor);
            let extent = (e.scale * e.shape.quad(&f)).sqrt();
            let w = rng.random_range(0.1..1.0) * if extent > 0.0 { 2.0 * extent } else { 1.0 };
            let t = rng.random_range(0.0..1.0);
            let kind = match style {
                0 => 0,
                1 => 1 + rng.random_range(0..2),
                2 => {
                    if j == 0 {
                        3
                    } else {
                        rng.random_range(0..4)
                    }
                }
                _ => rng.random_range(0..4),
            };
            match kind {
                0 => Measurement::new(f, y - t * w, y + (1.0 - t) * w),
                1 => Measurement::new(f, f64::NEG_INFINITY, y + 0.5 * t * w),
                2 => Measurement::new(f, y - 0.5 * t * w, f64::INFINITY),
                _ => Measurement::new(f, y, y),
            }
            .unwrap()
        })
        .collect()
}

fn geometric_containment() -> Outcome {
    let tol = Tolerances::default();
    let mut failures = Vec::new();
    let mut checked = 0usize;

    let pred: Vec<(usize, usize)> = (0..200)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0500 + i as u64);
            let n = rng.random_range(1..=6);
            let rank = rng.random_range(1..=n);
            let e = random_ellipsoid(&mut rng, n, rank);
            let m = rng.random_range(0..=3);
            let model = random_model(&mut rng, n, m, i % 10 == 9);
            let crit = if i % 2 == 0 { PredictionCriterion::VolumeMin } else { PredictionCriterion::trace() };
            let out = predict(&e, &model, &crit, &mut PredictionScratch::default(), &tol, 50).unwrap();
            let pts = reachable_points(&e, &model, &mut rng);
            let member = out.ellipsoid.membership();
            (pts.len(), pts.iter().filter(|p| !member.contains(p, CONTAIN_TOL)).count())
        })
        .collect();
    for (i, (total, escaped)) in pred.iter().enumerate() {
        checked += total;
        if *escaped > 0 {
            failures.push(format!("prediction {i}: {escaped}/{total} escaped"));
        }
    }

    let corr: Vec<(usize, usize, bool, bool)> = (0..200)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0600 + i as u64);
            let n = rng.random_range(1..=6);
            let rank = rng.random_range(1..=n);
            let e = random_ellipsoid(&mut rng, n, rank);
            let batch = random_batch(&e, &mut rng, i % 4);
            let crit = [CorrectionCriterion::SigmaMin, CorrectionCriterion::VolumeMin, CorrectionCriterion::SsalMin][i % 3];
            let out = correct(&e, &batch, crit, InconsistencyPolicy::Abort, &tol).unwrap();
            let pts = intersection_points(&e, &batch, &mut rng);
            let member = out.ellipsoid.membership();
            let escaped = pts.iter().filter(|p| !member.contains(p, CONTAIN_TOL)).count();
            let has_hyper = batch.iter().any(is_hyperplane);
            (pts.len(), escaped, has_hyper, out.labels.contains(&CaseLabel::Empty))
        })
        .collect();
    let mut with_hyper = 0;
    for (i, (total, escaped, has_hyper, empty)) in corr.iter().enumerate() {
        checked += total;
        with_hyper += *has_hyper as usize;
        if *escaped > 0 || *total < MC_POINTS || *empty {
            failures.push(format!("correction {i}: {escaped}/{total} escaped, empty label {empty}"));
        }
    }
    let detail = format!(
        "200 prediction + 200 correction steps ({with_hyper} with equalities); {checked} points, fraction inside {}",
        if failures.is_empty() { "1.0".to_string() } else { "< 1.0".to_string() }
    );
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {} bad steps, first: {}", failures.len(), failures[0]))
    }
}

// 6 ------------------------------------------------------------------------

const TEMPLATES: [Template; 3] = [Template::Stable, Template::Rotation, Template::Integrator];

fn combos() -> Vec<(PredictionCriterion, CorrectionCriterion)> {
    let mut out = Vec::new();
    for p in [PredictionCriterion::VolumeMin, PredictionCriterion::trace()] {
        for c in [CorrectionCriterion::SigmaMin, CorrectionCriterion::VolumeMin, CorrectionCriterion::SsalMin] {
            out.push((p.clone(), c));
        }
    }
    out
}

fn combo_name(p: &PredictionCriterion, c: CorrectionCriterion) -> String {
    let p = match p {
        PredictionCriterion::VolumeMin => "vol",
        PredictionCriterion::TraceMin { .. } => "trace",
    };
    format!("{p}/{c:?}")
}

#[allow(clippy::too_many_arguments)]
fn scenario(template: Template, n: usize, m: usize, p: usize, horizon: usize, seed: u64, kinds: KindMix, presence: f64) -> Scenario {
    let mut s = Scenario::from_template(template, n, horizon, seed);
    if let ModelSource::Generator(g) = &mut s.model {
        g.m = m;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let (shape, _) = random_shape(&mut rng, n, n);
    s.initial.shape = rows_from_matrix(shape.as_matrix());
    s.initial.center = gaussian(&mut rng, n).iter().copied().collect();
    s.schedule.max_per_step = p;
    s.schedule.kinds = kinds;
    s.schedule.presence = presence;
    s
}

fn run_combo(s: &Scenario, p: &PredictionCriterion, c: CorrectionCriterion, seed: u64, diagnostics: bool) -> sme_core::Result<RunOutput> {
    let config = EstimatorConfig { pred: p.clone(), corr: c, diagnostics, ..EstimatorConfig::default() };
    run(s, &RunOptions { config, seed, samples: 0, timing: false })
}

fn end_to_end() -> Outcome {
    let scenarios: Vec<Scenario> = (0..100)
        .map(|i| {
            let n = 1 + i % 6;
            let m = (i / 6) % 4;
            let p = 1 + (i / 2) % 3;
            scenario(TEMPLATES[i % 3], n, m, p, 200, 1000 + i as u64, KindMix::default(), 0.5)
        })
        .collect();
    let jobs: Vec<(usize, PredictionCriterion, CorrectionCriterion)> =
        (0..scenarios.len()).flat_map(|i| combos().into_iter().map(move |(p, c)| (i, p, c))).collect();
    let results: Vec<(usize, String, std::result::Result<E2eTally, String>)> = jobs
        .par_iter()
        .map(|(i, p, c)| {
            let s = &scenarios[*i];
            let res = run_combo(s, p, *c, 7 + *i as u64, false).map_err(|e| e.to_string()).map(|out| {
                let mut accept = 0;
                let mut processed = 0;
                for k in 1..=s.horizon {
                    let center = &out.ellipsoids[k].center;
                    for m in &out.truth.measurements[k] {
                        processed += 1;
                        let slack = ACCEPT_TOL * (1.0 + m.direction.norm() * center.norm());
                        if !m.is_satisfied(center, slack) {
                            accept += 1;
                        }
                    }
                }
                let sigma_up = if *c == CorrectionCriterion::SigmaMin {
                    out.sigmas.windows(2).filter(|w| w[1] > w[0] * (1.0 + SIGMA_MONO_REL)).count()
                } else {
                    0
                };
                let missing = out.records.iter().filter(|r| !r.contained).count();
                // Truth-to-center distance at uncontained steps, in units of the state's last bit.
                let ulps = out
                    .records
                    .iter()
                    .zip(&out.truth.states)
                    .filter(|(r, _)| !r.contained)
                    .map(|(r, x)| r.err / (f64::EPSILON * x.norm().max(f64::MIN_POSITIVE)))
                    .fold(0.0, f64::max);
                (missing, accept, sigma_up, processed, ulps)
            });
            (*i, combo_name(p, *c), res)
        })
        .collect();
    let mut failures = Vec::new();
    let mut processed = 0;
    let (mut noiseless, mut worst_ulps) = (0, 0.0f64);
    for (i, name, r) in &results {
        match r {
            Ok((missing, accept, sigma_up, count, ulps)) => {
                processed += count;
                if *missing > 0 {
                    noiseless += ((i / 6) % 4 == 0) as usize;
                    worst_ulps = worst_ulps.max(*ulps);
                }
                if missing + accept + sigma_up > 0 {
                    failures.push(format!(
                        "scenario {i} {name}: {missing} uncontained steps, {accept} violated measurements, {sigma_up} sigma increases"
                    ));
                }
            }
            Err(e) => failures.push(format!("scenario {i} {name}: error {e}")),
        }
    }
    let detail = format!("100 scenarios x 6 combinations, horizon 200, {processed} measurements processed");
    if failures.is_empty() {
        outcome(true, format!("{detail}; containment, acceptability and sigma monotonicity hold"))
    } else {
        outcome(
            false,
            format!(
                "{detail}; {} bad runs ({noiseless} of them with R = 0), uncontained truth at most {worst_ulps:.0} ulp of |x| from the center; first: {}",
                failures.len(),
                failures[0]
            ),
        )
    }
}

// 7 ------------------------------------------------------------------------

fn no_noise_monotonicity() -> Outcome {
    let no_equalities = KindMix { strip: 0.6, upper: 0.2, lower: 0.2, hyperplane: 0.0 };
    let mut jobs = Vec::new();
    for (ci, c) in [CorrectionCriterion::SigmaMin, CorrectionCriterion::VolumeMin, CorrectionCriterion::SsalMin].into_iter().enumerate() {
        for i in 0..20 {
            let n = 1 + i % 6;
            let template = if i % 2 == 0 { Template::Rotation } else { Template::Stable };
            let kinds = if c == CorrectionCriterion::VolumeMin { no_equalities.clone() } else { KindMix::default() };
            let mut s = scenario(template, n, 0, 1 + i % 3, 100, 7000 + (ci * 100 + i) as u64, kinds, 0.6);
            s.noise = NoisePolicy::Zero;
            jobs.push((c, s));
        }
    }
    let results: Vec<std::result::Result<Vec<String>, String>> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, (c, s))| {
            let out = run_combo(s, &PredictionCriterion::VolumeMin, *c, j as u64, false).map_err(|e| e.to_string())?;
            let mut bad = Vec::new();
            for k in 1..out.ellipsoids.len() {
                let (prev, cur) = (&out.ellipsoids[k - 1], &out.ellipsoids[k]);
                match c {
                    CorrectionCriterion::SigmaMin => {
                        // Squared semi-axes, with an absolute floor relative to the largest one.
                        let sq = |e: &Ellipsoid| e.semi_axes().iter().map(|a| a * a).collect::<Vec<f64>>();
                        let (pa, ca) = (sq(prev), sq(cur));
                        let floor = EIG_ROUNDOFF * pa[0];
                        if pa.iter().zip(&ca).any(|(p, q)| *q > p * (1.0 + SIZE_MONO_REL) + floor) {
                            bad.push(format!("step {k}: squared semi-axes {pa:?} -> {ca:?}"));
                        }
                    }
                    CorrectionCriterion::VolumeMin => {
                        if cur.pseudo_volume() > pseudo_volume_slack(prev) * (1.0 + SIZE_MONO_REL) {
                            bad.push(format!("step {k}: pvol {} -> {}", prev.pseudo_volume(), cur.pseudo_volume()));
                        }
                    }
                    CorrectionCriterion::SsalMin => {
                        if cur.ssal() > prev.ssal() * (1.0 + SIZE_MONO_REL) {
                            bad.push(format!("step {k}: ssal {} -> {}", prev.ssal(), cur.ssal()));
                        }
                    }
                }
            }
            Ok(bad)
        })
        .collect();
    let mut failures = Vec::new();
    for (j, r) in results.iter().enumerate() {
        match r {
            Ok(bad) if bad.is_empty() => {}
            Ok(bad) => failures.push(format!("run {j} ({:?}): {}", jobs[j].0, bad[0])),
            Err(e) => failures.push(format!("run {j}: error {e}")),
        }
    }
    let detail = "60 runs of 100 steps with R = 0 and ||A|| <= 1 (20 per correction criterion)";
    if failures.is_empty() {
        outcome(true, format!("{detail}; semi-axes / pseudo-volume / ssal nonincreasing"))
    } else {
        outcome(false, format!("{detail}; {} bad runs, first: {}", failures.len(), failures[0]))
    }
}

/// Pseudo-volume with every kept eigenvalue raised by `EIG_ROUNDOFF·λmax`.
fn pseudo_volume_slack(e: &Ellipsoid) -> f64 {
    let mut vals: Vec<f64> = e.scaled_shape().eigen().0.iter().map(|l| l.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let lift = EIG_ROUNDOFF * vals.first().copied().unwrap_or(0.0);
    let pdet: f64 = vals.iter().take(e.rank).map(|l| l + lift).product();
    sme_core::geometry::unit_ball_volume(e.rank) * pdet.sqrt()
}

// 8 ------------------------------------------------------------------------

fn bound_factors() -> Outcome {
    let kinds = KindMix { strip: 0.6, upper: 0.2, lower: 0.2, hyperplane: 0.0 };
    let scenarios: Vec<Scenario> =
        (0..20).map(|i| scenario(TEMPLATES[i % 3], 1 + i % 6, 1 + i % 3, 1 + i % 3, 100, 8000 + i as u64, kinds.clone(), 0.5)).collect();
    let jobs: Vec<(usize, PredictionCriterion, CorrectionCriterion)> =
        (0..scenarios.len()).flat_map(|i| combos().into_iter().map(move |(p, c)| (i, p, c))).collect();
    let results: Vec<std::result::Result<(usize, Vec<String>), String>> = jobs
        .par_iter()
        .map(|(i, p, c)| {
            let out = run_combo(&scenarios[*i], p, *c, *i as u64, true).map_err(|e| e.to_string())?;
            let models = scenarios[*i].expand().map_err(|e| e.to_string())?.models;
            let mut cond_slack = 0.0;
            let e0 = &out.ellipsoids[0];
            let pdet0 = e0.pseudo_det();
            let ssal0 = e0.ssal();
            let mut bad = Vec::new();
            let mut finite = 0;
            for (k, (e, (v, s))) in out.ellipsoids.iter().zip(&out.diagnostics).enumerate() {
                if v.is_nan() || s.is_nan() {
                    bad.push(format!("step {k}: bound factor is NaN"));
                    continue;
                }
                finite += v.is_finite() as usize;
                if k > 0 {
                    let mapped = out.ellipsoids[k - 1].shape.congruence(&models[k - 1].a);
                    cond_slack += BOUND_COND_FACTOR * f64::EPSILON * cond_sum(&mapped);
                }
                let pdet = e.pseudo_det();
                let slack = 1.0 + k as f64 * BOUND_REL + cond_slack;
                if *c == CorrectionCriterion::VolumeMin && pdet > v * pdet0 * slack {
                    bad.push(format!("step {k}: pdet {pdet:e} > v {v:e} * {pdet0:e}, excess {:.1e}", pdet / (v * pdet0) - 1.0));
                }
                if *c == CorrectionCriterion::SsalMin && e.ssal() > s * ssal0 * slack {
                    bad.push(format!("step {k}: ssal {:e} > s {s:e} * {ssal0:e}", e.ssal()));
                }
            }
            Ok((finite, bad))
        })
        .collect();
    let mut failures = Vec::new();
    let mut finite = 0;
    for ((i, p, c), r) in jobs.iter().zip(&results) {
        match r {
            Ok((f, bad)) => {
                finite += f;
                if let Some(b) = bad.first() {
                    failures.push(format!("scenario {i} {}: {b}", combo_name(p, *c)));
                }
            }
            Err(e) => failures.push(format!("scenario {i} {}: error {e}", combo_name(p, *c))),
        }
    }
    let detail = format!("20 full-rank scenarios x 6 combinations, 100 steps, {finite} step checks with finite v");
    if failures.is_empty() {
        outcome(true, format!("{detail}; pdet(sigma P) <= v pdet(sigma0 P0) under volume correction, ssal <= s ssal0 under ssal correction (slack 1e-9 per step plus 4 eps cond(APA^T))"))
    } else {
        outcome(false, format!("{detail}; {} bad runs, first: {}", failures.len(), failures[0]))
    }
}

/// `Σ λmax/λᵢ` over the nonzero eigenvalues.
fn cond_sum(m: &SymMatrix) -> f64 {
    let vals: Vec<f64> = m.eigen().0.iter().map(|l| l.abs()).collect();
    let max = vals.iter().copied().fold(0.0, f64::max);
    vals.iter().filter(|&&l| l > RANK_TOL * max).map(|l| max / l).sum()
}

// 9 ------------------------------------------------------------------------

fn rank_ledger() -> Outcome {
    let kinds = KindMix { strip: 0.3, upper: 0.1, lower: 0.1, hyperplane: 0.5 };
    let scenarios: Vec<Scenario> =
        (0..20).map(|i| scenario(TEMPLATES[i % 3], 2 + i % 5, 1 + i % 3, 1 + i % 3, 200, 9000 + i as u64, kinds.clone(), 0.8)).collect();
    let jobs: Vec<(usize, PredictionCriterion, CorrectionCriterion)> =
        (0..scenarios.len()).flat_map(|i| combos().into_iter().map(move |(p, c)| (i, p, c))).collect();
    let results: Vec<std::result::Result<LedgerTally, String>> = jobs
        .par_iter()
        .map(|(i, p, c)| {
            let out = run_combo(&scenarios[*i], p, *c, *i as u64, false).map_err(|e| e.to_string())?;
            let n = scenarios[*i].n;
            let mut bad = Vec::new();
            let mut margins = Vec::new();
            let mut deficient = 0;
            for (k, e) in out.ellipsoids.iter().enumerate() {
                let numeric = numeric_rank(&e.shape, RANK_TOL);
                deficient += (e.rank < n) as usize;
                if numeric != e.rank {
                    bad.push(format!("step {k}: tracked {} numeric {numeric}", e.rank));
                    margins.push(cut_margin(&e.shape));
                }
            }
            Ok((out.ellipsoids.len(), deficient, bad, margins))
        })
        .collect();
    let mut failures = Vec::new();
    let mut margins = Vec::new();
    let (mut steps, mut deficient) = (0, 0);
    for ((i, p, c), r) in jobs.iter().zip(&results) {
        match r {
            Ok((s, d, bad, m)) => {
                steps += s;
                deficient += d;
                margins.extend(m);
                if let Some(b) = bad.first() {
                    failures.push(format!("scenario {i} {}: {b}", combo_name(p, *c)));
                }
            }
            Err(e) => failures.push(format!("scenario {i} {}: error {e}", combo_name(p, *c))),
        }
    }
    let detail = format!("120 runs with equality measurements and noise, {steps} steps ({deficient} rank-deficient)");
    if failures.is_empty() && deficient > 0 {
        outcome(true, format!("{detail}; tracked rank equals numeric rank at every step"))
    } else {
        let widest = margins.iter().copied().fold(0.0, f64::max);
        outcome(
            false,
            format!(
                "{detail}; {} bad runs, {} bad steps, each with an eigenvalue within {widest:.1} decades of the rank cut{}",
                failures.len(),
                margins.len(),
                failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
            ),
        )
    }
}

/// Distance in decades from the nearest nonzero eigenvalue to the numeric-rank cut.
fn cut_margin(p: &SymMatrix) -> f64 {
    let vals: Vec<f64> = p.eigen().0.iter().map(|l| l.abs()).collect();
    let cut = RANK_TOL * vals.iter().copied().fold(0.0, f64::max);
    vals.iter().filter(|&&l| l > 0.0).map(|l| (l / cut).log10().abs()).fold(f64::INFINITY, f64::min)
}

// 10 -----------------------------------------------------------------------

fn sme(args: &[&str]) -> std::result::Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_sme")).args(args).output().map_err(|e| e.to_string())
}

fn estimate(scenario: &Path, out: &Path, emit: &str) -> std::result::Result<Vec<u8>, String> {
    let o = sme(&[
        "estimate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--pred",
        "trace",
        "--corr",
        "ssal",
        "--seed",
        "42",
        "--samples",
        "200",
        "--diagnostics",
        "--emit",
        emit,
        "--out",
        out.to_str().unwrap(),
    ])?;
    if !o.status.success() {
        return Err(format!("estimate exited with {}: {}", o.status, String::from_utf8_lossy(&o.stderr)));
    }
    std::fs::read(out.join(format!("run.{emit}"))).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let go = || -> std::result::Result<(usize, usize), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let gen = sme(&["gen-scenario", "--template", "rotation", "--n", "4", "--horizon", "150", "--seed", "3"])?;
        if !gen.status.success() {
            return Err("gen-scenario failed".into());
        }
        let path = dir.path().join("scenario.json");
        std::fs::write(&path, &gen.stdout).map_err(|e| e.to_string())?;
        let a = estimate(&path, &dir.path().join("a"), "csv")?;
        let b = estimate(&path, &dir.path().join("b"), "csv")?;
        if a != b {
            return Err("CSV outputs differ".into());
        }
        let ja = estimate(&path, &dir.path().join("ja"), "json")?;
        let jb = estimate(&path, &dir.path().join("jb"), "json")?;
        if ja != jb {
            return Err("JSON outputs differ".into());
        }
        Ok((a.len(), String::from_utf8_lossy(&a).lines().count()))
    };
    match go() {
        Ok((bytes, lines)) => {
            outcome(true, format!("two `sme estimate` runs gave byte-identical CSV ({bytes} bytes, {lines} lines) and JSON"))
        }
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("rank-one pseudo-det / pseudo-inverse updates", rank_one_identities),
        ("parameter optimality against a grid", parameter_optimality),
        ("cubic solver roots and discriminant", cubic_solver),
        ("closed-form vs sequential trace prediction", ssal_prediction_equivalence),
        ("Monte Carlo containment of prediction and correction", geometric_containment),
        ("end-to-end containment, acceptability, sigma monotonicity", end_to_end),
        ("size monotonicity without process noise", no_noise_monotonicity),
        ("size bound factors", bound_factors),
        ("incremental rank ledger", rank_ledger),
        ("determinism of the CLI", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        failed += (!o.ok) as usize;
        println!("criterion {:>2} {} {name}: {} [{secs:.1}s]", i + 1, if o.ok { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
