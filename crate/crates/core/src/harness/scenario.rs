//! Scenario files: a JSON document describing the system, the initial set,
//! the noise policy and the measurement schedule.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Ellipsoid;
use crate::numerics::{matrix_rank, SymMatrix, Tolerances};
use crate::prediction::ProcessModel;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub horizon: usize,
    pub model: ModelSource,
    pub initial: InitialSet,
    #[serde(default)]
    pub noise: NoisePolicy,
    #[serde(default)]
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    /// Per-step matrices; step `k` uses `steps[k % steps.len()]`.
    Explicit {
        steps: Vec<StepModel>,
    },
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepModel {
    pub a: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    /// Noise generators, `n` rows by `m` columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Stable,
    Rotation,
    Integrator,
}

impl std::str::FromStr for Template {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Template::Stable),
            "rotation" => Ok(Template::Rotation),
            "integrator" => Ok(Template::Integrator),
            other => Err(Error::Parse(format!("unknown template '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub template: Template,
    pub seed: u64,
    /// Number of noise generators per step.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Magnitude of the generator entries.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// Adds a scalar sinusoidal input through a random `B`.
    #[serde(default)]
    pub input: bool,
}

fn default_m() -> usize {
    2
}

fn default_noise_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSet {
    pub center: Vec<f64>,
    pub shape: Rows,
    pub sigma0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    #[default]
    Uniform,
    /// Every noise component is ±1.
    Vertex,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindMix {
    pub strip: f64,
    pub upper: f64,
    pub lower: f64,
    pub hyperplane: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix { strip: 0.6, upper: 0.15, lower: 0.15, hyperplane: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adversarial {
    pub probability: f64,
    /// Both bounds are shifted by this amount, so the truth may fall outside.
    pub offset: f64,
}

/// A measurement written relative to the true output `fᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitMeasurement {
    pub direction: Vec<f64>,
    #[serde(serialize_with = "ser_bound", deserialize_with = "de_bound")]
    pub lo: f64,
    #[serde(serialize_with = "ser_bound", deserialize_with = "de_bound")]
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Probability that a step carries measurements.
    pub presence: f64,
    pub max_per_step: usize,
    #[serde(default)]
    pub kinds: KindMix,
    /// Range of interval widths.
    pub width: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<Adversarial>,
    /// Fixed measurements for steps `1..=horizon`, overriding the random draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<Vec<ExplicitMeasurement>>>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { presence: 0.5, max_per_step: 2, kinds: KindMix::default(), width: [0.1, 1.0], adversarial: None, explicit: None }
    }
}

fn ser_bound<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *v == f64::INFINITY {
        s.serialize_str("inf")
    } else if *v == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_bound<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Str(s) => match s.as_str() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("expected a number, \"inf\" or \"-inf\", got \"{other}\""))),
        },
    }
}

pub fn matrix_from_rows(rows: &Rows, field: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Validation(format!("{field}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn rows_from_matrix(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Models and initial set after generator expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct Expanded {
    pub models: Vec<ProcessModel>,
    pub initial: Ellipsoid,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let tol = Tolerances::default();
        if self.n == 0 {
            return Err(Error::Validation("n: must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Validation("horizon: must be at least 1".into()));
        }
        let sch = &self.schedule;
        if !(0.0..=1.0).contains(&sch.presence) {
            return Err(Error::Validation("schedule.presence: must lie in [0, 1]".into()));
        }
        if !(sch.width[0] > 0.0 && sch.width[0] <= sch.width[1] && sch.width[1].is_finite()) {
            return Err(Error::Validation("schedule.width: need 0 < min <= max".into()));
        }
        let k = &sch.kinds;
        let weights = [k.strip, k.upper, k.lower, k.hyperplane];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Validation("schedule.kinds: weights must be nonnegative with a positive sum".into()));
        }
        if let Some(a) = &sch.adversarial {
            if !(0.0..=1.0).contains(&a.probability) || !a.offset.is_finite() {
                return Err(Error::Validation("schedule.adversarial: bad probability or offset".into()));
            }
        }
        if let Some(steps) = &sch.explicit {
            for (k, batch) in steps.iter().enumerate() {
                let mut hyper = Vec::new();
                for (i, m) in batch.iter().enumerate() {
                    let field = format!("schedule.explicit[{k}][{i}]");
                    if m.direction.len() != self.n {
                        return Err(Error::Validation(format!("{field}.direction: expected length {}", self.n)));
                    }
                    if m.direction.iter().all(|v| *v == 0.0) || m.direction.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!("{field}.direction: must be finite and nonzero")));
                    }
                    if m.lo.is_nan() || m.hi.is_nan() || m.lo > m.hi || (m.lo.is_infinite() && m.hi.is_infinite()) {
                        return Err(Error::Validation(format!("{field}: invalid bounds [{}, {}]", m.lo, m.hi)));
                    }
                    if m.lo == m.hi {
                        hyper.push(DVector::from_vec(m.direction.clone()));
                    }
                }
                if !hyper.is_empty() {
                    let f = DMatrix::from_columns(&hyper);
                    if matrix_rank(&f, tol.rank) < hyper.len() {
                        return Err(Error::Validation(format!("schedule.explicit[{k}]: equality directions must be linearly independent")));
                    }
                }
            }
        }
        let e = &self.initial;
        if e.center.len() != self.n {
            return Err(Error::Validation(format!("initial.center: expected length {}", self.n)));
        }
        let p0 = matrix_from_rows(&e.shape, "initial.shape")?;
        if p0.nrows() != self.n || p0.ncols() != self.n {
            return Err(Error::Validation(format!("initial.shape: expected {0}x{0}", self.n)));
        }
        if !(e.sigma0 > 0.0 && e.sigma0.is_finite()) {
            return Err(Error::Validation("initial.sigma0: must be positive".into()));
        }
        let sym = SymMatrix::new(p0);
        if sym.as_matrix().iter().any(|v| !v.is_finite()) || sym.eigen().0.min() <= 0.0 {
            return Err(Error::Validation("initial.shape: must be symmetric positive definite".into()));
        }
        match &self.model {
            ModelSource::Explicit { steps } => {
                if steps.is_empty() {
                    return Err(Error::Validation("model.steps: must not be empty".into()));
                }
                for (k, s) in steps.iter().enumerate() {
                    let m = step_model(s, self.n, &format!("model.steps[{k}]"))?;
                    m.validate(&tol).map_err(|e| Error::Validation(format!("model.steps[{k}]: {e}")))?;
                }
            }
            ModelSource::Generator(g) => {
                if !(g.noise_scale > 0.0 && g.noise_scale.is_finite()) {
                    return Err(Error::Validation("model.noise_scale: must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Builds the per-step models (deterministic in the generator seed) and `E₀`.
    pub fn expand(&self) -> Result<Expanded> {
        let models = match &self.model {
            ModelSource::Explicit { steps } => {
                let base: Vec<ProcessModel> =
                    steps.iter().enumerate().map(|(k, s)| step_model(s, self.n, &format!("model.steps[{k}]"))).collect::<Result<_>>()?;
                (0..self.horizon).map(|k| base[k % base.len()].clone()).collect()
            }
            ModelSource::Generator(g) => generate_models(g, self.n, self.horizon),
        };
        let tol = Tolerances::default();
        for (k, m) in models.iter().enumerate() {
            m.validate(&tol).map_err(|e| Error::Validation(format!("model step {k}: {e}")))?;
        }
        let initial = Ellipsoid::new(
            DVector::from_vec(self.initial.center.clone()),
            SymMatrix::new(matrix_from_rows(&self.initial.shape, "initial.shape")?),
            self.initial.sigma0,
            &tol,
        )?;
        Ok(Expanded { models, initial })
    }

    /// A generator-backed scenario with default schedule.
    pub fn from_template(template: Template, n: usize, horizon: usize, seed: u64) -> Self {
        Scenario {
            n,
            horizon,
            model: ModelSource::Generator(GeneratorSpec {
                template,
                seed,
                m: default_m(),
                noise_scale: default_noise_scale(),
                input: true,
            }),
            initial: InitialSet { center: vec![0.0; n], shape: rows_from_matrix(&DMatrix::identity(n, n)), sigma0: 1.0 },
            noise: NoisePolicy::Uniform,
            schedule: Schedule::default(),
        }
    }
}

fn step_model(s: &StepModel, n: usize, field: &str) -> Result<ProcessModel> {
    let a = matrix_from_rows(&s.a, &format!("{field}.a"))?;
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Validation(format!("{field}.a: expected {n}x{n}")));
    }
    let (b, tau) = match (&s.b, &s.tau) {
        (Some(b), Some(t)) => (matrix_from_rows(b, &format!("{field}.b"))?, DVector::from_vec(t.clone())),
        (None, None) => (DMatrix::zeros(n, 0), DVector::zeros(0)),
        _ => return Err(Error::Validation(format!("{field}: b and tau must be given together"))),
    };
    let r = match &s.r {
        Some(r) if !r.is_empty() && !r[0].is_empty() => matrix_from_rows(r, &format!("{field}.r"))?,
        _ => DMatrix::zeros(n, 0),
    };
    Ok(ProcessModel { a, b, tau, r })
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

fn generate_models(g: &GeneratorSpec, n: usize, horizon: usize) -> Vec<ProcessModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let b = if g.input { random_matrix(&mut rng, n, 1) } else { DMatrix::zeros(n, 0) };
    let axis_pairs: Vec<(usize, usize)> = (0..n / 2).map(|i| (2 * i, 2 * i + 1)).collect();
    (0..horizon)
        .map(|k| {
            let a = match g.template {
                Template::Stable => {
                    let m = random_matrix(&mut rng, n, n);
                    let target = rng.random_range(0.5..0.98);
                    &m * (target / spectral_norm(&m).max(1e-12))
                }
                Template::Rotation => {
                    // Block-diagonal planar rotations with step-dependent angles.
                    let mut a = DMatrix::identity(n, n);
                    for &(i, j) in &axis_pairs {
                        let t: f64 = rng.random_range(0.05..0.6);
                        a[(i, i)] = t.cos();
                        a[(i, j)] = -t.sin();
                        a[(j, i)] = t.sin();
                        a[(j, j)] = t.cos();
                    }
                    a
                }
                Template::Integrator => {
                    let mut a = DMatrix::identity(n, n);
                    for i in 0..n.saturating_sub(1) {
                        a[(i, i + 1)] = 0.1;
                    }
                    a
                }
            };
            let mut r = random_matrix(&mut rng, n, g.m) * g.noise_scale;
            for mut col in r.column_iter_mut() {
                if col.norm() < 1e-3 * g.noise_scale {
                    col[0] = g.noise_scale;
                }
            }
            let tau = if g.input { DVector::from_element(1, (0.1 * k as f64).sin()) } else { DVector::zeros(0) };
            ProcessModel { a, b: b.clone(), tau, r }
        })
        .collect()
}
