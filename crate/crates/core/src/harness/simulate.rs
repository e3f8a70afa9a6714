//! Ground-truth trajectories and measurement batches built around them.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::correction::Measurement;
use crate::error::Result;
use crate::harness::scenario::{Expanded, NoisePolicy, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// `x_0 … x_N`
    pub states: Vec<DVector<f64>>,
    /// Measurements available at each instant; index 0 is always empty.
    pub measurements: Vec<Vec<Measurement>>,
}

fn noise<R: Rng>(policy: NoisePolicy, m: usize, rng: &mut R) -> DVector<f64> {
    match policy {
        NoisePolicy::Uniform => DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0)),
        NoisePolicy::Vertex => DVector::from_fn(m, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
        NoisePolicy::Zero => DVector::zeros(m),
    }
}

fn random_direction<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 1e-6 {
            return g * (rng.random_range(0.5..2.0) / norm);
        }
    }
}

fn draw_batch<R: Rng>(s: &Scenario, x: &DVector<f64>, rng: &mut R) -> Vec<Measurement> {
    let sch = &s.schedule;
    if !rng.random_bool(sch.presence) {
        return Vec::new();
    }
    let count = rng.random_range(1..=sch.max_per_step.max(1));
    let k = &sch.kinds;
    let weights = [k.strip, k.upper, k.lower, k.hyperplane];
    let total: f64 = weights.iter().sum();
    (0..count)
        .map(|_| {
            let f = random_direction(s.n, rng);
            let y = f.dot(x);
            let w = rng.random_range(sch.width[0]..=sch.width[1]);
            let t: f64 = rng.random_range(0.0..=1.0);
            let mut pick = rng.random_range(0.0..total);
            let mut kind = 0;
            for (i, wt) in weights.iter().enumerate() {
                if pick < *wt {
                    kind = i;
                    break;
                }
                pick -= wt;
            }
            let (mut lo, mut hi) = match kind {
                0 => (y - t * w, y + (1.0 - t) * w),
                1 => (f64::NEG_INFINITY, y + t * w),
                2 => (y - t * w, f64::INFINITY),
                _ => (y, y),
            };
            if let Some(adv) = &sch.adversarial {
                if rng.random_bool(adv.probability) {
                    lo += adv.offset;
                    hi += adv.offset;
                }
            }
            Measurement::new(f, lo, hi).expect("generated bounds are ordered")
        })
        .collect()
}

/// Samples `x₀ ∈ E₀`, propagates it with admissible noise and builds the
/// measurement batches. Deterministic in `seed`.
pub fn simulate_truth(s: &Scenario, expanded: &Expanded, seed: u64) -> Result<Truth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = expanded.initial.sample_with(1, &mut rng).remove(0);
    let mut states = vec![x0];
    let mut measurements = vec![Vec::new()];
    for k in 0..s.horizon {
        let model = &expanded.models[k];
        let w = noise(s.noise, model.noise_order(), &mut rng);
        let x = model.drift(&states[k]) + &model.r * w;
        let batch = match &s.schedule.explicit {
            Some(steps) => steps
                .get(k)
                .map(|b| {
                    b.iter()
                        .map(|m| {
                            let f = DVector::from_vec(m.direction.clone());
                            let y = f.dot(&x);
                            Measurement::new(f, y + m.lo, y + m.hi)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?
                .unwrap_or_default(),
            None => draw_batch(s, &x, &mut rng),
        };
        states.push(x);
        measurements.push(batch);
    }
    Ok(Truth { states, measurements })
}
