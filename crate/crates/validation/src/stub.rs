//! A gradient source with a fixed cost per case, for timing case sampling and
//! decoupling without a real model in the way.

use std::hint::black_box;
use std::time::Instant;

use gmd_core::autodiff::{GradientVector, GroupId};
use gmd_core::cases::{enumerate_cases, sample_cases, ModalityCase, PoolPolicy, SamplerConfig};
use gmd_core::gmd::{gmd_all, reduce};
use gmd_core::par::Schedule;
use gmd_core::Result;

#[derive(Debug, Clone)]
pub struct StubModel {
    dim: usize,
    id: GroupId,
}

impl StubModel {
    pub fn new(dim: usize) -> Self {
        StubModel {
            dim,
            id: GroupId::new("shared"),
        }
    }

    /// Pseudo-random gradient determined by the case mask.
    pub fn grad(&self, case: &ModalityCase) -> GradientVector {
        let mut x = u64::from(case.mask()).wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let values = (0..self.dim)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        GradientVector::new(self.id.clone(), values).expect("finite values")
    }
}

/// Draws the step's cases, takes their gradients, decouples and reduces.
pub fn sampled_step(
    model: &StubModel,
    sampler: &SamplerConfig,
    modalities: usize,
    step: u64,
) -> Result<GradientVector> {
    let entries: Vec<_> = sample_cases(sampler, modalities, step)?
        .into_iter()
        .map(|c| (c, model.grad(&c)))
        .collect();
    let (calibrated, _) = gmd_all(&entries, Schedule::Sequential)?;
    reduce(&calibrated)
}

/// Visits every case of the pool and reduces all their gradients.
pub fn full_pool_step(model: &StubModel, modalities: usize, policy: &PoolPolicy) -> Result<GradientVector> {
    let grads: Vec<_> = enumerate_cases(modalities, policy)?
        .iter()
        .map(|c| model.grad(c))
        .collect();
    reduce(&grads)
}

/// Median seconds per call of `f` over `reps` timed calls, after a warm-up.
pub fn median_secs<T>(reps: usize, mut f: impl FnMut() -> T) -> f64 {
    for _ in 0..reps.div_ceil(10) {
        black_box(f());
    }
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            black_box(f());
            start.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[t.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_depend_only_on_the_case() {
        let m = StubModel::new(16);
        let a = ModalityCase::parse_bits("101").unwrap();
        let b = ModalityCase::parse_bits("011").unwrap();
        assert_eq!(m.grad(&a), m.grad(&a));
        assert_ne!(m.grad(&a), m.grad(&b));
        assert!(m.grad(&a).values().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn full_pool_visits_every_case() {
        let m = StubModel::new(4);
        let total = full_pool_step(&m, 3, &PoolPolicy::All).unwrap();
        let cases = enumerate_cases(3, &PoolPolicy::All).unwrap();
        assert_eq!(cases.len(), 7);
        let mut expected = vec![0.0; 4];
        for c in &cases {
            for (e, v) in expected.iter_mut().zip(m.grad(c).values()) {
                *e += v;
            }
        }
        assert_eq!(total.values(), expected.as_slice());
    }
}
