//! Wall-clock scaling of policy scoring.
//!
//! Timing runs on the calling thread only. Each measurement repeats the
//! scoring call until at least [`MIN_SAMPLE`] has elapsed and reports the
//! per-call mean; the reported time for a cache length is the median of
//! `trials` such measurements.

use std::hint::black_box;
use std::time::{Duration, Instant};

use keydiff_core::analysis::fit_loglog_slope;
use keydiff_core::policies::{score, ScoringContext};
use keydiff_core::{Matrix, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MIN_SAMPLE: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub n: usize,
    pub median_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub policy: Policy,
    pub d: usize,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `ln t` against `ln n`.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("cache lengths must be ascending and at least 2")]
    Grid,
    #[error("trials and head_dim must be at least 1")]
    Config,
    #[error("{0:?} needs block attention and cannot be timed on keys alone")]
    NeedsAttention(Policy),
    #[error(transparent)]
    Policy(#[from] keydiff_core::Error),
}

fn random_keys(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(n, d, data).expect("finite keys")
}

fn time_once(policy: &Policy, keys: &Matrix, ids: &[u64], budget: usize) -> f64 {
    let ctx = ScoringContext::keys_only(keys, ids);
    let mut calls = 0u32;
    let start = Instant::now();
    loop {
        black_box(score(policy, black_box(&ctx), budget).expect("valid scoring input"));
        calls += 1;
        let elapsed = start.elapsed();
        if elapsed >= MIN_SAMPLE {
            return elapsed.as_secs_f64() / f64::from(calls);
        }
    }
}

/// Median scoring time of `policy` over random `n x d` caches for every `n`
/// in `n_grid`. The scoring budget is `n / 2`.
pub fn scaling_bench(
    policy: &Policy,
    n_grid: &[usize],
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<ScalingReport, BenchError> {
    if n_grid.first().is_some_and(|&n| n < 2) || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Grid);
    }
    if trials == 0 || d == 0 {
        return Err(BenchError::Config);
    }
    if policy.needs_attention() {
        return Err(BenchError::NeedsAttention(*policy));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let keys = random_keys(&mut rng, n, d);
        let ids: Vec<u64> = (0..n as u64).collect();
        let budget = n / 2;
        policy.validate_budget(budget)?;
        let mut samples: Vec<f64> = (0..trials)
            .map(|_| time_once(policy, &keys, &ids, budget))
            .collect();
        samples.sort_by(f64::total_cmp);
        points.push(ScalingPoint {
            n,
            median_seconds: samples[samples.len() / 2],
        });
    }
    let fit: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.n as f64, p.median_seconds))
        .collect();
    Ok(ScalingReport {
        policy: *policy,
        d,
        slope: fit_loglog_slope(&fit),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids_and_attention_policies() {
        let p = Policy::keydiff();
        assert_eq!(scaling_bench(&p, &[8, 4], 2, 1, 0), Err(BenchError::Grid));
        assert_eq!(scaling_bench(&p, &[1, 4], 2, 1, 0), Err(BenchError::Grid));
        assert_eq!(scaling_bench(&p, &[4, 8], 2, 0, 0), Err(BenchError::Config));
        assert!(matches!(
            scaling_bench(&Policy::Tova, &[4, 8], 2, 1, 0),
            Err(BenchError::NeedsAttention(_))
        ));
    }

    #[test]
    fn reports_one_point_per_length() {
        let r = scaling_bench(&Policy::keydiff(), &[16, 32, 64], 4, 1, 0).unwrap();
        assert_eq!(
            r.points.iter().map(|p| p.n).collect::<Vec<_>>(),
            vec![16, 32, 64]
        );
        assert!(r.points.iter().all(|p| p.median_seconds > 0.0));
        assert!(r.slope.is_some());
    }
}
