//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so criteria execute one after another
//! on a quiet machine (the scaling criterion times real work).

#[path = "../../core/tests/reference/mod.rs"]
mod reference;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use keydiff::bench::scaling_bench;
use keydiff::traceio::{decode_trace, encode_trace, TraceIoError};
use keydiff_core::analysis::{
    brute_force_subset, correlation_report, flop_closed_form, flop_count_keydiff,
    relaxed_objective, subset_objective, FlopWeights,
};
use keydiff_core::numerics::log_det_gram;
use keydiff_core::policies::{score, ScoringContext};
use keydiff_core::theory::{
    theorem2_rhs, verify_lemma1, verify_orthsum, verify_theorem2, FaultInjection, InstanceRanges,
};
use keydiff_core::{
    run_head_stream, synth_trace, Anchor, AttentionModel, KvCache, Matrix, Metric,
    OutlierPlacement, Policy, PolicyKind, PolicyParams, SynthSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const ALL_KINDS: [PolicyKind; 10] = [
    PolicyKind::KeyDiffPairwise,
    PolicyKind::KeyDiffEfficient,
    PolicyKind::KeyDiffSlidingWindow,
    PolicyKind::Tova,
    PolicyKind::H2o,
    PolicyKind::SnapKv,
    PolicyKind::Sink,
    PolicyKind::KeyL2Norm,
    PolicyKind::NoEvict,
    PolicyKind::Random,
];

fn budget_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut runs, mut violations, mut refused) = (0, 0, 0);
    for stream in 0..50u64 {
        let t = rng.random_range(16..=512);
        let q_heads = if stream % 2 == 0 { 1 } else { 2 };
        let spec = SynthSpec {
            seq_len: t,
            head_dim: 8,
            q_heads,
            outliers: rng.random_range(0..4),
            placement: OutlierPlacement::Random,
            seed: stream,
            ..SynthSpec::default()
        };
        let trace = synth_trace(&spec).unwrap();
        let model = AttentionModel::for_trace(&trace).unwrap();
        for kind in ALL_KINDS {
            let params = PolicyParams {
                seed: stream,
                ..PolicyParams::default()
            };
            let policy = Policy::build(kind, &params).unwrap();
            for budget in [16, 64] {
                for block in [1, 8, 64, t] {
                    runs += 1;
                    let mut over = 0;
                    let r =
                        run_head_stream(&trace, 0, 0, &model, &policy, budget, block, |_, c| {
                            if c.len() > budget {
                                over += 1;
                            }
                        });
                    violations += over;
                    match (r, kind) {
                        (Ok(_), _) => {}
                        // a no-evict cache refuses to grow past its budget
                        (Err(keydiff_core::Error::Config(_)), PolicyKind::NoEvict)
                            if t > budget =>
                        {
                            refused += 1
                        }
                        (Err(e), _) => {
                            return outcome(
                                false,
                                format!("{kind:?} N={budget} B={block} T={t}: {e}"),
                            );
                        }
                    }
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {runs} runs ({refused} no-evict runs refused to exceed N)"),
    )
}

fn block_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let spec = SynthSpec {
            seq_len: 48 + seed as usize * 4,
            q_heads: 2,
            kv_heads: 1,
            layers: 2,
            placement: OutlierPlacement::Random,
            seed,
            ..SynthSpec::default()
        };
        let trace = synth_trace(&spec).unwrap();
        let model = AttentionModel::for_trace(&trace).unwrap();
        let t = spec.seq_len;
        for (l, h) in trace.kv_streams() {
            let run = |b| {
                run_head_stream(&trace, l, h, &model, &Policy::NoEvict, t, b, |_, _| {}).unwrap()
            };
            let base = run(1);
            for b in [8, t] {
                let other = run(b);
                for (x, y) in base.outputs.iter().zip(&other.outputs) {
                    for (p, q) in x.data().iter().zip(y.data()) {
                        worst = worst.max((p - q).abs());
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-8,
        format!("max elementwise difference {worst:.2e} over 20 traces"),
    )
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn evict_indices(keys: &Matrix, policy: &Policy, budget: usize) -> Vec<usize> {
    let mut cache = KvCache::new(keys.cols(), budget);
    cache.append(keys, keys, 0).unwrap();
    cache.evict(policy, None).unwrap()
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let data = (0..n * d).map(|_| normal(rng)).collect();
    Matrix::new(n, d, data).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn relaxed_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = Policy::KeyDiffEfficient {
        anchor: Anchor::MeanNormalized,
        metric: Metric::Cosine,
    };
    let mut violations = 0;
    for _ in 0..200 {
        let n = rng.random_range(3..=12);
        let d = rng.random_range(2..=8);
        let size = rng.random_range(2..n);
        let keys = gaussian_rows(&mut rng, n, d);
        let chosen = relaxed_objective(&keys, &evict_indices(&keys, &policy, size));
        let best = subsets(n, size)
            .iter()
            .map(|s| relaxed_objective(&keys, s))
            .fold(f64::INFINITY, f64::min);
        if chosen > best {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over 200 instances"),
    )
}

fn clustered_keys(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let kappa = rng.random_range(4.0..64.0);
    let u: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let len = reference::norm(&u);
    let spread = 1.0 / (kappa * d as f64).sqrt();
    let data = (0..n)
        .flat_map(|_| {
            u.iter()
                .map(|x| x / len + spread * normal(rng))
                .collect::<Vec<_>>()
        })
        .collect();
    Matrix::new(n, d, data).unwrap()
}

fn oracle_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut bound_violations, mut below_median) = (0, 0);
    for _ in 0..200 {
        let n = rng.random_range(5..=12);
        let d = rng.random_range(2..=8);
        let size = rng.random_range(2..n);
        let keys = clustered_keys(&mut rng, n, d);
        let optimum = brute_force_subset(&keys, size).unwrap().objective;
        let efficient = subset_objective(&keys, &evict_indices(&keys, &Policy::keydiff(), size));
        let pairwise =
            subset_objective(&keys, &evict_indices(&keys, &Policy::KeyDiffPairwise, size));
        if optimum > efficient || optimum > pairwise {
            bound_violations += 1;
        }
        let mut all: Vec<f64> = subsets(n, size)
            .iter()
            .map(|s| subset_objective(&keys, s))
            .collect();
        all.sort_by(f64::total_cmp);
        let m = all.len();
        let median = if m % 2 == 1 {
            all[m / 2]
        } else {
            0.5 * (all[m / 2 - 1] + all[m / 2])
        };
        if efficient <= median {
            below_median += 1;
        }
    }
    outcome(
        bound_violations == 0 && below_median * 100 >= 95 * 200,
        format!("{bound_violations} lower-bound violations; efficient <= median random subset on {below_median}/200"),
    )
}

fn theory_suite() -> Outcome {
    let ranges = InstanceRanges::default();
    let none = FaultInjection::default();
    let summaries = [
        verify_lemma1(10_000, 11, &ranges, none),
        verify_theorem2(10_000, 12, &ranges, none),
        verify_orthsum(10_000, 13, &[2, 3, 8, 16, 64], none),
    ];
    let boundary = theorem2_rhs(-1.0, 1.0);
    let boundary_ok = (boundary + 1.0).abs() <= 1e-12;
    let ok = summaries
        .iter()
        .all(|s| s.instances == 10_000 && s.violations == 0)
        && boundary_ok;
    let detail = summaries
        .iter()
        .map(|s| format!("{} {}/{}", s.check, s.violations, s.instances))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(ok, format!("violations {detail}; boundary rhs {boundary}"))
}

fn flop_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = 0;
    for _ in 0..1000 {
        let n: u64 = rng.random_range(1..1_000_000);
        let d: u64 = rng.random_range(1..4096);
        let r = flop_count_keydiff(n, d, FlopWeights::default()).unwrap();
        let identity = 3 * r.mults + r.adds + 47 * r.divs + r.sqrts;
        let closed = (12 * d + 97) * n + 3 * d + 94;
        if identity != closed || r.weighted_total != closed || flop_closed_form(n, d) != closed {
            bad += 1;
        }
    }
    let spot1 = flop_count_keydiff(1, 1, FlopWeights::default())
        .unwrap()
        .weighted_total;
    let spot2 = flop_count_keydiff(1024, 128, FlopWeights::default())
        .unwrap()
        .weighted_total;
    outcome(
        bad == 0 && spot1 == 206 && spot2 == 1_672_670,
        format!("{bad} mismatches over 1000 (n, d); spot values {spot1}, {spot2}"),
    )
}

fn baseline_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    let mut compare = |got: &[f64], want: &[f64]| {
        for (g, w) in got.iter().zip(want) {
            if g.is_infinite() || w.is_infinite() {
                if g != w {
                    mismatched += 1;
                }
            } else {
                worst = worst.max((g - w).abs());
            }
        }
    };
    let rows = |m: &Matrix| -> Vec<Vec<f64>> { m.row_iter().map(<[f64]>::to_vec).collect() };
    for kind in [
        PolicyKind::Tova,
        PolicyKind::H2o,
        PolicyKind::SnapKv,
        PolicyKind::Sink,
    ] {
        let policy = Policy::build(kind, &PolicyParams::default()).unwrap();
        for _ in 0..100 {
            let (n_cache, b, d) = (rng.random_range(0..80), rng.random_range(1..24), 6);
            let n = n_cache + b;
            let keys = gaussian_rows(&mut rng, n, d);
            let queries = gaussian_rows(&mut rng, b, d);
            // resident tokens carry sparse, increasing positions
            let mut ids = Vec::with_capacity(n);
            let mut pos = 0u64;
            for _ in 0..n_cache {
                pos += rng.random_range(1..4);
                ids.push(pos);
            }
            let start = pos + 1;
            ids.extend(start..start + b as u64);
            let q_pos: Vec<u64> = (start..start + b as u64).collect();
            let att = reference::attention(&rows(&queries), &q_pos, &rows(&keys), &ids, 0.4);
            let a = Matrix::from_rows(n, &att).unwrap();
            let acc: Vec<f64> = (0..n)
                .map(|i| {
                    if i < n_cache {
                        rng.random_range(0.0..5.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let ctx = ScoringContext {
                keys: &keys,
                block_attention: Some(&a),
                time_ids: &ids,
                accumulator: Some(&acc),
            };
            let budget = (n / 2).max(5);
            let got = score(&policy, &ctx, budget).unwrap();
            let want: Vec<f64> = match kind {
                PolicyKind::Tova => reference::tova(&att),
                PolicyKind::H2o => reference::col_sums(&att)
                    .iter()
                    .zip(&acc)
                    .map(|(c, p)| c + p)
                    .collect(),
                PolicyKind::SnapKv => reference::snapkv(&att, 7, 32),
                _ => reference::sink(&ids, 4),
            };
            compare(&got, &want);
        }
    }
    let defaults = PolicyParams::default();
    let defaults_ok = Policy::build(PolicyKind::SnapKv, &defaults).unwrap()
        == Policy::SnapKv {
            kernel: 7,
            recent: 32,
        }
        && Policy::build(PolicyKind::Sink, &defaults).unwrap() == Policy::Sink { sink_count: 4 };
    outcome(
        worst <= 1e-12 && mismatched == 0 && defaults_ok,
        format!("max |diff| {worst:.2e} over 400 blocks, {mismatched} pinned-token mismatches, defaults 7/32/4 {}",
            if defaults_ok { "honored" } else { "WRONG" }),
    )
}

fn correlation_analogue() -> Outcome {
    let mut rhos = Vec::with_capacity(50);
    for seed in 0..50 {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let trace = synth_trace(&spec).unwrap();
        let model = AttentionModel::for_trace(&trace).unwrap();
        rhos.extend(
            correlation_report(&trace, &model)
                .unwrap()
                .iter()
                .map(|r| r.rho.unwrap_or(f64::NAN)),
        );
    }
    let hits = rhos.iter().filter(|&&r| r >= 0.8).count();
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    outcome(
        hits * 100 >= 90 * rhos.len(),
        format!(
            "rho >= 0.8 in {hits}/{} seeds (T=64, 2 outliers), mean rho {mean:.3}",
            rhos.len()
        ),
    )
}

fn diversity() -> Outcome {
    let mut wins = 0;
    for seed in 0..100 {
        let spec = SynthSpec {
            seq_len: 128,
            outliers: 2,
            placement: OutlierPlacement::Random,
            seed,
            ..SynthSpec::default()
        };
        let trace = synth_trace(&spec).unwrap();
        let keys = trace.keys(0, 0);
        let retained = |policy: Policy| keys.select_rows(&evict_indices(keys, &policy, 8));
        let kd = log_det_gram(&retained(Policy::keydiff()));
        let rnd = log_det_gram(&retained(Policy::Random { seed }));
        if kd >= rnd {
            wins += 1;
        }
    }
    outcome(
        wins >= 90,
        format!("KeyDiff log-det >= Random in {wins}/100 seeds (T=128, N=8)"),
    )
}

fn scaling_shape() -> Outcome {
    let grid: Vec<usize> = (10..=15).map(|e| 1 << e).collect();
    let measure = || {
        let eff = scaling_bench(&Policy::keydiff(), &grid, 8, 3, 0)
            .unwrap()
            .slope
            .unwrap();
        let pw = scaling_bench(&Policy::KeyDiffPairwise, &grid, 8, 3, 0)
            .unwrap()
            .slope
            .unwrap();
        (eff, pw)
    };
    let in_band = |(e, p): (f64, f64)| (0.8..=1.3).contains(&e) && (1.7..=2.3).contains(&p);
    let first = measure();
    if in_band(first) {
        return outcome(
            true,
            format!(
                "efficient slope {:.3}, pairwise slope {:.3}",
                first.0, first.1
            ),
        );
    }
    let second = measure();
    outcome(
        in_band(second),
        format!(
            "first run {:.3}/{:.3} out of band; rerun efficient {:.3}, pairwise {:.3}",
            first.0, first.1, second.0, second.1
        ),
    )
}

const GOLDEN_SHA256: &str = "025a89886e0c4b6787856f2f3b79a548e51a70595b8c18fc816dd5fa1bcd7eee";

fn format() -> Outcome {
    let golden =
        std::fs::read(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden.kvtr"))
            .unwrap();
    let hash: String = Sha256::digest(&golden)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let golden_ok = hash == GOLDEN_SHA256
        && decode_trace(&golden)
            .map(|t| encode_trace(&t).unwrap() == golden)
            .unwrap_or(false);

    let mut round_trips = 0;
    for seed in 0..10 {
        let spec = SynthSpec {
            layers: 2,
            q_heads: 4,
            kv_heads: 2,
            seq_len: 33,
            head_dim: 8,
            seed,
            ..SynthSpec::default()
        };
        let bytes = encode_trace(&synth_trace(&spec).unwrap()).unwrap();
        let back = decode_trace(&bytes).unwrap();
        if encode_trace(&back).unwrap() == bytes {
            round_trips += 1;
        }
    }

    let offset = |b: &[u8]| match decode_trace(b) {
        Err(TraceIoError::Parse { offset, .. }) => Some(offset),
        _ => None,
    };
    let truncation_ok = (0..golden.len()).all(|cut| offset(&golden[..cut]) == Some(cut as u64));
    let mut bad_magic = golden.clone();
    bad_magic[2] = b'?';
    let magic_ok = offset(&bad_magic) == Some(0);
    outcome(
        golden_ok && round_trips == 10 && truncation_ok && magic_ok,
        format!(
            "golden hash+bytes {}, {round_trips}/10 bit-exact round trips, truncation offsets {}, bad magic {}",
            if golden_ok { "ok" } else { "MISMATCH" },
            if truncation_ok { "ok" } else { "WRONG" },
            if magic_ok { "rejected at 0" } else { "NOT rejected at 0" },
        ),
    )
}

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (
            "budget safety",
            Some(Duration::from_secs(30)),
            budget_safety,
        ),
        (
            "block equivalence",
            Some(Duration::from_secs(10)),
            block_equivalence,
        ),
        (
            "relaxed optimality",
            Some(Duration::from_secs(60)),
            relaxed_optimality,
        ),
        (
            "oracle sandwich",
            Some(Duration::from_secs(60)),
            oracle_sandwich,
        ),
        ("theory suite", Some(Duration::from_secs(60)), theory_suite),
        ("FLOP model", None, flop_model),
        ("baseline formulas", None, baseline_formulas),
        (
            "correlation analogue",
            Some(Duration::from_secs(30)),
            correlation_analogue,
        ),
        ("diversity", None, diversity),
        ("scaling shape", None, scaling_shape),
        ("KVTR format", None, format),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = limit.map_or(true, |l| elapsed <= l);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |l| format!(" / limit {}s", l.as_secs()));
        let late = if in_time { "" } else { " [over time limit]" };
        println!(
            "[{}] {name}: {} ({:.2}s{budget}){late}",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
