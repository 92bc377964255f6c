//! Eviction-policy catalog.
//!
//! Every policy maps a [`ScoringContext`] to a [`ScoreVector`] where a larger
//! score means "retain". Eviction then keeps the top `N` scores under the
//! shared tie rule of [`topk_indices`](crate::numerics::topk_indices), so all
//! policies run through one score-then-select pipeline. Unconditional
//! retention (sinks, recent windows) is expressed as a `+inf` score.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::kvcache::ScoreVector;
use crate::numerics::{cosine_with_norms, dot, norm, Matrix, COS_EPS};

pub const DEFAULT_WINDOW_FRACTION: f64 = 0.20;
pub const DEFAULT_SNAP_KERNEL: usize = 7;
pub const DEFAULT_SNAP_RECENT: usize = 32;
pub const DEFAULT_SINK_COUNT: usize = 4;

/// How the KeyDiff anchor vector is formed from the cached keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// Mean of unit-normalized keys.
    MeanNormalized,
    /// Mean of raw keys.
    #[default]
    MeanRaw,
    /// Coordinatewise median of raw keys.
    Median,
}

/// Similarity between the anchor and each key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Cosine,
    DotProduct,
    /// Euclidean distance; tokens far from the anchor are retained.
    Euclidean,
}

/// Policy names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    KeyDiffPairwise,
    KeyDiffEfficient,
    KeyDiffSlidingWindow,
    Tova,
    H2o,
    SnapKv,
    Sink,
    KeyL2Norm,
    NoEvict,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 10] = [
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

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::KeyDiffPairwise => "keydiff-pairwise",
            PolicyKind::KeyDiffEfficient => "keydiff",
            PolicyKind::KeyDiffSlidingWindow => "keydiff-sliding",
            PolicyKind::Tova => "tova",
            PolicyKind::H2o => "h2o",
            PolicyKind::SnapKv => "snapkv",
            PolicyKind::Sink => "sink",
            PolicyKind::KeyL2Norm => "key-l2norm",
            PolicyKind::NoEvict => "no-evict",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "keydiff-pairwise" => PolicyKind::KeyDiffPairwise,
            "keydiff" | "keydiff-efficient" => PolicyKind::KeyDiffEfficient,
            "keydiff-sliding" | "keydiff-sliding-window" => PolicyKind::KeyDiffSlidingWindow,
            "tova" => PolicyKind::Tova,
            "h2o" => PolicyKind::H2o,
            "snapkv" => PolicyKind::SnapKv,
            "sink" => PolicyKind::Sink,
            "key-l2norm" | "l2norm" => PolicyKind::KeyL2Norm,
            "no-evict" | "none" => PolicyKind::NoEvict,
            "random" => PolicyKind::Random,
            _ => return Err(Error::Config("unknown policy name")),
        })
    }
}

impl FromStr for Anchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-normalized" => Ok(Anchor::MeanNormalized),
            "mean-raw" | "mean" => Ok(Anchor::MeanRaw),
            "median" => Ok(Anchor::Median),
            _ => Err(Error::Config("unknown anchor")),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "dot" | "dot-product" => Ok(Metric::DotProduct),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::Config("unknown metric")),
        }
    }
}

/// Flat parameter bag from which any [`Policy`] can be built. Fields that do
/// not apply to the selected kind are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    pub anchor: Anchor,
    pub metric: Metric,
    pub window_fraction: f64,
    pub snap_kernel: usize,
    pub snap_recent: usize,
    pub sink_count: usize,
    pub seed: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            anchor: Anchor::default(),
            metric: Metric::default(),
            window_fraction: DEFAULT_WINDOW_FRACTION,
            snap_kernel: DEFAULT_SNAP_KERNEL,
            snap_recent: DEFAULT_SNAP_RECENT,
            sink_count: DEFAULT_SINK_COUNT,
            seed: 0,
        }
    }
}

/// A fully configured eviction policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    KeyDiffPairwise,
    KeyDiffEfficient {
        anchor: Anchor,
        metric: Metric,
    },
    KeyDiffSlidingWindow {
        anchor: Anchor,
        metric: Metric,
        window_fraction: f64,
    },
    Tova,
    H2o,
    SnapKv {
        kernel: usize,
        recent: usize,
    },
    Sink {
        sink_count: usize,
    },
    KeyL2Norm,
    NoEvict,
    Random {
        seed: u64,
    },
}

impl Policy {
    /// The efficient KeyDiff variant with its default anchor and metric.
    pub fn keydiff() -> Self {
        Policy::KeyDiffEfficient {
            anchor: Anchor::default(),
            metric: Metric::default(),
        }
    }

    pub fn build(kind: PolicyKind, p: &PolicyParams) -> Result<Self> {
        let policy = match kind {
            PolicyKind::KeyDiffPairwise => Policy::KeyDiffPairwise,
            PolicyKind::KeyDiffEfficient => Policy::KeyDiffEfficient {
                anchor: p.anchor,
                metric: p.metric,
            },
            PolicyKind::KeyDiffSlidingWindow => Policy::KeyDiffSlidingWindow {
                anchor: p.anchor,
                metric: p.metric,
                window_fraction: p.window_fraction,
            },
            PolicyKind::Tova => Policy::Tova,
            PolicyKind::H2o => Policy::H2o,
            PolicyKind::SnapKv => Policy::SnapKv {
                kernel: p.snap_kernel,
                recent: p.snap_recent,
            },
            PolicyKind::Sink => Policy::Sink {
                sink_count: p.sink_count,
            },
            PolicyKind::KeyL2Norm => Policy::KeyL2Norm,
            PolicyKind::NoEvict => Policy::NoEvict,
            PolicyKind::Random => Policy::Random { seed: p.seed },
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::KeyDiffPairwise => PolicyKind::KeyDiffPairwise,
            Policy::KeyDiffEfficient { .. } => PolicyKind::KeyDiffEfficient,
            Policy::KeyDiffSlidingWindow { .. } => PolicyKind::KeyDiffSlidingWindow,
            Policy::Tova => PolicyKind::Tova,
            Policy::H2o => PolicyKind::H2o,
            Policy::SnapKv { .. } => PolicyKind::SnapKv,
            Policy::Sink { .. } => PolicyKind::Sink,
            Policy::KeyL2Norm => PolicyKind::KeyL2Norm,
            Policy::NoEvict => PolicyKind::NoEvict,
            Policy::Random { .. } => PolicyKind::Random,
        }
    }

    /// Checks that do not depend on the budget.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::KeyDiffSlidingWindow {
                window_fraction, ..
            } if !(window_fraction > 0.0 && window_fraction < 1.0) => {
                Err(Error::Config("window fraction must lie in (0, 1)"))
            }
            Policy::SnapKv { kernel, .. } if kernel % 2 == 0 => {
                Err(Error::Config("smoothing kernel must be odd"))
            }
            _ => Ok(()),
        }
    }

    /// Checks that depend on the budget `N`.
    pub fn validate_budget(&self, budget: usize) -> Result<()> {
        self.validate()?;
        match *self {
            Policy::KeyDiffSlidingWindow {
                window_fraction, ..
            } => window_len(window_fraction, budget).map(|_| ()),
            Policy::Sink { sink_count } if budget <= sink_count => {
                Err(Error::Config("budget must exceed the sink count"))
            }
            _ => Ok(()),
        }
    }

    /// Whether scoring needs the block's attention rows.
    pub fn needs_attention(&self) -> bool {
        matches!(self, Policy::Tova | Policy::H2o | Policy::SnapKv { .. })
    }

    /// Whether the policy keeps a per-token accumulator in the cache.
    pub fn is_stateful(&self) -> bool {
        matches!(self, Policy::H2o)
    }
}

/// Inputs available to a policy when scoring the cache.
#[derive(Debug, Clone, Copy)]
pub struct ScoringContext<'a> {
    /// Keys of every resident token (cache plus current block), `n x d`.
    pub keys: &'a Matrix,
    /// Attention of the current block's queries over all `n` positions,
    /// already averaged over the query heads of the group.
    pub block_attention: Option<&'a Matrix>,
    pub time_ids: &'a [u64],
    /// Accumulated attention per resident token (H2O).
    pub accumulator: Option<&'a [f64]>,
}

impl<'a> ScoringContext<'a> {
    pub fn keys_only(keys: &'a Matrix, time_ids: &'a [u64]) -> Self {
        Self {
            keys,
            block_attention: None,
            time_ids,
            accumulator: None,
        }
    }

    fn len(&self) -> usize {
        self.keys.rows()
    }

    fn attention(&self) -> Result<&'a Matrix> {
        let a = self
            .block_attention
            .ok_or(Error::Context("policy requires block attention"))?;
        if a.cols() != self.len() {
            return Err(Error::Context("attention width differs from cache length"));
        }
        if a.rows() == 0 {
            return Err(Error::Context("attention has no rows"));
        }
        Ok(a)
    }
}

/// Score every resident token under `policy` with budget `budget`.
pub fn score(policy: &Policy, ctx: &ScoringContext<'_>, budget: usize) -> Result<ScoreVector> {
    if ctx.time_ids.len() != ctx.len() {
        return Err(Error::Context("time ids misaligned with keys"));
    }
    match *policy {
        Policy::KeyDiffPairwise => Ok(score_keydiff_pairwise(ctx)),
        Policy::KeyDiffEfficient { anchor, metric } => {
            Ok(score_keydiff_efficient(ctx, anchor, metric))
        }
        Policy::KeyDiffSlidingWindow {
            anchor,
            metric,
            window_fraction,
        } => {
            let base = score_keydiff_efficient(ctx, anchor, metric);
            score_keydiff_sliding(base, window_fraction, budget)
        }
        Policy::Tova => score_tova(ctx),
        Policy::H2o => score_h2o(ctx),
        Policy::SnapKv { kernel, recent } => score_snapkv(ctx, kernel, recent),
        Policy::Sink { sink_count } => score_sink(ctx, sink_count, budget),
        Policy::KeyL2Norm => Ok(score_key_l2norm(ctx)),
        Policy::NoEvict => Ok(ScoreVector::from_raw(vec![0.0; ctx.len()])),
        Policy::Random { seed } => Ok(score_random(ctx, seed)),
    }
}

/// Negative row sums of the pairwise cosine-similarity matrix, diagonal
/// included. Runs in `O(n^2 d)` time and `O(n d)` memory.
pub fn score_keydiff_pairwise(ctx: &ScoringContext<'_>) -> ScoreVector {
    let keys = ctx.keys;
    let n = keys.rows();
    let unit = normalized_rows(keys);
    let d = keys.cols();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        let (head, tail) = unit.split_at((i + 1) * d);
        let ui = &head[i * d..];
        let mut own = if ui.iter().any(|&x| x != 0.0) {
            1.0
        } else {
            0.0
        };
        for (uj, sj) in tail.chunks_exact(d).zip(&mut sums[i + 1..]) {
            let c = dot(ui, uj).clamp(-1.0, 1.0);
            own += c;
            *sj += c;
        }
        sums[i] += own;
    }
    ScoreVector::from_raw(sums.into_iter().map(|s| -s).collect())
}

fn normalized_rows(keys: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(keys.data().len());
    for r in keys.row_iter() {
        let inv = 1.0 / norm(r).max(COS_EPS);
        out.extend(r.iter().map(|x| x * inv));
    }
    out
}

/// The anchor vector of `keys`.
pub fn anchor_vector(keys: &Matrix, anchor: Anchor) -> Vec<f64> {
    let (n, d) = (keys.rows(), keys.cols());
    let mut a = vec![0.0; d];
    if n == 0 {
        return a;
    }
    match anchor {
        Anchor::MeanRaw => {
            for r in keys.row_iter() {
                for (acc, x) in a.iter_mut().zip(r) {
                    *acc += x;
                }
            }
            a.iter_mut().for_each(|x| *x /= n as f64);
        }
        Anchor::MeanNormalized => {
            for r in keys.row_iter() {
                let inv = 1.0 / norm(r).max(COS_EPS);
                for (acc, x) in a.iter_mut().zip(r) {
                    *acc += x * inv;
                }
            }
            a.iter_mut().for_each(|x| *x /= n as f64);
        }
        Anchor::Median => {
            let mut col = vec![0.0; n];
            for (j, out) in a.iter_mut().enumerate() {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = keys.get(i, j);
                }
                col.sort_by(f64::total_cmp);
                *out = if n % 2 == 1 {
                    col[n / 2]
                } else {
                    0.5 * (col[n / 2 - 1] + col[n / 2])
                };
            }
        }
    }
    a
}

/// Anchor-based KeyDiff: `-metric(anchor, k_i)`.
pub fn score_keydiff_efficient(
    ctx: &ScoringContext<'_>,
    anchor: Anchor,
    metric: Metric,
) -> ScoreVector {
    let a = anchor_vector(ctx.keys, anchor);
    let a_norm = norm(&a);
    let scores = ctx
        .keys
        .row_iter()
        .map(|k| match metric {
            Metric::Cosine => -cosine_with_norms(dot(&a, k), a_norm, norm(k)),
            Metric::DotProduct => -dot(&a, k),
            Metric::Euclidean => {
                let sq: f64 = a.iter().zip(k).map(|(x, y)| (x - y) * (x - y)).sum();
                libm::sqrt(sq)
            }
        })
        .collect();
    ScoreVector::from_raw(scores)
}

fn window_len(window_fraction: f64, budget: usize) -> Result<usize> {
    let w = libm::floor(window_fraction * budget as f64) as usize;
    if w < 1 {
        return Err(Error::Config("sliding window is empty for this budget"));
    }
    if w >= budget {
        return Err(Error::Config(
            "sliding window must be smaller than the budget",
        ));
    }
    Ok(w)
}

/// Marks the `floor(window_fraction * budget)` most recent tokens as
/// unconditionally retained; the rest keep their base scores.
pub fn score_keydiff_sliding(
    base: ScoreVector,
    window_fraction: f64,
    budget: usize,
) -> Result<ScoreVector> {
    let w = window_len(window_fraction, budget)?;
    let mut s = base.into_inner();
    let n = s.len();
    for x in &mut s[n.saturating_sub(w)..] {
        *x = f64::INFINITY;
    }
    Ok(ScoreVector::from_raw(s))
}

/// TOVA: the last attention row of the block.
pub fn score_tova(ctx: &ScoringContext<'_>) -> Result<ScoreVector> {
    let a = ctx.attention()?;
    Ok(ScoreVector::from_raw(a.row(a.rows() - 1).to_vec()))
}

fn column_sums(a: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0; a.cols()];
    for r in a.row_iter() {
        for (s, x) in sums.iter_mut().zip(r) {
            *s += x;
        }
    }
    sums
}

/// H2O: accumulated attention plus the block's column sums. The result is
/// also the new accumulator.
pub fn score_h2o(ctx: &ScoringContext<'_>) -> Result<ScoreVector> {
    let a = ctx.attention()?;
    let mut s = column_sums(a);
    if let Some(acc) = ctx.accumulator {
        if acc.len() != s.len() {
            return Err(Error::Context("accumulator misaligned with cache"));
        }
        for (x, prev) in s.iter_mut().zip(acc) {
            *x += prev;
        }
    }
    Ok(ScoreVector::from_raw(s))
}

/// Same-length moving average with windows truncated at the edges.
pub fn smooth_truncated(x: &[f64], kernel: usize) -> Vec<f64> {
    let half = kernel / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// SnapKV: smoothed column sums, with the `recent` newest tokens pinned.
pub fn score_snapkv(ctx: &ScoringContext<'_>, kernel: usize, recent: usize) -> Result<ScoreVector> {
    if kernel % 2 == 0 {
        return Err(Error::Config("smoothing kernel must be odd"));
    }
    let a = ctx.attention()?;
    let mut s = smooth_truncated(&column_sums(a), kernel);
    let n = s.len();
    for x in &mut s[n.saturating_sub(recent)..] {
        *x = f64::INFINITY;
    }
    Ok(ScoreVector::from_raw(s))
}

/// Attention sink plus recency: the oldest `sink_count` resident tokens are
/// pinned and everything else scores its position.
pub fn score_sink(
    ctx: &ScoringContext<'_>,
    sink_count: usize,
    budget: usize,
) -> Result<ScoreVector> {
    if budget <= sink_count {
        return Err(Error::Config("budget must exceed the sink count"));
    }
    let s = ctx
        .time_ids
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if i < sink_count {
                f64::INFINITY
            } else {
                t as f64
            }
        })
        .collect();
    Ok(ScoreVector::from_raw(s))
}

/// Retain keys with small L2 norm.
pub fn score_key_l2norm(ctx: &ScoringContext<'_>) -> ScoreVector {
    ScoreVector::from_raw(ctx.keys.row_iter().map(|k| -norm(k)).collect())
}

/// Seeded pseudo-random scores keyed by token position, so a token keeps the
/// same score across eviction rounds.
pub fn score_random(ctx: &ScoringContext<'_>, seed: u64) -> ScoreVector {
    let s = ctx
        .time_ids
        .iter()
        .map(|&t| (splitmix64(seed ^ splitmix64(t)) >> 11) as f64 / (1u64 << 53) as f64)
        .collect();
    ScoreVector::from_raw(s)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
