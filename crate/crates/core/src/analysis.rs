//! Oracles and measurements: exact subset optimization, diversity and
//! correlation reports, the KeyDiff FLOP model and scaling-fit helpers.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{full_causal_attention, AttentionModel};
use crate::error::{Error, Result};
use crate::numerics::{cosine, dot, log_det_gram, norm, pairwise_cos_sim, spearman_rho, Matrix};
use crate::policies::{anchor_vector, Anchor};
use crate::trace::TokenTrace;

/// Largest cache size accepted by [`brute_force_subset`].
pub const MAX_ENUMERATION: usize = 16;

/// An exact minimizer of the pairwise-similarity objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSolution {
    /// Ascending indices.
    pub indices: Vec<usize>,
    pub objective: f64,
}

/// Sum of pairwise cosine similarities over `subset`, diagonal included.
pub fn subset_objective(keys: &Matrix, subset: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in subset {
        for &j in subset {
            total += cosine(keys.row(i), keys.row(j));
        }
    }
    total
}

/// Exhaustive minimizer of [`subset_objective`] over all size-`size`
/// subsets. Equal objectives go to the lexicographically smallest index
/// tuple.
pub fn brute_force_subset(keys: &Matrix, size: usize) -> Result<SubsetSolution> {
    let n = keys.rows();
    if n > MAX_ENUMERATION {
        return Err(Error::Size {
            n,
            max: MAX_ENUMERATION,
        });
    }
    if size > n {
        return Err(Error::Config("subset size exceeds cache length"));
    }
    let mut best = SubsetSolution {
        indices: Vec::new(),
        objective: f64::INFINITY,
    };
    let mut current = Vec::with_capacity(size);
    enumerate(keys, size, 0, &mut current, &mut best);
    Ok(best)
}

// Leaves are scored with `subset_objective` itself so the optimum compares
// bit-for-bit against any other subset's objective.
fn enumerate(
    keys: &Matrix,
    size: usize,
    from: usize,
    current: &mut Vec<usize>,
    best: &mut SubsetSolution,
) {
    if current.len() == size {
        let objective = subset_objective(keys, current);
        // lexicographic order of enumeration makes strict `<` keep the
        // earliest tuple among ties
        if objective < best.objective {
            best.objective = objective;
            best.indices.clone_from(current);
        }
        return;
    }
    let remaining = size - current.len();
    for i in from..=(keys.rows() - remaining) {
        current.push(i);
        enumerate(keys, size, i + 1, current, best);
        current.pop();
    }
}

/// Relaxed objective: `sum_{i in S} khat_i . mean(khat)` over all keys.
pub fn relaxed_objective(keys: &Matrix, subset: &[usize]) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let mu = anchor_vector(keys, Anchor::MeanNormalized);
    subset
        .iter()
        .map(|&i| {
            let k = keys.row(i);
            dot(k, &mu) / norm(k).max(crate::numerics::COS_EPS)
        })
        .sum()
}

/// Per-operation costs used to weight the FLOP count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopWeights {
    pub mul: u64,
    pub add: u64,
    pub div: u64,
    pub sqrt: u64,
}

impl Default for FlopWeights {
    /// x86 instruction-table costs: add and sqrt 1, mul 3, div 47.
    fn default() -> Self {
        Self {
            mul: 3,
            add: 1,
            div: 47,
            sqrt: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopReport {
    pub n: u64,
    pub d: u64,
    pub mults: u64,
    pub adds: u64,
    pub divs: u64,
    pub sqrts: u64,
    pub weighted_total: u64,
}

/// Operation counts of anchor-based KeyDiff scoring over `n` keys of
/// dimension `d` (normalize keys, average into the anchor, cosine against
/// every key), excluding top-k.
pub fn flop_count_keydiff(n: u64, d: u64, w: FlopWeights) -> Result<FlopReport> {
    if n == 0 || d == 0 {
        return Err(Error::Config("n and d must be at least 1"));
    }
    // key norms: nd mul, n(d-1) add, n sqrt
    // normalize: nd mul, n div
    // average: (n-1)d add, 1 div
    // dot with anchor: nd mul, n(d-1) add
    // anchor norm: d mul, d-1 add, 1 sqrt
    // norm products, eps guard, divide: n mul, n add, n div
    let mults = 3 * n * d + d + n;
    let adds = n * (d - 1) + (n - 1) * d + n * (d - 1) + (d - 1) + n;
    let divs = n + 1 + n + 1;
    let sqrts = n + 1;
    Ok(FlopReport {
        n,
        d,
        mults,
        adds,
        divs,
        sqrts,
        weighted_total: w.mul * mults + w.add * adds + w.div * divs + w.sqrt * sqrts,
    })
}

/// Closed form of the default-weighted count: `(12d + 97)n + 3d + 94`.
pub fn flop_closed_form(n: u64, d: u64) -> u64 {
    (12 * d + 97) * n + 3 * d + 94
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (libm::log(x), libm::log(y)))
        .collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Mean off-diagonal cosine similarity among the rows of `keys`; `None`
/// for fewer than two rows.
pub fn mean_pairwise_cos(keys: &Matrix) -> Option<f64> {
    let n = keys.rows();
    if n < 2 {
        return None;
    }
    let c = pairwise_cos_sim(keys);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += c.get(i, j);
            }
        }
    }
    Some(s / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityReport {
    pub log_det_before: f64,
    pub log_det_after: f64,
    pub mean_cos_after: Option<f64>,
}

/// Log-det Gram volume of the keys before and after eviction, plus the
/// retained set's mean pairwise cosine.
pub fn diversity_report(before: &Matrix, after: &Matrix) -> Result<DiversityReport> {
    if before.rows() == 0 || after.rows() == 0 {
        return Err(Error::Empty);
    }
    Ok(DiversityReport {
        log_det_before: log_det_gram(before),
        log_det_after: log_det_gram(after),
        mean_cos_after: mean_pairwise_cos(after),
    })
}

/// Mean cosine of each key to every other key.
pub fn mean_cos_to_others(keys: &Matrix) -> Vec<f64> {
    let n = keys.rows();
    if n < 2 {
        return vec![0.0; n];
    }
    let c = pairwise_cos_sim(keys);
    (0..n)
        .map(|i| (c.row(i).iter().sum::<f64>() - c.get(i, i)) / (n - 1) as f64)
        .collect()
}

/// Mean attention each key receives from the queries allowed to see it,
/// averaged over the query heads of the group.
pub fn mean_received_attention(queries: &[&Matrix], keys: &Matrix, scale: f64) -> Result<Vec<f64>> {
    let t = keys.rows();
    let mut out = vec![0.0; t];
    for q in queries {
        let a = full_causal_attention(q, 0, keys, scale)?;
        for (j, o) in out.iter_mut().enumerate() {
            let col: f64 = (j..a.rows()).map(|i| a.get(i, j)).sum();
            *o += col / (a.rows() - j) as f64;
        }
    }
    let g = queries.len() as f64;
    out.iter_mut().for_each(|x| *x /= g);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationRow {
    pub layer: usize,
    pub head: usize,
    /// `None` when the correlation is undefined.
    pub rho: Option<f64>,
}

/// Spearman correlation between key dissimilarity and received attention
/// for one kv-head stream.
pub fn head_correlation(queries: &[&Matrix], keys: &Matrix, scale: f64) -> Result<Option<f64>> {
    if keys.rows() < 2 {
        return Ok(None);
    }
    let dissim: Vec<f64> = mean_cos_to_others(keys).iter().map(|c| -c).collect();
    let att = mean_received_attention(queries, keys, scale)?;
    match spearman_rho(&dissim, &att) {
        Ok(r) => Ok(Some(r)),
        Err(Error::UndefinedCorrelation) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-(layer, kv_head) correlation rows in layer-major order.
pub fn correlation_report(
    trace: &TokenTrace,
    model: &AttentionModel,
) -> Result<Vec<CorrelationRow>> {
    trace
        .kv_streams()
        .map(|(layer, head)| {
            let rho = head_correlation(
                &trace.group_queries(layer, head),
                trace.keys(layer, head),
                model.scale,
            )?;
            Ok(CorrelationRow { layer, head, rho })
        })
        .collect()
}

/// Fraction of shared tokens between two retained sets,
/// `|A & B| / max(|A|, |B|)`; two empty sets overlap fully.
pub fn overlap(a: &[u64], b: &[u64]) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 1.0;
    }
    let shared = a.iter().filter(|x| b.contains(x)).count();
    shared as f64 / denom as f64
}
