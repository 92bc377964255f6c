//! Numerical checks of the geometric bounds that tie attention weight to key
//! dissimilarity:
//!
//! * an attention-weight lower bound on `CosSim(k*, q)` for a key that
//!   receives weight `w` among keys of bounded norm (finite-`n` and
//!   asymptotic forms),
//! * the anchor bound `CosSim(kbar, k*) <= 1 + a*b - a^2/2 - b^2/2` with
//!   `a = CosSim(kbar, q) < 0` and `b = CosSim(k*, q) > 0`,
//! * the orthonormal-expansion identity `sum_i CosSim(x_i, y)^2 = 1`.
//!
//! The softmax scale is fixed at 1 and `|q| = 1`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{full_causal_attention, AttentionModel};
use crate::error::{Error, Result};
use crate::numerics::{cosine, dot, norm, spearman_rho, topk_indices, Matrix};
use crate::trace::TokenTrace;

/// Absolute slack allowed when comparing a bound against the observed value.
pub const BOUND_TOL: f64 = 1e-10;
/// Tolerance for the orthonormal-expansion identity.
pub const ORTHSUM_TOL: f64 = 1e-9;
/// Tolerance of the orthonormality check on a basis.
pub const BASIS_TOL: f64 = 1e-10;

/// A query, a set of competing keys and a distinguished key `k*`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInstance {
    pub q: Vec<f64>,
    pub keys: Matrix,
    pub k_star: Vec<f64>,
    pub m_bound: f64,
    /// Softmax weight of `k*` against `{k*} + keys` at scale 1.
    pub w: f64,
    /// `CosSim(kbar, q)` with `kbar` the mean of `keys`.
    pub alpha_q: f64,
    /// `CosSim(k*, q)`.
    pub beta_q: f64,
}

impl BoundInstance {
    pub fn new(q: Vec<f64>, keys: Matrix, k_star: Vec<f64>, m_bound: f64) -> Result<Self> {
        let d = q.len();
        if keys.cols() != d || k_star.len() != d {
            return Err(Error::Dim {
                expected: d,
                found: if keys.cols() != d {
                    keys.cols()
                } else {
                    k_star.len()
                },
            });
        }
        if keys.rows() == 0 {
            return Err(Error::Empty);
        }
        if libm::fabs(norm(&q) - 1.0) > 1e-12 {
            return Err(Error::Domain("query must have unit norm"));
        }
        if keys
            .row_iter()
            .chain([k_star.as_slice()])
            .any(|k| dot(k, k) >= m_bound)
        {
            return Err(Error::Domain("every squared key norm must be below M"));
        }
        let s_star = dot(&k_star, &q);
        let logits: Vec<f64> = keys.row_iter().map(|k| dot(k, &q)).collect();
        let max = logits.iter().copied().fold(s_star, f64::max);
        let num = libm::exp(s_star - max);
        let den = num + logits.iter().map(|s| libm::exp(s - max)).sum::<f64>();
        let k_bar = mean_row(&keys);
        Ok(Self {
            alpha_q: cosine(&k_bar, &q),
            beta_q: cosine(&k_star, &q),
            w: num / den,
            q,
            keys,
            k_star,
            m_bound,
        })
    }

    pub fn n(&self) -> usize {
        self.keys.rows()
    }

    pub fn k_bar(&self) -> Vec<f64> {
        mean_row(&self.keys)
    }
}

fn mean_row(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in m.row_iter() {
        out.iter_mut().zip(r).for_each(|(o, x)| *o += x);
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Check {
    /// `(ln(n/(n+1)) - ln(1-w)) / 2M - 1`
    pub finite_bound: f64,
    /// `-ln(1-w) / 2M - 1`
    pub asymptotic_bound: f64,
    /// Observed `CosSim(k*, q)`.
    pub cos_star_q: f64,
    pub holds: bool,
}

/// Lower bound on `CosSim(k*, q)` implied by the attention weight `w`.
pub fn check_lemma1(inst: &BoundInstance) -> Result<Lemma1Check> {
    lemma1_with(inst, inst.beta_q)
}

fn lemma1_with(inst: &BoundInstance, observed: f64) -> Result<Lemma1Check> {
    let w = inst.w;
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::Domain("attention weight must lie in (0, 1)"));
    }
    let n = inst.n() as f64;
    let two_m = 2.0 * inst.m_bound;
    let log1mw = libm::log1p(-w);
    let finite_bound = (libm::log(n / (n + 1.0)) - log1mw) / two_m - 1.0;
    let asymptotic_bound = -log1mw / two_m - 1.0;
    Ok(Lemma1Check {
        finite_bound,
        asymptotic_bound,
        cos_star_q: observed,
        holds: finite_bound <= observed + BOUND_TOL,
    })
}

/// `1 + a*b - a^2/2 - b^2/2`.
pub fn theorem2_rhs(alpha_q: f64, beta_q: f64) -> f64 {
    1.0 + alpha_q * beta_q - 0.5 * alpha_q * alpha_q - 0.5 * beta_q * beta_q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Check {
    /// Observed `CosSim(kbar, k*)`.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Upper bound on `CosSim(kbar, k*)`. Returns `None` (a skipped instance)
/// unless `alpha_q < 0 < beta_q`.
pub fn check_theorem2(inst: &BoundInstance) -> Option<Theorem2Check> {
    let lhs = cosine(&inst.k_bar(), &inst.k_star);
    theorem2_with(inst.alpha_q, inst.beta_q, lhs)
}

fn theorem2_with(alpha_q: f64, beta_q: f64, lhs: f64) -> Option<Theorem2Check> {
    if !(alpha_q < 0.0 && beta_q > 0.0) {
        return None;
    }
    let rhs = theorem2_rhs(alpha_q, beta_q);
    Some(Theorem2Check {
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthsumCheck {
    pub sum_sq: f64,
    pub holds: bool,
}

/// Largest entry of `|B B^T - I|` for a square basis `B` (rows are vectors).
pub fn orthonormality_deviation(basis: &Matrix) -> f64 {
    let n = basis.rows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max(libm::fabs(dot(basis.row(i), basis.row(j)) - target));
        }
    }
    dev
}

/// Sum of squared cosines between `y` and each basis vector.
pub fn check_orthsum(basis: &Matrix, y: &[f64]) -> Result<OrthsumCheck> {
    if basis.rows() != basis.cols() {
        return Err(Error::Dim {
            expected: basis.cols(),
            found: basis.rows(),
        });
    }
    if y.len() != basis.cols() {
        return Err(Error::Dim {
            expected: basis.cols(),
            found: y.len(),
        });
    }
    let deviation = orthonormality_deviation(basis);
    if deviation > BASIS_TOL {
        return Err(Error::Basis { deviation });
    }
    if norm(y) == 0.0 {
        return Err(Error::Domain("y must be nonzero"));
    }
    let sum_sq: f64 = basis
        .row_iter()
        .map(|x| {
            let c = cosine(x, y);
            c * c
        })
        .sum();
    Ok(OrthsumCheck {
        sum_sq,
        holds: libm::fabs(sum_sq - 1.0) <= ORTHSUM_TOL,
    })
}

// ---- randomized suites --------------------------------------------------

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, d);
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random orthonormal basis of `R^d` from modified Gram-Schmidt (applied
/// twice) on a Gaussian matrix.
pub fn random_orthonormal_basis(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    loop {
        let mut rows: Vec<Vec<f64>> = (0..d).map(|_| gaussian(rng, d)).collect();
        let mut ok = true;
        for i in 0..d {
            for _pass in 0..2 {
                for j in 0..i {
                    let p = dot(&rows[i], &rows[j]);
                    let (head, tail) = rows.split_at_mut(i);
                    tail[0]
                        .iter_mut()
                        .zip(&head[j])
                        .for_each(|(x, y)| *x -= p * y);
                }
            }
            let n = norm(&rows[i]);
            if n < 1e-8 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|x| *x /= n);
        }
        if ok {
            return Matrix::from_rows(d, &rows).expect("finite basis");
        }
    }
}

/// Sampling ranges of the randomized bound suites.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRanges {
    pub n_min: usize,
    pub n_max: usize,
    pub m_min: f64,
    pub m_max: f64,
    pub dims: Vec<usize>,
}

impl Default for InstanceRanges {
    fn default() -> Self {
        Self {
            n_min: 4,
            n_max: 256,
            m_min: 1.0,
            m_max: 16.0,
            dims: vec![2, 8, 64],
        }
    }
}

/// Random key whose squared norm is uniform in `[0, M)` and whose direction
/// is `unit(bias * q + g)` with Gaussian `g / sqrt(d)`.
fn random_key(rng: &mut ChaCha8Rng, q: &[f64], bias: f64, m: f64) -> Vec<f64> {
    let d = q.len();
    let g = gaussian(rng, d);
    let s = 1.0 / libm::sqrt(d as f64);
    let raw: Vec<f64> = q.iter().zip(&g).map(|(a, b)| bias * a + s * b).collect();
    let n = norm(&raw).max(1e-300);
    let r = libm::sqrt(m * rng.random::<f64>());
    raw.into_iter().map(|x| x * r / n).collect()
}

/// Draw one instance. Competing keys have no directional preference;
/// `k*` is biased toward `q` by a random amount so both small and large
/// attention weights occur. Returns `None` when `|kbar| < 1e-8`.
pub fn random_instance(rng: &mut ChaCha8Rng, ranges: &InstanceRanges) -> Option<BoundInstance> {
    let d = ranges.dims[rng.random_range(0..ranges.dims.len())];
    let n = rng.random_range(ranges.n_min..=ranges.n_max);
    let m = rng.random_range(ranges.m_min..=ranges.m_max);
    let q = random_unit(rng, d);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_key(rng, &q, 0.0, m)).collect();
    let bias = rng.random_range(-1.0..4.0);
    let k_star = random_key(rng, &q, bias, m);
    let keys = Matrix::from_rows(d, &rows).ok()?;
    if norm(&mean_row(&keys)) < 1e-8 {
        return None;
    }
    BoundInstance::new(q, keys, k_star, m).ok()
}

/// Draw an instance satisfying the anchor-bound hypotheses more often:
/// competing keys lean away from `q`, `k*` leans toward it.
pub fn random_anchor_instance(
    rng: &mut ChaCha8Rng,
    ranges: &InstanceRanges,
) -> Option<BoundInstance> {
    let d = ranges.dims[rng.random_range(0..ranges.dims.len())];
    let n = rng.random_range(ranges.n_min..=ranges.n_max);
    let m = rng.random_range(ranges.m_min..=ranges.m_max);
    let q = random_unit(rng, d);
    let key_bias = rng.random_range(-2.0..0.5);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_key(rng, &q, key_bias, m)).collect();
    let star_bias = rng.random_range(-0.5..2.0);
    let k_star = random_key(rng, &q, star_bias, m);
    let keys = Matrix::from_rows(d, &rows).ok()?;
    if norm(&mean_row(&keys)) < 1e-8 {
        return None;
    }
    BoundInstance::new(q, keys, k_star, m).ok()
}

/// Outcome of one randomized suite.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSummary {
    pub check: &'static str,
    /// Instances actually checked.
    pub instances: usize,
    pub violations: usize,
    /// Instances drawn but not checked (hypotheses unmet).
    pub skipped: usize,
    /// Draws rejected by the generator (degenerate mean key).
    pub rejected: usize,
    /// Largest `bound - observed` (or `|sum - 1|` for the identity);
    /// positive beyond the tolerance means a violation. `None` when no
    /// instance was checked.
    pub max_slack: Option<f64>,
}

impl VerificationSummary {
    fn new(check: &'static str) -> Self {
        Self {
            check,
            instances: 0,
            violations: 0,
            skipped: 0,
            rejected: 0,
            max_slack: None,
        }
    }

    fn record(&mut self, slack: f64, holds: bool) {
        self.instances += 1;
        if !holds {
            self.violations += 1;
        }
        self.max_slack = Some(self.max_slack.map_or(slack, |m| m.max(slack)));
    }
}

/// Negative control: flips the sign of every observed quantity before it is
/// compared with its bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FaultInjection {
    pub sign_flip: bool,
}

/// Check the attention-weight bound on `count` random instances.
pub fn verify_lemma1(
    count: usize,
    seed: u64,
    ranges: &InstanceRanges,
    fault: FaultInjection,
) -> VerificationSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = VerificationSummary::new("lemma1");
    while s.instances < count {
        let Some(inst) = random_instance(&mut rng, ranges) else {
            s.rejected += 1;
            continue;
        };
        let observed = if fault.sign_flip {
            -inst.beta_q
        } else {
            inst.beta_q
        };
        match lemma1_with(&inst, observed) {
            Ok(c) => s.record(c.finite_bound - c.cos_star_q, c.holds),
            Err(_) => s.skipped += 1,
        }
    }
    s
}

/// Check the anchor bound until `count` hypothesis-satisfying instances
/// have been seen.
pub fn verify_theorem2(
    count: usize,
    seed: u64,
    ranges: &InstanceRanges,
    fault: FaultInjection,
) -> VerificationSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = VerificationSummary::new("theorem2");
    while s.instances < count {
        let Some(inst) = random_anchor_instance(&mut rng, ranges) else {
            s.rejected += 1;
            continue;
        };
        let lhs = cosine(&inst.k_bar(), &inst.k_star);
        let lhs = if fault.sign_flip { -lhs } else { lhs };
        match theorem2_with(inst.alpha_q, inst.beta_q, lhs) {
            Some(c) => s.record(c.lhs - c.rhs, c.holds),
            None => s.skipped += 1,
        }
    }
    s
}

/// Check the orthonormal-expansion identity on random bases and vectors.
pub fn verify_orthsum(
    count: usize,
    seed: u64,
    dims: &[usize],
    fault: FaultInjection,
) -> VerificationSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = VerificationSummary::new("orthsum");
    while s.instances < count {
        let d = dims[rng.random_range(0..dims.len())];
        let basis = random_orthonormal_basis(&mut rng, d);
        let y = gaussian(&mut rng, d);
        match check_orthsum(&basis, &y) {
            Ok(c) => {
                let sum = if fault.sign_flip { -c.sum_sq } else { c.sum_sq };
                let slack = libm::fabs(sum - 1.0);
                s.record(slack, slack <= ORTHSUM_TOL);
            }
            Err(_) => s.rejected += 1,
        }
    }
    s
}

/// Per-key scatter row linking attention weight and key geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub layer: usize,
    pub q_head: usize,
    pub position: usize,
    /// Attention weight from the head's last query.
    pub w: f64,
    /// `CosSim(k, q)` for the last query.
    pub beta_q: f64,
    /// `-CosSim(kbar, k)`.
    pub keydiff_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundHeadSummary {
    pub layer: usize,
    pub q_head: usize,
    /// Spearman correlation between `w` and the KeyDiff score; `None` when
    /// undefined.
    pub rho: Option<f64>,
    /// Whether the key with the largest `w` is also the key least similar
    /// to the mean key.
    pub argmax_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundPipelineReport {
    pub points: Vec<BoundPoint>,
    pub heads: Vec<BoundHeadSummary>,
}

/// Relate each key's attention weight (from the last query of every query
/// head) to its similarity with the mean key.
pub fn bound_pipeline(trace: &TokenTrace, model: &AttentionModel) -> Result<BoundPipelineReport> {
    let mut report = BoundPipelineReport::default();
    let g = trace.group_size();
    for (layer, kv) in trace.kv_streams() {
        let keys = trace.keys(layer, kv);
        let t = keys.rows();
        let k_bar = mean_row(keys);
        let score: Vec<f64> = keys.row_iter().map(|k| -cosine(&k_bar, k)).collect();
        for (offset, q) in trace.group_queries(layer, kv).into_iter().enumerate() {
            let q_head = kv * g + offset;
            let last = q.slice_rows(t - 1, t);
            let a = full_causal_attention(&last, (t - 1) as u64, keys, model.scale)?;
            let w = a.row(0).to_vec();
            for pos in 0..t {
                report.points.push(BoundPoint {
                    layer,
                    q_head,
                    position: pos,
                    w: w[pos],
                    beta_q: cosine(keys.row(pos), last.row(0)),
                    keydiff_score: score[pos],
                });
            }
            let rho = spearman_rho(&w, &score).ok();
            let argmax_w = topk_indices(&w, 1);
            let argmax_score = topk_indices(&score, 1);
            report.heads.push(BoundHeadSummary {
                layer,
                q_head,
                rho,
                argmax_matches: rho.is_some() && argmax_w == argmax_score,
            });
        }
    }
    Ok(report)
}
