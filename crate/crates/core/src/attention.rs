//! Causal attention over a KV cache and the block prompt-processing driver.
//!
//! Each block step runs in the order compute, attend, score, evict: the
//! block's keys and values are attended together with the cache, appended,
//! and the union is then scored and cut back to the budget.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kvcache::KvCache;
use crate::numerics::{dot, norm, softmax_masked, Mask, Matrix};
use crate::policies::Policy;
use crate::trace::{TokenTrace, TraceDims, TraceMeta, TraceSource};

/// Head geometry and the logit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionModel {
    pub num_q_heads: usize,
    pub num_kv_heads: usize,
    pub head_dim: usize,
    pub scale: f64,
}

impl AttentionModel {
    pub fn new(num_q_heads: usize, num_kv_heads: usize, head_dim: usize) -> Result<Self> {
        if num_kv_heads == 0 || head_dim == 0 || num_q_heads % num_kv_heads != 0 || num_q_heads == 0
        {
            return Err(Error::Config(
                "query heads must be a positive multiple of kv heads",
            ));
        }
        Ok(Self {
            num_q_heads,
            num_kv_heads,
            head_dim,
            scale: 1.0 / libm::sqrt(head_dim as f64),
        })
    }

    pub fn for_trace(trace: &TokenTrace) -> Result<Self> {
        let d = trace.dims();
        Self::new(d.q_heads, d.kv_heads, d.head_dim)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn group_size(&self) -> usize {
        self.num_q_heads / self.num_kv_heads
    }
}

/// Attention of one block against the cache plus the block itself.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAttention {
    /// One `B x d` output per query head of the group.
    pub outputs: Vec<Matrix>,
    /// `B x (n_cache + B)` weights averaged over the group's query heads.
    pub aggregated_attention: Matrix,
}

/// A processed block: attention outputs plus the cache contents after
/// eviction.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockResult {
    pub outputs: Vec<Matrix>,
    pub aggregated_attention: Matrix,
    pub retained_time_ids: Vec<u64>,
}

/// Attend the block's queries (one matrix per query head in the group) to
/// `[cache keys ; block keys]` under the causal mask. The cache is not
/// modified.
pub fn attend_block(
    cache: &KvCache,
    q_block: &[&Matrix],
    k_block: &Matrix,
    v_block: &Matrix,
    start_pos: u64,
    model: &AttentionModel,
) -> Result<BlockAttention> {
    let b = k_block.rows();
    if b == 0 {
        return Err(Error::Empty);
    }
    if q_block.len() != model.group_size() {
        return Err(Error::Dim {
            expected: model.group_size(),
            found: q_block.len(),
        });
    }
    let d = model.head_dim;
    for m in q_block.iter().copied().chain([k_block, v_block]) {
        if m.cols() != d {
            return Err(Error::Dim {
                expected: d,
                found: m.cols(),
            });
        }
        if m.rows() != b {
            return Err(Error::Dim {
                expected: b,
                found: m.rows(),
            });
        }
    }
    if cache.dim() != d {
        return Err(Error::Dim {
            expected: d,
            found: cache.dim(),
        });
    }
    let keys = cache.keys().vstack(k_block)?;
    let values = cache.values().vstack(v_block)?;
    let n = keys.rows();
    let mut key_pos = cache.time_ids().to_vec();
    key_pos.extend(start_pos..start_pos + b as u64);
    let query_pos: Vec<u64> = (start_pos..start_pos + b as u64).collect();
    let mask = Mask::causal(&query_pos, &key_pos);

    let mut aggregated = vec![0.0; b * n];
    let mut outputs = Vec::with_capacity(q_block.len());
    for q in q_block {
        let mut logits = Vec::with_capacity(b * n);
        for qi in q.row_iter() {
            logits.extend(keys.row_iter().map(|k| dot(qi, k) * model.scale));
        }
        let weights = softmax_masked(&Matrix::new(b, n, logits)?, &mask)?;
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let dst = &mut out[i * d..(i + 1) * d];
            for (j, &w) in weights.row(i).iter().enumerate() {
                if w != 0.0 {
                    for (o, v) in dst.iter_mut().zip(values.row(j)) {
                        *o += w * v;
                    }
                }
            }
        }
        for (acc, w) in aggregated.iter_mut().zip(weights.data()) {
            *acc += w;
        }
        outputs.push(Matrix::new(b, d, out)?);
    }
    let g = q_block.len() as f64;
    aggregated.iter_mut().for_each(|x| *x /= g);
    Ok(BlockAttention {
        outputs,
        aggregated_attention: Matrix::new(b, n, aggregated)?,
    })
}

/// One full block step: attend, append, then evict down to the budget.
pub fn process_block(
    cache: &mut KvCache,
    policy: &Policy,
    q_block: &[&Matrix],
    k_block: &Matrix,
    v_block: &Matrix,
    start_pos: u64,
    model: &AttentionModel,
) -> Result<BlockResult> {
    let att = attend_block(cache, q_block, k_block, v_block, start_pos, model)?;
    cache.append(k_block, v_block, start_pos)?;
    cache.evict(policy, Some(&att.aggregated_attention))?;
    Ok(BlockResult {
        outputs: att.outputs,
        aggregated_attention: att.aggregated_attention,
        retained_time_ids: cache.time_ids().to_vec(),
    })
}

/// Summary of one block step.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub index: usize,
    pub start_pos: u64,
    pub len: usize,
    /// Cache length after appending the block, before eviction.
    pub pre_evict_len: usize,
    pub retained_time_ids: Vec<u64>,
}

/// Result of streaming one `(layer, kv_head)` through the block driver.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadReport {
    pub layer: usize,
    pub kv_head: usize,
    pub blocks: Vec<BlockRecord>,
    /// Full-length `T x d` attention outputs, one per query head in the group.
    pub outputs: Vec<Matrix>,
    pub final_cache: KvCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub budget: usize,
    pub block_size: usize,
    pub heads: Vec<HeadReport>,
}

impl SimulationReport {
    pub fn max_retained(&self) -> usize {
        self.heads
            .iter()
            .flat_map(|h| h.blocks.iter().map(|b| b.retained_time_ids.len()))
            .max()
            .unwrap_or(0)
    }
}

fn check_model(trace: &TokenTrace, model: &AttentionModel) -> Result<()> {
    let d = trace.dims();
    if d.head_dim != model.head_dim {
        return Err(Error::Dim {
            expected: model.head_dim,
            found: d.head_dim,
        });
    }
    if d.q_heads != model.num_q_heads || d.kv_heads != model.num_kv_heads {
        return Err(Error::Dim {
            expected: model.num_q_heads,
            found: d.q_heads,
        });
    }
    Ok(())
}

/// Stream a single `(layer, kv_head)` through blocks of `block_size` tokens
/// under `budget`. `on_block` sees every block record together with the
/// post-eviction cache.
#[allow(clippy::too_many_arguments)]
pub fn run_head_stream<F>(
    trace: &TokenTrace,
    layer: usize,
    kv_head: usize,
    model: &AttentionModel,
    policy: &Policy,
    budget: usize,
    block_size: usize,
    mut on_block: F,
) -> Result<HeadReport>
where
    F: FnMut(&BlockRecord, &KvCache),
{
    if budget == 0 || block_size == 0 {
        return Err(Error::Config("budget and block size must be at least 1"));
    }
    check_model(trace, model)?;
    policy.validate()?;
    let t = trace.seq_len();
    let d = model.head_dim;
    let keys = trace.keys(layer, kv_head);
    let values = trace.values(layer, kv_head);
    let queries = trace.group_queries(layer, kv_head);
    let mut cache = KvCache::for_policy(d, budget, policy);
    let mut outputs: Vec<Vec<f64>> = vec![Vec::with_capacity(t * d); queries.len()];
    let mut blocks = Vec::with_capacity(t.div_ceil(block_size));

    for (index, start) in (0..t).step_by(block_size).enumerate() {
        let end = (start + block_size).min(t);
        let q_block: Vec<Matrix> = queries.iter().map(|q| q.slice_rows(start, end)).collect();
        let q_refs: Vec<&Matrix> = q_block.iter().collect();
        let k_block = keys.slice_rows(start, end);
        let v_block = values.slice_rows(start, end);
        let att = attend_block(&cache, &q_refs, &k_block, &v_block, start as u64, model)?;
        cache.append(&k_block, &v_block, start as u64)?;
        let pre_evict_len = cache.len();
        cache.evict(policy, Some(&att.aggregated_attention))?;
        for (dst, out) in outputs.iter_mut().zip(&att.outputs) {
            dst.extend_from_slice(out.data());
        }
        let record = BlockRecord {
            index,
            start_pos: start as u64,
            len: end - start,
            pre_evict_len,
            retained_time_ids: cache.time_ids().to_vec(),
        };
        on_block(&record, &cache);
        blocks.push(record);
    }
    let outputs = outputs
        .into_iter()
        .map(|o| Matrix::new(t, d, o))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeadReport {
        layer,
        kv_head,
        blocks,
        outputs,
        final_cache: cache,
    })
}

/// Run block prompt processing over every `(layer, kv_head)` stream in turn.
pub fn run_block_prompt(
    trace: &TokenTrace,
    model: &AttentionModel,
    policy: &Policy,
    budget: usize,
    block_size: usize,
) -> Result<SimulationReport> {
    check_model(trace, model)?;
    let heads = trace
        .kv_streams()
        .map(|(l, h)| run_head_stream(trace, l, h, model, policy, budget, block_size, |_, _| {}))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        budget,
        block_size,
        heads,
    })
}

/// Causal attention weights of queries at positions `query_start..` against
/// keys at positions `0..`, without any cache.
pub fn full_causal_attention(
    queries: &Matrix,
    query_start: u64,
    keys: &Matrix,
    scale: f64,
) -> Result<Matrix> {
    let t = queries.rows();
    let n = keys.rows();
    let mut logits = Vec::with_capacity(t * n);
    for q in queries.row_iter() {
        logits.extend(keys.row_iter().map(|k| dot(q, k) * scale));
    }
    let pos_q: Vec<u64> = (query_start..query_start + t as u64).collect();
    let pos_k: Vec<u64> = (0..n as u64).collect();
    softmax_masked(&Matrix::new(t, n, logits)?, &Mask::causal(&pos_q, &pos_k))
}

/// Where planted outlier keys go in a synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutlierPlacement {
    /// The first positions of the sequence, like attention-sink tokens.
    #[default]
    Leading,
    /// Uniformly drawn distinct positions.
    Random,
}

/// Parameters of the synthetic trace generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub layers: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    pub seq_len: usize,
    pub head_dim: usize,
    /// Concentration of keys around their mean direction; the angular
    /// spread is roughly `1/sqrt(kappa)`.
    pub kappa: f64,
    /// Concentration of queries around the query mean direction.
    pub query_kappa: f64,
    pub outliers: usize,
    pub placement: OutlierPlacement,
    /// Cosine between the key mean and the query mean directions.
    pub key_query_cos: f64,
    /// Typical attention logit magnitude `|q||k| * scale`.
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            layers: 1,
            q_heads: 1,
            kv_heads: 1,
            seq_len: 64,
            head_dim: 16,
            kappa: 9.0,
            query_kappa: 100.0,
            outliers: 2,
            placement: OutlierPlacement::Leading,
            key_query_cos: -1.0,
            logit_scale: 4.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn dims(&self) -> TraceDims {
        TraceDims {
            layers: self.layers,
            q_heads: self.q_heads,
            kv_heads: self.kv_heads,
            head_dim: self.head_dim,
            seq_len: self.seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.kappa) || !positive(self.query_kappa) {
            return Err(Error::Config("concentration must be positive"));
        }
        if self.head_dim < 2 {
            return Err(Error::Config("synthetic traces need head_dim >= 2"));
        }
        if self.outliers > self.seq_len {
            return Err(Error::Config("more outliers than tokens"));
        }
        if !(-1.0..=1.0).contains(&self.key_query_cos) {
            return Err(Error::Config("key/query cosine must lie in [-1, 1]"));
        }
        if !positive(self.logit_scale) {
            return Err(Error::Config("logit scale must be positive"));
        }
        Ok(())
    }

    /// Positions of planted outliers for the stream seeded by `rng`.
    fn outlier_positions(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.placement {
            OutlierPlacement::Leading => (0..self.outliers).collect(),
            OutlierPlacement::Random => {
                let mut pos: Vec<usize> = (0..self.seq_len).collect();
                for i in 0..self.outliers {
                    let j = rng.random_range(i..self.seq_len);
                    pos.swap(i, j);
                }
                pos.truncate(self.outliers);
                pos.sort_unstable();
                pos
            }
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// A unit vector orthogonal to `u` (Gram-Schmidt on a random draw).
fn orthogonal_unit(rng: &mut ChaCha8Rng, u: &[f64]) -> Vec<f64> {
    loop {
        let mut w = gaussian_vec(rng, u.len());
        let p = dot(&w, u);
        w.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        if norm(&w) > 1e-6 {
            return unit(w);
        }
    }
}

fn combine(a: f64, u: &[f64], b: f64, w: &[f64]) -> Vec<f64> {
    u.iter().zip(w).map(|(x, y)| a * x + b * y).collect()
}

fn stream_rng(seed: u64, layer: usize, head: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((layer as u64) << 32) | head as u64);
    rng
}

/// Deterministic synthetic trace.
///
/// Bulk keys scatter isotropically around a mean direction `u`; queries
/// scatter around a direction `v` with `cos(u, v) = key_query_cos`
/// (anti-aligned by default). Planted outlier keys scatter around `v` with the
/// bulk's spread. Norms are fixed so that `|q||k| * scale = logit_scale`.
///
/// With `v = -u` every departure of a key from `u` raises its logit, so key
/// dissimilarity and received attention rise together.
pub fn synth_trace(spec: &SynthSpec) -> Result<TokenTrace> {
    synth_trace_planted(spec).map(|(t, _)| t)
}

/// [`synth_trace`] plus the planted outlier positions of every
/// `(layer, kv_head)` stream, in layer-major order.
pub fn synth_trace_planted(spec: &SynthSpec) -> Result<(TokenTrace, Vec<Vec<usize>>)> {
    spec.validate()?;
    let (t, d) = (spec.seq_len, spec.head_dim);
    let spread = 1.0 / libm::sqrt(spec.kappa);
    let q_spread = 1.0 / libm::sqrt(spec.query_kappa);
    let model = AttentionModel::new(spec.q_heads, spec.kv_heads, d)?;
    let vec_norm = libm::sqrt(spec.logit_scale / model.scale);
    let g = model.group_size();
    let sin_uv = libm::sqrt(1.0 - spec.key_query_cos * spec.key_query_cos);

    let mut keys = Vec::with_capacity(spec.layers * spec.kv_heads);
    let mut values = Vec::with_capacity(spec.layers * spec.kv_heads);
    let mut queries = Vec::with_capacity(spec.layers * spec.q_heads);
    let mut planted = Vec::with_capacity(spec.layers * spec.kv_heads);
    for layer in 0..spec.layers {
        for head in 0..spec.kv_heads {
            let mut rng = stream_rng(spec.seed, layer, head);
            let u = unit(gaussian_vec(&mut rng, d));
            let w = orthogonal_unit(&mut rng, &u);
            let v = combine(spec.key_query_cos, &u, sin_uv, &w);
            let outliers = spec.outlier_positions(&mut rng);

            let mut k = Vec::with_capacity(t * d);
            for pos in 0..t {
                let dir = if outliers.binary_search(&pos).is_ok() {
                    let noise = gaussian_vec(&mut rng, d);
                    unit(combine(1.0, &v, spread / libm::sqrt(d as f64), &noise))
                } else {
                    let noise = gaussian_vec(&mut rng, d);
                    unit(combine(1.0, &u, spread / libm::sqrt(d as f64), &noise))
                };
                k.extend(dir.iter().map(|x| x * vec_norm));
            }
            keys.push(Matrix::new(t, d, k)?);
            values.push(Matrix::new(t, d, gaussian_vec(&mut rng, t * d))?);

            for _ in 0..g {
                let mut q = Vec::with_capacity(t * d);
                for _ in 0..t {
                    let noise = gaussian_vec(&mut rng, d);
                    let dir = unit(combine(1.0, &v, q_spread / libm::sqrt(d as f64), &noise));
                    q.extend(dir.iter().map(|x| x * vec_norm));
                }
                // kv-head-major generation is q-head order under contiguous
                // grouping
                queries.push(Matrix::new(t, d, q)?);
            }
            planted.push(outliers);
        }
    }
    let trace = TokenTrace::new(
        spec.dims(),
        keys,
        values,
        queries,
        TraceMeta {
            source: TraceSource::Synthetic,
            seed: Some(spec.seed),
            model_name: None,
        },
    )?;
    Ok((trace, planted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine;

    fn one_head(spec: SynthSpec) -> TokenTrace {
        synth_trace(&spec).unwrap()
    }

    #[test]
    fn single_token_empty_cache_returns_value() {
        let model = AttentionModel::new(1, 1, 3).unwrap();
        let cache = KvCache::new(3, 4);
        let q = Matrix::from_rows(3, &[[0.3, -1.0, 2.0]]).unwrap();
        let k = Matrix::from_rows(3, &[[1.0, 1.0, 1.0]]).unwrap();
        let v = Matrix::from_rows(3, &[[5.0, 6.0, 7.0]]).unwrap();
        let att = attend_block(&cache, &[&q], &k, &v, 0, &model).unwrap();
        assert_eq!(att.outputs[0].data(), &[5.0, 6.0, 7.0]);
        assert_eq!(att.aggregated_attention.data(), &[1.0]);
    }

    #[test]
    fn orthogonal_query_gives_uniform_row() {
        let model = AttentionModel::new(1, 1, 3).unwrap();
        let mut cache = KvCache::new(3, 8);
        let ck = Matrix::from_rows(3, &[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        cache.append(&ck, &ck, 0).unwrap();
        let q = Matrix::from_rows(3, &[[1.0, 0.0, 0.0]]).unwrap();
        let k = Matrix::from_rows(3, &[[0.0, -1.0, 0.0]]).unwrap();
        let att = attend_block(&cache, &[&q], &k, &k, 2, &model).unwrap();
        for &w in att.aggregated_attention.data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn attend_block_dim_errors() {
        let model = AttentionModel::new(2, 1, 2).unwrap();
        let cache = KvCache::new(2, 4);
        let q = Matrix::zeros(1, 2);
        assert!(matches!(
            attend_block(&cache, &[&q], &q, &q, 0, &model),
            Err(Error::Dim { .. })
        ));
        let wide = Matrix::zeros(1, 3);
        assert!(matches!(
            attend_block(&cache, &[&q, &q], &wide, &q, 0, &model),
            Err(Error::Dim { .. })
        ));
        assert!(AttentionModel::new(3, 2, 4).is_err());
    }

    #[test]
    fn group_attention_is_mean_of_heads() {
        let model = AttentionModel::new(2, 1, 2).unwrap();
        let cache = KvCache::new(2, 4);
        let k = Matrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let q1 = Matrix::from_rows(2, &[[0.0, 0.0], [3.0, 0.0]]).unwrap();
        let q2 = Matrix::from_rows(2, &[[0.0, 0.0], [0.0, 3.0]]).unwrap();
        let att = attend_block(&cache, &[&q1, &q2], &k, &k, 0, &model).unwrap();
        let a = &att.aggregated_attention;
        assert_eq!(a.row(0), &[1.0, 0.0]);
        assert!((a.get(1, 0) - 0.5).abs() < 1e-15 && (a.get(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn block_sizes_agree_without_eviction() {
        let spec = SynthSpec {
            seq_len: 24,
            head_dim: 8,
            q_heads: 2,
            seed: 3,
            ..SynthSpec::default()
        };
        let tr = one_head(spec);
        let model = AttentionModel::for_trace(&tr).unwrap();
        let mono = run_block_prompt(&tr, &model, &Policy::NoEvict, 24, 24).unwrap();
        for b in [1, 5, 8] {
            let r = run_block_prompt(&tr, &model, &Policy::NoEvict, 24, b).unwrap();
            for (x, y) in r.heads[0].outputs.iter().zip(&mono.heads[0].outputs) {
                for (a, c) in x.data().iter().zip(y.data()) {
                    assert!((a - c).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn block_count_and_budget() {
        let tr = one_head(SynthSpec {
            seq_len: 30,
            ..SynthSpec::default()
        });
        let model = AttentionModel::for_trace(&tr).unwrap();
        let r = run_block_prompt(&tr, &model, &Policy::keydiff(), 7, 4).unwrap();
        assert_eq!(r.heads[0].blocks.len(), 8);
        assert!(r.max_retained() <= 7);
        assert!(run_block_prompt(&tr, &model, &Policy::keydiff(), 0, 4).is_err());
        let bad = AttentionModel::new(1, 1, 3).unwrap();
        assert!(matches!(
            run_block_prompt(&tr, &bad, &Policy::keydiff(), 4, 4),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn synth_is_deterministic_and_clustered() {
        let spec = SynthSpec {
            outliers: 0,
            kappa: 400.0,
            ..SynthSpec::default()
        };
        let a = one_head(spec);
        assert_eq!(a, one_head(spec));
        let k = a.keys(0, 0);
        for i in 0..k.rows() {
            for j in 0..k.rows() {
                assert!(cosine(k.row(i), k.row(j)) >= 0.5);
            }
        }
        assert!(synth_trace(&SynthSpec {
            kappa: 0.0,
            ..SynthSpec::default()
        })
        .is_err());
    }

    #[test]
    fn planted_outliers_draw_the_most_attention() {
        for placement in [OutlierPlacement::Leading, OutlierPlacement::Random] {
            for seed in 0..10 {
                let spec = SynthSpec {
                    placement,
                    seed,
                    ..SynthSpec::default()
                };
                let (tr, planted) = synth_trace_planted(&spec).unwrap();
                let a = full_causal_attention(tr.queries(0, 0), 0, tr.keys(0, 0), 0.25).unwrap();
                let t = tr.seq_len();
                let col_mean: Vec<f64> = (0..t)
                    .map(|j| (j..t).map(|i| a.get(i, j)).sum::<f64>() / (t - j) as f64)
                    .collect();
                let top = crate::numerics::topk_indices(&col_mean, 2);
                assert_eq!(planted[0].len(), 2);
                assert_eq!(top, planted[0], "seed {seed} {placement:?}");
            }
        }
    }
}
