//! Bounded per-(layer, head) key/value store.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};
use crate::numerics::{topk_indices, Matrix};
use crate::policies::{self, Policy, ScoringContext};

/// Per-token eviction scores aligned with cache order; larger means retain.
/// `+inf` marks unconditional retention. NaN is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY) {
            return Err(Error::NonFinite);
        }
        Ok(Self(scores))
    }

    /// Policies produce scores from finite inputs; NaN here is a bug.
    pub(crate) fn from_raw(scores: Vec<f64>) -> Self {
        debug_assert!(scores.iter().all(|x| !x.is_nan()));
        Self(scores)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Policy-private per-token state that travels with the tokens on gather.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SideState {
    #[default]
    None,
    /// Accumulated attention mass per token (H2O).
    Accumulator(Vec<f64>),
}

/// Key/value cache for a single (layer, kv-head) stream.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    dim: usize,
    budget: usize,
    keys: Matrix,
    values: Matrix,
    time_ids: Vec<u64>,
    side: SideState,
}

impl KvCache {
    pub fn new(dim: usize, budget: usize) -> Self {
        Self {
            dim,
            budget,
            keys: Matrix::zeros(0, dim),
            values: Matrix::zeros(0, dim),
            time_ids: Vec::new(),
            side: SideState::None,
        }
    }

    /// A cache that carries an attention accumulator for stateful policies.
    pub fn for_policy(dim: usize, budget: usize, policy: &Policy) -> Self {
        let mut c = Self::new(dim, budget);
        if policy.is_stateful() {
            c.side = SideState::Accumulator(Vec::new());
        }
        c
    }

    pub fn len(&self) -> usize {
        self.time_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn time_ids(&self) -> &[u64] {
        &self.time_ids
    }

    pub fn side_state(&self) -> &SideState {
        &self.side
    }

    pub fn accumulator(&self) -> Option<&[f64]> {
        match &self.side {
            SideState::Accumulator(a) => Some(a),
            SideState::None => None,
        }
    }

    /// Append a block of `B` tokens at positions `start_pos..start_pos + B`.
    /// The cache may exceed its budget until the next [`evict`](Self::evict).
    pub fn append(&mut self, keys: &Matrix, values: &Matrix, start_pos: u64) -> Result<()> {
        if keys.rows() == 0 {
            return Err(Error::Empty);
        }
        if keys.rows() != values.rows() {
            return Err(Error::Dim {
                expected: keys.rows(),
                found: values.rows(),
            });
        }
        for m in [keys, values] {
            if m.cols() != self.dim {
                return Err(Error::Dim {
                    expected: self.dim,
                    found: m.cols(),
                });
            }
        }
        if let Some(&last) = self.time_ids.last() {
            if start_pos <= last {
                return Err(Error::Order {
                    last,
                    start: start_pos,
                });
            }
        }
        let b = keys.rows();
        self.keys = self.keys.vstack(keys)?;
        self.values = self.values.vstack(values)?;
        self.time_ids.extend(start_pos..start_pos + b as u64);
        if let SideState::Accumulator(acc) = &mut self.side {
            acc.resize(self.time_ids.len(), 0.0);
        }
        Ok(())
    }

    /// Keep only the entries at `indices`, in time order. Duplicates are
    /// ignored.
    pub fn gather(&self, indices: &[usize]) -> Result<KvCache> {
        let n = self.len();
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        let side = match &self.side {
            SideState::None => SideState::None,
            SideState::Accumulator(a) => {
                SideState::Accumulator(idx.iter().map(|&i| a[i]).collect())
            }
        };
        Ok(KvCache {
            dim: self.dim,
            budget: self.budget,
            keys: self.keys.select_rows(&idx),
            values: self.values.select_rows(&idx),
            time_ids: idx.iter().map(|&i| self.time_ids[i]).collect(),
            side,
        })
    }

    /// Score the resident tokens under `policy` and keep the top `budget`.
    ///
    /// `attention` holds the current block's group-averaged attention over
    /// every resident position and is required by attention-based policies.
    /// For H2O the block's attention is folded into the accumulator on every
    /// call, including calls that leave the cache under budget.
    ///
    /// Returns the retained indices relative to the pre-eviction order.
    pub fn evict(&mut self, policy: &Policy, attention: Option<&Matrix>) -> Result<Vec<usize>> {
        policy.validate()?;
        let n = self.len();
        if policy.needs_attention() && attention.is_none() {
            return Err(Error::Context("policy requires block attention"));
        }
        if let Some(a) = attention {
            if a.cols() != n {
                return Err(Error::Context("attention width differs from cache length"));
            }
        }
        if policy.is_stateful() {
            if matches!(self.side, SideState::None) {
                self.side = SideState::Accumulator(vec![0.0; n]);
            }
            let ctx = self.context(attention);
            let acc = policies::score_h2o(&ctx)?;
            self.side = SideState::Accumulator(acc.into_inner());
        }
        if n <= self.budget {
            return Ok((0..n).collect());
        }
        if matches!(policy, Policy::NoEvict) {
            return Err(Error::Config("no-evict cache exceeded its budget"));
        }
        policy.validate_budget(self.budget)?;
        let scores = match (policy, &self.side) {
            (Policy::H2o, SideState::Accumulator(acc)) => ScoreVector(acc.clone()),
            _ => policies::score(policy, &self.context(attention), self.budget)?,
        };
        let keep = topk_indices(&scores, self.budget);
        *self = self.gather(&keep)?;
        Ok(keep)
    }

    fn context<'a>(&'a self, attention: Option<&'a Matrix>) -> ScoringContext<'a> {
        ScoringContext {
            keys: &self.keys,
            block_attention: attention,
            time_ids: &self.time_ids,
            // H2O scoring adds the block on top of the stored accumulator.
            accumulator: self.accumulator(),
        }
    }
}
