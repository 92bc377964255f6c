//! In-memory token traces: per-(layer, head) key, value and query streams.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceSource {
    #[default]
    Synthetic,
    ModelDump,
}

impl TraceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceSource::Synthetic => "synthetic",
            TraceSource::ModelDump => "model_dump",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceMeta {
    pub source: TraceSource,
    pub seed: Option<u64>,
    pub model_name: Option<String>,
}

/// Shape of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceDims {
    pub layers: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub seq_len: usize,
}

impl TraceDims {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.q_heads == 0
            || self.kv_heads == 0
            || self.head_dim == 0
            || self.seq_len == 0
        {
            return Err(Error::Config("trace dimensions must be at least 1"));
        }
        if self.q_heads % self.kv_heads != 0 {
            return Err(Error::Config("query heads must be a multiple of kv heads"));
        }
        Ok(())
    }
}

/// Post-projection keys, values and queries for every layer and head.
///
/// Keys and values are indexed by `(layer, kv_head)`, queries by
/// `(layer, q_head)`; each stream is a `seq_len x head_dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrace {
    dims: TraceDims,
    keys: Vec<Matrix>,
    values: Vec<Matrix>,
    queries: Vec<Matrix>,
    pub meta: TraceMeta,
}

impl TokenTrace {
    pub fn new(
        dims: TraceDims,
        keys: Vec<Matrix>,
        values: Vec<Matrix>,
        queries: Vec<Matrix>,
        meta: TraceMeta,
    ) -> Result<Self> {
        dims.validate()?;
        let kv = dims.layers * dims.kv_heads;
        let q = dims.layers * dims.q_heads;
        for (streams, want) in [(&keys, kv), (&values, kv), (&queries, q)] {
            if streams.len() != want {
                return Err(Error::Dim {
                    expected: want,
                    found: streams.len(),
                });
            }
            for m in streams.iter() {
                if m.rows() != dims.seq_len || m.cols() != dims.head_dim {
                    return Err(Error::Dim {
                        expected: dims.seq_len * dims.head_dim,
                        found: m.rows() * m.cols(),
                    });
                }
            }
        }
        Ok(Self {
            dims,
            keys,
            values,
            queries,
            meta,
        })
    }

    pub fn dims(&self) -> TraceDims {
        self.dims
    }

    pub fn seq_len(&self) -> usize {
        self.dims.seq_len
    }

    pub fn group_size(&self) -> usize {
        self.dims.q_heads / self.dims.kv_heads
    }

    pub fn keys(&self, layer: usize, kv_head: usize) -> &Matrix {
        &self.keys[layer * self.dims.kv_heads + kv_head]
    }

    pub fn values(&self, layer: usize, kv_head: usize) -> &Matrix {
        &self.values[layer * self.dims.kv_heads + kv_head]
    }

    pub fn queries(&self, layer: usize, q_head: usize) -> &Matrix {
        &self.queries[layer * self.dims.q_heads + q_head]
    }

    /// Query streams of the heads that share `kv_head`.
    pub fn group_queries(&self, layer: usize, kv_head: usize) -> Vec<&Matrix> {
        let g = self.group_size();
        (kv_head * g..(kv_head + 1) * g)
            .map(|h| self.queries(layer, h))
            .collect()
    }

    /// Every `(layer, kv_head)` pair in layer-major order.
    pub fn kv_streams(&self) -> impl Iterator<Item = (usize, usize)> {
        let heads = self.dims.kv_heads;
        (0..self.dims.layers).flat_map(move |l| (0..heads).map(move |h| (l, h)))
    }
}
