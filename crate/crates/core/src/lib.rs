//! KV-cache eviction by key similarity.
//!
//! This crate holds the allocation-only core of the engine: dense numerics,
//! the bounded per-head KV cache, the eviction-policy catalog (KeyDiff and
//! attention-based baselines), causal attention with block prompt
//! processing, subset-selection and correlation oracles, and numerical
//! verifiers for the geometric bounds behind key-similarity eviction.
//!
//! It is `no_std` and needs only `alloc`. File formats, timing and the
//! command-line front end live in the `keydiff` crate.
//!
//! ```
//! use keydiff_core::{KvCache, Matrix, Policy};
//!
//! let mut cache = KvCache::new(2, 1);
//! let keys = Matrix::from_rows(2, &[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
//! cache.append(&keys, &keys, 0).unwrap();
//! cache.evict(&Policy::keydiff(), None).unwrap();
//! assert_eq!(cache.time_ids(), &[2]);
//! ```

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod attention;
pub mod error;
pub mod kvcache;
pub mod numerics;
pub mod policies;
pub mod theory;
pub mod trace;

pub use attention::{
    attend_block, process_block, run_block_prompt, run_head_stream, synth_trace,
    synth_trace_planted, AttentionModel, BlockAttention, BlockRecord, BlockResult, HeadReport,
    OutlierPlacement, SimulationReport, SynthSpec,
};
pub use error::{Error, Result};
pub use kvcache::{KvCache, ScoreVector, SideState};
pub use numerics::{Mask, Matrix, Vector};
pub use policies::{Anchor, Metric, Policy, PolicyKind, PolicyParams, ScoringContext};
pub use trace::{TokenTrace, TraceDims, TraceMeta, TraceSource};
