//! The KVTR binary trace format.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `b"KVTR"` |
//! | 4  | 4 | version, `u32` = 1 |
//! | 8  | 4 | layers |
//! | 12 | 4 | q_heads |
//! | 16 | 4 | kv_heads |
//! | 20 | 4 | head_dim |
//! | 24 | 4 | seq_len |
//! | 28 | 1 | dtype code, 1 = f32 |
//!
//! The payload follows: for each layer, every kv head's keys then values
//! (`seq_len x head_dim`, row-major), then every query head's queries. A
//! `u64` byte length and a UTF-8 JSON object `{source, seed?, model_name?}`
//! close the file. See `docs/kvtr-format.md` for a worked example.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use keydiff_core::{Matrix, TokenTrace, TraceDims, TraceMeta, TraceSource};
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"KVTR";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 29;

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed trace at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("value {value} at element {index} does not fit in f32")]
    Range { index: usize, value: f64 },
    #[error(transparent)]
    Trace(#[from] keydiff_core::Error),
}

impl TraceIoError {
    fn parse(offset: usize, message: impl Into<String>) -> Self {
        TraceIoError::Parse {
            offset: offset as u64,
            message: message.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Footer {
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_name: Option<String>,
}

/// Encode `trace` as KVTR bytes.
pub fn encode_trace(trace: &TokenTrace) -> Result<Vec<u8>, TraceIoError> {
    let dims = trace.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len(&dims).unwrap_or(0) + 64);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for count in [
        dims.layers,
        dims.q_heads,
        dims.kv_heads,
        dims.head_dim,
        dims.seq_len,
    ] {
        let c = u32::try_from(count)
            .map_err(|_| TraceIoError::parse(out.len(), "dimension exceeds u32"))?;
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.push(DTYPE_F32);

    let mut index = 0;
    let mut put = |out: &mut Vec<u8>, m: &Matrix| -> Result<(), TraceIoError> {
        for &x in m.data() {
            let f = x as f32;
            if !f.is_finite() {
                return Err(TraceIoError::Range { index, value: x });
            }
            out.extend_from_slice(&f.to_le_bytes());
            index += 1;
        }
        Ok(())
    };
    for layer in 0..dims.layers {
        for h in 0..dims.kv_heads {
            put(&mut out, trace.keys(layer, h))?;
            put(&mut out, trace.values(layer, h))?;
        }
        for h in 0..dims.q_heads {
            put(&mut out, trace.queries(layer, h))?;
        }
    }

    let footer = Footer {
        source: trace.meta.source.as_str().to_owned(),
        seed: trace.meta.seed,
        model_name: trace.meta.model_name.clone(),
    };
    let json = serde_json::to_vec(&footer).expect("footer serializes");
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn write_trace<W: Write>(trace: &TokenTrace, mut w: W) -> Result<(), TraceIoError> {
    w.write_all(&encode_trace(trace)?)?;
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(trace: &TokenTrace, path: impl AsRef<Path>) -> Result<(), TraceIoError> {
    fs::write(path, encode_trace(trace)?)?;
    Ok(())
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TokenTrace, TraceIoError> {
    decode_trace(&fs::read(path)?)
}

fn payload_len(d: &TraceDims) -> Option<usize> {
    let block = d.seq_len.checked_mul(d.head_dim)?.checked_mul(4)?;
    let per_layer = (2 * d.kv_heads)
        .checked_add(d.q_heads)?
        .checked_mul(block)?;
    per_layer.checked_mul(d.layers)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decode KVTR bytes, widening the payload to `f64`.
pub fn decode_trace(bytes: &[u8]) -> Result<TokenTrace, TraceIoError> {
    let truncated = || TraceIoError::parse(bytes.len(), "unexpected end of file");
    if bytes.len() < MAGIC.len() {
        return Err(truncated());
    }
    if bytes[..4] != MAGIC {
        return Err(TraceIoError::parse(0, "bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated());
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(TraceIoError::parse(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let mut counts = [0usize; 5];
    for (i, c) in counts.iter_mut().enumerate() {
        let at = 8 + 4 * i;
        *c = u32_at(bytes, at) as usize;
        if *c == 0 {
            return Err(TraceIoError::parse(at, "dimension must be at least 1"));
        }
    }
    let [layers, q_heads, kv_heads, head_dim, seq_len] = counts;
    if bytes[28] != DTYPE_F32 {
        return Err(TraceIoError::parse(
            28,
            format!("unsupported dtype code {}", bytes[28]),
        ));
    }
    let dims = TraceDims {
        layers,
        q_heads,
        kv_heads,
        head_dim,
        seq_len,
    };
    if q_heads % kv_heads != 0 {
        return Err(TraceIoError::parse(
            12,
            "q_heads is not a multiple of kv_heads",
        ));
    }
    let payload = payload_len(&dims)
        .filter(|p| p.checked_add(HEADER_LEN + 8).is_some())
        .ok_or_else(|| TraceIoError::parse(8, "declared sizes overflow"))?;
    let footer_at = HEADER_LEN + payload;
    if bytes.len() < footer_at + 8 {
        return Err(truncated());
    }

    let mut cursor = HEADER_LEN;
    let mut matrix = || -> Result<Matrix, TraceIoError> {
        let n = seq_len * head_dim;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let f = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().expect("4 bytes"));
            if !f.is_finite() {
                return Err(TraceIoError::parse(cursor, "non-finite value"));
            }
            data.push(f64::from(f));
            cursor += 4;
        }
        Ok(Matrix::new(seq_len, head_dim, data)?)
    };
    let mut keys = Vec::with_capacity(layers * kv_heads);
    let mut values = Vec::with_capacity(layers * kv_heads);
    let mut queries = Vec::with_capacity(layers * q_heads);
    for _ in 0..layers {
        for _ in 0..kv_heads {
            keys.push(matrix()?);
            values.push(matrix()?);
        }
        for _ in 0..q_heads {
            queries.push(matrix()?);
        }
    }

    let declared = u64::from_le_bytes(bytes[footer_at..footer_at + 8].try_into().expect("8 bytes"));
    let json_at = footer_at + 8;
    let json_end = usize::try_from(declared)
        .ok()
        .and_then(|n| json_at.checked_add(n))
        .ok_or_else(|| TraceIoError::parse(footer_at, "footer length overflows"))?;
    if bytes.len() < json_end {
        return Err(truncated());
    }
    if bytes.len() > json_end {
        return Err(TraceIoError::parse(json_end, "trailing bytes after footer"));
    }
    let footer: Footer = serde_json::from_slice(&bytes[json_at..json_end])
        .map_err(|e| TraceIoError::parse(json_at, format!("bad footer: {e}")))?;
    let source = match footer.source.as_str() {
        "synthetic" => TraceSource::Synthetic,
        "model_dump" => TraceSource::ModelDump,
        other => {
            return Err(TraceIoError::parse(
                json_at,
                format!("unknown source {other:?}"),
            ));
        }
    };
    let meta = TraceMeta {
        source,
        seed: footer.seed,
        model_name: footer.model_name,
    };
    Ok(TokenTrace::new(dims, keys, values, queries, meta)?)
}
