//! Straightforward reference implementations used as test oracles.
//!
//! Everything here works on plain `Vec<Vec<f64>>` rows and recomputes from
//! scratch, so it shares no code paths with the engine.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Causal softmax attention of queries at `q_pos` over keys at `k_pos`.
pub fn attention(
    queries: &[Vec<f64>],
    q_pos: &[u64],
    keys: &[Vec<f64>],
    k_pos: &[u64],
    scale: f64,
) -> Vec<Vec<f64>> {
    queries
        .iter()
        .zip(q_pos)
        .map(|(q, &tq)| {
            let e: Vec<f64> = keys
                .iter()
                .zip(k_pos)
                .map(|(k, &tk)| {
                    if tk <= tq {
                        (dot(q, k) * scale).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; b[0].len()];
            for (w, v) in row.iter().zip(b) {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += w * x;
                }
            }
            out
        })
        .collect()
}

pub fn col_sums(a: &[Vec<f64>]) -> Vec<f64> {
    let mut s = vec![0.0; a[0].len()];
    for r in a {
        for (x, y) in s.iter_mut().zip(r) {
            *x += y;
        }
    }
    s
}

pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (x, y) in m.iter_mut().zip(r) {
            *x += y / rows.len() as f64;
        }
    }
    m
}

/// Indices of the `n` largest scores, ties to the lower index, ascending.
pub fn select(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    idx.truncate(n);
    idx.sort();
    idx
}

pub fn keydiff_mean(keys: &[Vec<f64>]) -> Vec<f64> {
    let a = mean_rows(keys);
    keys.iter().map(|k| -cos(&a, k)).collect()
}

pub fn keydiff_pairwise(keys: &[Vec<f64>]) -> Vec<f64> {
    keys.iter()
        .map(|ki| -keys.iter().map(|kj| cos(ki, kj)).sum::<f64>())
        .collect()
}

pub fn tova(att: &[Vec<f64>]) -> Vec<f64> {
    att.last().unwrap().clone()
}

pub fn snapkv(att: &[Vec<f64>], kernel: usize, recent: usize) -> Vec<f64> {
    let s = col_sums(att);
    let n = s.len();
    let h = kernel as isize / 2;
    (0..n)
        .map(|i| {
            if i + recent >= n {
                return f64::INFINITY;
            }
            let (mut sum, mut cnt) = (0.0, 0.0);
            for j in (i as isize - h)..=(i as isize + h) {
                if j >= 0 && (j as usize) < n {
                    sum += s[j as usize];
                    cnt += 1.0;
                }
            }
            sum / cnt
        })
        .collect()
}

pub fn sink(time_ids: &[u64], sink_count: usize) -> Vec<f64> {
    let mut sorted = time_ids.to_vec();
    sorted.sort();
    let pinned = &sorted[..sink_count.min(sorted.len())];
    time_ids
        .iter()
        .map(|t| {
            if pinned.contains(t) {
                f64::INFINITY
            } else {
                *t as f64
            }
        })
        .collect()
}

/// The policies the replay simulator knows how to score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefPolicy {
    KeyDiff,
    Pairwise,
    Sliding(f64),
    Tova,
    H2o,
    SnapKv(usize, usize),
    Sink(usize),
    L2Norm,
}

/// One token held by the reference cache.
#[derive(Debug, Clone)]
struct Slot {
    key: Vec<f64>,
    value: Vec<f64>,
}

/// Replay block prompt processing with a map-keyed cache. Returns the
/// retained positions after every block and the attention outputs of each
/// query head (rows in sequence order).
pub fn replay(
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    queries: &[Vec<Vec<f64>>],
    scale: f64,
    policy: RefPolicy,
    budget: usize,
    block: usize,
) -> (Vec<Vec<u64>>, Vec<Vec<Vec<f64>>>) {
    let t = keys.len();
    let mut cache: BTreeMap<u64, Slot> = BTreeMap::new();
    let mut heavy: BTreeMap<u64, f64> = BTreeMap::new();
    let mut retained = Vec::new();
    let mut outputs = vec![Vec::new(); queries.len()];
    let mut start = 0;
    while start < t {
        let end = (start + block).min(t);
        for p in start..end {
            cache.insert(
                p as u64,
                Slot {
                    key: keys[p].clone(),
                    value: values[p].clone(),
                },
            );
        }
        let ids: Vec<u64> = cache.keys().copied().collect();
        let ks: Vec<Vec<f64>> = cache.values().map(|s| s.key.clone()).collect();
        let vs: Vec<Vec<f64>> = cache.values().map(|s| s.value.clone()).collect();
        let q_pos: Vec<u64> = (start as u64..end as u64).collect();
        let mut mean_att = vec![vec![0.0; ids.len()]; end - start];
        for (h, q) in queries.iter().enumerate() {
            let a = attention(&q[start..end], &q_pos, &ks, &ids, scale);
            outputs[h].extend(mat_mul(&a, &vs));
            for (m, r) in mean_att.iter_mut().zip(&a) {
                for (x, y) in m.iter_mut().zip(r) {
                    *x += y / queries.len() as f64;
                }
            }
        }
        for (id, c) in ids.iter().zip(col_sums(&mean_att)) {
            *heavy.entry(*id).or_insert(0.0) += c;
        }
        if ids.len() > budget {
            let scores = match policy {
                RefPolicy::KeyDiff => keydiff_mean(&ks),
                RefPolicy::Pairwise => keydiff_pairwise(&ks),
                RefPolicy::Sliding(f) => {
                    let w = (f * budget as f64).floor() as usize;
                    let mut s = keydiff_mean(&ks);
                    let n = s.len();
                    s[n - w..].iter_mut().for_each(|x| *x = f64::INFINITY);
                    s
                }
                RefPolicy::Tova => tova(&mean_att),
                RefPolicy::H2o => ids.iter().map(|id| heavy[id]).collect(),
                RefPolicy::SnapKv(k, r) => snapkv(&mean_att, k, r),
                RefPolicy::Sink(c) => sink(&ids, c),
                RefPolicy::L2Norm => ks.iter().map(|k| -norm(k)).collect(),
            };
            let keep: Vec<u64> = select(&scores, budget)
                .into_iter()
                .map(|i| ids[i])
                .collect();
            cache.retain(|id, _| keep.contains(id));
            heavy.retain(|id, _| keep.contains(id));
        }
        retained.push(cache.keys().copied().collect());
        start = end;
    }
    (retained, outputs)
}
