//! Dense linear-algebra and statistics primitives.
//!
//! Everything here is a pure function over `f64` data. Trace values arrive
//! as `f32` and are widened on load so that the log-determinant and bound
//! checks have headroom.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Deref;

use crate::error::{Error, Result};

/// Denominator guard for cosine similarity.
pub const COS_EPS: f64 = 1e-12;

/// Relative threshold on squared Cholesky pivots below which a Gram matrix
/// is treated as singular.
pub const GRAM_SINGULAR_TOL: f64 = 1e-10;

/// A finite, non-empty vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(data))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Dim {
                expected: rows.saturating_mul(cols),
                found: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from equally sized rows. An empty iterator yields a `0 x cols`
    /// matrix.
    pub fn from_rows<R: AsRef<[f64]>>(cols: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dim {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size.
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Rows selected by `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stack `other` under `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dim {
                expected: self.cols,
                found: other.cols,
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }
}

/// Additive attention mask: each entry is either `0` or `-inf`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
}

impl Mask {
    /// A mask that blocks nothing.
    pub fn none(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            blocked: vec![false; rows * cols],
        }
    }

    /// Causal mask: query at position `t` may attend to key positions `<= t`.
    pub fn causal(query_pos: &[u64], key_pos: &[u64]) -> Self {
        let mut blocked = Vec::with_capacity(query_pos.len() * key_pos.len());
        for &t in query_pos {
            blocked.extend(key_pos.iter().map(|&p| p > t));
        }
        Self {
            rows: query_pos.len(),
            cols: key_pos.len(),
            blocked,
        }
    }

    /// Parse an additive mask whose entries must be `0.0` or `-inf`.
    pub fn from_additive(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dim {
                expected: rows * cols,
                found: values.len(),
            });
        }
        let mut blocked = Vec::with_capacity(values.len());
        for &v in values {
            if v == 0.0 {
                blocked.push(false);
            } else if v == f64::NEG_INFINITY {
                blocked.push(true);
            } else {
                return Err(Error::Config("mask entries must be 0 or -inf"));
            }
        }
        Ok(Self {
            rows,
            cols,
            blocked,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity on raw slices; callers guarantee equal length.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_norms(dot(a, b), norm(a), norm(b))
}

pub(crate) fn cosine_with_norms(dot: f64, na: f64, nb: f64) -> f64 {
    (dot / (na * nb).max(COS_EPS)).clamp(-1.0, 1.0)
}

/// Cosine similarity `a.b / max(|a||b|, eps)`, clamped to `[-1, 1]`.
pub fn cos_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dim {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(cosine(a, b))
}

/// Full `n x n` cosine-similarity matrix of the rows of `keys`.
pub fn pairwise_cos_sim(keys: &Matrix) -> Matrix {
    let n = keys.rows();
    let norms: Vec<f64> = keys.row_iter().map(norm).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out.data[i * n + i] = if norms[i] > 0.0 { 1.0 } else { 0.0 };
        for j in (i + 1)..n {
            let c = cosine_with_norms(dot(keys.row(i), keys.row(j)), norms[i], norms[j]);
            out.data[i * n + j] = c;
            out.data[j * n + i] = c;
        }
    }
    out
}

/// Row-wise softmax of `logits + mask`, stabilized by the row maximum.
/// Masked entries are exactly zero.
pub fn softmax_masked(logits: &Matrix, mask: &Mask) -> Result<Matrix> {
    if logits.rows() != mask.rows() || logits.cols() != mask.cols() {
        return Err(Error::Dim {
            expected: logits.rows() * logits.cols(),
            found: mask.rows() * mask.cols(),
        });
    }
    let cols = logits.cols();
    let mut out = Matrix::zeros(logits.rows(), cols);
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = (0..cols)
            .filter(|&j| !mask.is_blocked(i, j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMasked { row: i });
        }
        let dst = &mut out.data[i * cols..(i + 1) * cols];
        let mut sum = 0.0;
        for j in 0..cols {
            if !mask.is_blocked(i, j) {
                let e = libm::exp(row[j] - max);
                dst[j] = e;
                sum += e;
            }
        }
        for x in dst.iter_mut() {
            *x /= sum;
        }
    }
    Ok(out)
}

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean((i+1)..=j)
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dim {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(Error::UndefinedCorrelation)
}

/// `log det(K K^T)` via Cholesky of the Gram matrix. Returns `-inf` when a
/// squared pivot falls below `GRAM_SINGULAR_TOL` times the largest diagonal
/// entry.
pub fn log_det_gram(keys: &Matrix) -> f64 {
    let n = keys.rows();
    if n == 0 {
        return 0.0;
    }
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = dot(keys.row(i), keys.row(j));
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    let scale = (0..n).map(|i| g[i * n + i]).fold(0.0, f64::max);
    if scale == 0.0 {
        return f64::NEG_INFINITY;
    }
    // in-place lower Cholesky
    let mut logdet = 0.0;
    for j in 0..n {
        let mut pivot = g[j * n + j];
        for k in 0..j {
            pivot -= g[j * n + k] * g[j * n + k];
        }
        if pivot <= GRAM_SINGULAR_TOL * scale {
            return f64::NEG_INFINITY;
        }
        let l = libm::sqrt(pivot);
        g[j * n + j] = l;
        logdet += 2.0 * libm::log(l);
        for i in (j + 1)..n {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k];
            }
            g[i * n + j] = s / l;
        }
    }
    logdet
}

fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    // higher score first, then lower index
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `n` largest scores, ties going to the lower index, returned
/// in ascending index order.
pub fn topk_indices(scores: &[f64], n: usize) -> Vec<usize> {
    let len = scores.len();
    if n >= len {
        return (0..len).collect();
    }
    if n == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.select_nth_unstable_by(n - 1, |&a, &b| rank_order(scores, a, b));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::new(rows, cols, (0..rows * cols).map(|_| lcg(&mut s)).collect()).unwrap()
    }

    #[test]
    fn cos_sim_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!((cos_sim(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cos_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cos_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cos_sim(&[1.0], &[1.0, 2.0]),
            Err(Error::Dim { .. })
        ));
        assert_eq!(cos_sim(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert_eq!(Vector::new(vec![1.0, f64::NAN]), Err(Error::NonFinite));
        assert_eq!(Vector::new(vec![]), Err(Error::Empty));
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
        assert_eq!(
            Matrix::new(1, 2, vec![0.0, f64::INFINITY]),
            Err(Error::NonFinite)
        );
    }

    #[test]
    fn pairwise_small_cases() {
        let one = Matrix::from_rows(2, &[[3.0, 4.0]]).unwrap();
        assert_eq!(pairwise_cos_sim(&one).data(), &[1.0]);
        let eye = Matrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(pairwise_cos_sim(&eye).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let k = random_matrix(6, 4, 11);
        let p = pairwise_cos_sim(&k);
        for i in 0..6 {
            for j in 0..6 {
                let (a, b) = (k.row(i), k.row(j));
                let want = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
                    / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                        * b.iter().map(|x| x * x).sum::<f64>().sqrt());
                assert!((p.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let z = Matrix::zeros(1, 4);
        let s = softmax_masked(&z, &Mask::none(1, 4)).unwrap();
        assert!(s.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let z = Matrix::zeros(2, 2);
        let m = Mask::causal(&[0, 1], &[0, 1]);
        let s = softmax_masked(&z, &m).unwrap();
        assert_eq!(s.row(0), &[1.0, 0.0]);
        assert_eq!(s.row(1), &[0.5, 0.5]);

        let ninf = f64::NEG_INFINITY;
        let m = Mask::from_additive(1, 2, &[ninf, ninf]).unwrap();
        assert_eq!(
            softmax_masked(&Matrix::zeros(1, 2), &m),
            Err(Error::FullyMasked { row: 0 })
        );
        assert!(Mask::from_additive(1, 1, &[1.0]).is_err());
    }

    #[test]
    fn softmax_matches_naive_formula() {
        let l = random_matrix(3, 5, 5).scaled(4.0);
        let s = softmax_masked(&l, &Mask::none(3, 5)).unwrap();
        for i in 0..3 {
            let denom: f64 = l.row(i).iter().map(|x| x.exp()).sum();
            for j in 0..5 {
                assert!((s.get(i, j) - l.get(i, j).exp() / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation)
        );
    }

    #[test]
    fn spearman_with_tie_matches_rank_table() {
        // x has one tie pair (positions 2 and 5 share value 4.0).
        let x = [1.0, 7.0, 4.0, 2.0, 9.0, 4.0, 3.0, 8.0];
        let y = [2.0, 6.0, 5.0, 1.0, 8.0, 3.0, 4.0, 7.0];
        // Hand-built rank tables.
        let rx = [1.0, 6.0, 4.5, 2.0, 8.0, 4.5, 3.0, 7.0];
        let ry = [2.0, 6.0, 5.0, 1.0, 8.0, 3.0, 4.0, 7.0];
        assert_eq!(average_ranks(&x), rx);
        let mean = 4.5;
        let sxy: f64 = rx
            .iter()
            .zip(&ry)
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum();
        let sxx: f64 = rx.iter().map(|a| (a - mean) * (a - mean)).sum();
        let syy: f64 = ry.iter().map(|a| (a - mean) * (a - mean)).sum();
        let want = sxy / (sxx * syy).sqrt();
        assert!((spearman_rho(&x, &y).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn log_det_orthonormal_and_scaling() {
        let k = Matrix::from_rows(3, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(log_det_gram(&k).abs() < 1e-15);
        let r = random_matrix(4, 7, 3);
        let c: f64 = 2.5;
        let diff = log_det_gram(&r.scaled(c)) - log_det_gram(&r);
        assert!((diff - 8.0 * c.ln()).abs() < 1e-8);
        let single = Matrix::from_rows(2, &[[3.0, 4.0]]).unwrap();
        assert!((log_det_gram(&single) - 2.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_det_rank_deficient_is_neg_inf() {
        let k = Matrix::from_rows(2, &[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(log_det_gram(&k), f64::NEG_INFINITY);
        let dup = Matrix::from_rows(2, &[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(log_det_gram(&dup), f64::NEG_INFINITY);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn log_det_matches_eigenvalue_sum() {
        // Jacobi eigenvalue iteration on the 5x5 Gram as an independent route.
        let k = random_matrix(5, 8, 99);
        let n = 5;
        let mut a = [[0.0f64; 5]; 5];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = dot(k.row(i), k.row(j));
            }
        }
        for _sweep in 0..100 {
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for r in 0..n {
                        let (arp, arq) = (a[r][p], a[r][q]);
                        a[r][p] = c * arp - s * arq;
                        a[r][q] = s * arp + c * arq;
                    }
                    for r in 0..n {
                        let (apr, aqr) = (a[p][r], a[q][r]);
                        a[p][r] = c * apr - s * aqr;
                        a[q][r] = s * apr + c * aqr;
                    }
                }
            }
        }
        let want: f64 = (0..n).map(|i| a[i][i].ln()).sum();
        assert!(
            (log_det_gram(&k) - want).abs() < 1e-8,
            "{} vs {}",
            log_det_gram(&k),
            want
        );
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_indices(&[0.1, 0.9, 0.5], 2), vec![1, 2]);
        assert_eq!(topk_indices(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
        assert_eq!(topk_indices(&[0.5, 0.5], 5), vec![0, 1]);
        assert!(topk_indices(&[0.5, 0.5], 0).is_empty());
        let inf = f64::INFINITY;
        assert_eq!(topk_indices(&[inf, 9.0, inf, inf], 2), vec![0, 2]);
    }

    #[test]
    fn topk_matches_stable_sort_oracle() {
        let mut s = 42u64;
        // quantize so ties occur
        let scores: Vec<f64> = (0..64).map(|_| (lcg(&mut s) * 8.0).round()).collect();
        let mut order: Vec<usize> = (0..64).collect();
        // stable sort by descending score keeps lower index first among ties
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let mut want = order[..16].to_vec();
        want.sort();
        assert_eq!(topk_indices(&scores, 16), want);
    }
}
