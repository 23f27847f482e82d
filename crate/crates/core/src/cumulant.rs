//! Packed symmetric tensors and cumulant estimation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LcdError, Result};
use crate::linalg::Matrix;

/// Rows per chunk in the sample estimators. Fixed so reductions are bit-stable.
const CHUNK_ROWS: usize = 4096;

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Number of non-decreasing sequences of length `len` over `values` symbols.
fn multisets(values: usize, len: usize) -> usize {
    if len == 0 {
        1
    } else if values == 0 {
        0
    } else {
        binomial(values + len - 1, len)
    }
}

/// Symmetric order-`d` tensor on `R^p`, one stored value per sorted multi-index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricTensor {
    d: usize,
    p: usize,
    packed: Vec<f64>,
}

impl SymmetricTensor {
    pub fn packed_len(p: usize, d: usize) -> usize {
        multisets(p, d)
    }

    pub fn zeros(d: usize, p: usize) -> Self {
        SymmetricTensor { d, p, packed: vec![0.0; Self::packed_len(p, d)] }
    }

    pub fn from_packed(d: usize, p: usize, packed: Vec<f64>) -> Result<Self> {
        let want = Self::packed_len(p, d);
        if packed.len() != want {
            return Err(LcdError::ShapeMismatch(format!(
                "packed length {} but order {d}, dimension {p} needs {want}",
                packed.len()
            )));
        }
        Ok(SymmetricTensor { d, p, packed })
    }

    /// Re-validates after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::from_packed(self.d, self.p, self.packed)
    }

    pub fn order(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    /// Position of a sorted multi-index in lexicographic packed order.
    fn offset_sorted(&self, idx: &[usize]) -> usize {
        let (p, d) = (self.p, self.d);
        let mut off = 0;
        let mut prev = 0;
        for (t, &v) in idx.iter().enumerate() {
            for w in prev..v {
                off += multisets(p - w, d - t - 1);
            }
            prev = v;
        }
        off
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.d, "index length must equal the tensor order");
        assert!(idx.iter().all(|&i| i < self.p), "index out of range");
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        self.offset_sorted(&sorted)
    }

    /// Value at any (unsorted) multi-index.
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.packed[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.packed[o] = value;
    }

    /// Sorted multi-indices in packed order.
    pub fn multi_indices(&self) -> Vec<Vec<usize>> {
        sorted_multi_indices(self.p, self.d)
    }

    /// Number of distinct permutations of a sorted multi-index.
    pub fn multiplicity(idx: &[usize]) -> f64 {
        let mut m = factorial(idx.len());
        let mut run = 1;
        for w in idx.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                m /= factorial(run);
                run = 1;
            }
        }
        m /= factorial(run);
        m
    }

    /// Frobenius norm of the full (unpacked) tensor.
    pub fn frobenius_norm(&self) -> f64 {
        self.multi_indices()
            .iter()
            .zip(&self.packed)
            .map(|(idx, v)| Self::multiplicity(idx) * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Frobenius distance to another tensor of the same shape.
    pub fn frobenius_distance(&self, other: &SymmetricTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        let diff = SymmetricTensor {
            d: self.d,
            p: self.p,
            packed: self.packed.iter().zip(&other.packed).map(|(a, b)| a - b).collect(),
        };
        Ok(diff.frobenius_norm())
    }

    fn check_same_shape(&self, other: &SymmetricTensor) -> Result<()> {
        if self.d != other.d || self.p != other.p {
            return Err(LcdError::ShapeMismatch(format!(
                "order {}/dim {} vs order {}/dim {}",
                self.d, self.p, other.d, other.p
            )));
        }
        Ok(())
    }

    /// `Σ_r weights[r] · columns[:, r]^{⊗d}`.
    pub fn from_rank_one_terms(d: usize, weights: &[f64], columns: &Matrix) -> Result<Self> {
        if weights.len() != columns.ncols() {
            return Err(LcdError::ShapeMismatch(format!(
                "{} weights for {} columns",
                weights.len(),
                columns.ncols()
            )));
        }
        let p = columns.nrows();
        let indices = sorted_multi_indices(p, d);
        let packed = indices
            .iter()
            .map(|idx| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(r, w)| w * idx.iter().map(|&i| columns[(i, r)]).product::<f64>())
                    .sum()
            })
            .collect();
        Ok(SymmetricTensor { d, p, packed })
    }

    /// Dense row-major expansion of length `p^d` (first index most significant).
    pub fn to_dense(&self) -> Vec<f64> {
        let total = self.p.pow(self.d as u32);
        let mut out = vec![0.0; total];
        let mut idx = vec![0usize; self.d];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            for t in (0..self.d).rev() {
                idx[t] = rem % self.p;
                rem /= self.p;
            }
            *slot = self.get(&idx);
        }
        out
    }

    /// Packs a dense row-major tensor, averaging over each permutation orbit.
    pub fn from_dense(d: usize, p: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != p.pow(d as u32) {
            return Err(LcdError::ShapeMismatch(format!("dense length {} for {p}^{d}", dense.len())));
        }
        let mut t = SymmetricTensor::zeros(d, p);
        let mut counts = vec![0usize; t.packed.len()];
        let mut idx = vec![0usize; d];
        for (flat, &v) in dense.iter().enumerate() {
            let mut rem = flat;
            for k in (0..d).rev() {
                idx[k] = rem % p;
                rem /= p;
            }
            let o = t.offset(&idx);
            t.packed[o] += v;
            counts[o] += 1;
        }
        for (v, c) in t.packed.iter_mut().zip(counts) {
            *v /= c as f64;
        }
        Ok(t)
    }

    /// Entry `(i_1..i_d) = Σ B[i_1,j_1]···B[i_d,j_d] t[j_1..j_d]`.
    pub fn multilinear_transform(&self, b: &Matrix) -> Result<SymmetricTensor> {
        if b.ncols() != self.p {
            return Err(LcdError::ShapeMismatch(format!(
                "transform has {} columns, tensor dimension is {}",
                b.ncols(),
                self.p
            )));
        }
        let m = b.nrows();
        let d = self.d;
        let mut dense = self.to_dense();
        let mut dims = vec![self.p; d];
        for mode in 0..d {
            let inner: usize = dims[mode + 1..].iter().product();
            let outer: usize = dims[..mode].iter().product();
            let old = dims[mode];
            let mut next = vec![0.0; outer * m * inner];
            for o in 0..outer {
                for a in 0..m {
                    for bb in 0..old {
                        let coef = b[(a, bb)];
                        if coef == 0.0 {
                            continue;
                        }
                        let src = (o * old + bb) * inner;
                        let dst = (o * m + a) * inner;
                        for s in 0..inner {
                            next[dst + s] += coef * dense[src + s];
                        }
                    }
                }
            }
            dense = next;
            dims[mode] = m;
        }
        SymmetricTensor::from_dense(d, m, &dense)
    }

    /// Matricization with the first `rows_order` indices as rows.
    pub fn flatten(&self, rows_order: usize, cols_order: usize) -> Result<Matrix> {
        if rows_order + cols_order != self.d {
            return Err(LcdError::InvalidInput(format!(
                "split ({rows_order}, {cols_order}) does not sum to order {}",
                self.d
            )));
        }
        let r = self.p.pow(rows_order as u32);
        let c = self.p.pow(cols_order as u32);
        let dense = self.to_dense();
        Ok(DMatrix::from_row_slice(r, c, &dense))
    }

    /// Slice contraction along the last mode: `Σ_k t[.., k] w_k`, returned as order `d-1`.
    pub fn contract_last(&self, w: &[f64]) -> Result<SymmetricTensor> {
        if self.d == 0 || w.len() != self.p {
            return Err(LcdError::ShapeMismatch("contraction vector length".into()));
        }
        let mut out = SymmetricTensor::zeros(self.d - 1, self.p);
        let mut idx = Vec::with_capacity(self.d);
        for (o, base) in sorted_multi_indices(self.p, self.d - 1).into_iter().enumerate() {
            let mut acc = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                idx.clear();
                idx.extend_from_slice(&base);
                idx.push(k);
                acc += wk * self.get(&idx);
            }
            out.packed[o] = acc;
        }
        Ok(out)
    }

    /// Order-2 tensor as a dense symmetric matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.d != 2 {
            return Err(LcdError::UnsupportedOrder(self.d));
        }
        self.flatten(1, 1)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

pub(crate) fn sorted_multi_indices(p: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(multisets(p, d));
    let mut cur = Vec::with_capacity(d);
    fn rec(p: usize, d: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for v in start..p {
            cur.push(v);
            rec(p, d, v, cur, out);
            cur.pop();
        }
    }
    rec(p, d, 0, &mut cur, &mut out);
    out
}

/// Sample cumulant of order `d ∈ {2, 3, 4}` from an `n × p` data matrix.
///
/// Columns are mean-centered and moments use the `1/n` normalization. The
/// fourth cumulant is `m_ijkl − m_ij m_kl − m_ik m_jl − m_il m_jk`.
pub fn sample_cumulant(data: &Matrix, d: usize) -> Result<SymmetricTensor> {
    if !(2..=4).contains(&d) {
        return Err(LcdError::UnsupportedOrder(d));
    }
    let (n, p) = data.shape();
    if n <= d {
        return Err(LcdError::TooFewSamples { needed: d, got: n });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(LcdError::NonFinite);
    }
    let means: Vec<f64> = (0..p).map(|j| data.column(j).sum() / n as f64).collect();
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect();
    let np = pairs.len();
    let pair_index = |i: usize, j: usize| -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // Row-major offset into the upper triangle.
        i * p - i * (i + 1) / 2 + j
    };

    // Each chunk yields (pair-by-variable third moments, pair-by-pair fourth moments, covariance).
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK_ROWS).map(|s| (s, (s + CHUNK_ROWS).min(n))).collect();
    let partials: Vec<(Matrix, Matrix, Matrix)> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let rows = end - start;
            let mut x = Matrix::zeros(rows, p);
            for j in 0..p {
                for r in 0..rows {
                    x[(r, j)] = data[(start + r, j)] - means[j];
                }
            }
            let second = x.transpose() * &x;
            if d == 2 {
                return (second, Matrix::zeros(0, 0), Matrix::zeros(0, 0));
            }
            let mut z = Matrix::zeros(rows, np);
            for (c, &(i, j)) in pairs.iter().enumerate() {
                for r in 0..rows {
                    z[(r, c)] = x[(r, i)] * x[(r, j)];
                }
            }
            let third = if d == 3 { z.transpose() * &x } else { Matrix::zeros(0, 0) };
            let fourth = if d == 4 { z.transpose() * &z } else { Matrix::zeros(0, 0) };
            (second, third, fourth)
        })
        .collect();

    let mut m2 = Matrix::zeros(p, p);
    let mut m3 = Matrix::zeros(if d == 3 { np } else { 0 }, if d == 3 { p } else { 0 });
    let mut m4 = Matrix::zeros(if d == 4 { np } else { 0 }, if d == 4 { np } else { 0 });
    for (a, b, c) in &partials {
        m2 += a;
        if d == 3 {
            m3 += b;
        }
        if d == 4 {
            m4 += c;
        }
    }
    let nf = n as f64;
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;

    let mut t = SymmetricTensor::zeros(d, p);
    for (o, idx) in sorted_multi_indices(p, d).iter().enumerate() {
        t.packed[o] = match d {
            2 => m2[(idx[0], idx[1])],
            3 => m3[(pair_index(idx[0], idx[1]), idx[2])],
            _ => {
                let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
                m4[(pair_index(i, j), pair_index(k, l))]
                    - m2[(i, j)] * m2[(k, l)]
                    - m2[(i, k)] * m2[(j, l)]
                    - m2[(i, l)] * m2[(j, k)]
            }
        };
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn packed_layout() {
        assert_eq!(SymmetricTensor::packed_len(3, 2), 6);
        assert_eq!(SymmetricTensor::packed_len(10, 4), 715);
        let t = SymmetricTensor::zeros(3, 4);
        let idx = t.multi_indices();
        assert_eq!(idx.len(), 20);
        for (o, i) in idx.iter().enumerate() {
            assert_eq!(t.offset(i), o);
        }
        assert_eq!(SymmetricTensor::multiplicity(&[0, 0, 1]), 3.0);
        assert_eq!(SymmetricTensor::multiplicity(&[0, 1, 2, 3]), 24.0);
    }

    #[test]
    fn permuted_reads_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 4, 2);
        let t = SymmetricTensor::from_rank_one_terms(3, &[1.0, -2.0], &a).unwrap();
        assert_eq!(t.get(&[0, 1, 3]), t.get(&[3, 0, 1]));
        assert_eq!(t.get(&[2, 2, 1]), t.get(&[2, 1, 2]));
    }

    #[test]
    fn constant_data_has_zero_cumulants() {
        let data = Matrix::from_fn(50, 3, |_, j| j as f64 + 1.5);
        for d in 2..=4 {
            let t = sample_cumulant(&data, d).unwrap();
            assert!(t.packed().iter().all(|v| v.abs() < 1e-12), "order {d}");
        }
    }

    #[test]
    fn estimator_errors() {
        let data = Matrix::zeros(3, 2);
        assert!(matches!(sample_cumulant(&data, 3), Err(LcdError::TooFewSamples { .. })));
        assert!(matches!(sample_cumulant(&data, 5), Err(LcdError::UnsupportedOrder(5))));
        let mut bad = Matrix::zeros(10, 2);
        bad[(1, 1)] = f64::NAN;
        assert!(matches!(sample_cumulant(&bad, 2), Err(LcdError::NonFinite)));
    }

    #[test]
    fn gaussian_fourth_cumulant_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_matrix(&mut rng, 1_000_000, 3);
        let t = sample_cumulant(&data, 4).unwrap();
        let worst = t.packed().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(worst < 0.02, "max |κ4| = {worst}");
    }

    #[test]
    fn exponential_cumulants_match_analytic_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = Matrix::from_fn(1_000_000, 1, |_, _| {
            let e: f64 = Exp1.sample(&mut rng);
            e - 1.0
        });
        let k3 = sample_cumulant(&data, 3).unwrap().packed()[0];
        let k4 = sample_cumulant(&data, 4).unwrap().packed()[0];
        assert!((k3 - 2.0).abs() / 2.0 < 0.05, "κ3 = {k3}");
        assert!((k4 - 6.0).abs() / 6.0 < 0.05, "κ4 = {k4}");
    }

    #[test]
    fn multilinear_identity_and_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 3);
        let t = SymmetricTensor::from_rank_one_terms(4, &[1.0, 0.5, -1.0], &a).unwrap();
        let same = t.multilinear_transform(&Matrix::identity(3, 3)).unwrap();
        assert!(same.frobenius_distance(&t).unwrap() < 1e-12);

        let mut e1 = Matrix::zeros(3, 1);
        e1[(0, 0)] = 1.0;
        let unit = SymmetricTensor::from_rank_one_terms(3, &[1.0], &e1).unwrap();
        let b = random_matrix(&mut rng, 4, 3);
        let img = unit.multilinear_transform(&b).unwrap();
        let col = b.column(0).into_owned();
        let expect = SymmetricTensor::from_rank_one_terms(3, &[1.0], &Matrix::from_columns(&[col])).unwrap();
        assert!(img.frobenius_distance(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn multilinear_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dense: Vec<f64> = (0..4usize.pow(3)).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = SymmetricTensor::from_dense(3, 4, &dense).unwrap();
        let b = random_matrix(&mut rng, 4, 4) + Matrix::identity(4, 4) * 3.0;
        let binv = b.clone().try_inverse().unwrap();
        let back = t.multilinear_transform(&b).unwrap().multilinear_transform(&binv).unwrap();
        assert!(back.frobenius_distance(&t).unwrap() < 1e-10);
        assert!(t.multilinear_transform(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn flatten_examples() {
        let a = Matrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let t = SymmetricTensor::from_rank_one_terms(4, &[1.0], &a).unwrap();
        let f = t.flatten(2, 2).unwrap();
        let aa: Vec<f64> = (0..9).map(|k| a[k / 3] * a[k % 3]).collect();
        let v = Matrix::from_column_slice(9, 1, &aa);
        assert!((&f - &v * v.transpose()).norm() < 1e-12);
        assert!(t.flatten(1, 2).is_err());
        let z = SymmetricTensor::zeros(4, 3).flatten(2, 2).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn generic_rank_three_flattening_has_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 5, 3);
        let t = SymmetricTensor::from_rank_one_terms(4, &[1.0, 2.0, -0.7], &a).unwrap();
        let f = t.flatten(2, 2).unwrap();
        assert_eq!(crate::linalg::numerical_rank(&f, 1e-8), 3);
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = Matrix::from_fn(2000, 3, |_, _| Exp1.sample(&mut rng));
        let shifted = Matrix::from_fn(2000, 3, |r, c| data[(r, c)] + 10.0 * (c as f64 + 1.0));
        for d in 2..=4 {
            let a = sample_cumulant(&data, d).unwrap();
            let b = sample_cumulant(&shifted, d).unwrap();
            assert!(a.frobenius_distance(&b).unwrap() < 1e-9 * a.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn multilinearity_of_the_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = Matrix::from_fn(5000, 3, |_, _| Exp1.sample(&mut rng));
        let b = random_matrix(&mut rng, 4, 3);
        let mapped = &data * b.transpose();
        for d in 2..=4 {
            let direct = sample_cumulant(&mapped, d).unwrap();
            let via = sample_cumulant(&data, d).unwrap().multilinear_transform(&b).unwrap();
            assert!(direct.frobenius_distance(&via).unwrap() < 1e-10 * direct.frobenius_norm());
        }
    }

    #[test]
    fn independent_cross_cumulants_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut off = Vec::new();
        for &n in &[1_000usize, 100_000] {
            let data = Matrix::from_fn(n, 2, |_, _| Exp1.sample(&mut rng));
            let t = sample_cumulant(&data, 3).unwrap();
            off.push(t.get(&[0, 0, 1]).abs().max(t.get(&[0, 1, 1]).abs()));
        }
        assert!(off[1] < off[0], "cross cumulants {off:?}");
        assert!(off[1] < 0.1);
    }

    #[test]
    fn json_round_trip() {
        let t = SymmetricTensor::from_packed(2, 2, vec![1.0, 0.1 + 0.2, -3.0]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: SymmetricTensor = serde_json::from_str(&s).unwrap();
        assert_eq!(back.validated().unwrap(), t);
        assert!(SymmetricTensor::from_packed(2, 2, vec![1.0]).is_err());
    }
}
