//! Symmetric CP decomposition of cumulant tensors.
//!
//! Order 3 with `q ≤ p` uses simultaneous diagonalization of two random slices.
//! Order 4 uses the subspace power method on the (2,2) flattening, which also
//! handles `q > p`. Both finish with a damped Gauss–Newton polish.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cumulant::{sorted_multi_indices, SymmetricTensor};
use crate::error::{LcdError, Result};
use crate::linalg::{inverse, numerical_rank, pinv, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecompMethod {
    /// Order 3, `q ≤ p`.
    Injective,
    /// Order 4, any `q` below the identifiability bound.
    General,
}

impl DecompMethod {
    pub fn order(self) -> usize {
        match self {
            DecompMethod::Injective => 3,
            DecompMethod::General => 4,
        }
    }
}

impl std::str::FromStr for DecompMethod {
    type Err = LcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "injective" => Ok(DecompMethod::Injective),
            "general" => Ok(DecompMethod::General),
            other => Err(LcdError::Parse(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompConfig {
    /// Fresh random slices tried before giving up on eigenvalue separation.
    pub max_retries: usize,
    /// Relative eigenvalue gap below which slices are redrawn.
    pub min_gap: f64,
    /// Relative reconstruction residual allowed; `None` skips the check (sampled input).
    pub residual_tol: Option<f64>,
    /// Random starts per extracted component in the power method.
    pub starts: usize,
    pub max_power_iters: usize,
    pub shift: f64,
    pub polish_iters: usize,
}

impl Default for DecompConfig {
    fn default() -> Self {
        DecompConfig {
            max_retries: 20,
            min_gap: 1e-6,
            residual_tol: Some(1e-8),
            starts: 40,
            max_power_iters: 3000,
            shift: 0.5,
            polish_iters: 100,
        }
    }
}

impl DecompConfig {
    /// Defaults for exact tensors with the given method.
    pub fn exact(method: DecompMethod) -> Self {
        let residual_tol = match method {
            DecompMethod::Injective => 1e-8,
            DecompMethod::General => 1e-5,
        };
        DecompConfig { residual_tol: Some(residual_tol), ..Default::default() }
    }

    /// Defaults for estimated tensors: no residual gate.
    pub fn sampled() -> Self {
        DecompConfig { residual_tol: None, ..Default::default() }
    }
}

/// Columns `b_i` and signs `s_i` with `t ≈ Σ s_i b_i^{⊗d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub columns: Matrix,
    pub signs: Vec<f64>,
    pub residual: f64,
}

/// One factorization per context, all of the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub d: usize,
    pub factors: Vec<Factors>,
}

impl FactorSet {
    pub fn matrices(&self) -> Vec<Matrix> {
        self.factors.iter().map(|f| f.columns.clone()).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.factors.iter().map(|f| f.residual).fold(0.0, f64::max)
    }
}

/// `‖t − Σ s_i b_i^{⊗d}‖ / ‖t‖` (absolute when `t` is zero).
pub fn reconstruction_residual(t: &SymmetricTensor, columns: &Matrix, signs: &[f64]) -> Result<f64> {
    let r = SymmetricTensor::from_rank_one_terms(t.order(), signs, columns)?;
    let dist = r.frobenius_distance(t)?;
    let norm = t.frobenius_norm();
    Ok(if norm > 0.0 { dist / norm } else { dist })
}

/// Numerical rank of the most square flattening.
pub fn estimate_latent_count(t: &SymmetricTensor, rel_tol: f64) -> Result<usize> {
    let m = match t.order() {
        2 => t.flatten(1, 1)?,
        3 => t.flatten(1, 2)?,
        4 => t.flatten(2, 2)?,
        d => return Err(LcdError::UnsupportedOrder(d)),
    };
    Ok(numerical_rank(&m, rel_tol))
}

fn check_rank(q: usize) -> Result<()> {
    if q == 0 {
        Err(LcdError::InvalidInput("rank must be positive".into()))
    } else {
        Ok(())
    }
}

/// On exact input the flattening must carry at least `q` terms.
fn check_flattening_rank(t: &SymmetricTensor, q: usize, config: &DecompConfig) -> Result<()> {
    if config.residual_tol.is_none() {
        return Ok(());
    }
    let found = estimate_latent_count(t, 1e-10)?;
    if found < q {
        return Err(LcdError::Decomposition(format!(
            "flattening has rank {found}, fewer than the requested {q} terms"
        )));
    }
    Ok(())
}

fn gaussian_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Right singular vector of the smallest singular value.
fn null_vector(m: &Matrix) -> Vector {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    vt.row(k).transpose()
}

/// Least-squares weights `w` with `t ≈ Σ w_i b_i^{⊗d}` for fixed unit directions.
fn fit_weights(t: &SymmetricTensor, dirs: &Matrix) -> Vector {
    let d = t.order();
    let idx = sorted_multi_indices(t.dim(), d);
    let q = dirs.ncols();
    let mut a = Matrix::zeros(idx.len(), q);
    let mut b = Vector::zeros(idx.len());
    for (r, ix) in idx.iter().enumerate() {
        let w = SymmetricTensor::multiplicity(ix).sqrt();
        for c in 0..q {
            a[(r, c)] = w * ix.iter().map(|&i| dirs[(i, c)]).product::<f64>();
        }
        b[r] = w * t.packed()[r];
    }
    pinv(&a) * b
}

/// Columns `|w|^{1/d} b`; odd order folds the sign into the column, even order records it.
fn scale_columns(dirs: &Matrix, weights: &Vector, d: usize) -> (Matrix, Vec<f64>) {
    let mut cols = dirs.clone();
    let mut signs = vec![1.0; dirs.ncols()];
    for (c, &w) in weights.iter().enumerate() {
        let root = w.abs().powf(1.0 / d as f64);
        if d % 2 == 1 {
            cols.column_mut(c).scale_mut(w.signum() * root);
        } else {
            cols.column_mut(c).scale_mut(root);
            if w < 0.0 {
                signs[c] = -1.0;
            }
        }
    }
    (cols, signs)
}

/// For even order the sign of each column is free; make its largest entry positive.
fn canonical_signs(cols: &mut Matrix) {
    for mut c in cols.column_iter_mut() {
        let (_, &v) = c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("nonempty column");
        if v < 0.0 {
            c.neg_mut();
        }
    }
}

/// Damped Gauss–Newton on `Σ_{packed} mult · (Σ_i s_i Π b_i[idx] − t[idx])²`.
pub fn polish(t: &SymmetricTensor, columns: &Matrix, signs: &[f64], iters: usize) -> Matrix {
    let d = t.order();
    let (p, q) = columns.shape();
    let idx = sorted_multi_indices(p, d);
    let weights: Vec<f64> = idx.iter().map(|ix| SymmetricTensor::multiplicity(ix).sqrt()).collect();
    let target = t.packed();
    let tnorm = t.frobenius_norm().max(f64::MIN_POSITIVE);

    let residual = |b: &Matrix| -> Vector {
        Vector::from_iterator(
            idx.len(),
            idx.iter().enumerate().map(|(r, ix)| {
                let model: f64 = (0..q).map(|c| signs[c] * ix.iter().map(|&i| b[(i, c)]).product::<f64>()).sum();
                weights[r] * (model - target[r])
            }),
        )
    };

    let mut b = columns.clone();
    let mut res = residual(&b);
    let mut cost = res.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..iters {
        if cost.sqrt() <= 1e-15 * tnorm {
            break;
        }
        let mut jac = Matrix::zeros(idx.len(), p * q);
        for (r, ix) in idx.iter().enumerate() {
            for c in 0..q {
                for m in 0..d {
                    let rest: f64 = ix.iter().enumerate().filter(|(k, _)| *k != m).map(|(_, &i)| b[(i, c)]).product();
                    jac[(r, c * p + ix[m])] += weights[r] * signs[c] * rest;
                }
            }
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..12 {
            let mut sys = jtj.clone();
            for k in 0..p * q {
                sys[(k, k)] += mu * (jtj[(k, k)] + 1e-12 * tnorm * tnorm);
            }
            let Some(step) = sys.lu().solve(&(-&grad)) else {
                mu *= 10.0;
                continue;
            };
            let cand = &b + Matrix::from_column_slice(p, q, step.as_slice());
            let cres = residual(&cand);
            let ccost = cres.norm_squared();
            if ccost < cost {
                let rel = (cost - ccost) / cost;
                b = cand;
                res = cres;
                cost = ccost;
                mu = (mu / 3.0).max(1e-15);
                improved = rel > 1e-14;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    b
}

fn finish(t: &SymmetricTensor, dirs: Matrix, config: &DecompConfig) -> Result<Factors> {
    let d = t.order();
    let w = fit_weights(t, &dirs);
    let (cols, signs) = scale_columns(&dirs, &w, d);
    let mut cols = polish(t, &cols, &signs, config.polish_iters);
    if d.is_multiple_of(2) {
        canonical_signs(&mut cols);
    }
    let residual = reconstruction_residual(t, &cols, &signs)?;
    if !residual.is_finite() {
        return Err(LcdError::NonFinite);
    }
    if let Some(tol) = config.residual_tol {
        if residual > tol {
            return Err(LcdError::Residual { residual, tol });
        }
    }
    Ok(Factors { columns: cols, signs, residual })
}

/// Simultaneous diagonalization of an order-3 tensor of rank `q ≤ p`.
pub fn jennrich_decompose<R: Rng + ?Sized>(
    t: &SymmetricTensor,
    q: usize,
    config: &DecompConfig,
    rng: &mut R,
) -> Result<Factors> {
    if t.order() != 3 {
        return Err(LcdError::UnsupportedOrder(t.order()));
    }
    check_rank(q)?;
    let p = t.dim();
    if q > p {
        return Err(LcdError::RankExceedsDimension { q, p });
    }
    check_flattening_rank(t, q, config)?;
    // Whiten onto the top-q left singular space of the (1,2) flattening.
    let flat = t.flatten(1, 2)?;
    let svd = flat.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let uq = Matrix::from_fn(p, q, |i, c| u[(i, order[c])]);
    let small = t.multilinear_transform(&uq.transpose())?;

    let slice = |w: &Vector| -> Result<Matrix> { small.contract_last(w.as_slice())?.to_matrix() };

    let mut last = String::from("no attempt");
    for _ in 0..config.max_retries.max(1) {
        let s1 = slice(&gaussian_unit(q, rng))?;
        let s2 = slice(&gaussian_unit(q, rng))?;
        let s2i = match inverse(&s2) {
            Ok(m) => m,
            Err(_) => {
                last = "singular slice".into();
                continue;
            }
        };
        let m = &s1 * s2i;
        let Some(eigs) = m.clone().eigenvalues() else {
            last = "complex eigenvalues".into();
            continue;
        };
        let scale = eigs.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        let mut gap = f64::INFINITY;
        for a in 0..q {
            for b in a + 1..q {
                gap = gap.min((eigs[a] - eigs[b]).abs());
            }
        }
        if !(scale > 0.0) || gap < config.min_gap * scale {
            last = format!("eigenvalue gap {:.3e}", gap / scale.max(f64::MIN_POSITIVE));
            continue;
        }
        let mut dirs = Matrix::zeros(p, q);
        for (c, &lam) in eigs.iter().enumerate() {
            let v = null_vector(&(&m - Matrix::identity(q, q) * lam));
            let b = &uq * v;
            let norm = b.norm();
            dirs.set_column(c, &(b / norm));
        }
        return finish(t, dirs, config);
    }
    Err(LcdError::Decomposition(format!("simultaneous diagonalization failed: {last}")))
}

/// Upper bound on `q` for the (2,2)-flattening subspace to determine the terms.
pub fn overcomplete_bound(p: usize) -> usize {
    p * (p + 1) / 2
}

fn top_eigenspace(m: &Matrix, k: usize) -> (Matrix, Vec<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    let v = Matrix::from_fn(m.nrows(), k, |i, c| eig.eigenvectors[(i, order[c])]);
    let e = order[..k].iter().map(|&o| eig.eigenvalues[o]).collect();
    (v, e)
}

fn outer_vec(x: &Vector) -> Vector {
    let p = x.len();
    Vector::from_fn(p * p, |r, _| x[r / p] * x[r % p])
}

/// Subspace power method for an order-4 tensor; `q` may exceed `p`.
pub fn overcomplete_decompose<R: Rng + ?Sized>(
    t: &SymmetricTensor,
    q: usize,
    config: &DecompConfig,
    rng: &mut R,
) -> Result<Factors> {
    if t.order() != 4 {
        return Err(LcdError::UnsupportedOrder(t.order()));
    }
    check_rank(q)?;
    let p = t.dim();
    let bound = overcomplete_bound(p);
    if q >= bound {
        return Err(LcdError::NotIdentifiable { q, p, bound });
    }
    check_flattening_rank(t, q, config)?;
    let mut flat = t.flatten(2, 2)?;
    let mut dirs = Matrix::zeros(p, q);
    for found in 0..q {
        let remaining = q - found;
        let (v, e) = top_eigenspace(&flat, remaining);
        if e.contains(&0.0) {
            return Err(LcdError::Decomposition("flattening has lower rank than requested".into()));
        }
        let mut best: Option<(f64, Vector)> = None;
        for _ in 0..config.starts.max(1) {
            let mut x = gaussian_unit(p, rng);
            let mut val: f64 = 0.0;
            for _ in 0..config.max_power_iters {
                let proj = &v * (v.transpose() * outer_vec(&x));
                let y = Matrix::from_row_slice(p, p, proj.as_slice());
                let next = &y * &x + &x * config.shift;
                let norm = next.norm();
                if norm == 0.0 || !norm.is_finite() {
                    break;
                }
                let next = next / norm;
                let step = (&next - &x).norm();
                x = next;
                if step < 1e-15 {
                    break;
                }
            }
            let xx = outer_vec(&x);
            let coeff = v.transpose() * &xx;
            val = val.max(coeff.norm_squared());
            if best.as_ref().is_none_or(|(b, _)| val > *b) {
                best = Some((val, x));
            }
            if val > 1.0 - 1e-14 {
                break;
            }
        }
        let (_, x) = best.ok_or_else(|| LcdError::Decomposition("power iteration produced nothing".into()))?;
        let xx = outer_vec(&x);
        let coeff = v.transpose() * &xx;
        let denom: f64 = coeff.iter().zip(&e).map(|(c, ev)| c * c / ev).sum();
        if denom == 0.0 || !denom.is_finite() {
            return Err(LcdError::Decomposition("degenerate deflation weight".into()));
        }
        let lambda = 1.0 / denom;
        flat -= &xx * xx.transpose() * lambda;
        dirs.set_column(found, &x);
    }
    finish(t, dirs, config)
}

/// Runs the method on every context in parallel, one derived seed per context.
pub fn decompose_contexts<R: Rng + ?Sized>(
    tensors: &[SymmetricTensor],
    q: usize,
    method: DecompMethod,
    config: &DecompConfig,
    rng: &mut R,
) -> Result<FactorSet> {
    let first = tensors.first().ok_or_else(|| LcdError::InvalidInput("no tensors".into()))?;
    let (d, p) = (first.order(), first.dim());
    if tensors.iter().any(|t| t.order() != d || t.dim() != p) {
        return Err(LcdError::ShapeMismatch("tensors differ in order or dimension".into()));
    }
    if d != method.order() {
        return Err(LcdError::UnsupportedOrder(d));
    }
    let seeds: Vec<u64> = tensors.iter().map(|_| rng.random()).collect();
    let factors = tensors
        .par_iter()
        .zip(seeds)
        .map(|(t, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            match method {
                DecompMethod::Injective => jennrich_decompose(t, q, config, &mut r),
                DecompMethod::General => overcomplete_decompose(t, q, config, &mut r),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorSet { d, factors })
}

/// Max over columns of `a` of the distance to the nearest column of `b` (up to sign if `signed`).
pub fn column_match_distance(a: &Matrix, b: &Matrix, up_to_sign: bool) -> f64 {
    a.column_iter()
        .map(|ca| {
            b.column_iter()
                .map(|cb| {
                    let plain = (ca - cb).norm();
                    if up_to_sign {
                        plain.min((ca + cb).norm())
                    } else {
                        plain
                    }
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::permutation_matrix;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(p: usize, q: usize, r: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(p, q, |_, _| r.random_range(-2.0..=2.0))
    }

    fn both_ways(a: &Matrix, b: &Matrix, signed: bool) -> f64 {
        column_match_distance(a, b, signed).max(column_match_distance(b, a, signed))
    }

    #[test]
    fn jennrich_rank_one() {
        let a = Matrix::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 3.0]);
        let t = SymmetricTensor::from_rank_one_terms(3, &[2.0], &a).unwrap();
        let f = jennrich_decompose(&t, 1, &DecompConfig::exact(DecompMethod::Injective), &mut rng(0)).unwrap();
        assert!((f.columns.column(0) - a.column(0) * 2f64.cbrt()).norm() < 1e-8);
    }

    #[test]
    fn jennrich_random_factors() {
        let mut r = rng(1);
        let cfg = DecompConfig::exact(DecompMethod::Injective);
        for _ in 0..20 {
            let a = random_matrix(5, 3, &mut r);
            let t = SymmetricTensor::from_rank_one_terms(3, &[1.0; 3], &a).unwrap();
            let f = jennrich_decompose(&t, 3, &cfg, &mut r).unwrap();
            assert!(both_ways(&f.columns, &a, false) < 1e-8);
            assert!(f.residual < 1e-8);
        }
    }

    #[test]
    fn jennrich_negative_weights_fold_into_sign() {
        let mut r = rng(2);
        let a = random_matrix(4, 2, &mut r);
        let t = SymmetricTensor::from_rank_one_terms(3, &[-1.0, 1.0], &a).unwrap();
        let f = jennrich_decompose(&t, 2, &DecompConfig::exact(DecompMethod::Injective), &mut r).unwrap();
        let mut expect = a.clone();
        expect.column_mut(0).neg_mut();
        assert!(both_ways(&f.columns, &expect, false) < 1e-8);
        assert_eq!(f.signs, vec![1.0, 1.0]);
    }

    #[test]
    fn jennrich_rejects_bad_rank() {
        let t = SymmetricTensor::zeros(3, 3);
        let cfg = DecompConfig::exact(DecompMethod::Injective);
        assert_eq!(
            jennrich_decompose(&t, 4, &cfg, &mut rng(0)).unwrap_err(),
            LcdError::RankExceedsDimension { q: 4, p: 3 }
        );
        assert!(jennrich_decompose(&t, 0, &cfg, &mut rng(0)).is_err());
        assert!(jennrich_decompose(&SymmetricTensor::zeros(4, 3), 2, &cfg, &mut rng(0)).is_err());
    }

    #[test]
    fn misspecified_rank_is_reported() {
        let mut r = rng(3);
        let a = random_matrix(5, 3, &mut r);
        let t = SymmetricTensor::from_rank_one_terms(3, &[1.0; 3], &a).unwrap();
        let cfg = DecompConfig::exact(DecompMethod::Injective);
        assert!(jennrich_decompose(&t, 2, &cfg, &mut r).is_err());
        assert!(jennrich_decompose(&t, 4, &cfg, &mut r).is_err());
    }

    #[test]
    fn overcomplete_rank_one() {
        let a = Matrix::from_column_slice(3, 1, &[0.5, -1.0, 2.0]);
        let t = SymmetricTensor::from_rank_one_terms(4, &[3.0], &a).unwrap();
        let f = overcomplete_decompose(&t, 1, &DecompConfig::exact(DecompMethod::General), &mut rng(0)).unwrap();
        assert_eq!(f.signs, vec![1.0]);
        let expect = a.column(0) * 3f64.powf(0.25);
        assert!((f.columns.column(0) - &expect).norm().min((f.columns.column(0) + &expect).norm()) < 1e-8);
    }

    #[test]
    fn overcomplete_negative_term() {
        let mut r = rng(4);
        let a = random_matrix(4, 3, &mut r);
        let w = [1.0, -1.0, 1.0];
        let t = SymmetricTensor::from_rank_one_terms(4, &w, &a).unwrap();
        let f = overcomplete_decompose(&t, 3, &DecompConfig::exact(DecompMethod::General), &mut r).unwrap();
        assert!(both_ways(&f.columns, &a, true) < 1e-6);
        for c in 0..3 {
            let matched = (0..3)
                .min_by(|&x, &y| {
                    let dx = (f.columns.column(c) - a.column(x)).norm().min((f.columns.column(c) + a.column(x)).norm());
                    let dy = (f.columns.column(c) - a.column(y)).norm().min((f.columns.column(c) + a.column(y)).norm());
                    dx.total_cmp(&dy)
                })
                .unwrap();
            assert_eq!(f.signs[c], w[matched]);
        }
    }

    #[test]
    fn overcomplete_beyond_dimension() {
        let mut r = rng(5);
        let cfg = DecompConfig::exact(DecompMethod::General);
        for q in [6, 7] {
            let a = random_matrix(5, q, &mut r);
            let t = SymmetricTensor::from_rank_one_terms(4, &vec![1.0; q], &a).unwrap();
            let f = overcomplete_decompose(&t, q, &cfg, &mut r).unwrap();
            assert!(f.residual < 1e-5);
            assert!(both_ways(&f.columns, &a, true) < 1e-4);
        }
    }

    #[test]
    fn binary_quartics_of_rank_three_are_not_identifiable() {
        let mut r = rng(6);
        let a = random_matrix(2, 3, &mut r);
        let t = SymmetricTensor::from_rank_one_terms(4, &[1.0; 3], &a).unwrap();
        let err = overcomplete_decompose(&t, 3, &DecompConfig::exact(DecompMethod::General), &mut r).unwrap_err();
        assert_eq!(err, LcdError::NotIdentifiable { q: 3, p: 2, bound: 3 });
        assert_eq!(estimate_latent_count(&t, 1e-10).unwrap(), 3);
    }

    #[test]
    fn latent_count_examples() {
        let mut r = rng(7);
        let a = random_matrix(5, 3, &mut r);
        let t = SymmetricTensor::from_rank_one_terms(4, &[1.0, -2.0, 0.5], &a).unwrap();
        assert_eq!(estimate_latent_count(&t, 1e-10).unwrap(), 3);
        assert_eq!(estimate_latent_count(&SymmetricTensor::zeros(4, 5), 1e-10).unwrap(), 0);
        let t3 = SymmetricTensor::from_rank_one_terms(3, &[1.0; 3], &a).unwrap();
        assert_eq!(estimate_latent_count(&t3, 1e-10).unwrap(), 3);
        let g = random_matrix(5, 5, &mut r);
        let moved = t.multilinear_transform(&g).unwrap();
        assert_eq!(estimate_latent_count(&moved, 1e-10).unwrap(), 3);
    }

    #[test]
    fn decomposition_is_equivariant_under_signed_permutations() {
        let mut r = rng(8);
        let a = random_matrix(5, 3, &mut r);
        let t = SymmetricTensor::from_rank_one_terms(3, &[1.0; 3], &a).unwrap();
        let pd = permutation_matrix(&[2, 0, 4, 1, 3]) * Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0, 1.0, 1.0, -1.0]));
        let moved = t.multilinear_transform(&pd).unwrap();
        let cfg = DecompConfig::exact(DecompMethod::Injective);
        let f = jennrich_decompose(&t, 3, &cfg, &mut r).unwrap();
        let g = jennrich_decompose(&moved, 3, &cfg, &mut r).unwrap();
        assert!(both_ways(&(&pd * &f.columns), &g.columns, true) < 1e-8);
        // Odd order: repeated runs agree exactly up to order, no sign freedom.
        let h = jennrich_decompose(&t, 3, &cfg, &mut rng(99)).unwrap();
        assert!(both_ways(&f.columns, &h.columns, false) < 1e-8);
    }

    #[test]
    fn contexts_are_decomposed_independently() {
        let mut r = rng(9);
        let ts: Vec<_> = (0..3)
            .map(|_| SymmetricTensor::from_rank_one_terms(3, &[1.0; 4], &random_matrix(10, 4, &mut r)).unwrap())
            .collect();
        let set = decompose_contexts(&ts, 4, DecompMethod::Injective, &DecompConfig::exact(DecompMethod::Injective), &mut r)
            .unwrap();
        assert_eq!(set.factors.len(), 3);
        assert!(set.max_residual() <= 1e-8);
        assert!(decompose_contexts(&ts, 4, DecompMethod::General, &DecompConfig::default(), &mut r).is_err());
        assert!(decompose_contexts(&[], 4, DecompMethod::General, &DecompConfig::default(), &mut r).is_err());
    }
}
