//! Parameter recovery under perfect interventions and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::align::AlignedContexts;
use crate::error::{LcdError, Result};
use crate::graph::Dag;
use crate::linalg::{inverse, numerical_rank, pinv, Matrix};
use crate::model::LcdModel;

pub use crate::linalg::relative_frobenius_error;

/// Default cut-off on `|λ|` for reading edges off an estimate.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub f_hat: Matrix,
    pub lambda0_hat: Matrix,
    pub dag_hat: Dag,
    /// Relative distance of `A^(k)(I − Λ^(k))` from `A^(0)(I − Λ^(0))`, per intervened context.
    pub residuals: Vec<f64>,
    /// Edges had to be dropped to make the thresholded support acyclic.
    pub cycles_broken: bool,
}

/// `(I − Λ^(0))^{-1}` from aligned contexts, anchored per column on the largest observed entry.
pub fn latent_inverse_perfect(ac: &AlignedContexts) -> Result<Matrix> {
    let q = ac.q();
    if ac.a.len() != q + 1 {
        return Err(LcdError::InvalidInput(format!("need {} aligned contexts, got {}", q + 1, ac.a.len())));
    }
    let a0 = &ac.a[0];
    let mut b = Matrix::identity(q, q);
    for i in 0..q {
        let (anchor, pivot) = a0
            .column(i)
            .iter()
            .copied()
            .enumerate()
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .ok_or_else(|| LcdError::InvalidInput("empty matrices".into()))?;
        if pivot == 0.0 {
            return Err(LcdError::Singular(format!("column {} of A^(0) vanishes", i + 1)));
        }
        let ai = &ac.a[i + 1];
        for j in 0..q {
            if j != i {
                b[(i, j)] = (a0[(anchor, j)] - ai[(anchor, j)]) / pivot;
            }
        }
    }
    Ok(b)
}

/// `Λ^(0) = I − B^{-1}` with `B = (I − Λ^(0))^{-1}` read off the context differences.
pub fn recover_lambda_perfect(ac: &AlignedContexts) -> Result<Matrix> {
    let b = latent_inverse_perfect(ac)?;
    let q = b.nrows();
    Ok(Matrix::identity(q, q) - inverse(&b)?)
}

/// `F = A^(0) (I − Λ^(0))`.
pub fn recover_f(ac: &AlignedContexts, lambda0: &Matrix) -> Result<Matrix> {
    let q = ac.q();
    if lambda0.shape() != (q, q) {
        return Err(LcdError::ShapeMismatch(format!("Λ is {:?}, expected {q}x{q}", lambda0.shape())));
    }
    Ok(&ac.a[0] * (Matrix::identity(q, q) - lambda0))
}

/// Pseudo-inverse route: row `k` of `H = F^+` is row `k` of `(A^(k))^+`; then `Λ^(0) = I − (A^(0))^+ F`.
pub fn recover_injective(ac: &AlignedContexts) -> Result<(Matrix, Matrix)> {
    let (p, q) = (ac.p(), ac.q());
    if q > p {
        return Err(LcdError::RankExceedsDimension { q, p });
    }
    if ac.a.len() != q + 1 {
        return Err(LcdError::InvalidInput(format!("need {} aligned contexts, got {}", q + 1, ac.a.len())));
    }
    let mut h = Matrix::zeros(q, p);
    for k in 0..q {
        h.set_row(k, &pinv(&ac.a[k + 1]).row(k));
    }
    if numerical_rank(&h, 1e-12) < q {
        return Err(LcdError::Singular("H is rank deficient".into()));
    }
    let f = pinv(&h);
    let lambda0 = Matrix::identity(q, q) - pinv(&ac.a[0]) * &f;
    Ok((f, lambda0))
}

/// Edges `j → i` for `|λ_{i,j}| > edge_thr`; a cyclic support is an error.
pub fn threshold_dag(lambda0: &Matrix, edge_thr: f64) -> Result<Dag> {
    if !(edge_thr > 0.0) {
        return Err(LcdError::InvalidInput("edge threshold must be positive".into()));
    }
    let q = lambda0.nrows();
    let edges = (0..q).flat_map(|i| (0..q).map(move |j| (i, j))).filter(|&(i, j)| i != j && lambda0[(i, j)].abs() > edge_thr);
    Dag::new(q, edges.map(|(i, j)| (j, i)))
}

/// Like [`threshold_dag`], but adds edges strongest first and skips any that would close a cycle.
///
/// Each skipped edge is the weakest on the cycle it would close. Returns whether anything was dropped.
pub fn threshold_dag_acyclic(lambda0: &Matrix, edge_thr: f64) -> Result<(Dag, bool)> {
    if let Ok(dag) = threshold_dag(lambda0, edge_thr) {
        return Ok((dag, false));
    }
    let q = lambda0.nrows();
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..q {
        for j in 0..q {
            let v = lambda0[(i, j)].abs();
            if i != j && v > edge_thr {
                cand.push((v, j, i));
            }
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut dag = Dag::empty(q);
    let mut kept = Vec::new();
    for (_, from, to) in cand {
        if from == to || dag.descendants(to).contains(&from) {
            continue;
        }
        kept.push((from, to));
        dag = Dag::new(q, kept.iter().copied())?;
    }
    Ok((dag, true))
}

/// Max over contexts of the relative distance between `A^(k)(I − Λ^(k))` and `A^(0)(I − Λ^(0))`.
pub fn goodness_of_fit(a: &[Matrix], lambdas: &[Matrix]) -> Result<f64> {
    Ok(context_residuals(a, lambdas)?.into_iter().fold(0.0, f64::max))
}

fn context_residuals(a: &[Matrix], lambdas: &[Matrix]) -> Result<Vec<f64>> {
    if a.len() != lambdas.len() || a.is_empty() {
        return Err(LcdError::InvalidInput("one Λ per context required".into()));
    }
    let q = a[0].ncols();
    let eye = Matrix::identity(q, q);
    let f0 = &a[0] * (&eye - &lambdas[0]);
    let scale = f0.norm().max(f64::MIN_POSITIVE);
    Ok(a[1..]
        .iter()
        .zip(&lambdas[1..])
        .map(|(ak, lk)| (ak * (&eye - lk) - &f0).norm() / scale)
        .collect())
}

/// `Λ^(k)` implied by a perfect intervention on node `k - 1`: `Λ^(0)` with that row cleared.
pub fn perfect_context_lambdas(lambda0: &Matrix) -> Vec<Matrix> {
    let q = lambda0.nrows();
    let mut out = vec![lambda0.clone()];
    for k in 0..q {
        let mut l = lambda0.clone();
        l.row_mut(k).fill(0.0);
        out.push(l);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    General,
    Injective,
}

/// Full recovery from aligned contexts.
pub fn recover(ac: &AlignedContexts, route: Route, edge_thr: f64) -> Result<RecoveryResult> {
    let (f_hat, lambda0_hat) = match route {
        Route::General => {
            let l = recover_lambda_perfect(ac)?;
            (recover_f(ac, &l)?, l)
        }
        Route::Injective => recover_injective(ac)?,
    };
    if f_hat.iter().chain(lambda0_hat.iter()).any(|v| !v.is_finite()) {
        return Err(LcdError::NonFinite);
    }
    let (dag_hat, cycles_broken) = threshold_dag_acyclic(&lambda0_hat, edge_thr)?;
    let residuals = context_residuals(&ac.a, &perfect_context_lambdas(&lambda0_hat))?;
    Ok(RecoveryResult { f_hat, lambda0_hat, dag_hat, residuals, cycles_broken })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub err_f: f64,
    pub err_lambda: f64,
    pub dag_err: usize,
}

/// Compares a recovery with the generating model.
///
/// With `fix_signs` each recovered column of `F` is flipped to agree with the truth first
/// (and `Λ` conjugated accordingly), since even-order cumulants do not see column signs.
/// When the true `Λ^(0)` is zero the absolute norm of the estimate is reported.
pub fn evaluate(model: &LcdModel, result: &RecoveryResult, fix_signs: bool) -> Result<Metrics> {
    let mut f = result.f_hat.clone();
    let mut l = result.lambda0_hat.clone();
    if fix_signs {
        let q = f.ncols();
        let s: Vec<f64> = (0..q)
            .map(|j| if model.f.column(j).dot(&f.column(j)) < 0.0 { -1.0 } else { 1.0 })
            .collect();
        for j in 0..q {
            f.column_mut(j).scale_mut(s[j]);
        }
        for i in 0..q {
            for j in 0..q {
                l[(i, j)] *= s[i] * s[j];
            }
        }
    }
    let err_f = relative_frobenius_error(&model.f, &f)?;
    let err_lambda = if model.lambda0.norm() == 0.0 {
        if l.shape() != model.lambda0.shape() {
            return Err(LcdError::ShapeMismatch("Λ estimate shape".into()));
        }
        l.norm()
    } else {
        relative_frobenius_error(&model.lambda0, &l)?
    };
    let dag_err = Dag::structural_error(&model.dag, &result.dag_hat)?;
    Ok(Metrics { err_f, err_lambda, dag_err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{align_general, align_injective, AlignConfig};
    use crate::model::{Context, InterventionKind, NoiseSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn exact_aligned(model: &LcdModel) -> AlignedContexts {
        AlignedContexts {
            a: (0..=model.q).map(|k| model.mixing_matrix(k).unwrap()).collect(),
            targets: (0..model.q).collect(),
            scalings: vec![1.0; model.q],
            diagnostics: vec![0.0; model.q],
        }
    }

    fn perfect_model(f: Matrix, dag: Dag, lambda0: Matrix) -> LcdModel {
        let q = dag.q();
        let contexts = (0..q)
            .map(|t| {
                let mut lambda = lambda0.clone();
                lambda.row_mut(t).fill(0.0);
                Context { target: t, kind: InterventionKind::Perfect, lambda, noise: vec![NoiseSpec::canonical(3); q] }
            })
            .collect();
        LcdModel {
            p: f.nrows(),
            q,
            dag,
            f,
            lambda0,
            noise0: vec![NoiseSpec::canonical(3); q],
            contexts,
            d_star: 3,
        }
    }

    #[test]
    fn empty_dag_gives_identity() {
        let mut r = rng(0);
        let f = Matrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64).sin() + if i == j { 2.0 } else { 0.0 });
        let m = perfect_model(f.clone(), Dag::empty(3), Matrix::zeros(3, 3));
        let ac = exact_aligned(&m);
        assert_eq!(latent_inverse_perfect(&ac).unwrap(), Matrix::identity(3, 3));
        let l = recover_lambda_perfect(&ac).unwrap();
        assert!(l.norm() < 1e-15);
        assert!((recover_f(&ac, &l).unwrap() - &f).norm() < 1e-14);
        let _ = &mut r;
    }

    #[test]
    fn chain_path_product() {
        let chain = Dag::from_labeled(3, &[(3, 2), (2, 1)]).unwrap();
        let mut l = Matrix::zeros(3, 3);
        l[(0, 1)] = 0.6;
        l[(1, 2)] = -0.8;
        let m = perfect_model(Matrix::identity(3, 3), chain.clone(), l.clone());
        let ac = exact_aligned(&m);
        let b = latent_inverse_perfect(&ac).unwrap();
        assert!((b[(0, 2)] - 0.6 * -0.8).abs() < 1e-14);
        let lh = recover_lambda_perfect(&ac).unwrap();
        assert!((&lh - &l).abs().max() < 1e-10);
        let fh = recover_f(&ac, &lh).unwrap();
        assert!((fh - Matrix::identity(3, 3)).norm() < 1e-8);
        assert_eq!(threshold_dag(&lh, 0.1).unwrap(), chain);
    }

    #[test]
    fn random_round_trips() {
        let mut r = rng(1);
        for _ in 0..20 {
            let m = LcdModel::sample(5, 4, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
            let ac = exact_aligned(&m);
            let res = recover(&ac, Route::General, DEFAULT_EDGE_THRESHOLD).unwrap();
            let met = evaluate(&m, &res, false).unwrap();
            assert!(met.err_f <= 1e-8 && met.err_lambda <= 1e-8, "{met:?}");
            assert_eq!(met.dag_err, 0);
            assert!(res.residuals.iter().all(|&x| x <= 1e-8));
            assert!(!res.cycles_broken);
        }
    }

    #[test]
    fn injective_route_round_trip_and_agreement() {
        let mut r = rng(2);
        for _ in 0..10 {
            let m = LcdModel::sample(10, 4, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
            let ac = exact_aligned(&m);
            let g = recover(&ac, Route::General, 0.1).unwrap();
            let i = recover(&ac, Route::Injective, 0.1).unwrap();
            let met = evaluate(&m, &i, false).unwrap();
            assert!(met.err_f <= 1e-8 && met.err_lambda <= 1e-8);
            assert!((&g.f_hat - &i.f_hat).norm() <= 1e-8 * g.f_hat.norm());
            assert!((&g.lambda0_hat - &i.lambda0_hat).norm() <= 1e-8);
        }
        // Orthonormal columns, no edges.
        let q = Matrix::identity(6, 3);
        let m = perfect_model(q, Dag::empty(3), Matrix::zeros(3, 3));
        let (_, l) = recover_injective(&exact_aligned(&m)).unwrap();
        assert!(l.norm() < 1e-10);
    }

    #[test]
    fn anchor_row_does_not_matter() {
        let mut r = rng(3);
        let m = LcdModel::sample(6, 4, 1.0, InterventionKind::Perfect, 3, &mut r).unwrap();
        let ac = exact_aligned(&m);
        let best = latent_inverse_perfect(&ac).unwrap();
        for anchor in 0..6 {
            let a0 = &ac.a[0];
            let mut b = Matrix::identity(4, 4);
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        b[(i, j)] = (a0[(anchor, j)] - ac.a[i + 1][(anchor, j)]) / a0[(anchor, i)];
                    }
                }
            }
            assert!((b - &best).norm() < 1e-8);
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_dag(&Matrix::zeros(3, 3), 0.1).unwrap(), Dag::empty(3));
        let mut l = Matrix::zeros(2, 2);
        l[(0, 1)] = 0.3;
        l[(1, 0)] = 0.3;
        assert_eq!(threshold_dag(&l, 0.1).unwrap_err(), LcdError::Cyclic);
        l[(1, 0)] = 0.2;
        let (dag, broken) = threshold_dag_acyclic(&l, 0.1).unwrap();
        assert!(broken);
        assert_eq!(dag, Dag::new(2, [(1, 0)]).unwrap());
        assert!(threshold_dag(&l, 0.0).is_err());
    }

    #[test]
    fn goodness_of_fit_examples() {
        let mut r = rng(4);
        let m = LcdModel::sample(5, 3, 1.0, InterventionKind::Perfect, 3, &mut r).unwrap();
        let ac = exact_aligned(&m);
        let mut lambdas: Vec<Matrix> = (0..=3).map(|k| m.lambda(k).unwrap().clone()).collect();
        assert!(goodness_of_fit(&ac.a, &lambdas).unwrap() <= 1e-8);
        assert_eq!(goodness_of_fit(&ac.a[..1], &lambdas[..1]).unwrap(), 0.0);
        let (i, j) = m.dag.edges().next().map(|(j, i)| (i, j)).unwrap();
        lambdas[1][(i, j)] += 0.5;
        if i != 0 {
            assert!(goodness_of_fit(&ac.a, &lambdas).unwrap() > 1e-3);
        }
    }

    #[test]
    fn perfect_context_rows_vanish() {
        let mut r = rng(5);
        let m = LcdModel::sample(7, 4, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
        let ac = exact_aligned(&m);
        let (f, _) = recover_injective(&ac).unwrap();
        for k in 1..=4 {
            let lk = Matrix::identity(4, 4) - pinv(&ac.a[k]) * &f;
            assert!(lk.row(k - 1).norm() <= 1e-8);
        }
    }

    #[test]
    fn aligned_pipeline_from_factor_matrices() {
        let mut r = rng(6);
        let m = LcdModel::sample(6, 3, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
        let factors: Vec<Matrix> = (0..=3)
            .map(|k| {
                let mut a = m.mixing_matrix(k).unwrap();
                for (i, kap) in m.noise_cumulants(k, 3).unwrap().into_iter().enumerate() {
                    a.column_mut(i).scale_mut(kap.cbrt());
                }
                a
            })
            .collect();
        let g = align_general(&factors, &AlignConfig::exact()).unwrap();
        let i = align_injective(&factors, &AlignConfig::exact()).unwrap();
        let rg = recover(&g, Route::General, 0.1).unwrap();
        let ri = recover(&i, Route::Injective, 0.1).unwrap();
        for res in [rg, ri] {
            let met = evaluate(&m, &res, false).unwrap();
            assert!(met.err_f <= 1e-8 && met.err_lambda <= 1e-8 && met.dag_err == 0);
        }
    }

    #[test]
    fn sign_gauge_in_evaluation() {
        let mut r = rng(7);
        let m = LcdModel::sample(5, 3, 1.0, InterventionKind::Perfect, 4, &mut r).unwrap();
        let res = recover(&exact_aligned(&m), Route::General, 0.1).unwrap();
        let mut flipped = res.clone();
        flipped.f_hat.column_mut(1).neg_mut();
        for i in 0..3 {
            flipped.lambda0_hat[(i, 1)] *= -1.0;
            flipped.lambda0_hat[(1, i)] *= -1.0;
        }
        let plain = evaluate(&m, &flipped, false).unwrap();
        let fixed = evaluate(&m, &flipped, true).unwrap();
        assert!(plain.err_f > 0.1);
        assert!(fixed.err_f < 1e-8 && fixed.err_lambda < 1e-8);
    }
}
