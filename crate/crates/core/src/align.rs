//! Resolving column order, signs, scalings and intervention targets across contexts.
//!
//! Context 0 is observational and fixes the reference labelling. After alignment
//! nodes are relabelled so that context `k` targets node `k - 1` (0-based).

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{LcdError, Result};
use crate::linalg::{max_weight_assignment, numerical_rank, permutation_matrix, pinv, relative_distance, singular_values, Matrix};

/// Largest `q` for the exhaustive signed-permutation search.
pub const DEFAULT_PERM_CAP: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    /// Relative row distance that counts as a match (injective route).
    pub match_tol: f64,
    /// Relative projection residual under which two columns count as collinear.
    pub collinear_tol: f64,
    /// `|ln|r||` below which a column ratio counts as one.
    pub unit_tol: f64,
    pub perm_cap: usize,
    /// Two search candidates closer than this are ambiguous.
    pub tie_tol: f64,
    /// Require exactly one unmatched row per context (injective route); off for estimated input,
    /// where the row farthest from its match is taken as the target.
    pub strict: bool,
}

impl AlignConfig {
    pub fn exact() -> Self {
        AlignConfig {
            match_tol: 1e-6,
            collinear_tol: 1e-6,
            unit_tol: 1e-6,
            perm_cap: DEFAULT_PERM_CAP,
            tie_tol: 1e-10,
            strict: true,
        }
    }

    pub fn sampled() -> Self {
        AlignConfig {
            match_tol: 1e-2,
            collinear_tol: 1e-2,
            unit_tol: 0.1,
            perm_cap: DEFAULT_PERM_CAP,
            tie_tol: 1e-10,
            strict: false,
        }
    }
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self::exact()
    }
}

/// `A^(0..=K)` in a common labelling, context `k` targeting node `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedContexts {
    pub a: Vec<Matrix>,
    /// Target of context `k` (entry `k - 1`) in the column order of the observational input.
    pub targets: Vec<usize>,
    /// Recovered `D^(k)` entry at the target.
    pub scalings: Vec<f64>,
    /// `σ_2/σ_1` of `A^(0) − A^(k)` (general route) or the target row distance (injective route).
    pub diagnostics: Vec<f64>,
}

impl AlignedContexts {
    pub fn q(&self) -> usize {
        self.a[0].ncols()
    }

    pub fn p(&self) -> usize {
        self.a[0].nrows()
    }

    /// `σ_2/σ_1` of `A^(0) − A^(k)` for every intervened context.
    pub fn rank_one_certificates(&self) -> Vec<f64> {
        self.a[1..]
            .iter()
            .map(|ak| {
                let s = singular_values(&(&self.a[0] - ak));
                match (s.first(), s.get(1)) {
                    (Some(&s1), Some(&s2)) if s1 > 0.0 => s2 / s1,
                    _ => 0.0,
                }
            })
            .collect()
    }
}

/// Pseudo-inverses `C^(k)` of the factor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PinvContexts {
    pub c: Vec<Matrix>,
}

impl PinvContexts {
    pub fn new(factors: &[Matrix]) -> Result<Self> {
        let c = factors
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if m.ncols() > m.nrows() {
                    return Err(LcdError::RankExceedsDimension { q: m.ncols(), p: m.nrows() });
                }
                if numerical_rank(m, 1e-12) < m.ncols() {
                    return Err(LcdError::Singular(format!("factor matrix {k} lacks full column rank")));
                }
                Ok(pinv(m))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PinvContexts { c })
    }
}

/// Signed permutation acting on columns: column `c` of `M·mat` is `signs[c] · M[:, perm[c]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedPerm {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

impl SignedPerm {
    /// Uniform permutation; signs are uniform `±1` when `signed`, else all `+1`.
    pub fn random<R: Rng + ?Sized>(q: usize, signed: bool, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..q).collect();
        perm.shuffle(rng);
        let signs = (0..q).map(|_| if signed && rng.random::<bool>() { -1.0 } else { 1.0 }).collect();
        SignedPerm { perm, signs }
    }

    pub fn to_matrix(&self) -> Matrix {
        let q = self.perm.len();
        let mut m = Matrix::zeros(q, q);
        for (c, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            m[(j, c)] = s;
        }
        m
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), self.perm.len());
        for (c, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            out.set_column(c, &(m.column(j) * s));
        }
        out
    }

    fn is_sign_twin(&self, other: &SignedPerm) -> bool {
        self.perm == other.perm && self.signs.iter().zip(&other.signs).filter(|(a, b)| a != b).count() == 1
    }
}

/// Result of the signed-permutation search.
#[derive(Debug, Clone, PartialEq)]
pub struct PermSearch {
    pub best: SignedPerm,
    pub sigma2: f64,
    /// Smallest value among candidates that are not a single sign flip of the best.
    pub runner_up: f64,
}

fn second_singular(m: &Matrix) -> f64 {
    singular_values(m).get(1).copied().unwrap_or(0.0)
}

struct Search<'a> {
    m0: &'a Matrix,
    mk: &'a Matrix,
    keep: usize,
    top: Vec<(f64, SignedPerm)>,
}

impl Search<'_> {
    fn threshold(&self) -> f64 {
        if self.top.len() < self.keep {
            f64::INFINITY
        } else {
            self.top[self.top.len() - 1].0
        }
    }

    fn offer(&mut self, value: f64, cand: SignedPerm) {
        if value >= self.threshold() {
            return;
        }
        let pos = self.top.partition_point(|(v, _)| *v <= value);
        self.top.insert(pos, (value, cand));
        self.top.truncate(self.keep);
    }

    fn descend(&mut self, partial: &Matrix, used: u32, perm: &mut Vec<usize>, signs: &mut Vec<f64>) {
        let q = self.m0.ncols();
        let m = perm.len();
        if m == q {
            let value = second_singular(partial);
            self.offer(value, SignedPerm { perm: perm.clone(), signs: signs.clone() });
            return;
        }
        let mut children = Vec::with_capacity(2 * (q - m));
        for j in 0..q {
            if used & (1 << j) != 0 {
                continue;
            }
            for s in [1.0, -1.0] {
                let mut next = partial.clone().insert_column(m, 0.0);
                next.set_column(m, &(self.m0.column(m) - self.mk.column(j) * s));
                let bound = if m == 0 { 0.0 } else { second_singular(&next) };
                children.push((bound, j, s, next));
            }
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (bound, j, s, next) in children {
            // Interlacing: deleting columns cannot raise σ_2, so the partial value bounds every completion.
            if bound > self.threshold() {
                break;
            }
            perm.push(j);
            signs.push(s);
            self.descend(&next, used | (1 << j), perm, signs);
            perm.pop();
            signs.pop();
        }
    }
}

/// Exhaustive branch-and-bound over all `2^q q!` signed permutations minimising `σ_2(M0 − Mk·mat)`.
pub fn search_signed_permutation(m0: &Matrix, mk: &Matrix, cap: usize) -> Result<PermSearch> {
    if m0.shape() != mk.shape() {
        return Err(LcdError::ShapeMismatch(format!("{:?} vs {:?}", m0.shape(), mk.shape())));
    }
    let q = m0.ncols();
    if q == 0 {
        return Err(LcdError::InvalidInput("no columns".into()));
    }
    if q > cap {
        return Err(LcdError::CapExceeded { q, cap });
    }
    // A sign flip of a single column can tie with the best; keep enough candidates to see past them.
    let mut s = Search { m0, mk, keep: q + 2, top: Vec::new() };
    s.descend(&Matrix::zeros(m0.nrows(), 0), 0, &mut Vec::new(), &mut Vec::new());
    let (sigma2, best) = s.top[0].clone();
    let runner_up = s.top[1..]
        .iter()
        .find(|(_, c)| !c.is_sign_twin(&best))
        .map(|(v, _)| *v)
        .unwrap_or(f64::INFINITY);
    Ok(PermSearch { best, sigma2, runner_up })
}

/// Signed permutation `Q` such that `Mk·Qᵀ` is column- and sign-aligned with `M0`.
pub fn recover_perm_general(m0: &Matrix, mk: &Matrix, config: &AlignConfig) -> Result<Matrix> {
    let s = search_signed_permutation(m0, mk, config.perm_cap)?;
    check_unambiguous(&s, m0, config)?;
    Ok(s.best.to_matrix().transpose())
}

fn check_unambiguous(s: &PermSearch, m0: &Matrix, config: &AlignConfig) -> Result<()> {
    let scale = singular_values(m0).first().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    if (s.runner_up - s.sigma2) <= config.tie_tol * scale {
        return Err(LcdError::Alignment(format!(
            "ambiguous permutation: two candidates reach σ_2 ≈ {:.3e}",
            s.sigma2
        )));
    }
    Ok(())
}

/// Per-column ratio `r` with `N[:, i] ≈ r · M0[:, i]`, or `None` when not collinear.
pub fn column_ratios(m0: &Matrix, n: &Matrix, collinear_tol: f64) -> Vec<Option<f64>> {
    m0.column_iter()
        .zip(n.column_iter())
        .map(|(m, v)| {
            let mm = m.norm_squared();
            let nn = v.norm();
            if mm == 0.0 || nn == 0.0 {
                return None;
            }
            let r = m.dot(&v) / mm;
            let resid = (v - m * r).norm() / nn;
            (resid < collinear_tol).then_some(r)
        })
        .collect()
}

fn log_score(r: Option<f64>) -> f64 {
    r.map(|r| r.abs().ln().abs()).unwrap_or(0.0)
}

/// Target `i_k` and its scaling from an aligned pair: the collinear column whose ratio is farthest from one.
pub fn recover_target_scaling_general(m0: &Matrix, aligned: &Matrix, config: &AlignConfig) -> Result<(usize, f64)> {
    if m0.shape() != aligned.shape() {
        return Err(LcdError::ShapeMismatch(format!("{:?} vs {:?}", m0.shape(), aligned.shape())));
    }
    let ratios = column_ratios(m0, aligned, config.collinear_tol);
    if ratios.iter().all(Option::is_none) {
        return Err(LcdError::Alignment("no collinear column pair".into()));
    }
    let far: Vec<usize> = (0..ratios.len()).filter(|&i| log_score(ratios[i]) > config.unit_tol).collect();
    match far.as_slice() {
        [i] => Ok((*i, ratios[*i].expect("collinear"))),
        [] => Err(LcdError::GaugeViolation("no column scaling differs from one".into())),
        _ => Err(LcdError::GaugeViolation(format!("{} column scalings differ from one", far.len()))),
    }
}

struct GeneralContext {
    mat: SignedPerm,
    ratios: Vec<Option<f64>>,
}

fn align_one_general(m0: &Matrix, mk: &Matrix, config: &AlignConfig) -> Result<GeneralContext> {
    let s = search_signed_permutation(m0, mk, config.perm_cap)?;
    check_unambiguous(&s, m0, config)?;
    let n = s.best.apply(mk);
    let ratios = column_ratios(m0, &n, config.collinear_tol);
    if ratios.iter().all(Option::is_none) {
        return Err(LcdError::Alignment("no collinear column pair".into()));
    }
    let far = ratios.iter().filter(|r| log_score(**r) > config.unit_tol).count();
    if far > 1 {
        return Err(LcdError::GaugeViolation(format!("{far} column scalings differ from one")));
    }
    Ok(GeneralContext { mat: s.best, ratios })
}

/// Picks one target per context; collisions are resolved by a global assignment on `scores`.
fn assign_targets(scores: &[Vec<f64>], min_score: f64) -> Result<Vec<usize>> {
    let naive: Vec<usize> = scores
        .iter()
        .map(|row| (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0))
        .collect();
    let mut seen = vec![false; scores.first().map_or(0, Vec::len)];
    let distinct = naive.iter().all(|&t| !std::mem::replace(&mut seen[t], true));
    let targets = if distinct { naive } else { max_weight_assignment(scores) };
    for (k, &t) in targets.iter().enumerate() {
        if !(scores[k][t] > min_score) {
            return Err(LcdError::Alignment(format!(
                "context {} has no distinguishable target once targets are forced distinct",
                k + 1
            )));
        }
    }
    Ok(targets)
}

fn check_inputs(factors: &[Matrix]) -> Result<(usize, usize)> {
    let first = factors.first().ok_or_else(|| LcdError::InvalidInput("no factor matrices".into()))?;
    let (p, q) = first.shape();
    if factors.iter().any(|m| m.shape() != (p, q)) {
        return Err(LcdError::ShapeMismatch("factor matrices differ in shape".into()));
    }
    if factors.len() != q + 1 {
        return Err(LcdError::InvalidInput(format!(
            "need one observational and {q} interventional factor matrices, got {}",
            factors.len()
        )));
    }
    if factors.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(LcdError::NonFinite);
    }
    Ok((p, q))
}

/// Column relabelling so that context `k` targets node `k - 1`.
fn relabel(a: Vec<Matrix>, targets: &[usize]) -> Vec<Matrix> {
    let pi = permutation_matrix(targets).transpose();
    a.into_iter().map(|m| m * &pi).collect()
}

/// Aligns factor matrices `A^(k) D^(k) P^(k)` (index 0 observational) by the rank-one search.
pub fn align_general(factors: &[Matrix], config: &AlignConfig) -> Result<AlignedContexts> {
    let (_, q) = check_inputs(factors)?;
    let m0 = &factors[0];
    let per: Vec<GeneralContext> =
        factors[1..].par_iter().map(|mk| align_one_general(m0, mk, config)).collect::<Result<_>>()?;
    let scores: Vec<Vec<f64>> = per.iter().map(|c| c.ratios.iter().map(|r| log_score(*r)).collect()).collect();
    let targets = assign_targets(&scores, config.unit_tol)?;

    let mut a = vec![m0.clone()];
    let mut scalings = Vec::with_capacity(q);
    for (ctx, &t) in per.into_iter().zip(&targets) {
        let mut mat = ctx.mat;
        let mut n = mat.apply(&factors[a.len()]);
        let mut r = ctx.ratios[t].expect("assigned targets are collinear");
        // The rank test cannot see the sign of the target column; report a positive scaling.
        if r < 0.0 {
            mat.signs[t] = -mat.signs[t];
            n.column_mut(t).neg_mut();
            r = -r;
        }
        n.column_mut(t).unscale_mut(r);
        scalings.push(r);
        a.push(n);
    }
    let a = relabel(a, &targets);
    let mut out = AlignedContexts { a, targets, scalings, diagnostics: Vec::new() };
    out.diagnostics = out.rank_one_certificates();
    Ok(out)
}

/// Optimal signed row matching between `C0` and `Ck`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatching {
    /// Row of `Ck` paired with row `ℓ` of `C0`.
    pub partner: Vec<usize>,
    pub signs: Vec<f64>,
    /// Relative distance of each pair.
    pub distance: Vec<f64>,
}

impl RowMatching {
    fn unmatched(&self, tol: f64) -> Vec<usize> {
        (0..self.partner.len()).filter(|&l| self.distance[l] > tol).collect()
    }

    /// `P` with `P[ℓ, j] = ±1` for each pair, so that `P·Ck` is row-aligned with `C0`.
    pub fn to_matrix(&self) -> Matrix {
        let q = self.partner.len();
        let mut p = Matrix::zeros(q, q);
        for l in 0..q {
            p[(l, self.partner[l])] = self.signs[l];
        }
        p
    }
}

fn row_vec(m: &Matrix, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Pairs rows by minimum total relative distance, each pair up to sign.
pub fn match_rows(c0: &Matrix, ck: &Matrix) -> Result<RowMatching> {
    if c0.shape() != ck.shape() {
        return Err(LcdError::ShapeMismatch(format!("{:?} vs {:?}", c0.shape(), ck.shape())));
    }
    let q = c0.nrows();
    let mut dist = vec![vec![0.0; q]; q];
    let mut sign = vec![vec![1.0; q]; q];
    for l in 0..q {
        let a = row_vec(c0, l);
        for j in 0..q {
            let b = row_vec(ck, j);
            let neg: Vec<f64> = b.iter().map(|v| -v).collect();
            let (dp, dn) = (relative_distance(&a, &b), relative_distance(&a, &neg));
            if dn < dp {
                dist[l][j] = dn;
                sign[l][j] = -1.0;
            } else {
                dist[l][j] = dp;
            }
        }
    }
    let score: Vec<Vec<f64>> = dist.iter().map(|r| r.iter().map(|d| -d).collect()).collect();
    let partner = max_weight_assignment(&score);
    let signs = (0..q).map(|l| sign[l][partner[l]]).collect();
    let distance = (0..q).map(|l| dist[l][partner[l]]).collect();
    Ok(RowMatching { partner, signs, distance })
}

fn check_distinct_rows(c0: &Matrix, tol: f64) -> Result<()> {
    let q = c0.nrows();
    for a in 0..q {
        for b in a + 1..q {
            let (ra, rb) = (row_vec(c0, a), row_vec(c0, b));
            let neg: Vec<f64> = rb.iter().map(|v| -v).collect();
            if relative_distance(&ra, &rb).min(relative_distance(&ra, &neg)) <= tol {
                return Err(LcdError::Alignment(format!("rows {} and {} of C0 coincide", a + 1, b + 1)));
            }
        }
    }
    Ok(())
}

/// `(i_k, j_k)`: the unmatched row of `C0` and the unmatched row of `Ck`.
pub fn recover_target_injective(c0: &Matrix, ck: &Matrix, tol: f64) -> Result<(usize, usize)> {
    let m = match_rows(c0, ck)?;
    match m.unmatched(tol).as_slice() {
        [i] => Ok((*i, m.partner[*i])),
        [] => Err(LcdError::Alignment("every row has a match; no target".into())),
        more => Err(LcdError::Alignment(format!("{} rows without a match", more.len()))),
    }
}

/// Permutation (with signs) pairing matched rows and completing with `(i_k, j_k)`.
pub fn recover_perm_injective(c0: &Matrix, ck: &Matrix, tol: f64) -> Result<Matrix> {
    check_distinct_rows(c0, tol)?;
    let (i, _) = recover_target_injective(c0, ck, tol)?;
    let mut m = match_rows(c0, ck)?;
    fix_target_scaling(c0, ck, &mut m, i);
    Ok(m.to_matrix())
}

/// Projection coefficient of `b` onto `reference`.
fn projection_ratio(b: &[f64], reference: &[f64]) -> f64 {
    let dot: f64 = b.iter().zip(reference).map(|(x, y)| x * y).sum();
    let rr: f64 = reference.iter().map(|x| x * x).sum();
    dot / rr
}

/// Ratio of the target columns of `pinv(P·Ck)` and `pinv(C0)`.
///
/// The sign of the unmatched pair is arbitrary; it is flipped so the scaling comes out positive.
fn fix_target_scaling(c0: &Matrix, ck: &Matrix, m: &mut RowMatching, target: usize) -> f64 {
    let b0 = pinv(c0);
    let bk = pinv(&(m.to_matrix() * ck));
    let r = projection_ratio(bk.column(target).as_slice(), b0.column(target).as_slice());
    if r < 0.0 {
        m.signs[target] = -m.signs[target];
    }
    r.abs()
}

/// Diagonal `D^(k)`: identity except the ratio of the target columns of `pinv(C0)` and `pinv(P·Ck)`.
pub fn recover_scaling_injective(c0: &Matrix, ck: &Matrix, tol: f64) -> Result<Matrix> {
    let q = c0.nrows();
    let mut d = Matrix::identity(q, q);
    let mut m = match_rows(c0, ck)?;
    match m.unmatched(tol).as_slice() {
        [] => Ok(d),
        &[i] => {
            d[(i, i)] = fix_target_scaling(c0, ck, &mut m, i);
            Ok(d)
        }
        more => Err(LcdError::Alignment(format!("{} rows without a match", more.len()))),
    }
}

/// Aligns factor matrices through their pseudo-inverses (`q ≤ p`).
pub fn align_injective(factors: &[Matrix], config: &AlignConfig) -> Result<AlignedContexts> {
    let (_, q) = check_inputs(factors)?;
    let pc = PinvContexts::new(factors)?;
    let c0 = &pc.c[0];
    check_distinct_rows(c0, config.match_tol)?;
    let matches: Vec<RowMatching> = pc.c[1..].par_iter().map(|ck| match_rows(c0, ck)).collect::<Result<_>>()?;
    let targets = if config.strict {
        for (k, m) in matches.iter().enumerate() {
            let n = m.unmatched(config.match_tol).len();
            if n != 1 {
                return Err(LcdError::Alignment(format!(
                    "context {} has {n} rows without a match (expected exactly one)",
                    k + 1
                )));
            }
        }
        let scores: Vec<Vec<f64>> = matches
            .iter()
            .map(|m| m.distance.iter().map(|&d| if d > config.match_tol { d } else { 0.0 }).collect())
            .collect();
        assign_targets(&scores, config.match_tol)?
    } else {
        let scores: Vec<Vec<f64>> = matches.iter().map(|m| m.distance.clone()).collect();
        assign_targets(&scores, 0.0)?
    };

    let mut a = vec![pinv(c0)];
    let mut scalings = Vec::with_capacity(q);
    let mut diagnostics = Vec::with_capacity(q);
    for (k, (mut m, &t)) in matches.into_iter().zip(&targets).enumerate() {
        let ck = &pc.c[k + 1];
        let r = fix_target_scaling(c0, ck, &mut m, t);
        let mut dpc = m.to_matrix() * ck;
        dpc.row_mut(t).scale_mut(r);
        scalings.push(r);
        diagnostics.push(m.distance[t]);
        a.push(pinv(&dpc));
    }
    Ok(AlignedContexts { a: relabel(a, &targets), targets, scalings, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use crate::model::{InterventionKind, LcdModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_signed_perm(q: usize, r: &mut ChaCha8Rng) -> SignedPerm {
        let mut perm: Vec<usize> = (0..q).collect();
        for i in (1..q).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let signs = (0..q).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        SignedPerm { perm, signs }
    }

    /// Factor matrices `A^(k) D^(k) P^(k)` with the gauge scalings and planted column shuffles.
    fn planted(model: &LcdModel, r: &mut ChaCha8Rng, signs: bool) -> (Vec<Matrix>, Vec<SignedPerm>) {
        let d = model.d_star;
        let mut out = Vec::new();
        let mut plants = Vec::new();
        for k in 0..=model.q {
            let mut m = model.mixing_matrix(k).unwrap();
            for (i, kap) in model.noise_cumulants(k, d).unwrap().into_iter().enumerate() {
                m.column_mut(i).scale_mut(kap.abs().powf(1.0 / d as f64));
            }
            let mut sp = random_signed_perm(model.q, r);
            if !signs {
                sp.signs.iter_mut().for_each(|s| *s = 1.0);
            }
            out.push(sp.apply(&m));
            plants.push(sp);
        }
        (out, plants)
    }

    #[test]
    fn identity_when_inputs_agree() {
        let mut r = rng(0);
        let m0 = Matrix::from_fn(5, 3, |_, _| r.random_range(-2.0..2.0));
        let s = search_signed_permutation(&m0, &m0, 8).unwrap();
        assert_eq!(s.best.perm, vec![0, 1, 2]);
        assert_eq!(s.best.signs, vec![1.0; 3]);
        assert!(s.sigma2 < 1e-12);
    }

    #[test]
    fn planted_signed_permutation_is_recovered() {
        let mut r = rng(1);
        for q in 2..=5 {
            let m0 = Matrix::from_fn(5, q, |_, _| r.random_range(-2.0..2.0));
            let sp = random_signed_perm(q, &mut r);
            let s_mat = sp.to_matrix();
            let mk = &m0 * &s_mat;
            // Scale one column so the context has a single distinguishable target.
            let mut mk2 = mk.clone();
            mk2.column_mut(sp.perm.iter().position(|&j| j == 0).unwrap()).scale_mut(2.0);
            let q_hat = recover_perm_general(&m0, &mk2, &AlignConfig::exact()).unwrap();
            let aligned = &mk2 * q_hat.transpose();
            let diff = &m0 - &aligned;
            assert!(second_singular(&diff) < 1e-10 * m0.norm());
            let (t, ratio) = recover_target_scaling_general(&m0, &aligned, &AlignConfig::exact()).unwrap();
            assert_eq!(t, 0);
            assert!((ratio.abs() - 2.0).abs() < 1e-10);
            if ratio > 0.0 {
                assert!((&q_hat - &s_mat).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn search_is_optimal_over_every_candidate() {
        let mut r = rng(2);
        let model = LcdModel::sample(5, 3, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
        let (f, _) = planted(&model, &mut r, true);
        let s = search_signed_permutation(&f[0], &f[1], 8).unwrap();
        let mut values = Vec::new();
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            for bits in 0..8 {
                let signs = (0..3).map(|b| if bits & (1 << b) != 0 { -1.0 } else { 1.0 }).collect();
                let cand = SignedPerm { perm: perm.to_vec(), signs };
                let v = second_singular(&(&f[0] - cand.apply(&f[1])));
                values.push((v, cand));
            }
        }
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((values[0].0 - s.sigma2).abs() < 1e-12);
        let runner = values.iter().find(|(_, c)| !c.is_sign_twin(&s.best) && *c != s.best).unwrap().0;
        assert!((runner - s.runner_up).abs() < 1e-12);
        assert!(s.runner_up - s.sigma2 > 1e-6);
    }

    #[test]
    fn search_rejects_large_q() {
        let m = Matrix::zeros(3, 9);
        assert_eq!(search_signed_permutation(&m, &m, 8).unwrap_err(), LcdError::CapExceeded { q: 9, cap: 8 });
    }

    #[test]
    fn ambiguous_minimum_is_reported() {
        let mut m0 = Matrix::zeros(4, 2);
        m0.set_column(0, &Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        m0.set_column(1, &Vector::from_vec(vec![0.0, 1.0, 0.0, 0.0]));
        // Scaling both columns makes several candidates rank one.
        let mk = &m0 * 3.0;
        assert!(recover_perm_general(&m0, &mk, &AlignConfig::exact()).is_err());
    }

    #[test]
    fn target_scaling_examples() {
        let mut r = rng(3);
        let m0 = Matrix::from_fn(5, 3, |_, _| r.random_range(-2.0..2.0));
        let mut mk = m0.clone();
        mk.column_mut(1).scale_mut(3.0);
        let (t, d) = recover_target_scaling_general(&m0, &mk, &AlignConfig::exact()).unwrap();
        assert_eq!((t, d), (1, 3.0));
        let mut small = m0.clone();
        small.column_mut(2).scale_mut(0.4);
        assert_eq!(recover_target_scaling_general(&m0, &small, &AlignConfig::exact()).unwrap().0, 2);
        assert!(matches!(
            recover_target_scaling_general(&m0, &m0, &AlignConfig::exact()),
            Err(LcdError::GaugeViolation(_))
        ));
        let mut two = mk.clone();
        two.column_mut(0).scale_mut(2.0);
        assert!(matches!(
            recover_target_scaling_general(&m0, &two, &AlignConfig::exact()),
            Err(LcdError::GaugeViolation(_))
        ));
    }

    #[test]
    fn model_scalings_follow_the_gauge() {
        let mut r = rng(4);
        let model = LcdModel::sample(5, 3, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
        let (f, _) = planted(&model, &mut r, false);
        let out = align_general(&f, &AlignConfig::exact()).unwrap();
        for k in 1..=3 {
            let expect = model.noise(k).unwrap()[k - 1].cumulant(3).cbrt();
            assert!((out.scalings[k - 1] - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn general_round_trip_matches_model() {
        let mut r = rng(5);
        for (p, q, d) in [(5, 3, 3), (5, 4, 4), (3, 5, 4), (4, 2, 3)] {
            let model = LcdModel::sample(p, q, 0.75, InterventionKind::Perfect, d, &mut r).unwrap();
            let (f, plants) = planted(&model, &mut r, d % 2 == 0);
            let out = align_general(&f, &AlignConfig::exact()).unwrap();
            // Undo the observational sign plant, which the gauge cannot see.
            let s0: Vec<f64> = (0..q).map(|j| plants[0].signs[plants[0].perm.iter().position(|&x| x == j).unwrap()]).collect();
            for k in 0..=q {
                let mut truth = model.mixing_matrix(k).unwrap();
                for j in 0..q {
                    truth.column_mut(j).scale_mut(s0[j]);
                }
                assert!((&out.a[k] - truth).norm() < 1e-8 * out.a[k].norm(), "p={p} q={q} context {k}");
            }
            let mut sorted = out.targets.clone();
            sorted.sort();
            assert_eq!(sorted, (0..q).collect::<Vec<_>>());
            assert!(out.diagnostics.iter().all(|&c| c <= 1e-8));
        }
    }

    #[test]
    fn duplicate_targets_are_rejected() {
        let mut r = rng(6);
        let model = LcdModel::sample(5, 2, 1.0, InterventionKind::Perfect, 3, &mut r).unwrap();
        let (mut f, _) = planted(&model, &mut r, false);
        f[2] = f[1].clone();
        assert!(align_general(&f, &AlignConfig::exact()).is_err());
        assert!(align_injective(&f, &AlignConfig::exact()).is_err());
        let (f, _) = planted(&model, &mut r, false);
        let out = align_general(&f, &AlignConfig::exact()).unwrap();
        let mut t = out.targets.clone();
        t.sort();
        assert_eq!(t, vec![0, 1]);
    }

    #[test]
    fn injective_target_and_permutation() {
        let mut r = rng(7);
        let c0 = Matrix::from_fn(4, 6, |_, _| r.random_range(-1.0..1.0));
        let mut ck = c0.clone();
        ck.set_row(2, &nalgebra::RowDVector::from_fn(6, |_, _| r.random_range(-1.0..1.0)));
        assert_eq!(recover_target_injective(&c0, &ck, 1e-6).unwrap(), (2, 2));
        assert_eq!(recover_perm_injective(&c0, &ck, 1e-6).unwrap().map(f64::abs), Matrix::identity(4, 4));
        assert!(recover_target_injective(&c0, &c0, 1e-6).is_err());
        assert_eq!(recover_scaling_injective(&c0, &c0, 1e-6).unwrap(), Matrix::identity(4, 4));

        let sigma = [3, 0, 1, 2];
        let mut perturbed = c0.clone();
        perturbed.row_mut(1).scale_mut(1.7);
        // Row ℓ of C0 lands at row σ(ℓ) of Ck.
        let mut shuffled = Matrix::zeros(4, 6);
        for l in 0..4 {
            shuffled.set_row(sigma[l], &perturbed.row(l));
        }
        assert_eq!(recover_target_injective(&c0, &shuffled, 1e-6).unwrap(), (1, sigma[1]));
        assert_eq!(recover_perm_injective(&c0, &shuffled, 1e-6).unwrap().map(f64::abs), permutation_matrix(&sigma));

        let mut dup = c0.clone();
        dup.set_row(3, &c0.row(0));
        assert!(recover_perm_injective(&dup, &ck, 1e-6).is_err());
    }

    #[test]
    fn injective_scaling_examples() {
        let mut r = rng(8);
        let model = LcdModel::sample(6, 3, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
        let (f, _) = planted(&model, &mut r, false);
        let pc = PinvContexts::new(&f).unwrap();
        for (c, m) in pc.c.iter().zip(&f) {
            assert!((c * m - Matrix::identity(3, 3)).norm() < 1e-8);
        }
        for k in 1..=3 {
            let (i, _) = recover_target_injective(&pc.c[0], &pc.c[k], 1e-6).unwrap();
            let d = recover_scaling_injective(&pc.c[0], &pc.c[k], 1e-6).unwrap();
            let expect = model.noise(k).unwrap()[k - 1].cumulant(3).cbrt();
            assert!((d[(i, i)] - expect).abs() < 1e-8);
        }

        // Planted 0.5 on the target column of an otherwise identical factor matrix.
        let a0 = model.mixing_matrix(0).unwrap();
        let a1 = model.mixing_matrix(1).unwrap();
        let mut m1 = a1.clone();
        m1.column_mut(0).scale_mut(0.5);
        let d = recover_scaling_injective(&pinv(&a0), &pinv(&m1), 1e-6).unwrap();
        assert!((d[(0, 0)] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn routes_agree_on_injective_inputs() {
        let mut r = rng(9);
        for q in 2..=6 {
            let model = LcdModel::sample(8, q, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
            let (f, _) = planted(&model, &mut r, false);
            let g = align_general(&f, &AlignConfig::exact()).unwrap();
            let i = align_injective(&f, &AlignConfig::exact()).unwrap();
            for k in 0..=q {
                assert!((&g.a[k] - &i.a[k]).norm() < 1e-8 * g.a[k].norm());
                assert!((&g.a[k] - model.mixing_matrix(k).unwrap()).norm() < 1e-8 * g.a[k].norm());
            }
            assert_eq!(g.targets, i.targets);
        }
    }

    #[test]
    fn lenient_injective_alignment_tolerates_noise() {
        let mut r = rng(11);
        for q in 2..=5 {
            let model = LcdModel::sample(8, q, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
            let (mut f, _) = planted(&model, &mut r, false);
            for m in f.iter_mut() {
                m.iter_mut().for_each(|v| *v += 3e-3 * r.random_range(-1.0..1.0));
            }
            assert!(align_injective(&f, &AlignConfig::exact()).is_err());
            let out = align_injective(&f, &AlignConfig::sampled()).unwrap();
            for k in 0..=q {
                let truth = model.mixing_matrix(k).unwrap();
                assert!((&out.a[k] - &truth).norm() < 0.1 * truth.norm());
            }
        }
    }

    #[test]
    fn rank_one_certificate_holds_on_models() {
        let mut r = rng(10);
        for _ in 0..10 {
            let model = LcdModel::sample(5, 4, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
            let (f, _) = planted(&model, &mut r, false);
            let out = align_general(&f, &AlignConfig::exact()).unwrap();
            for (k, c) in out.rank_one_certificates().into_iter().enumerate() {
                let t = k;
                if model.dag.ancestors(t).is_empty() {
                    let diff = &out.a[0] - &out.a[k + 1];
                    let nonzero = diff.column_iter().filter(|c| c.norm() > 1e-12).count();
                    assert!(nonzero <= 1);
                } else {
                    assert!(c <= 1e-8);
                }
            }
        }
    }
}
