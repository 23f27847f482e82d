//! Soft interventions: the reduced linear system on `Λ^(0)`, its solution space,
//! and the class of DAGs compatible with a model.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{LcdError, Result};
use crate::graph::Dag;
use crate::linalg::{inverse, least_norm_solve, singular_values, Matrix, Vector};

/// Relative singular-value cut-off for rank decisions on exact inputs.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Observed mixing matrices `A^(0..=K)` and the target of each intervened context.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftInput {
    pub a: Vec<Matrix>,
    /// `targets[c - 1]` is the node of context `c`; repeats are allowed.
    pub targets: Vec<usize>,
}

impl SoftInput {
    pub fn new(a: Vec<Matrix>, targets: Vec<usize>) -> Result<Self> {
        let first = a.first().ok_or_else(|| LcdError::InvalidInput("no context matrices".into()))?;
        let (p, q) = first.shape();
        if a.iter().any(|m| m.shape() != (p, q)) {
            return Err(LcdError::ShapeMismatch("context matrices differ in shape".into()));
        }
        if targets.len() + 1 != a.len() {
            return Err(LcdError::InvalidInput(format!(
                "{} targets for {} interventional contexts",
                targets.len(),
                a.len() - 1
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= q) {
            return Err(LcdError::NodeOutOfRange { node: t + 1, q });
        }
        let covered: BTreeSet<usize> = targets.iter().copied().collect();
        if covered.len() != q {
            return Err(LcdError::InvalidInput("every node must be targeted at least once".into()));
        }
        Ok(SoftInput { a, targets })
    }

    pub fn q(&self) -> usize {
        self.a[0].ncols()
    }

    pub fn p(&self) -> usize {
        self.a[0].nrows()
    }
}

/// Row `t` of `Δ^(c) = (I − Λ^(c))^{-1} − (I − Λ^(0))^{-1}` for context `c ≥ 1` with target `t`,
/// read off `A^(c) − A^(0)` at the observed row where `|A^(0)_{ℓ,t}|` is largest.
pub fn delta_row(input: &SoftInput, c: usize) -> Result<Vector> {
    if c == 0 || c > input.targets.len() {
        return Err(LcdError::InvalidInput(format!("context {c} is not interventional")));
    }
    let t = input.targets[c - 1];
    let a0 = &input.a[0];
    let (anchor, pivot) = a0
        .column(t)
        .iter()
        .copied()
        .enumerate()
        .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
        .expect("nonempty column");
    if pivot == 0.0 {
        return Err(LcdError::Singular(format!("column {} of A^(0) vanishes", t + 1)));
    }
    let ac = &input.a[c];
    let q = input.q();
    Ok(Vector::from_fn(q, |i, _| if i == t { 0.0 } else { (ac[(anchor, i)] - a0[(anchor, i)]) / pivot }))
}

/// Ranks of `M[j]` and `(M[j] | b[j])`, and the resulting `c_j` (−1 when inconsistent).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRank {
    pub rank_m: usize,
    pub rank_aug: usize,
    pub c: isize,
}

fn node_rank(m: &Matrix, b: &Vector, rel_tol: f64) -> NodeRank {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return NodeRank { rank_m: 0, rank_aug: 0, c: cols as isize };
    }
    let aug = m.clone().insert_column(cols, 0.0);
    let mut aug = aug;
    aug.set_column(cols, b);
    let sa = singular_values(&aug);
    let scale = sa.first().copied().unwrap_or(0.0);
    let cut = rel_tol * scale;
    let count = |s: &[f64]| if scale == 0.0 { 0 } else { s.iter().filter(|&&v| v > cut).count() };
    let rank_aug = count(&sa);
    let rank_m = count(&singular_values(m));
    let c = if rank_m == rank_aug { (cols - rank_m) as isize } else { -1 };
    NodeRank { rank_m, rank_aug, c }
}

/// The per-node systems `M[j] λ_{ch(j), j} = b[j]` for a candidate DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSystem {
    pub candidate: Dag,
    /// `Δ^(c)` target rows, one per intervened context.
    pub deltas: Vec<Vector>,
    pub targets: Vec<usize>,
    /// Children of each node in the candidate, giving the column order of `M[j]`.
    pub children: Vec<Vec<usize>>,
    /// Contexts (1-based) contributing rows to `M[j]`.
    pub rows: Vec<Vec<usize>>,
    pub m: Vec<Matrix>,
    pub b: Vec<Vector>,
    pub ranks: Vec<NodeRank>,
}

impl SoftSystem {
    pub fn c(&self) -> Vec<isize> {
        self.ranks.iter().map(|r| r.c).collect()
    }
}

/// Stacks rows over every context whose target lies in `de(j) \ ch(j)` of the candidate.
pub fn build_soft_system(input: &SoftInput, candidate: &Dag, rel_tol: f64) -> Result<SoftSystem> {
    let q = input.q();
    if candidate.q() != q {
        return Err(LcdError::ShapeMismatch(format!("candidate has {} nodes, data has {q}", candidate.q())));
    }
    let deltas = (1..=input.targets.len()).map(|c| delta_row(input, c)).collect::<Result<Vec<_>>>()?;
    Ok(system_from_deltas(deltas, &input.targets, candidate, rel_tol))
}

fn system_from_deltas(deltas: Vec<Vector>, targets: &[usize], candidate: &Dag, rel_tol: f64) -> SoftSystem {
    let q = candidate.q();
    let mut children = Vec::with_capacity(q);
    let mut rows = Vec::with_capacity(q);
    let mut ms = Vec::with_capacity(q);
    let mut bs = Vec::with_capacity(q);
    let mut ranks = Vec::with_capacity(q);
    for j in 0..q {
        let ch: Vec<usize> = candidate.children(j).into_iter().collect();
        let de = candidate.descendants(j);
        let ctx: Vec<usize> = (1..=targets.len())
            .filter(|&c| {
                let t = targets[c - 1];
                de.contains(&t) && !ch.contains(&t)
            })
            .collect();
        let m = Matrix::from_fn(ctx.len(), ch.len(), |r, col| deltas[ctx[r] - 1][ch[col]]);
        let b = Vector::from_fn(ctx.len(), |r, _| deltas[ctx[r] - 1][j]);
        ranks.push(node_rank(&m, &b, rel_tol));
        children.push(ch);
        rows.push(ctx);
        ms.push(m);
        bs.push(b);
    }
    SoftSystem { candidate: candidate.clone(), deltas, targets: targets.to_vec(), children, rows, m: ms, b: bs, ranks }
}

/// `−1` if some node is inconsistent, else `Σ c_j`.
pub fn solution_dimension(ss: &SoftSystem) -> isize {
    if ss.ranks.iter().any(|r| r.c < 0) {
        -1
    } else {
        ss.ranks.iter().map(|r| r.c).sum()
    }
}

/// A full parameter assignment `(F, Λ^(0), Λ^(1..=K))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPoint {
    pub f: Matrix,
    pub lambda0: Matrix,
    /// `lambdas[c - 1]` for context `c`.
    pub lambdas: Vec<Matrix>,
}

/// Affine space of compatible parameters, coordinatised by the candidate's edge weights in `Λ^(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSpace {
    /// Edges `(parent, child)` indexing the coordinates.
    pub edges: Vec<(usize, usize)>,
    /// Least-norm solution.
    pub particular: Vector,
    /// Orthonormal free directions, one column each.
    pub basis: Matrix,
    system: SoftSystem,
    input: SoftInput,
}

impl SolutionSpace {
    pub fn dimension(&self) -> usize {
        self.basis.ncols()
    }

    /// Edge weights of `particular + basis · coords`.
    pub fn coordinates(&self, coords: &[f64]) -> Result<Vector> {
        if coords.len() != self.dimension() {
            return Err(LcdError::ShapeMismatch(format!(
                "{} coordinates for a {}-dimensional space",
                coords.len(),
                self.dimension()
            )));
        }
        Ok(&self.particular + &self.basis * Vector::from_column_slice(coords))
    }

    /// Lifts edge weights of `Λ^(0)` to all parameters.
    pub fn lift(&self, weights: &Vector) -> Result<SoftPoint> {
        let q = self.input.q();
        if weights.len() != self.edges.len() {
            return Err(LcdError::ShapeMismatch("edge weight vector length".into()));
        }
        let mut lambda0 = Matrix::zeros(q, q);
        for (&(j, i), &w) in self.edges.iter().zip(weights.iter()) {
            lambda0[(i, j)] = w;
        }
        let f = &self.input.a[0] * (Matrix::identity(q, q) - &lambda0);
        let lambdas = self
            .input
            .targets
            .iter()
            .zip(&self.system.deltas)
            .map(|(&t, delta)| {
                let mut l = lambda0.clone();
                let ch_t_parents = self.system.candidate.parents(t);
                for j in ch_t_parents {
                    let ch = &self.system.children[j];
                    let mut v = lambda0[(t, j)] + delta[j];
                    for &i in ch {
                        if i != t {
                            v -= delta[i] * lambda0[(i, j)];
                        }
                    }
                    l[(t, j)] = v;
                }
                l
            })
            .collect();
        Ok(SoftPoint { f, lambda0, lambdas })
    }

    pub fn point(&self, coords: &[f64]) -> Result<SoftPoint> {
        self.lift(&self.coordinates(coords)?)
    }

    /// Edge weights of a `Λ^(0)` supported on the candidate.
    pub fn weights_of(&self, lambda0: &Matrix) -> Vector {
        Vector::from_iterator(self.edges.len(), self.edges.iter().map(|&(j, i)| lambda0[(i, j)]))
    }

    /// Euclidean distance from the edge weights of `lambda0` to the affine space.
    pub fn distance(&self, lambda0: &Matrix) -> f64 {
        let r = self.weights_of(lambda0) - &self.particular;
        let proj = &self.basis * (self.basis.transpose() * &r);
        (r - proj).norm()
    }

    /// Max over contexts of `‖F(I − Λ^(c))^{-1} − A^(c)‖ / ‖A^(c)‖`.
    pub fn substitution_residual(&self, point: &SoftPoint) -> Result<f64> {
        let q = self.input.q();
        let mut worst: f64 = 0.0;
        for (c, a) in self.input.a.iter().enumerate() {
            let l = if c == 0 { &point.lambda0 } else { &point.lambdas[c - 1] };
            let inv = inverse(&(Matrix::identity(q, q) - l))?;
            let scale = a.norm().max(f64::MIN_POSITIVE);
            worst = worst.max((&point.f * inv - a).norm() / scale);
        }
        Ok(worst)
    }
}

/// Least-norm particular solution plus null-space directions, node by node.
pub fn solve_soft_parameters(input: &SoftInput, ss: &SoftSystem, rel_tol: f64) -> Result<SolutionSpace> {
    if let Some(j) = ss.ranks.iter().position(|r| r.c < 0) {
        return Err(LcdError::Inconsistent(j + 1));
    }
    let mut edges = Vec::new();
    let mut particular = Vec::new();
    let mut blocks: Vec<(usize, Matrix)> = Vec::new();
    for j in 0..input.q() {
        let ch = &ss.children[j];
        if ch.is_empty() {
            continue;
        }
        let (x, null) = least_norm_solve(&ss.m[j], &ss.b[j], rel_tol);
        if ss.m[j].nrows() > 0 {
            let resid = (&ss.m[j] * &x - &ss.b[j]).norm();
            let scale = ss.b[j].norm().max(ss.m[j].norm()).max(f64::MIN_POSITIVE);
            if resid > 1e-6 * scale {
                return Err(LcdError::Inconsistent(j + 1));
            }
        }
        blocks.push((edges.len(), null));
        for (k, &i) in ch.iter().enumerate() {
            edges.push((j, i));
            particular.push(x[k]);
        }
    }
    let n = edges.len();
    let dim: usize = blocks.iter().map(|(_, b)| b.ncols()).sum();
    let mut basis = Matrix::zeros(n, dim);
    let mut col = 0;
    for (offset, null) in blocks {
        for c in 0..null.ncols() {
            for r in 0..null.nrows() {
                basis[(offset + r, col)] = null[(r, c)];
            }
            col += 1;
        }
    }
    Ok(SolutionSpace {
        edges,
        particular: Vector::from_vec(particular),
        basis,
        system: ss.clone(),
        input: input.clone(),
    })
}

/// Verdict for one candidate DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub dag: Dag,
    pub compatible: bool,
    /// Per-node ranks from the first random filling.
    pub nodes: Vec<NodeRank>,
}

/// Number of independent generic fillings voted over.
pub const SOFT_CLASS_VOTES: usize = 3;

fn generic_weight<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let m = rng.random_range(0.25..=1.0);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// Target rows of `Δ^(t)` for one generic soft intervention per node of `g`.
fn generic_deltas<R: Rng + ?Sized>(g: &Dag, rng: &mut R) -> Result<Vec<Vector>> {
    let q = g.q();
    let mut l0 = Matrix::zeros(q, q);
    for (j, i) in g.edges() {
        l0[(i, j)] = generic_weight(rng);
    }
    let t0 = inverse(&(Matrix::identity(q, q) - &l0))?;
    (0..q)
        .map(|t| {
            let mut l = l0.clone();
            for j in g.parents(t) {
                let old = l0[(t, j)];
                let mut new = generic_weight(rng);
                while (new - old).abs() < 0.1 {
                    new = generic_weight(rng);
                }
                l[(t, j)] = new;
            }
            let tk = inverse(&(Matrix::identity(q, q) - l))?;
            Ok((tk - &t0).row(t).transpose())
        })
        .collect()
}

/// Every DAG with the same transitive closure as `g`, tested for soft compatibility.
///
/// Each vote draws generic parameters on `g` with one soft intervention per node and
/// checks whether the candidate's reduced systems are consistent.
pub fn soft_compatible_class<R: Rng + ?Sized>(g: &Dag, cap: usize, rng: &mut R) -> Result<Vec<CandidateReport>> {
    let candidates = g.same_closure_dags(cap)?;
    let targets: Vec<usize> = (0..g.q()).collect();
    let fillings = (0..SOFT_CLASS_VOTES).map(|_| generic_deltas(g, rng)).collect::<Result<Vec<_>>>()?;
    Ok(candidates
        .into_par_iter()
        .map(|cand| {
            let reports: Vec<Vec<NodeRank>> = fillings
                .iter()
                .map(|d| system_from_deltas(d.clone(), &targets, &cand, DEFAULT_RANK_TOL).ranks)
                .collect();
            let votes = reports.iter().filter(|r| r.iter().all(|n| n.c >= 0)).count();
            CandidateReport { dag: cand, compatible: 2 * votes > SOFT_CLASS_VOTES, nodes: reports[0].clone() }
        })
        .collect())
}

/// Just the compatible DAGs.
pub fn soft_class<R: Rng + ?Sized>(g: &Dag, cap: usize, rng: &mut R) -> Result<Vec<Dag>> {
    Ok(soft_compatible_class(g, cap, rng)?.into_iter().filter(|r| r.compatible).map(|r| r.dag).collect())
}
