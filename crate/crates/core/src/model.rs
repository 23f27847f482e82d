//! The generative model: mixing matrix, latent linear SEM, interventions, noise.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::cumulant::SymmetricTensor;
use crate::error::{LcdError, Result};
use crate::graph::Dag;
use crate::linalg::{inverse, pinv, Matrix};

/// Centered exponential noise `θ (E − 1)`, `E ~ Exp(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub theta: f64,
}

impl NoiseSpec {
    /// Scale whose order-`d` cumulant is exactly one.
    pub fn canonical(d: usize) -> Self {
        NoiseSpec { theta: factorial(d - 1).powf(-1.0 / d as f64) }
    }

    /// `κ_d = (d−1)! θ^d` for `d ≥ 2`; the mean is removed so `κ_1 = 0`.
    pub fn cumulant(&self, d: usize) -> f64 {
        match d {
            0 | 1 => 0.0,
            _ => factorial(d - 1) * self.theta.powi(d as i32),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        self.theta * (e - 1.0)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterventionKind {
    Perfect,
    Soft,
}

impl std::str::FromStr for InterventionKind {
    type Err = LcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(InterventionKind::Perfect),
            "soft" => Ok(InterventionKind::Soft),
            other => Err(LcdError::Parse(format!("unknown intervention kind `{other}`"))),
        }
    }
}

/// One interventional regime. `target` is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub target: usize,
    pub kind: InterventionKind,
    pub lambda: Matrix,
    pub noise: Vec<NoiseSpec>,
}

/// Full model. Context index 0 is observational; `contexts[k-1]` is context `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcdModel {
    pub p: usize,
    pub q: usize,
    pub dag: Dag,
    pub f: Matrix,
    pub lambda0: Matrix,
    pub noise0: Vec<NoiseSpec>,
    pub contexts: Vec<Context>,
    pub d_star: usize,
}

fn uniform_signed<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let mag = rng.random_range(0.25..=1.0);
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Minimum change applied to each soft-intervened weight.
const SOFT_MIN_CHANGE: f64 = 0.1;

impl LcdModel {
    /// Random model with one intervention per latent node (context `k` targets node `k`).
    pub fn sample<R: Rng + ?Sized>(
        p: usize,
        q: usize,
        rho: f64,
        kind: InterventionKind,
        d_star: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if p < 2 || q < 2 {
            return Err(LcdError::InvalidInput(format!("need p, q >= 2 (got p={p}, q={q})")));
        }
        if !(2..=4).contains(&d_star) {
            return Err(LcdError::UnsupportedOrder(d_star));
        }
        let dag = Dag::sample(q, rho, rng)?;
        let f = if q <= p {
            let h = Matrix::from_fn(q, p, |_, _| rng.random_range(-2.0..=2.0));
            pinv(&h)
        } else {
            Matrix::from_fn(p, q, |_, _| rng.random_range(-2.0..=2.0))
        };
        let mut lambda0 = Matrix::zeros(q, q);
        for (j, i) in dag.edges() {
            lambda0[(i, j)] = uniform_signed(rng);
        }
        let noise0 = vec![NoiseSpec::canonical(d_star); q];
        let contexts = (0..q)
            .map(|target| {
                let mut lambda = lambda0.clone();
                match kind {
                    InterventionKind::Perfect => lambda.row_mut(target).fill(0.0),
                    InterventionKind::Soft => {
                        for j in 0..q {
                            let old = lambda0[(target, j)];
                            if old != 0.0 {
                                let mut new = uniform_signed(rng);
                                while (new - old).abs() < SOFT_MIN_CHANGE {
                                    new = uniform_signed(rng);
                                }
                                lambda[(target, j)] = new;
                            }
                        }
                    }
                }
                let mut noise = noise0.clone();
                noise[target].theta *= rng.random_range(1.5..=2.5);
                Context { target, kind, lambda, noise }
            })
            .collect();
        let model = LcdModel { p, q, dag, f, lambda0, noise0, contexts, d_star };
        model.validate()?;
        Ok(model)
    }

    /// Checks supports, shapes and invertibility.
    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.p, self.q);
        if self.f.shape() != (p, q) || self.lambda0.shape() != (q, q) || self.noise0.len() != q {
            return Err(LcdError::ShapeMismatch("model parameter shapes".into()));
        }
        if self.dag.q() != q {
            return Err(LcdError::ShapeMismatch("dag size differs from q".into()));
        }
        for i in 0..q {
            for j in 0..q {
                if (self.lambda0[(i, j)] != 0.0) != self.dag.has_edge(j, i) {
                    return Err(LcdError::InvalidInput(format!(
                        "lambda0 support differs from the dag at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        for (k, c) in self.contexts.iter().enumerate() {
            if c.lambda.shape() != (q, q) || c.noise.len() != q || c.target >= q {
                return Err(LcdError::ShapeMismatch(format!("context {}", k + 1)));
            }
            for i in 0..q {
                for j in 0..q {
                    let on_dag = self.dag.has_edge(j, i);
                    let v = c.lambda[(i, j)];
                    if !on_dag && v != 0.0 {
                        return Err(LcdError::InvalidInput(format!("context {} weight off the dag", k + 1)));
                    }
                    if i != c.target && v != self.lambda0[(i, j)] {
                        return Err(LcdError::InvalidInput(format!(
                            "context {} changes a row other than its target",
                            k + 1
                        )));
                    }
                }
            }
            if c.kind == InterventionKind::Perfect && c.lambda.row(c.target).iter().any(|&v| v != 0.0) {
                return Err(LcdError::InvalidInput(format!(
                    "perfect context {} keeps weights into its target",
                    k + 1
                )));
            }
        }
        for k in 0..=self.contexts.len() {
            self.latent_inverse(k)?;
        }
        Ok(())
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    fn check_context(&self, k: usize) -> Result<()> {
        if k <= self.contexts.len() {
            Ok(())
        } else {
            Err(LcdError::InvalidInput(format!(
                "context {k} out of range (model has {})",
                self.contexts.len()
            )))
        }
    }

    pub fn lambda(&self, k: usize) -> Result<&Matrix> {
        self.check_context(k)?;
        Ok(if k == 0 { &self.lambda0 } else { &self.contexts[k - 1].lambda })
    }

    pub fn noise(&self, k: usize) -> Result<&[NoiseSpec]> {
        self.check_context(k)?;
        Ok(if k == 0 { &self.noise0 } else { &self.contexts[k - 1].noise })
    }

    /// Target of context `k ≥ 1`.
    pub fn target(&self, k: usize) -> Option<usize> {
        k.checked_sub(1).and_then(|i| self.contexts.get(i)).map(|c| c.target)
    }

    /// `(I − Λ^(k))^{-1}`.
    pub fn latent_inverse(&self, k: usize) -> Result<Matrix> {
        let lambda = self.lambda(k)?;
        inverse(&(Matrix::identity(self.q, self.q) - lambda))
    }

    /// `A^(k) = F (I − Λ^(k))^{-1}`, solved from `(I − Λ)ᵀ Aᵀ = Fᵀ`.
    pub fn mixing_matrix(&self, k: usize) -> Result<Matrix> {
        let lambda = self.lambda(k)?;
        let system = (Matrix::identity(self.q, self.q) - lambda).transpose();
        let lu = system.lu();
        let solved = lu
            .solve(&self.f.transpose())
            .ok_or_else(|| LcdError::Singular("I - Λ is singular".into()))?;
        Ok(solved.transpose())
    }

    /// Analytic order-`d` cumulants of the noise in context `k`.
    pub fn noise_cumulants(&self, k: usize, d: usize) -> Result<Vec<f64>> {
        Ok(self.noise(k)?.iter().map(|n| n.cumulant(d)).collect())
    }

    /// `κ_d(X^(k)) = Σ_i κ_d(ε_i) a_i^{⊗d}`.
    pub fn population_cumulant(&self, k: usize, d: usize) -> Result<SymmetricTensor> {
        if !(2..=4).contains(&d) {
            return Err(LcdError::UnsupportedOrder(d));
        }
        let a = self.mixing_matrix(k)?;
        SymmetricTensor::from_rank_one_terms(d, &self.noise_cumulants(k, d)?, &a)
    }

    /// `n` i.i.d. rows of `A^(k) ε^(k)`.
    pub fn sample_observations<R: Rng + ?Sized>(&self, k: usize, n: usize, rng: &mut R) -> Result<Matrix> {
        if n == 0 {
            return Err(LcdError::InvalidInput("n must be positive".into()));
        }
        let a = self.mixing_matrix(k)?;
        let noise = self.noise(k)?;
        let eps = Matrix::from_fn(self.q, n, |i, _| noise[i].sample(rng));
        Ok((a * eps).transpose())
    }
}

/// JSON layout with row-major flat matrices and 1-based node labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub p: usize,
    pub q: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(rename = "F")]
    pub f: Vec<f64>,
    pub lambda0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise0: Option<Vec<NoiseSpec>>,
    pub contexts: Vec<ContextJson>,
    pub d_star: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextJson {
    pub target: usize,
    pub kind: InterventionKind,
    pub lambda: Vec<f64>,
    pub noise: Vec<NoiseSpec>,
}

pub(crate) fn row_major(m: &Matrix) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

pub(crate) fn from_row_major(r: usize, c: usize, v: &[f64]) -> Result<Matrix> {
    if v.len() != r * c {
        return Err(LcdError::ShapeMismatch(format!("expected {} entries, got {}", r * c, v.len())));
    }
    Ok(Matrix::from_row_slice(r, c, v))
}

impl From<&LcdModel> for ModelJson {
    fn from(m: &LcdModel) -> Self {
        ModelJson {
            p: m.p,
            q: m.q,
            edges: m.dag.labeled_edges(),
            f: row_major(&m.f),
            lambda0: row_major(&m.lambda0),
            noise0: Some(m.noise0.clone()),
            contexts: m
                .contexts
                .iter()
                .map(|c| ContextJson {
                    target: c.target + 1,
                    kind: c.kind,
                    lambda: row_major(&c.lambda),
                    noise: c.noise.clone(),
                })
                .collect(),
            d_star: m.d_star,
        }
    }
}

impl TryFrom<ModelJson> for LcdModel {
    type Error = LcdError;
    fn try_from(j: ModelJson) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = j.edges.iter().map(|e| (e[0], e[1])).collect();
        let dag = Dag::from_labeled(j.q, &pairs)?;
        let contexts = j
            .contexts
            .iter()
            .map(|c| {
                if c.target == 0 || c.target > j.q {
                    return Err(LcdError::NodeOutOfRange { node: c.target, q: j.q });
                }
                Ok(Context {
                    target: c.target - 1,
                    kind: c.kind,
                    lambda: from_row_major(j.q, j.q, &c.lambda)?,
                    noise: c.noise.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = LcdModel {
            p: j.p,
            q: j.q,
            dag,
            f: from_row_major(j.p, j.q, &j.f)?,
            lambda0: from_row_major(j.q, j.q, &j.lambda0)?,
            noise0: j.noise0.unwrap_or_else(|| vec![NoiseSpec::canonical(j.d_star); j.q]),
            contexts,
            d_star: j.d_star,
        };
        model.validate()?;
        Ok(model)
    }
}

impl LcdModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(s)?;
        LcdModel::try_from(j)
    }
}
