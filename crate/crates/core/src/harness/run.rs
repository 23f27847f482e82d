use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, InputKind, Method};
use crate::align::{align_general, align_injective, AlignConfig, AlignedContexts, SignedPerm};
use crate::cumulant::{sample_cumulant, SymmetricTensor};
use crate::decomp::{decompose_contexts, DecompConfig, DecompMethod};
use crate::error::{LcdError, Result};
use crate::linalg::Matrix;
use crate::model::{InterventionKind, LcdModel};
use crate::recover::{evaluate, recover, Metrics, RecoveryResult};

/// One replicate of a benchmark; failures keep their slot with NaN errors and no DAG error.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub q: usize,
    pub method: Method,
    pub replicate: usize,
    pub err_f: f64,
    pub err_lambda: f64,
    pub dag_err: Option<usize>,
    pub runtime_ms: f64,
}

impl BenchRow {
    pub fn failed(&self) -> bool {
        self.dag_err.is_none()
    }
}

/// Generator for replicate `rep` at latent dimension `q`: the seeded stream `q << 32 | rep`.
pub fn replicate_rng(seed: u64, q: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((q as u64) << 32) | rep as u64);
    rng
}

/// Factor matrices `A^(k) D^(k) P^(k)` as a decomposition would return them: columns scaled by
/// `|κ_d(ε_i^(k))|^{1/d}` and shuffled by a random signed permutation (signs only for even `d`).
pub fn planted_factors<R: rand::Rng + ?Sized>(model: &LcdModel, d: usize, rng: &mut R) -> Result<Vec<Matrix>> {
    (0..=model.num_contexts())
        .map(|k| {
            let mut m = model.mixing_matrix(k)?;
            for (i, kap) in model.noise_cumulants(k, d)?.into_iter().enumerate() {
                m.column_mut(i).scale_mut(kap.abs().powf(1.0 / d as f64));
            }
            Ok(SignedPerm::random(model.q, d.is_multiple_of(2), rng).apply(&m))
        })
        .collect()
}

/// Factor matrices for one context set, built from the requested input.
pub fn factors_from_input<R: rand::Rng + ?Sized>(
    model: &LcdModel,
    input: InputKind,
    method: DecompMethod,
    residual_tol: Option<f64>,
    rng: &mut R,
) -> Result<Vec<Matrix>> {
    let d = model.d_star;
    let tensors: Vec<SymmetricTensor> = match input {
        InputKind::Matrix => return planted_factors(model, d, rng),
        InputKind::PopulationCumulant => {
            (0..=model.num_contexts()).map(|k| model.population_cumulant(k, d)).collect::<Result<_>>()?
        }
        InputKind::SampleCumulant { n } => (0..=model.num_contexts())
            .map(|k| sample_cumulant(&model.sample_observations(k, n, rng)?, d))
            .collect::<Result<_>>()?,
    };
    let mut config = if input.is_exact() { DecompConfig::exact(method) } else { DecompConfig::sampled() };
    if residual_tol.is_some() {
        config.residual_tol = residual_tol;
    }
    Ok(decompose_contexts(&tensors, model.q, method, &config, rng)?.matrices())
}

/// Alignment and recovery along the route of `method`.
pub fn align_and_recover(factors: &[Matrix], method: Method, align: &AlignConfig, edge: f64) -> Result<(AlignedContexts, RecoveryResult)> {
    let ac = match method {
        Method::General => align_general(factors, align)?,
        Method::Injective => align_injective(factors, align)?,
    };
    let result = recover(&ac, method.route(), edge)?;
    Ok((ac, result))
}

fn replicate(cfg: &ExperimentConfig, q: usize, rep: usize) -> Result<(Metrics, f64)> {
    let mut rng = replicate_rng(cfg.seed, q, rep);
    let d = cfg.order();
    let model = LcdModel::sample(cfg.p, q, cfg.rho, InterventionKind::Perfect, d, &mut rng)?;
    let start = Instant::now();
    let factors =
        factors_from_input(&model, cfg.input, cfg.method.decomposition(), cfg.tolerances.rank, &mut rng)?;
    let (_, result) = align_and_recover(&factors, cfg.method, &cfg.align_config(), cfg.edge_threshold())?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let metrics = evaluate(&model, &result, d.is_multiple_of(2))?;
    Ok((metrics, if cfg.timing { elapsed } else { 0.0 }))
}

/// Every `(q, replicate)` pair, in that order; per-replicate errors become flagged rows.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> =
        cfg.q_list.iter().flat_map(|&q| (0..cfg.replicates).map(move |r| (q, r))).collect();
    let run = || {
        jobs.par_iter()
            .map(|&(q, rep)| match replicate(cfg, q, rep) {
                Ok((m, ms)) => BenchRow {
                    q,
                    method: cfg.method,
                    replicate: rep,
                    err_f: m.err_f,
                    err_lambda: m.err_lambda,
                    dag_err: Some(m.dag_err),
                    runtime_ms: ms,
                },
                Err(_) => BenchRow {
                    q,
                    method: cfg.method,
                    replicate: rep,
                    err_f: f64::NAN,
                    err_lambda: f64::NAN,
                    dag_err: None,
                    runtime_ms: 0.0,
                },
            })
            .collect::<Vec<_>>()
    };
    match thread_cap()? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| LcdError::InvalidInput(e.to_string()))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

/// `LCD_THREADS`, when set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("LCD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(LcdError::InvalidInput(format!("LCD_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Medians over the replicates of one `(q, method)` cell; failures count as `+∞` (runtime skips them).
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub q: usize,
    pub method: Method,
    pub err_f: f64,
    pub err_lambda: f64,
    pub dag_err: f64,
    pub runtime_ms: f64,
    pub failures: usize,
    pub replicates: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    }
}

pub fn summarize(rows: &[BenchRow]) -> Vec<Summary> {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.q)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, q)| {
            let cell: Vec<&BenchRow> = rows.iter().filter(|r| r.method == method && r.q == q).collect();
            let col = |f: &dyn Fn(&BenchRow) -> f64| -> f64 {
                let mut v: Vec<f64> = cell.iter().map(|r| if r.failed() { f64::INFINITY } else { f(r) }).collect();
                median(&mut v)
            };
            Summary {
                q,
                method,
                err_f: col(&|r| r.err_f),
                err_lambda: col(&|r| r.err_lambda),
                dag_err: col(&|r| r.dag_err.unwrap_or(0) as f64),
                runtime_ms: median(&mut cell.iter().filter(|r| !r.failed()).map(|r| r.runtime_ms).collect::<Vec<_>>()),
                failures: cell.iter().filter(|r| r.failed()).count(),
                replicates: cell.len(),
            }
        })
        .collect()
}
