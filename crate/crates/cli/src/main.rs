use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcd_core::harness::{
    align_and_recover, factors_from_input, read_csv, read_model, read_tensors, render_svg, run_benchmark, summarize,
    to_csv, write_model, write_tensors, ExperimentConfig, InputKind, Method, Metric, ResultJson,
};
use lcd_core::align::AlignConfig;
use lcd_core::decomp::{decompose_contexts, DecompConfig};
use lcd_core::graph::DEFAULT_ENUMERATION_CAP;
use lcd_core::softsys::soft_compatible_class;
use lcd_core::{evaluate, sample_cumulant, Dag, InterventionKind, LcdError, LcdModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "lcd", version, about = "Linear causal disentanglement from higher-order cumulants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random model and write it as JSON.
    Generate(GenerateArgs),
    /// Population or sample cumulant tensors of every context.
    Cumulants(CumulantArgs),
    /// Recover F, Λ^(0) and the latent DAG.
    Recover(RecoverArgs),
    /// List the soft-compatible class of a DAG.
    SoftClass(SoftClassArgs),
    /// Run a replicate benchmark and write CSV.
    Benchmark(BenchmarkArgs),
    /// Plot median errors from a benchmark CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    q: usize,
    /// Edge probability of the latent DAG.
    #[arg(long, default_value_t = 0.75)]
    density: f64,
    /// perfect or soft
    #[arg(long, default_value = "perfect")]
    kind: InterventionKind,
    /// Cumulant order fixing the canonical noise scale.
    #[arg(long, default_value_t = 3)]
    d_star: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CumulantArgs {
    #[arg(long)]
    model: PathBuf,
    /// Estimate from this many samples per context instead of the population value.
    #[arg(long)]
    samples: Option<usize>,
    /// Defaults to the model's d_star.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    /// Model to build the input from; also enables metrics.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Precomputed tensors (one per context) instead of a model.
    #[arg(long, conflicts_with = "input")]
    tensors: Option<PathBuf>,
    /// Latent dimension when reading tensors.
    #[arg(long)]
    q: Option<usize>,
    /// Treat tensors as estimates (looser tolerances).
    #[arg(long)]
    sampled: bool,
    /// matrix, population-cumulant or sample-cumulant:N
    #[arg(long, default_value = "matrix")]
    input: InputKind,
    /// general or injective; defaults to injective when d_star is 3 and q ≤ p.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, default_value_t = lcd_core::recover::DEFAULT_EDGE_THRESHOLD)]
    edge_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SoftClassArgs {
    /// Edges such as "3->2,2->1" (1-based).
    #[arg(long)]
    dag: String,
    /// Node count, if larger than the largest label.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also list rejected candidates with their per-node ranks.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON experiment config; the other flags are ignored when it is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Comma-separated latent dimensions or a range such as 2..7.
    #[arg(long, default_value = "2..5")]
    q: String,
    #[arg(long, default_value_t = 0.75)]
    density: f64,
    #[arg(long, default_value_t = lcd_core::harness::DESK_REPLICATES)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "covariance-free-general")]
    method: Method,
    #[arg(long, default_value = "matrix")]
    input: InputKind,
    /// Write zero runtimes so the CSV is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render an err_F plot here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    /// err_F, err_lambda, dag_err or runtime_ms
    #[arg(long, default_value = "err_F")]
    metric: Metric,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<LcdError> for Failure {
    fn from(e: LcdError) -> Self {
        match e {
            LcdError::Singular(_)
            | LcdError::NonFinite
            | LcdError::NotIdentifiable { .. }
            | LcdError::Decomposition(_)
            | LcdError::Residual { .. }
            | LcdError::Alignment(_)
            | LcdError::GaugeViolation(_)
            | LcdError::Inconsistent(_)
            | LcdError::TooFewSamples { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn write_out(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(a: GenerateArgs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let model = LcdModel::sample(a.p, a.q, a.density, a.kind, a.d_star, &mut rng)?;
    write_model(&a.out, &model)?;
    Ok(())
}

fn cumulants(a: CumulantArgs) -> Outcome {
    let model = read_model(&a.model)?;
    let d = a.order.unwrap_or(model.d_star);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let tensors = (0..=model.num_contexts())
        .map(|k| match a.samples {
            Some(n) => sample_cumulant(&model.sample_observations(k, n, &mut rng)?, d),
            None => model.population_cumulant(k, d),
        })
        .collect::<lcd_core::Result<Vec<_>>>()?;
    write_tensors(&a.out, &tensors)?;
    Ok(())
}

fn default_method(d: usize, q: usize, p: usize) -> Method {
    if d == 3 && q <= p {
        Method::Injective
    } else {
        Method::General
    }
}

fn recover(a: RecoverArgs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let model = a.model.as_deref().map(read_model).transpose()?;
    let (factors, method, exact, d) = match (&a.tensors, &model) {
        (Some(path), _) => {
            let tensors = read_tensors(path)?;
            let first = tensors.first().ok_or_else(|| Failure::Usage("empty tensor file".into()))?;
            let q = a.q.or(model.as_ref().map(|m| m.q)).ok_or_else(|| Failure::Usage("--q is required with --tensors".into()))?;
            let method = a.method.unwrap_or_else(|| default_method(first.order(), q, first.dim()));
            let config = if a.sampled { DecompConfig::sampled() } else { DecompConfig::exact(method.decomposition()) };
            let fs = decompose_contexts(&tensors, q, method.decomposition(), &config, &mut rng)?.matrices();
            (fs, method, !a.sampled, first.order())
        }
        (None, Some(m)) => {
            let method = a.method.unwrap_or_else(|| default_method(m.d_star, m.q, m.p));
            if a.input != InputKind::Matrix && m.d_star != method.decomposition().order() {
                return Err(Failure::Usage(format!(
                    "{method} needs cumulants of order {}, the model has d_star = {}",
                    method.decomposition().order(),
                    m.d_star
                )));
            }
            let fs = factors_from_input(m, a.input, method.decomposition(), None, &mut rng)?;
            (fs, method, a.input.is_exact(), m.d_star)
        }
        (None, None) => return Err(Failure::Usage("give --model or --tensors".into())),
    };
    let align = if exact { AlignConfig::exact() } else { AlignConfig::sampled() };
    let (ac, result) = align_and_recover(&factors, method, &align, a.edge_threshold)?;
    let metrics = match &model {
        // Even orders leave column signs free.
        Some(m) => Some(evaluate(m, &result, d % 2 == 0)?),
        None => None,
    };
    let json = ResultJson::new(&result, &ac.targets, metrics).to_json()?;
    write_out(a.out.as_deref(), &(json + "\n"))
}

fn soft_class(a: SoftClassArgs) -> Outcome {
    let dag = Dag::parse(&a.dag, a.q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let reports = soft_compatible_class(&dag, a.cap, &mut rng)?;
    let members = reports.iter().filter(|r| r.compatible).count();
    let mut out = format!("soft-compatible class of {dag}: {members} of {} DAGs with the same closure\n", reports.len());
    for r in &reports {
        if !r.compatible && !a.verbose {
            continue;
        }
        let c: Vec<String> = r.nodes.iter().map(|n| n.c.to_string()).collect();
        let tag = if r.compatible { "compatible" } else { "rejected" };
        out.push_str(&format!("  {:<24} {tag:<10} c=({})\n", r.dag.to_string(), c.join(",")));
    }
    write_out(None, &out)
}

fn parse_q_list(s: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Usage(format!("bad q list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return if a <= b { Ok((a..=b).collect()) } else { Err(bad()) };
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn benchmark(a: BenchmarkArgs) -> Outcome {
    let cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig {
            p: a.p,
            q_list: parse_q_list(&a.q)?,
            rho: a.density,
            replicates: a.replicates,
            seed: a.seed,
            method: a.method,
            input: a.input,
            timing: !a.no_timing,
            csv_out: a.out.clone(),
            plot_out: a.plot.clone(),
            ..Default::default()
        },
    };
    cfg.validate()?;
    let rows = run_benchmark(&cfg)?;
    for s in summarize(&rows) {
        eprintln!(
            "q={:<3} {}  median err_F {:.3e}  err_lambda {:.3e}  dag_err {}  failures {}/{}",
            s.q, s.method, s.err_f, s.err_lambda, s.dag_err, s.failures, s.replicates
        );
    }
    write_out(cfg.csv_out.as_deref(), &to_csv(&rows))?;
    if let Some(p) = &cfg.plot_out {
        write_out(Some(p), &render_svg(&rows, Metric::ErrF)?)?;
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Outcome {
    let rows = read_csv(&a.csv)?;
    write_out(Some(&a.out), &render_svg(&rows, a.metric)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Cumulants(a) => cumulants(a),
        Command::Recover(a) => recover(a),
        Command::SoftClass(a) => soft_class(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Plot(a) => plot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
