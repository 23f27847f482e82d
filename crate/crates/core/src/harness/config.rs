use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::decomp::DecompMethod;
use crate::error::{LcdError, Result};
use crate::recover::{Route, DEFAULT_EDGE_THRESHOLD};

/// Replicates per q at desk scale.
pub const DESK_REPLICATES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "covariance-free-general")]
    General,
    #[serde(rename = "injective")]
    Injective,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::General => "covariance-free-general",
            Method::Injective => "injective",
        }
    }

    pub fn route(self) -> Route {
        match self {
            Method::General => Route::General,
            Method::Injective => Route::Injective,
        }
    }

    pub fn decomposition(self) -> DecompMethod {
        match self {
            Method::General => DecompMethod::General,
            Method::Injective => DecompMethod::Injective,
        }
    }
}

impl FromStr for Method {
    type Err = LcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariance-free-general" | "general" => Ok(Method::General),
            "injective" => Ok(Method::Injective),
            other => Err(LcdError::Parse(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the pipeline is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Mixing matrices with planted gauge scalings and signed column shuffles.
    Matrix,
    PopulationCumulant,
    SampleCumulant { n: usize },
}

impl InputKind {
    pub fn is_exact(self) -> bool {
        !matches!(self, InputKind::SampleCumulant { .. })
    }
}

impl FromStr for InputKind {
    type Err = LcdError;
    /// `matrix`, `population-cumulant`, or `sample-cumulant:N`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix" => Ok(InputKind::Matrix),
            "population-cumulant" => Ok(InputKind::PopulationCumulant),
            other => match other.strip_prefix("sample-cumulant:") {
                Some(n) => n
                    .parse()
                    .map(|n| InputKind::SampleCumulant { n })
                    .map_err(|_| LcdError::Parse(format!("bad sample count in `{other}`"))),
                None => Err(LcdError::Parse(format!("unknown input `{other}`"))),
            },
        }
    }
}

/// Overrides for the input-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collinear_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge: Option<f64>,
    /// Relative reconstruction residual accepted from the decomposition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub p: usize,
    pub q_list: Vec<usize>,
    pub rho: f64,
    pub replicates: usize,
    pub seed: u64,
    pub method: Method,
    pub input: InputKind,
    /// Defaults to the decomposition order of the method.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_star: Option<usize>,
    pub tolerances: Tolerances,
    /// Record wall-clock runtimes; when off the column is zero and output is byte-reproducible.
    pub timing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot_out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            p: 5,
            q_list: (2..=5).collect(),
            rho: 0.75,
            replicates: DESK_REPLICATES,
            seed: 0,
            method: Method::General,
            input: InputKind::Matrix,
            d_star: None,
            tolerances: Tolerances::default(),
            timing: true,
            csv_out: None,
            plot_out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(LcdError::InvalidInput(format!("p must be at least 2 (got {})", self.p)));
        }
        if self.q_list.is_empty() {
            return Err(LcdError::InvalidInput("empty q list".into()));
        }
        if let Some(&q) = self.q_list.iter().find(|&&q| q < 2) {
            return Err(LcdError::InvalidInput(format!("q must be at least 2 (got {q})")));
        }
        if self.method == Method::Injective {
            if let Some(&q) = self.q_list.iter().find(|&&q| q > self.p) {
                return Err(LcdError::RankExceedsDimension { q, p: self.p });
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(LcdError::InvalidInput(format!("density {} outside [0, 1]", self.rho)));
        }
        let d = self.order();
        if !(2..=4).contains(&d) {
            return Err(LcdError::UnsupportedOrder(d));
        }
        if self.input != InputKind::Matrix && d != self.method.decomposition().order() {
            return Err(LcdError::InvalidInput(format!(
                "{} decomposition needs order {}, got {d}",
                self.method,
                self.method.decomposition().order()
            )));
        }
        if let InputKind::SampleCumulant { n } = self.input {
            if n <= d {
                return Err(LcdError::TooFewSamples { needed: d, got: n });
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.d_star.unwrap_or_else(|| self.method.decomposition().order())
    }

    pub fn align_config(&self) -> AlignConfig {
        let base = if self.input.is_exact() { AlignConfig::exact() } else { AlignConfig::sampled() };
        let t = &self.tolerances;
        AlignConfig {
            match_tol: t.match_tol.unwrap_or(base.match_tol),
            collinear_tol: t.collinear_tol.unwrap_or(base.collinear_tol),
            unit_tol: t.unit_tol.unwrap_or(base.unit_tol),
            ..base
        }
    }

    pub fn edge_threshold(&self) -> f64 {
        self.tolerances.edge.unwrap_or(DEFAULT_EDGE_THRESHOLD)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
