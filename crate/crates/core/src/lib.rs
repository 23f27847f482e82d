//! Linear causal disentanglement from higher-order cumulants across interventional contexts.

pub mod align;
pub mod cumulant;
pub mod decomp;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod recover;
pub mod softsys;

pub use cumulant::{sample_cumulant, SymmetricTensor};
pub use error::{LcdError, Result};
pub use graph::Dag;
pub use linalg::{Matrix, Vector};
pub use model::{Context, InterventionKind, LcdModel, NoiseSpec};
pub use recover::{evaluate, recover, Metrics, RecoveryResult, Route};
pub use softsys::{build_soft_system, soft_compatible_class, solution_dimension, solve_soft_parameters, SoftInput, SolutionSpace};
