//! Benchmark orchestration, CSV and SVG output, JSON files.
//!
//! Replicate `r` at latent dimension `q` draws from ChaCha8 seeded with the run seed on
//! stream `q << 32 | r`, so results do not depend on thread count or scheduling.

pub mod config;
pub mod csv;
pub mod io;
pub mod plot;
pub mod run;

pub use config::{ExperimentConfig, InputKind, Method, Tolerances, DESK_REPLICATES};
pub use csv::{parse_csv, read_csv, to_csv, write_csv, CSV_HEADER};
pub use io::{read_model, read_tensors, tensor_from_json, tensor_to_json, write_model, write_tensors, ResultJson};
pub use plot::{render_svg, Metric};
pub use run::{
    align_and_recover, factors_from_input, median, planted_factors, replicate_rng, run_benchmark, summarize,
    thread_cap, BenchRow, Summary,
};
