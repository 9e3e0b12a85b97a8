//! End-to-end benchmark pipeline: dataset files, splits, grid search and
//! manifest runs.

mod container;
mod grid;
mod runner;
mod search;

use thiserror::Error;

pub use container::{decode, encode, read_container, write_container, write_dataset, ArrayEntry, Container, FORMAT_VERSION, MAGIC};
pub use grid::{linspace, logspace, HyperConfig, HyperGrid, Method};
pub use runner::{
    default_jobs, make_dataset, read_lines, read_records, report, run_benchmark, run_cell, summarize, write_summary, BenchmarkRecord,
    Cell, Manifest, RecordWriter, RunSummary, SummaryRow, TOOLKIT_VERSION,
};
pub use search::{
    grid_search, select_winner, split, split_sizes, test_metrics, weak_half_widths, Budget, ConfigOutcome, ConfigStatus, SearchOptions,
    SearchResult, Split, MIN_TIME_POINTS,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Container(String),
    #[error("truncated array `{0}`")]
    Truncated(String),
    #[error("unsupported container version {found} (this build reads version {supported})")]
    Version { found: u64, supported: u64 },
    #[error("time grid too small to split: {found} points, need at least {minimum}")]
    GridTooSmall { found: usize, minimum: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    System(#[from] crate::systems::SystemError),
    #[error(transparent)]
    Library(#[from] crate::featlib::LibraryError),
    #[error(transparent)]
    Weak(#[from] crate::discover::WeakError),
    #[error(transparent)]
    Grid(#[from] crate::tensorgrid::GridError),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
    #[error(transparent)]
    Eval(#[from] crate::evalx::EvalError),
    #[error(transparent)]
    Noise(#[from] crate::noise::NoiseError),
}
