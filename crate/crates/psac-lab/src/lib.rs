//! Benchmark harness: experiment matrices over the cluster simulation,
//! scalability fitting, and report rendering.

pub mod amdahl;
pub mod experiment;
pub mod report;

pub use amdahl::{fit, AmdahlFit, FitError};
pub use experiment::{
    median, parse_csv, run_experiment, run_experiment_with, to_csv, Cell, CsvError, CsvRow,
    ExperimentConfig, ExperimentError,
};
pub use report::{fit_scaling, render_report};
