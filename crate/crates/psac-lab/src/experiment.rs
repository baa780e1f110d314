//! Benchmark matrix: scenario by engine by cluster size by seed.
//!
//! Cells run in parallel but collect in matrix order, and each cell is
//! internally deterministic, so a matrix is exactly reproducible. Every
//! cell's trace is pushed through the safety checkers before the cell is
//! reported, so a bug that corrupts histories cannot slip into a
//! performance figure unnoticed.

use psac_sim::checker::{check_atomicity, check_conservation, check_linearizability};
use psac_sim::scenario::{Engine, OpMix, Scenario, Workload};
use psac_sim::sim::{run_scenario, SimError};
use psac_sim::trace::{Metrics, Trace, CSV_HEADER};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub base: Scenario,
    pub engines: Vec<Engine>,
    pub nodes: Vec<u32>,
    pub seeds: Vec<u64>,
}

#[derive(Debug)]
pub struct Cell {
    pub engine: Engine,
    pub nodes: u32,
    pub seed: u64,
    pub metrics: Metrics,
    /// Safety violations found in this cell's trace; must stay empty.
    pub violations: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cell {engine} N={nodes} seed={seed}: {source}")]
    Cell {
        engine: String,
        nodes: u32,
        seed: u64,
        source: SimError,
    },
    #[error("exporting trace for {engine} N={nodes} seed={seed}: {source}")]
    Export {
        engine: String,
        nodes: u32,
        seed: u64,
        source: std::io::Error,
    },
}

/// Money conservation only holds when committed actions move money
/// between traced accounts rather than minting it (openings) or scaling
/// it (interest).
fn conservation_applies(sc: &Scenario) -> bool {
    !matches!(sc.workload, Workload::NoSync) && matches!(sc.mix, OpMix::Transfers)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<Cell>, ExperimentError> {
    run_experiment_with(config, |_, _| Ok(()))
}

/// Like [`run_experiment`], but hands each finished cell's trace to `sink`
/// before the trace is dropped. Cells run in parallel, so the sink must be
/// safe to call concurrently; writes to distinct files qualify.
pub fn run_experiment_with<F>(
    config: &ExperimentConfig,
    sink: F,
) -> Result<Vec<Cell>, ExperimentError>
where
    F: Fn(&Cell, &Trace) -> std::io::Result<()> + Sync,
{
    let mut plan: Vec<(Engine, u32, u64)> = Vec::new();
    for engine in &config.engines {
        for &nodes in &config.nodes {
            for &seed in &config.seeds {
                plan.push((engine.clone(), nodes, seed));
            }
        }
    }
    plan.into_par_iter()
        .map(|(engine, nodes, seed)| {
            let mut sc = config.base.clone();
            sc.engine = engine.clone();
            sc.nodes = nodes;
            sc.seed = seed;
            let result = run_scenario(&sc).map_err(|source| ExperimentError::Cell {
                engine: engine.label(),
                nodes,
                seed,
                source,
            })?;
            let mut violations = Vec::new();
            violations.extend(check_linearizability(&result.trace).violations);
            violations.extend(check_atomicity(&result.trace).violations);
            if conservation_applies(&sc) {
                violations.extend(check_conservation(&result.trace).violations);
            }
            let cell = Cell { engine, nodes, seed, metrics: result.metrics, violations };
            sink(&cell, &result.trace).map_err(|source| ExperimentError::Export {
                engine: cell.engine.label(),
                nodes,
                seed,
                source,
            })?;
            Ok(cell)
        })
        .collect()
}

pub fn to_csv(scenario_name: &str, cells: &[Cell]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for cell in cells {
        out.push_str(&cell.metrics.csv_row(scenario_name, &cell.engine.label(), cell.nodes, cell.seed));
        out.push('\n');
    }
    out
}

/// One parsed line of the measurement CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scenario: String,
    pub engine: String,
    pub nodes: u32,
    pub seed: u64,
    pub throughput_tps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub delayed: u64,
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {0}: expected {1} fields, got {2}")]
    FieldCount(usize, usize, usize),
    #[error("line {0}: {1}")]
    Field(usize, String),
    #[error("header mismatch: expected {CSV_HEADER:?}")]
    Header,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        _ => return Err(CsvError::Header),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(CsvError::FieldCount(i + 1, 11, fields.len()));
        }
        fn num<T: std::str::FromStr>(i: usize, name: &str, s: &str) -> Result<T, CsvError> {
            s.parse().map_err(|_| CsvError::Field(i, format!("bad {name}: {s:?}")))
        }
        rows.push(CsvRow {
            scenario: fields[0].to_string(),
            engine: fields[1].to_string(),
            nodes: num(i + 1, "N", fields[2])?,
            seed: num(i + 1, "seed", fields[3])?,
            throughput_tps: num(i + 1, "throughput_tps", fields[4])?,
            p50_ms: num(i + 1, "p50_ms", fields[5])?,
            p95_ms: num(i + 1, "p95_ms", fields[6])?,
            p99_ms: num(i + 1, "p99_ms", fields[7])?,
            accepted: num(i + 1, "accepted", fields[8])?,
            rejected: num(i + 1, "rejected", fields[9])?,
            delayed: num(i + 1, "delayed", fields[10])?,
        });
    }
    Ok(rows)
}

/// Median of a sample; the mean of the two middle values when even.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in samples"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips() {
        let base = Scenario::quick(
            "roundtrip",
            Engine::Psac { max_parallel: 4 },
            Workload::Sync,
            3,
        );
        let mut small = base.clone();
        small.users = 4;
        small.accounts = 32;
        small.warmup_us = 100_000;
        small.measure_us = 300_000;
        let config = ExperimentConfig {
            base: small,
            engines: vec![Engine::Psac { max_parallel: 4 }, Engine::TwoPl],
            nodes: vec![2],
            seeds: vec![1, 2],
        };
        let cells = run_experiment(&config).expect("matrix");
        assert_eq!(cells.len(), 4);
        for cell in &cells {
            assert!(cell.violations.is_empty(), "{:?}", cell.violations);
        }
        let csv = to_csv("roundtrip", &cells);
        let rows = parse_csv(&csv).expect("parse");
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].scenario, "roundtrip");
        assert_eq!(rows[0].nodes, 2);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rejects_foreign_csv() {
        assert!(matches!(parse_csv("a,b,c\n1,2,3\n"), Err(CsvError::Header)));
    }
}
