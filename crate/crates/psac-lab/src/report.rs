//! Markdown rendering of a measurement CSV: medians, engine ratios, and
//! scalability fits, all keyed and ordered deterministically so the same
//! CSV always renders the same report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::amdahl::{fit, AmdahlFit};
use crate::experiment::{median, CsvRow};

type EngineLabel = String;

/// Median throughput per cluster size for one engine, the unit the fits
/// and ratio tables work from.
fn throughput_by_n(rows: &[&CsvRow]) -> BTreeMap<u32, f64> {
    let mut samples: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for row in rows {
        samples.entry(row.nodes).or_default().push(row.throughput_tps);
    }
    samples.into_iter().map(|(n, xs)| (n, median(&xs))).collect()
}

pub fn fit_scaling(rows: &[&CsvRow]) -> Result<AmdahlFit, crate::amdahl::FitError> {
    let points: Vec<(u32, f64)> = throughput_by_n(rows).into_iter().collect();
    fit(&points)
}

pub fn render_report(rows: &[CsvRow]) -> String {
    let mut out = String::from("# Measurement report\n");
    let scenarios: BTreeSet<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    for scenario in scenarios {
        let in_scenario: Vec<&CsvRow> =
            rows.iter().filter(|r| r.scenario == scenario).collect();
        let engines: BTreeSet<EngineLabel> =
            in_scenario.iter().map(|r| r.engine.clone()).collect();
        let sizes: BTreeSet<u32> = in_scenario.iter().map(|r| r.nodes).collect();
        let _ = writeln!(out, "\n## {scenario}\n");
        let seeds: BTreeSet<u64> = in_scenario.iter().map(|r| r.seed).collect();
        let _ = writeln!(
            out,
            "{} engines, cluster sizes {:?}, {} seeds per cell.\n",
            engines.len(),
            sizes.iter().collect::<Vec<_>>(),
            seeds.len()
        );

        let mut per_engine: BTreeMap<EngineLabel, BTreeMap<u32, f64>> = BTreeMap::new();
        for engine in &engines {
            let engine_rows: Vec<&CsvRow> = in_scenario
                .iter()
                .filter(|r| &r.engine == engine)
                .copied()
                .collect();
            per_engine.insert(engine.clone(), throughput_by_n(&engine_rows));
        }

        out.push_str("### Throughput, median tps\n\n| engine |");
        for n in &sizes {
            let _ = write!(out, " N={n} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(sizes.len()));
        out.push('\n');
        for (engine, by_n) in &per_engine {
            let _ = write!(out, "| {engine} |");
            for n in &sizes {
                match by_n.get(n) {
                    Some(x) => {
                        let _ = write!(out, " {x:.1} |");
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }

        out.push_str("\n### Latency, median ms\n\n| engine | N | p50 | p95 | p99 |\n|---|---|---|---|---|\n");
        for engine in &engines {
            for n in &sizes {
                let cell: Vec<&CsvRow> = in_scenario
                    .iter()
                    .filter(|r| &r.engine == engine && r.nodes == *n)
                    .copied()
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let p50 = median(&cell.iter().map(|r| r.p50_ms).collect::<Vec<_>>());
                let p95 = median(&cell.iter().map(|r| r.p95_ms).collect::<Vec<_>>());
                let p99 = median(&cell.iter().map(|r| r.p99_ms).collect::<Vec<_>>());
                let _ = writeln!(out, "| {engine} | {n} | {p50:.3} | {p95:.3} | {p99:.3} |");
            }
        }

        // Throughput ratios of every tree-engine variant over the locking
        // baseline, when both were measured.
        if let Some(locking) = per_engine.get("2pl") {
            let tree_engines: Vec<&EngineLabel> =
                per_engine.keys().filter(|e| e.starts_with("psac:")).collect();
            if !tree_engines.is_empty() {
                out.push_str("\n### Relative throughput over 2pl\n\n| N |");
                for engine in &tree_engines {
                    let _ = write!(out, " {engine} |");
                }
                out.push_str("\n|---|");
                out.push_str(&"---|".repeat(tree_engines.len()));
                out.push('\n');
                for n in &sizes {
                    let _ = write!(out, "| {n} |");
                    for engine in &tree_engines {
                        match (per_engine[*engine].get(n), locking.get(n)) {
                            (Some(x), Some(base)) if *base > 0.0 => {
                                let _ = write!(out, " {:.2}x |", x / base);
                            }
                            _ => out.push_str(" - |"),
                        }
                    }
                    out.push('\n');
                }
            }
        }

        if sizes.len() >= 2 {
            out.push_str(
                "\n### Scalability fit, X(N) = lambda N / (1 + sigma (N - 1))\n\n| engine | lambda (tps) | sigma | asymptote (tps) | rms residual |\n|---|---|---|---|---|\n",
            );
            for engine in &engines {
                let engine_rows: Vec<&CsvRow> = in_scenario
                    .iter()
                    .filter(|r| &r.engine == engine)
                    .copied()
                    .collect();
                match fit_scaling(&engine_rows) {
                    Ok(f) => {
                        let asymptote = f
                            .a_inf
                            .map(|a| format!("{a:.0}"))
                            .unwrap_or_else(|| "unbounded".to_string());
                        let _ = writeln!(
                            out,
                            "| {engine} | {:.1} | {:.6} | {asymptote} | {:.3} |",
                            f.lambda, f.sigma, f.residual
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(out, "| {engine} | - | - | - | {e} |");
                    }
                }
            }
        }
    }
    out
}
