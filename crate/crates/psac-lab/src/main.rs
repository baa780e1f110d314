//! Command line front end: run experiment matrices, fit scaling curves,
//! check traces, render reports. Exits zero only when everything ran and
//! every safety check passed.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use psac_core::command::Resolution;
use psac_core::samples::bank_specs;
use psac_core::tree::Decision;
use psac_lab::experiment::{
    parse_csv, run_experiment, run_experiment_with, to_csv, ExperimentConfig,
};
use psac_lab::report::{fit_scaling, render_report};
use psac_sim::checker::{
    check_atomicity, check_conservation, check_linearizability, check_serializability,
    CheckError, Findings, SerializabilityVerdict,
};
use psac_sim::scenario::{Engine, Scenario};
use psac_sim::trace::{Trace, TraceKind};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "psac-lab", about = "Transaction engine measurement bench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment matrix described by a JSON config.
    Run {
        /// JSON file: {"scenario": {...}, "engines": [...], "nodes": [...], "seeds": [...]}
        config: PathBuf,
        /// Replace the seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the engine list: psac:<k> or 2pl.
        #[arg(long)]
        engine: Option<String>,
        /// Replace the cluster size list, comma separated, e.g. 1,2,4,8.
        #[arg(long)]
        nodes: Option<String>,
        /// Write the measurement CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export each cell's trace as JSON lines into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Fit the scalability model to a measurement CSV.
    Fit { csv: PathBuf },
    /// Run the safety checkers over a trace in JSON lines form.
    Check { trace: PathBuf },
    /// Render a markdown report from a measurement CSV.
    Report {
        csv: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// On-disk experiment description. Empty lists fall back to the
/// scenario's own engine, size and seed, so a bare scenario runs one cell.
#[derive(Deserialize)]
struct ExperimentSpec {
    scenario: Scenario,
    #[serde(default)]
    engines: Vec<Engine>,
    #[serde(default)]
    nodes: Vec<u32>,
    #[serde(default)]
    seeds: Vec<u64>,
}

fn main() -> ExitCode {
    match run() {
        Ok(clean) => {
            if clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<bool> {
    match Cli::parse().cmd {
        Cmd::Run { config, seed, engine, nodes, out, trace_dir } => {
            cmd_run(config, seed, engine, nodes, out, trace_dir)
        }
        Cmd::Fit { csv } => cmd_fit(csv),
        Cmd::Check { trace } => cmd_check(trace),
        Cmd::Report { csv, out } => cmd_report(csv, out),
    }
}

fn cmd_run(
    config: PathBuf,
    seed: Option<u64>,
    engine: Option<String>,
    nodes: Option<String>,
    out: Option<PathBuf>,
    trace_dir: Option<PathBuf>,
) -> Result<bool> {
    let text = fs::read_to_string(&config)
        .with_context(|| format!("reading {}", config.display()))?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config.display()))?;
    let mut experiment = ExperimentConfig {
        engines: if spec.engines.is_empty() {
            vec![spec.scenario.engine.clone()]
        } else {
            spec.engines
        },
        nodes: if spec.nodes.is_empty() { vec![spec.scenario.nodes] } else { spec.nodes },
        seeds: if spec.seeds.is_empty() { vec![spec.scenario.seed] } else { spec.seeds },
        base: spec.scenario,
    };
    if let Some(seed) = seed {
        experiment.seeds = vec![seed];
    }
    if let Some(engine) = engine {
        experiment.engines =
            vec![Engine::parse(&engine)
                .with_context(|| format!("unknown engine {engine:?}, expected psac:<k> or 2pl"))?];
    }
    if let Some(nodes) = nodes {
        experiment.nodes = nodes
            .split(',')
            .map(|s| s.trim().parse::<u32>().with_context(|| format!("bad node count {s:?}")))
            .collect::<Result<Vec<u32>>>()?;
    }

    let cells = match &trace_dir {
        Some(dir) => {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            let scenario = experiment.base.name.clone();
            run_experiment_with(&experiment, |cell, trace| {
                let file = format!(
                    "{}_{}_n{}_seed{}.jsonl",
                    file_token(&scenario),
                    file_token(&cell.engine.label()),
                    cell.nodes,
                    cell.seed
                );
                fs::write(dir.join(file), trace.to_jsonl())
            })?
        }
        None => run_experiment(&experiment)?,
    };
    let csv = to_csv(&experiment.base.name, &cells);
    write_output(out.as_deref(), &csv)?;

    let mut clean = true;
    for cell in &cells {
        for violation in &cell.violations {
            clean = false;
            eprintln!(
                "violation [{} N={} seed={}]: {violation}",
                cell.engine.label(),
                cell.nodes,
                cell.seed
            );
        }
    }
    Ok(clean)
}

fn cmd_fit(csv: PathBuf) -> Result<bool> {
    let text =
        fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
    let rows = parse_csv(&text)?;
    if rows.is_empty() {
        bail!("no measurements in {}", csv.display());
    }
    let groups: BTreeSet<(String, String)> =
        rows.iter().map(|r| (r.scenario.clone(), r.engine.clone())).collect();
    println!("scenario,engine,lambda_tps,sigma,a_inf_tps,rms_residual");
    let mut fitted = 0;
    for (scenario, engine) in groups {
        let group: Vec<_> = rows
            .iter()
            .filter(|r| r.scenario == scenario && r.engine == engine)
            .collect();
        match fit_scaling(&group) {
            Ok(f) => {
                fitted += 1;
                let a_inf =
                    f.a_inf.map(|a| format!("{a:.1}")).unwrap_or_else(|| "inf".to_string());
                println!(
                    "{scenario},{engine},{:.3},{:.7},{a_inf},{:.3}",
                    f.lambda, f.sigma, f.residual
                );
            }
            Err(e) => {
                eprintln!("{scenario}/{engine}: not fitted: {e}");
            }
        }
    }
    Ok(fitted > 0)
}

fn print_findings(name: &str, findings: &Findings) -> bool {
    if findings.ok() {
        println!("{name}: ok ({} checked)", findings.checked);
        true
    } else {
        println!("{name}: FAILED");
        for violation in &findings.violations {
            println!("  {violation}");
        }
        false
    }
}

/// Conservation assumes committed actions only move money; a committed
/// account opening or interest posting breaks that assumption by design.
fn conservation_applies(trace: &Trace) -> bool {
    let mut minting: BTreeSet<_> = BTreeSet::new();
    let mut committed: BTreeSet<_> = BTreeSet::new();
    for event in &trace.events {
        match &event.kind {
            TraceKind::ObjectDecision { id, action, decision, .. } => {
                if *decision == Decision::Accept && (action == "Open" || action == "Interest") {
                    minting.insert(*id);
                }
            }
            TraceKind::Resolution { id, resolution, .. } => {
                if *resolution == Resolution::Commit {
                    committed.insert(*id);
                }
            }
            _ => {}
        }
    }
    minting.is_disjoint(&committed)
}

fn cmd_check(path: PathBuf) -> Result<bool> {
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let trace = Trace::from_jsonl(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let mut clean = true;
    clean &= print_findings("linearizability", &check_linearizability(&trace));
    clean &= print_findings("atomicity", &check_atomicity(&trace));
    if conservation_applies(&trace) {
        clean &= print_findings("conservation", &check_conservation(&trace));
    } else {
        println!("conservation: skipped (committed actions mint or scale money)");
    }
    match check_serializability(&trace, &bank_specs()) {
        Ok(SerializabilityVerdict::Serializable { witness }) => {
            let order: Vec<String> = witness.iter().map(|t| t.to_string()).collect();
            println!("serializability: ok (witness {})", order.join(" "));
        }
        Ok(SerializabilityVerdict::NotSerializable { serial_finals }) => {
            clean = false;
            println!(
                "serializability: FAILED; {} feasible serial outcomes, none match the run",
                serial_finals.len()
            );
        }
        Err(CheckError::TooManyCommitted(n)) => {
            println!("serializability: skipped ({n} committed transactions exceed the cap)");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(clean)
}

fn cmd_report(csv: PathBuf, out: Option<PathBuf>) -> Result<bool> {
    let text =
        fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
    let rows = parse_csv(&text)?;
    if rows.is_empty() {
        bail!("no measurements in {}", csv.display());
    }
    write_output(out.as_deref(), &render_report(&rows))?;
    Ok(true)
}

/// Scenario names and engine labels may hold characters that are awkward
/// in file names (the engine label has a colon); map them to dashes.
fn file_token(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

fn write_output(out: Option<&std::path::Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}
