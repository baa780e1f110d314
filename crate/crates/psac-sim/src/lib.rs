//! Deterministic cluster simulation, history checkers, and scripted
//! walkthrough scenarios for the transaction engine.

pub mod checker;
pub mod lockref;
pub mod refcheck;
pub mod rng;
pub mod scenario;
pub mod scripted;
pub mod sim;
pub mod trace;

pub use checker::{
    check_atomicity, check_conservation, check_linearizability, check_serializability,
    check_serializability_alt, CheckError, Findings, SerializabilityVerdict,
};
pub use rng::SimRng;
pub use scenario::{Engine, OpMix, Scenario, ScenarioError, Workload};
pub use scripted::{
    abort_walkthrough, admission_walkthrough, cross_account_interleaving, AbortComparison,
    CrossAccountReport, ScriptError, StepRecord, WalkthroughReport,
};
pub use sim::{run_scenario, SimError, SimResult};
pub use trace::{Metrics, Trace, TraceEvent, TraceKind, CSV_HEADER};
