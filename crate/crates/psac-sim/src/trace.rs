//! Run histories and the measurements taken from them.
//!
//! A [`Trace`] is the complete record of one run: every request, object
//! decision, vote, global decision, per-object resolution, and applied
//! effect, in causal order. It serializes to line-delimited JSON so runs
//! can be diffed byte for byte and checked offline.

use std::collections::BTreeMap;

use psac_core::command::{CommandId, EntityAddr, Resolution, TxnId, Vote};
use psac_core::expr::Args;
use psac_core::journal::JournalPayload;
use psac_core::object::{ObjectEvent, ObjectOutput, ObjectReply};
use psac_core::spec::EntityState;
use psac_core::tree::Decision;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum TraceKind {
    /// First event of every trace: what ran.
    Meta {
        scenario: String,
        engine: String,
        nodes: u32,
        seed: u64,
    },
    /// An entity's state before any traced command touched it.
    EntityInit { entity: EntityAddr, state: EntityState },
    RequestStart { user: u32, txn: TxnId },
    RequestEnd {
        user: u32,
        txn: TxnId,
        committed: bool,
        timed_out: bool,
    },
    /// An object's admission verdict for one command.
    ObjectDecision {
        entity: EntityAddr,
        id: CommandId,
        action: String,
        args: Args,
        decision: Decision,
    },
    Vote { id: CommandId, vote: Vote },
    /// The coordinator's transaction-wide outcome.
    GlobalDecision { txn: TxnId, resolution: Resolution },
    /// The outcome as processed by one object for one admitted command.
    Resolution {
        entity: EntityAddr,
        id: CommandId,
        resolution: Resolution,
    },
    /// A committed effect folded into the entity, with the state after.
    Applied {
        entity: EntityAddr,
        id: CommandId,
        state: EntityState,
    },
    NodeCrashed { node: u32 },
    NodeRecovered { node: u32 },
    /// A journal stream was replayed onto a live node.
    Failover { stream: String, to_node: u32 },
    /// A participant ended the run holding a yes vote with no decision:
    /// the blocking case, annotated rather than glossed over.
    Blocked { id: CommandId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Simulated microseconds.
    pub t: u64,
    /// Dense tie-break and total order within the trace.
    pub seq: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Trace {
        Trace::default()
    }

    pub fn push(&mut self, t: u64, kind: TraceKind) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { t, seq, kind });
    }

    /// Re-sort by (time, insertion order) and renumber densely. The
    /// simulator records an event when the work is scheduled but stamps
    /// it with its completion time, so queueing can record a slow step
    /// before a fast one that finishes earlier; causality still only
    /// ever points forward in time, which makes this sort safe.
    pub fn finalize(&mut self) {
        self.events.sort_by_key(|e| (e.t, e.seq));
        for (i, event) in self.events.iter_mut().enumerate() {
            event.seq = i as u64;
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, serde_json::Error> {
        let mut events = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line)?);
        }
        Ok(Trace { events })
    }

    /// Mirror one object step into the trace: decisions (with the
    /// arguments looked up through `args_of`), per-object resolutions,
    /// and applied effects. Journal records that carry no analytical
    /// content (accepts, effect markers, reply receipts) stay in the
    /// journal only.
    pub fn record_object_output(
        &mut self,
        t: u64,
        entity: &EntityAddr,
        out: &ObjectOutput,
        args_of: impl Fn(CommandId) -> Args,
    ) {
        for event in &out.events {
            match event {
                ObjectEvent::Decided { id, action, decision } => {
                    self.push(
                        t,
                        TraceKind::ObjectDecision {
                            entity: entity.clone(),
                            id: *id,
                            action: action.clone(),
                            args: args_of(*id),
                            decision: *decision,
                        },
                    );
                }
                ObjectEvent::Journal(JournalPayload::Resolution { id, resolution }) => {
                    self.push(
                        t,
                        TraceKind::Resolution {
                            entity: entity.clone(),
                            id: *id,
                            resolution: *resolution,
                        },
                    );
                }
                ObjectEvent::Reply(ObjectReply::Applied { id, state }) => {
                    self.push(
                        t,
                        TraceKind::Applied {
                            entity: entity.clone(),
                            id: *id,
                            state: state.clone(),
                        },
                    );
                }
                _ => {}
            }
        }
    }

    /// Mirror a transaction-layer journal append into the trace.
    pub fn record_txn_journal(&mut self, t: u64, payload: &JournalPayload) {
        match payload {
            JournalPayload::Vote { id, vote } => {
                self.push(t, TraceKind::Vote { id: *id, vote: *vote });
            }
            JournalPayload::Decision { txn, resolution } => {
                self.push(
                    t,
                    TraceKind::GlobalDecision {
                        txn: *txn,
                        resolution: *resolution,
                    },
                );
            }
            _ => {}
        }
    }
}

/// Measurements over a trace's measurement window.
///
/// Throughput counts committed replies per second; latency percentiles
/// are nearest-rank over every answered request in the window, whatever
/// its outcome; the decision counters tally object verdicts. Requests a
/// user abandoned contribute to `timeouts` only.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub throughput_tps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub delayed: u64,
    pub successes: u64,
    pub answered: u64,
    pub timeouts: u64,
}

pub const CSV_HEADER: &str =
    "scenario,engine,N,seed,throughput_tps,p50_ms,p95_ms,p99_ms,accepted,rejected,delayed";

impl Metrics {
    pub fn from_trace(trace: &Trace, warmup_us: u64, measure_us: u64) -> Metrics {
        let window = warmup_us..warmup_us + measure_us;
        let mut started_at: BTreeMap<TxnId, u64> = BTreeMap::new();
        let mut latencies_us: Vec<u64> = Vec::new();
        let mut m = Metrics {
            throughput_tps: 0.0,
            p50_ms: 0.0,
            p95_ms: 0.0,
            p99_ms: 0.0,
            accepted: 0,
            rejected: 0,
            delayed: 0,
            successes: 0,
            answered: 0,
            timeouts: 0,
        };
        for event in &trace.events {
            match &event.kind {
                TraceKind::RequestStart { txn, .. } => {
                    started_at.insert(*txn, event.t);
                }
                TraceKind::RequestEnd { txn, committed, timed_out, .. }
                    if window.contains(&event.t) =>
                {
                    if *timed_out {
                        m.timeouts += 1;
                        continue;
                    }
                    m.answered += 1;
                    if *committed {
                        m.successes += 1;
                    }
                    if let Some(start) = started_at.get(txn) {
                        latencies_us.push(event.t - start);
                    }
                }
                TraceKind::ObjectDecision { decision, .. } if window.contains(&event.t) => {
                    match decision {
                        Decision::Accept => m.accepted += 1,
                        Decision::Reject => m.rejected += 1,
                        Decision::Delay => m.delayed += 1,
                    }
                }
                _ => {}
            }
        }
        m.throughput_tps = m.successes as f64 / (measure_us as f64 / 1_000_000.0);
        latencies_us.sort_unstable();
        m.p50_ms = nearest_rank(&latencies_us, 50) as f64 / 1_000.0;
        m.p95_ms = nearest_rank(&latencies_us, 95) as f64 / 1_000.0;
        m.p99_ms = nearest_rank(&latencies_us, 99) as f64 / 1_000.0;
        m
    }

    pub fn csv_row(&self, scenario: &str, engine: &str, nodes: u32, seed: u64) -> String {
        format!(
            "{scenario},{engine},{nodes},{seed},{:.3},{:.3},{:.3},{:.3},{},{},{}",
            self.throughput_tps,
            self.p50_ms,
            self.p95_ms,
            self.p99_ms,
            self.accepted,
            self.rejected,
            self.delayed
        )
    }
}

/// Nearest-rank percentile on a sorted slice: the ceil(p/100 * n)-th
/// value, so the 50th of [1,2,3,4] is 2. Empty input yields 0.
fn nearest_rank(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let n = sorted.len() as u64;
    let rank = (pct * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}
