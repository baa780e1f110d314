//! Offline checkers over finalized run traces.
//!
//! Each checker consumes only the trace (plus entity specs where replay
//! is needed) and never looks at engine internals, so a bug in the engine
//! cannot hide itself in the verdicts. They assume a drained trace: every
//! admitted command has been resolved and every committed effect applied
//! by the end of the run, which the simulator's post-load drain window
//! guarantees.
//!
//! Serializability is checked at the state level: the run's final entity
//! states must equal those produced by some serial order of the committed
//! transactions that is also guard-feasible (every command's guard holds
//! at its point in the serial replay). State equivalence is the right
//! notion here because commands on the same entity can commute; demanding
//! an equivalent order of operations would reject histories the entity
//! semantics cannot distinguish.

use std::collections::{BTreeMap, BTreeSet};

use psac_core::command::{CommandId, EntityAddr, Resolution, TxnId};
use psac_core::expr::Args;
use psac_core::spec::{EntityState, SpecError, SpecSet};
use psac_core::tree::Decision;
use thiserror::Error;

use crate::trace::{Trace, TraceKind};

/// Outcome of one checker pass over a trace.
#[derive(Debug, Default)]
pub struct Findings {
    /// How many units (entities, transactions) the checker examined.
    pub checked: usize,
    pub violations: Vec<String>,
}

impl Findings {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("{0} committed transactions exceed the enumeration cap of {MAX_COMMITTED}")]
    TooManyCommitted(usize),
    #[error("no initial state recorded for {0}")]
    MissingInit(EntityAddr),
    #[error("no spec registered for entity kind {0}")]
    UnknownSpec(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Committed effects must land on each entity in admission order.
///
/// For every entity, the sequence of `Applied` events must equal the
/// sequence of accepted commands filtered down to the ones whose
/// transactions committed on that entity. Anything else means an effect
/// was applied out of order, twice, or without a commit.
pub fn check_linearizability(trace: &Trace) -> Findings {
    let mut accepts: BTreeMap<EntityAddr, Vec<CommandId>> = BTreeMap::new();
    let mut committed: BTreeMap<EntityAddr, BTreeSet<CommandId>> = BTreeMap::new();
    let mut applied: BTreeMap<EntityAddr, Vec<CommandId>> = BTreeMap::new();
    for event in &trace.events {
        match &event.kind {
            TraceKind::ObjectDecision { entity, id, decision, .. } => {
                if *decision == Decision::Accept {
                    accepts.entry(entity.clone()).or_default().push(*id);
                }
            }
            TraceKind::Resolution { entity, id, resolution } => {
                if *resolution == Resolution::Commit {
                    committed.entry(entity.clone()).or_default().insert(*id);
                }
            }
            TraceKind::Applied { entity, id, .. } => {
                applied.entry(entity.clone()).or_default().push(*id);
            }
            _ => {}
        }
    }
    let mut findings = Findings::default();
    let entities: BTreeSet<&EntityAddr> =
        accepts.keys().chain(applied.keys()).collect();
    for entity in entities {
        findings.checked += 1;
        let empty = BTreeSet::new();
        let committed_here = committed.get(entity).unwrap_or(&empty);
        let expected: Vec<CommandId> = accepts
            .get(entity)
            .map(|ids| ids.iter().filter(|id| committed_here.contains(id)).copied().collect())
            .unwrap_or_default();
        let got = applied.get(entity).cloned().unwrap_or_default();
        if expected != got {
            findings.violations.push(format!(
                "{entity}: applied order {got:?} differs from committed admission order {expected:?}"
            ));
        }
    }
    findings
}

/// Every transaction must resolve the same way everywhere.
///
/// All per-entity resolutions belonging to one transaction must agree
/// with each other and with the transaction's global decision when one
/// was recorded.
pub fn check_atomicity(trace: &Trace) -> Findings {
    let mut global: BTreeMap<TxnId, Resolution> = BTreeMap::new();
    let mut locals: BTreeMap<TxnId, Vec<(EntityAddr, CommandId, Resolution)>> = BTreeMap::new();
    let mut findings = Findings::default();
    for event in &trace.events {
        match &event.kind {
            TraceKind::GlobalDecision { txn, resolution } => {
                if let Some(prev) = global.insert(*txn, *resolution) {
                    if prev != *resolution {
                        findings
                            .violations
                            .push(format!("{txn}: conflicting global decisions {prev:?} and {resolution:?}"));
                    }
                }
            }
            TraceKind::Resolution { entity, id, resolution } => {
                locals.entry(id.txn).or_default().push((entity.clone(), *id, *resolution));
            }
            _ => {}
        }
    }
    let txns: BTreeSet<TxnId> = global.keys().chain(locals.keys()).copied().collect();
    for txn in txns {
        findings.checked += 1;
        let resolutions = locals.get(&txn).map(Vec::as_slice).unwrap_or(&[]);
        let commits = resolutions.iter().filter(|(_, _, r)| *r == Resolution::Commit).count();
        let aborts = resolutions.len() - commits;
        if commits > 0 && aborts > 0 {
            findings.violations.push(format!(
                "{txn}: entities disagree on the outcome: {resolutions:?}"
            ));
            continue;
        }
        let local = if commits > 0 {
            Some(Resolution::Commit)
        } else if aborts > 0 {
            Some(Resolution::Abort)
        } else {
            None
        };
        if let (Some(decision), Some(local)) = (global.get(&txn), local) {
            if *decision != local {
                findings.violations.push(format!(
                    "{txn}: global decision {decision:?} but entities saw {local:?}"
                ));
            }
        }
    }
    findings
}

/// Money moved between accounts must net to zero.
///
/// Sums the `balance` field over every entity that had a committed effect
/// applied, initial versus final. Entities the run never applied an
/// effect to kept their initial balance and contribute zero either way,
/// so only touched entities need summing. Valid for workloads whose
/// committed actions only move money between traced accounts.
pub fn check_conservation(trace: &Trace) -> Findings {
    let mut initial: BTreeMap<EntityAddr, i64> = BTreeMap::new();
    let mut finals: BTreeMap<EntityAddr, i64> = BTreeMap::new();
    for event in &trace.events {
        match &event.kind {
            TraceKind::EntityInit { entity, state } => {
                if let Some(cents) = balance_cents(state) {
                    initial.entry(entity.clone()).or_insert(cents);
                }
            }
            TraceKind::Applied { entity, state, .. } => {
                if let Some(cents) = balance_cents(state) {
                    finals.insert(entity.clone(), cents);
                }
            }
            _ => {}
        }
    }
    let mut findings = Findings::default();
    let mut delta: i64 = 0;
    for (entity, end) in &finals {
        findings.checked += 1;
        match initial.get(entity) {
            Some(start) => delta += end - start,
            None => findings
                .violations
                .push(format!("{entity}: effect applied but no initial state traced")),
        }
    }
    if delta != 0 {
        findings.violations.push(format!(
            "balance across touched accounts changed by {delta} cents"
        ));
    }
    findings
}

fn balance_cents(state: &EntityState) -> Option<i64> {
    match state.data.get("balance") {
        Some(psac_core::value::Value::Money(m)) => Some(m.0),
        _ => None,
    }
}

/// Enumeration bound: 8! = 40320 serial orders is the most this checker
/// will replay.
pub const MAX_COMMITTED: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SerializabilityVerdict {
    /// Some guard-feasible serial order reproduces the run's final states.
    Serializable { witness: Vec<TxnId> },
    /// No feasible serial order does; the distinct final states the
    /// feasible orders can produce are listed for the report.
    NotSerializable { serial_finals: Vec<BTreeMap<EntityAddr, EntityState>> },
}

/// One committed transaction reconstructed from the trace.
struct ReplayTxn {
    txn: TxnId,
    /// Commands in sub-command order: entity, action, args.
    commands: Vec<(EntityAddr, String, Args)>,
}

struct ReplayInput {
    txns: Vec<ReplayTxn>,
    initial: BTreeMap<EntityAddr, EntityState>,
    actual: BTreeMap<EntityAddr, EntityState>,
}

fn gather_replay(trace: &Trace) -> Result<ReplayInput, CheckError> {
    let mut global: BTreeMap<TxnId, Resolution> = BTreeMap::new();
    let mut local_commits: BTreeSet<TxnId> = BTreeSet::new();
    let mut accepted: BTreeMap<CommandId, (EntityAddr, String, Args)> = BTreeMap::new();
    let mut initial: BTreeMap<EntityAddr, EntityState> = BTreeMap::new();
    let mut last_applied: BTreeMap<EntityAddr, EntityState> = BTreeMap::new();
    for event in &trace.events {
        match &event.kind {
            TraceKind::GlobalDecision { txn, resolution } => {
                global.insert(*txn, *resolution);
            }
            TraceKind::Resolution { id, resolution, .. } => {
                if *resolution == Resolution::Commit {
                    local_commits.insert(id.txn);
                }
            }
            TraceKind::ObjectDecision { entity, id, action, args, decision } => {
                if *decision == Decision::Accept {
                    accepted.insert(*id, (entity.clone(), action.clone(), args.clone()));
                }
            }
            TraceKind::EntityInit { entity, state } => {
                initial.entry(entity.clone()).or_insert_with(|| state.clone());
            }
            TraceKind::Applied { entity, state, .. } => {
                last_applied.insert(entity.clone(), state.clone());
            }
            _ => {}
        }
    }
    // A transaction counts as committed on its coordinator's say-so, or,
    // for coordinator-free single-command requests, on the entity's
    // recorded commit.
    let committed: BTreeSet<TxnId> = global
        .iter()
        .filter(|(_, r)| **r == Resolution::Commit)
        .map(|(t, _)| *t)
        .chain(local_commits.iter().filter(|t| !global.contains_key(t)).copied())
        .collect();
    if committed.len() > MAX_COMMITTED {
        return Err(CheckError::TooManyCommitted(committed.len()));
    }
    let mut txns = Vec::new();
    for txn in committed {
        let mut commands: Vec<(u32, (EntityAddr, String, Args))> = accepted
            .iter()
            .filter(|(id, _)| id.txn == txn)
            .map(|(id, c)| (id.sub, c.clone()))
            .collect();
        commands.sort_by_key(|(sub, _)| *sub);
        txns.push(ReplayTxn {
            txn,
            commands: commands.into_iter().map(|(_, c)| c).collect(),
        });
    }
    // Only entities the committed transactions touch matter for the
    // final-state comparison.
    let mut touched: BTreeSet<EntityAddr> = BTreeSet::new();
    for t in &txns {
        for (entity, _, _) in &t.commands {
            touched.insert(entity.clone());
        }
    }
    let mut start = BTreeMap::new();
    let mut actual = BTreeMap::new();
    for entity in touched {
        let init = initial
            .get(&entity)
            .cloned()
            .ok_or_else(|| CheckError::MissingInit(entity.clone()))?;
        let fin = last_applied.get(&entity).cloned().unwrap_or_else(|| init.clone());
        start.insert(entity.clone(), init);
        actual.insert(entity, fin);
    }
    Ok(ReplayInput { txns, initial: start, actual })
}

/// Replay one serial order. Returns the final states it produces, or
/// None if some guard fails along the way (the order is infeasible).
fn replay_order(
    specs: &SpecSet,
    input: &ReplayInput,
    order: &[usize],
) -> Result<Option<BTreeMap<EntityAddr, EntityState>>, CheckError> {
    let mut states = input.initial.clone();
    for &i in order {
        for (entity, action, args) in &input.txns[i].commands {
            let spec = specs
                .get(&entity.spec)
                .ok_or_else(|| CheckError::UnknownSpec(entity.spec.clone()))?;
            let state = states.get_mut(entity).expect("touched entities are seeded");
            if !spec.eval_guard(state, action, args)? {
                return Ok(None);
            }
            *state = spec.apply_effect(state, action, args)?;
        }
    }
    Ok(Some(states))
}

/// Search every guard-feasible serial order of the committed transactions
/// for one that reproduces the run's final states.
///
/// Orders are generated in lexicographic index order via iterative
/// permutation stepping. The independent implementation below must agree
/// with this one on every trace.
pub fn check_serializability(
    trace: &Trace,
    specs: &SpecSet,
) -> Result<SerializabilityVerdict, CheckError> {
    let input = gather_replay(trace)?;
    let n = input.txns.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut feasible_finals: BTreeSet<BTreeMap<EntityAddr, EntityState>> = BTreeSet::new();
    loop {
        if let Some(finals) = replay_order(specs, &input, &order)? {
            if finals == input.actual {
                return Ok(SerializabilityVerdict::Serializable {
                    witness: order.iter().map(|&i| input.txns[i].txn).collect(),
                });
            }
            feasible_finals.insert(finals);
        }
        if !next_permutation(&mut order) {
            break;
        }
    }
    Ok(SerializabilityVerdict::NotSerializable {
        serial_finals: feasible_finals.into_iter().collect(),
    })
}

/// Lexicographic successor in place; false once the order was the last.
fn next_permutation(order: &mut [usize]) -> bool {
    if order.len() < 2 {
        return false;
    }
    let mut i = order.len() - 1;
    while i > 0 && order[i - 1] >= order[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = order.len() - 1;
    while order[j] <= order[i - 1] {
        j -= 1;
    }
    order.swap(i - 1, j);
    order[i..].reverse();
    true
}

/// Independent serializability check used to cross-validate the primary
/// one: recursive branch-and-replay over remaining transactions instead
/// of whole-permutation stepping, visiting candidates in reverse index
/// order and pruning a branch as soon as a guard fails mid-prefix.
pub fn check_serializability_alt(
    trace: &Trace,
    specs: &SpecSet,
) -> Result<SerializabilityVerdict, CheckError> {
    let input = gather_replay(trace)?;
    let n = input.txns.len();
    let mut remaining: Vec<bool> = vec![true; n];
    let mut prefix: Vec<usize> = Vec::new();
    let mut feasible_finals: BTreeSet<BTreeMap<EntityAddr, EntityState>> = BTreeSet::new();
    let witness = explore(
        specs,
        &input,
        &input.initial.clone(),
        &mut remaining,
        &mut prefix,
        &mut feasible_finals,
    )?;
    Ok(match witness {
        Some(order) => SerializabilityVerdict::Serializable {
            witness: order.into_iter().map(|i| input.txns[i].txn).collect(),
        },
        None => SerializabilityVerdict::NotSerializable {
            serial_finals: feasible_finals.into_iter().collect(),
        },
    })
}

fn explore(
    specs: &SpecSet,
    input: &ReplayInput,
    states: &BTreeMap<EntityAddr, EntityState>,
    remaining: &mut Vec<bool>,
    prefix: &mut Vec<usize>,
    feasible_finals: &mut BTreeSet<BTreeMap<EntityAddr, EntityState>>,
) -> Result<Option<Vec<usize>>, CheckError> {
    if prefix.len() == remaining.len() {
        if *states == input.actual {
            return Ok(Some(prefix.clone()));
        }
        feasible_finals.insert(states.clone());
        return Ok(None);
    }
    for i in (0..remaining.len()).rev() {
        if !remaining[i] {
            continue;
        }
        let mut next = states.clone();
        let mut feasible = true;
        for (entity, action, args) in &input.txns[i].commands {
            let spec = specs
                .get(&entity.spec)
                .ok_or_else(|| CheckError::UnknownSpec(entity.spec.clone()))?;
            let state = next.get_mut(entity).expect("touched entities are seeded");
            if !spec.eval_guard(state, action, args)? {
                feasible = false;
                break;
            }
            *state = spec.apply_effect(state, action, args)?;
        }
        if !feasible {
            continue;
        }
        remaining[i] = false;
        prefix.push(i);
        let found = explore(specs, input, &next, remaining, prefix, feasible_finals)?;
        prefix.pop();
        remaining[i] = true;
        if found.is_some() {
            return Ok(found);
        }
    }
    Ok(None)
}
