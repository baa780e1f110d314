//! Differential checks backing the engine's two equivalence claims.
//!
//! First: with the parallelism cap at one, the admission engine must be
//! observationally identical to a plain lock with a FIFO wait queue. The
//! sweep drives both on the same random schedule of submissions and
//! resolutions and compares every reply sequence and the final states.
//!
//! Second: the incrementally maintained outcome tree must agree with a
//! from-scratch enumeration of all commit/abort subsets, both on the leaf
//! state multiset and on the admission decision for a fresh candidate.
//!
//! Both checks return mismatch records rather than panicking, so a sweep
//! can report every divergent seed in one run.

use std::fmt::Write as _;
use std::sync::Arc;

use psac_core::command::{Command, CommandId, CommandInstance, EntityAddr, Resolution, TxnId};
use psac_core::expr::Args;
use psac_core::object::{ObjectConfig, ObjectReply, PsacObject};
use psac_core::samples::bank_specs;
use psac_core::spec::{EntitySpec, EntityState};
use psac_core::tree::{brute_force_decision, brute_force_outcomes, Decision, OutcomeTree};
use psac_core::value::Value;
use psac_core::Money;

use crate::lockref::LockRefObject;
use crate::rng::SimRng;

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub seed: u64,
    pub detail: String,
}

fn account_spec() -> Arc<EntitySpec> {
    Arc::new(bank_specs().get("Account").expect("bundled spec").clone())
}

fn opened_account(spec: &EntitySpec, name: &str, balance_cents: i64) -> EntityState {
    let mut state = spec.initial_state(name);
    state.lifecycle = "opened".into();
    state.data.insert("balance".into(), Value::Money(Money(balance_cents)));
    state
}

fn money_arg(key: &str, cents: i64) -> Args {
    let mut args = Args::new();
    args.insert(key.into(), Value::Money(Money(cents)));
    args
}

/// A random account action. Close is rare so most runs keep the entity
/// alive long enough to build real contention.
fn random_action(rng: &mut SimRng) -> (String, Args) {
    match rng.index(20) {
        0..=7 => ("Withdraw".into(), money_arg("amount", rng.range(1, 3000) as i64)),
        8..=15 => ("Deposit".into(), money_arg("amount", rng.range(1, 3000) as i64)),
        19 => ("Close".into(), Args::new()),
        _ => ("Interest".into(), Args::new()),
    }
}

struct Pending {
    entity: usize,
    id: CommandId,
    started: bool,
}

/// Run the admission engine at `max_parallel == 1` against the lock
/// reference on one random schedule. Returns the first divergence, if any.
fn locking_degradation_case(seed: u64) -> Option<Mismatch> {
    let spec = account_spec();
    let mut rng = SimRng::new(seed);
    let entity_count = 1 + rng.index(4);
    let mut engines = Vec::new();
    let mut refs = Vec::new();
    for i in 0..entity_count {
        let name = format!("d-{i}");
        let initial = opened_account(&spec, &name, rng.range(500, 15_000) as i64);
        engines.push(PsacObject::new(
            Arc::clone(&spec),
            EntityAddr::new("Account", name),
            initial.clone(),
            ObjectConfig::locking(),
        ));
        refs.push(LockRefObject::new(Arc::clone(&spec), initial));
    }
    let mut pending: Vec<Pending> = Vec::new();
    let mut next_txn = 0u64;

    let step = |engines: &mut Vec<PsacObject>,
                    refs: &mut Vec<LockRefObject>,
                    pending: &mut Vec<Pending>,
                    op: usize,
                    entity: usize,
                    submit: Option<Command>,
                    resolve: Option<(CommandId, Resolution)>|
     -> Option<Mismatch> {
        let engine_replies: Vec<ObjectReply> = match (&submit, &resolve) {
            (Some(cmd), None) => match engines[entity].handle_command(cmd.clone()) {
                Ok(out) => out.replies().cloned().collect(),
                Err(e) => {
                    return Some(Mismatch {
                        seed,
                        detail: format!("op {op}: engine error on submit: {e}"),
                    })
                }
            },
            (None, Some((id, res))) => match engines[entity].handle_resolution(*id, *res) {
                Ok(out) => out.replies().cloned().collect(),
                Err(e) => {
                    return Some(Mismatch {
                        seed,
                        detail: format!("op {op}: engine error on resolve {id}: {e}"),
                    })
                }
            },
            _ => unreachable!("exactly one of submit/resolve"),
        };
        let ref_replies = match (&submit, &resolve) {
            (Some(cmd), None) => refs[entity].submit(cmd.clone()),
            (None, Some((id, res))) => refs[entity].resolve(*id, *res),
            _ => unreachable!(),
        };
        let ref_replies = match ref_replies {
            Ok(r) => r,
            Err(e) => {
                return Some(Mismatch {
                    seed,
                    detail: format!("op {op}: reference error: {e}"),
                })
            }
        };
        if engine_replies != ref_replies {
            let mut detail = format!("op {op} on entity {entity}: reply mismatch\n");
            let _ = writeln!(detail, "  engine:    {engine_replies:?}");
            let _ = writeln!(detail, "  reference: {ref_replies:?}");
            return Some(Mismatch { seed, detail });
        }
        // Both sides agreed; fold the replies into the outstanding set.
        if let Some(cmd) = submit {
            if engine_replies.is_empty() {
                pending.push(Pending { entity, id: cmd.id, started: false });
            } else if engine_replies.iter().any(|r| matches!(r, ObjectReply::Started { .. })) {
                pending.push(Pending { entity, id: cmd.id, started: true });
            }
        }
        for reply in &engine_replies {
            match reply {
                ObjectReply::Started { id } => {
                    for p in pending.iter_mut() {
                        if p.id == *id {
                            p.started = true;
                        }
                    }
                }
                ObjectReply::Failed { id } => pending.retain(|p| p.id != *id),
                _ => {}
            }
        }
        if let Some((id, _)) = resolve {
            pending.retain(|p| p.id != id);
        }
        None
    };

    for op in 0..40 {
        if pending.is_empty() || rng.chance(60, 100) {
            let entity = rng.index(entity_count);
            let (action, args) = random_action(&mut rng);
            let cmd = Command {
                id: CommandId::new(TxnId(next_txn), 0),
                action,
                args,
            };
            next_txn += 1;
            if let Some(m) = step(&mut engines, &mut refs, &mut pending, op, entity, Some(cmd), None)
            {
                return Some(m);
            }
        } else {
            let pick = rng.index(pending.len());
            let Pending { entity, id, started } = pending[pick];
            let resolution = if started && rng.chance(60, 100) {
                Resolution::Commit
            } else {
                Resolution::Abort
            };
            if let Some(m) = step(
                &mut engines,
                &mut refs,
                &mut pending,
                op,
                entity,
                None,
                Some((id, resolution)),
            ) {
                return Some(m);
            }
        }
    }
    // Drain: settle everything still outstanding so both sides reach a
    // quiescent final state.
    let mut op = 40;
    while let Some(&Pending { entity, id, started }) = pending.first() {
        let resolution = if started { Resolution::Commit } else { Resolution::Abort };
        if let Some(m) = step(
            &mut engines,
            &mut refs,
            &mut pending,
            op,
            entity,
            None,
            Some((id, resolution)),
        ) {
            return Some(m);
        }
        op += 1;
    }
    for (i, (engine, reference)) in engines.iter().zip(refs.iter()).enumerate() {
        if engine.state() != reference.state() {
            return Some(Mismatch {
                seed,
                detail: format!(
                    "entity {i}: final state mismatch\n  engine:    {:?}\n  reference: {:?}",
                    engine.state(),
                    reference.state()
                ),
            });
        }
    }
    None
}

pub fn locking_degradation_sweep(seeds: impl IntoIterator<Item = u64>) -> Vec<Mismatch> {
    seeds.into_iter().filter_map(locking_degradation_case).collect()
}

/// One random tree history checked against the subset-enumeration oracle.
fn tree_oracle_case(seed: u64) -> Option<Mismatch> {
    let spec = account_spec();
    let mut rng = SimRng::new(seed);
    let base = opened_account(&spec, "o-0", rng.range(0, 20_000) as i64);
    let mut tree = OutcomeTree::new(Arc::clone(&spec), base);
    let target = rng.index(9);
    let mut arrival = 1u64;
    let mut next_txn = 0u64;
    let mut attempts = 0;
    while tree.admitted_len() < target && attempts < 40 {
        attempts += 1;
        let (action, args) = random_action(&mut rng);
        let decision = match tree.decide(&action, &args) {
            Ok(d) => d,
            Err(e) => {
                return Some(Mismatch { seed, detail: format!("decide error: {e}") });
            }
        };
        if decision != Decision::Accept {
            continue;
        }
        let cmd = Command {
            id: CommandId::new(TxnId(next_txn), 0),
            action,
            args,
        };
        next_txn += 1;
        let instance = CommandInstance { cmd, arrival_seq: arrival };
        arrival += 1;
        if let Err(e) = tree.admit(instance) {
            return Some(Mismatch { seed, detail: format!("admit error: {e}") });
        }
        // Occasionally resolve someone already admitted, folding any
        // committed prefix, so the oracle sees mid-history trees too.
        // Committed commands stay listed until the head applies, so only
        // the still-unresolved ones are candidates.
        let unresolved: Vec<CommandId> = tree
            .admitted_status()
            .filter(|(_, committed)| !committed)
            .map(|(inst, _)| inst.cmd.id)
            .collect();
        if !unresolved.is_empty() && rng.chance(1, 4) {
            let id = unresolved[rng.index(unresolved.len())];
            let resolution =
                if rng.chance(1, 2) { Resolution::Commit } else { Resolution::Abort };
            if let Err(e) = tree.resolve(id, resolution) {
                return Some(Mismatch { seed, detail: format!("resolve error: {e}") });
            }
            while tree.head_committed() {
                if let Err(e) = tree.pop_applied_head() {
                    return Some(Mismatch { seed, detail: format!("pop error: {e}") });
                }
            }
        }
    }

    let in_progress: Vec<(CommandInstance, bool)> =
        tree.admitted_status().map(|(inst, committed)| (inst.clone(), committed)).collect();
    let oracle_leaves = match brute_force_outcomes(&spec, tree.base(), &in_progress) {
        Ok(l) => l,
        Err(e) => return Some(Mismatch { seed, detail: format!("oracle error: {e}") }),
    };
    let mut tree_leaves: Vec<EntityState> = tree.leaf_states().cloned().collect();
    tree_leaves.sort();
    if tree_leaves != oracle_leaves {
        return Some(Mismatch {
            seed,
            detail: format!(
                "leaf multiset mismatch with {} in progress\n  tree:   {:?}\n  oracle: {:?}",
                in_progress.len(),
                tree_leaves,
                oracle_leaves
            ),
        });
    }
    let (action, args) = random_action(&mut rng);
    let tree_decision = match tree.decide(&action, &args) {
        Ok(d) => d,
        Err(e) => return Some(Mismatch { seed, detail: format!("decide error: {e}") }),
    };
    let oracle_decision = match brute_force_decision(&spec, &oracle_leaves, &action, &args) {
        Ok(d) => d,
        Err(e) => return Some(Mismatch { seed, detail: format!("oracle decide error: {e}") }),
    };
    if tree_decision != oracle_decision {
        return Some(Mismatch {
            seed,
            detail: format!(
                "decision mismatch for {action}: tree {tree_decision:?}, oracle {oracle_decision:?}"
            ),
        });
    }
    None
}

pub fn tree_oracle_sweep(instances: u64, seed: u64) -> Vec<Mismatch> {
    (0..instances).filter_map(|i| tree_oracle_case(seed.wrapping_add(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engine_at_cap_one_matches_lock_reference() {
        let mismatches = locking_degradation_sweep(0..25);
        assert!(mismatches.is_empty(), "{:#?}", mismatches);
    }

    #[test]
    fn tree_matches_subset_oracle() {
        let mismatches = tree_oracle_sweep(50, 9000);
        assert!(mismatches.is_empty(), "{:#?}", mismatches);
    }
}
