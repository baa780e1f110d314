//! Hand-scripted scenarios with fully controlled interleavings.
//!
//! The random simulator shows these situations eventually; these scripts
//! show them on demand, step by step, so a report can print the exact
//! leaf sets and decisions at every point.
//!
//! Three scripts:
//! - the admission walkthrough: three overdraft-prone withdrawals racing
//!   on one account, one of them delayed and later rejected;
//! - the abort walkthrough: a parallel admission whose first command
//!   aborts, run against both engines to show the locking engine serializes
//!   where the tree engine does not;
//! - the cross-account interleaving: two transactions admitted in opposite
//!   orders on two accounts, the run whose final states no serial order
//!   reproduces.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use psac_core::command::{Command, CommandId, EntityAddr, Resolution, TxnId};
use psac_core::expr::Args;
use psac_core::object::{ObjectConfig, ObjectError, ObjectOutput, PsacObject};
use psac_core::samples::bank_specs;
use psac_core::spec::{EntitySpec, EntityState};
use psac_core::tree::Decision;
use psac_core::twophase::{
    ActorId, Coordinator, Outbound, Participant, TimerConfig, TimerKind, TwoPhaseError,
    TxnMessage,
};
use psac_core::value::Value;
use psac_core::Money;
use thiserror::Error;

use crate::scenario::Engine;
use crate::trace::{Trace, TraceKind};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("object {entity}: {source}")]
    Object { entity: EntityAddr, source: ObjectError },
    #[error(transparent)]
    Protocol(#[from] TwoPhaseError),
    #[error("script expected {0}")]
    Expectation(String),
}

/// One observed step of a walkthrough.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub label: String,
    /// The admission decision this step produced, when it produced one.
    pub decision: Option<Decision>,
    /// Balances of the outcome tree's leaves after the step, in cents,
    /// in tree order (each admitted command doubles the list).
    pub leaf_balances: Vec<i64>,
}

#[derive(Debug)]
pub struct WalkthroughReport {
    pub steps: Vec<StepRecord>,
    pub final_balance_cents: i64,
    pub trace: Trace,
}

#[derive(Debug)]
pub struct AbortComparison {
    pub tree_engine: WalkthroughReport,
    pub locking_engine: WalkthroughReport,
}

fn account(spec: &EntitySpec, name: &str, cents: i64) -> EntityState {
    let mut state = spec.initial_state(name);
    state.lifecycle = "opened".into();
    state.data.insert("balance".into(), Value::Money(Money(cents)));
    state
}

fn withdraw(id: CommandId, cents: i64) -> Command {
    let mut args = Args::new();
    args.insert("amount".into(), Value::Money(Money(cents)));
    Command { id, action: "Withdraw".into(), args }
}

fn balance_of(state: &EntityState) -> i64 {
    match state.data.get("balance") {
        Some(Value::Money(m)) => m.0,
        _ => panic!("account state carries a balance"),
    }
}

/// A single-object walkthrough harness: drives one account object and
/// records a step per externally visible transition.
struct ObjectScript {
    object: PsacObject,
    entity: EntityAddr,
    args_by_id: BTreeMap<CommandId, Args>,
    steps: Vec<StepRecord>,
    trace: Trace,
    t: u64,
}

impl ObjectScript {
    fn new(name: &str, cents: i64, config: ObjectConfig) -> ObjectScript {
        let spec = Arc::new(bank_specs().get("Account").expect("bundled spec").clone());
        let entity = EntityAddr::new("Account", name);
        let initial = account(&spec, name, cents);
        let mut trace = Trace::new();
        trace.push(0, TraceKind::EntityInit { entity: entity.clone(), state: initial.clone() });
        ObjectScript {
            object: PsacObject::new(spec, entity.clone(), initial, config),
            entity,
            args_by_id: BTreeMap::new(),
            steps: Vec::new(),
            trace,
            t: 0,
        }
    }

    fn leaf_balances(&self) -> Vec<i64> {
        self.object.leaf_states().map(balance_of).collect()
    }

    /// Record one step per decision in the output, then one for the step
    /// itself if it decided nothing (a pure resolution).
    fn absorb(&mut self, label: &str, out: &ObjectOutput) {
        self.t += 1_000;
        let args = self.args_by_id.clone();
        self.trace.record_object_output(self.t, &self.entity, out, |id| {
            args.get(&id).cloned().unwrap_or_default()
        });
        let decisions: Vec<(CommandId, Decision)> = out.decisions().collect();
        if decisions.is_empty() {
            self.steps.push(StepRecord {
                label: label.to_string(),
                decision: None,
                leaf_balances: self.leaf_balances(),
            });
        }
        for (id, decision) in decisions {
            self.steps.push(StepRecord {
                label: format!("{label}: {id} {decision:?}"),
                decision: Some(decision),
                leaf_balances: self.leaf_balances(),
            });
        }
    }

    fn submit(&mut self, label: &str, cmd: Command) -> Result<(), ScriptError> {
        self.args_by_id.insert(cmd.id, cmd.args.clone());
        let out = self
            .object
            .handle_command(cmd)
            .map_err(|source| ScriptError::Object { entity: self.entity.clone(), source })?;
        self.absorb(label, &out);
        Ok(())
    }

    fn resolve(&mut self, label: &str, id: CommandId, res: Resolution) -> Result<(), ScriptError> {
        let out = self
            .object
            .handle_resolution(id, res)
            .map_err(|source| ScriptError::Object { entity: self.entity.clone(), source })?;
        self.absorb(label, &out);
        Ok(())
    }

    fn finish(mut self) -> WalkthroughReport {
        self.trace.finalize();
        WalkthroughReport {
            steps: self.steps,
            final_balance_cents: balance_of(self.object.state()),
            trace: self.trace,
        }
    }
}

/// Three concurrent withdrawals against one account holding 100 00.
///
/// The first two (30 00 and 50 00) are admitted in parallel: each is
/// covered in every outcome of the other. The third (60 00) is covered
/// only in some outcomes, so it waits. Committing the second collapses
/// the tree to outcomes where 60 00 is never covered, so the retry
/// rejects it, and committing the first leaves 20 00 on the account.
pub fn admission_walkthrough() -> Result<WalkthroughReport, ScriptError> {
    let mut script = ObjectScript::new("w-0", 10_000, ObjectConfig::psac(8));
    let txn = |n: u64| CommandId::new(TxnId(n), 0);
    script.submit("withdraw 30 00", withdraw(txn(1), 3_000))?;
    script.submit("withdraw 50 00", withdraw(txn(2), 5_000))?;
    script.submit("withdraw 60 00", withdraw(txn(3), 6_000))?;
    script.resolve("commit 50 00", txn(2), Resolution::Commit)?;
    script.resolve("commit 30 00", txn(1), Resolution::Commit)?;
    Ok(script.finish())
}

/// A 30 00 withdrawal that aborts while a 50 00 withdrawal is in flight,
/// run on both engines with the same schedule.
pub fn abort_walkthrough() -> Result<AbortComparison, ScriptError> {
    let run = |config: ObjectConfig| -> Result<WalkthroughReport, ScriptError> {
        let mut script = ObjectScript::new("a-0", 10_000, config);
        let txn = |n: u64| CommandId::new(TxnId(n), 0);
        script.submit("withdraw 30 00", withdraw(txn(1), 3_000))?;
        script.submit("withdraw 50 00", withdraw(txn(2), 5_000))?;
        script.resolve("abort 30 00", txn(1), Resolution::Abort)?;
        script.resolve("commit 50 00", txn(2), Resolution::Commit)?;
        Ok(script.finish())
    };
    Ok(AbortComparison {
        tree_engine: run(ObjectConfig::psac(8))?,
        locking_engine: run(ObjectConfig::locking())?,
    })
}

// --- Cross-account interleaving -----------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Dest {
    Obj(EntityAddr),
    Coord(TxnId),
    Part(CommandId),
}

#[derive(Debug, Clone)]
enum ScriptMsg {
    Txn(TxnMessage),
    Cmd(Command),
    Res(CommandId, Resolution),
}

#[derive(Debug)]
pub struct CrossAccountReport {
    pub trace: Trace,
    pub final_states: BTreeMap<EntityAddr, EntityState>,
    /// Transactions whose client reply said committed.
    pub committed: Vec<TxnId>,
}

/// A synchronous two-phase rig: real coordinators, participants and
/// objects, with message delivery in exactly the order the script asks.
struct Rig {
    objects: BTreeMap<EntityAddr, PsacObject>,
    coords: BTreeMap<TxnId, Coordinator>,
    parts: BTreeMap<CommandId, Participant>,
    mailboxes: BTreeMap<Dest, VecDeque<ScriptMsg>>,
    /// Last timer each protocol actor armed, so the script can fire it.
    armed: BTreeMap<Dest, (TimerKind, u64)>,
    args_by_id: BTreeMap<CommandId, Args>,
    replies: Vec<(TxnId, bool)>,
    timers: TimerConfig,
    trace: Trace,
    t: u64,
}

impl Rig {
    fn new(config: ObjectConfig, accounts: &[(&str, i64)]) -> Rig {
        let spec = Arc::new(bank_specs().get("Account").expect("bundled spec").clone());
        let mut objects = BTreeMap::new();
        let mut trace = Trace::new();
        for (name, cents) in accounts {
            let entity = EntityAddr::new("Account", *name);
            let initial = account(&spec, name, *cents);
            trace.push(0, TraceKind::EntityInit { entity: entity.clone(), state: initial.clone() });
            objects.insert(
                entity.clone(),
                PsacObject::new(Arc::clone(&spec), entity, initial, config.clone()),
            );
        }
        Rig {
            objects,
            coords: BTreeMap::new(),
            parts: BTreeMap::new(),
            mailboxes: BTreeMap::new(),
            armed: BTreeMap::new(),
            args_by_id: BTreeMap::new(),
            replies: Vec::new(),
            timers: TimerConfig::default(),
            trace,
            t: 0,
        }
    }

    fn post(&mut self, dest: Dest, msg: ScriptMsg) {
        self.mailboxes.entry(dest).or_default().push_back(msg);
    }

    fn begin(&mut self, txn: TxnId, commands: Vec<(EntityAddr, Command)>) -> Result<(), ScriptError> {
        for (_, cmd) in &commands {
            self.args_by_id.insert(cmd.id, cmd.args.clone());
        }
        self.coords.insert(txn, Coordinator::new(txn, self.timers.clone()));
        self.post(
            Dest::Coord(txn),
            ScriptMsg::Txn(TxnMessage::Begin { txn, client: txn.0, commands }),
        );
        self.deliver(&Dest::Coord(txn))
    }

    /// Pop and process one message for `dest`. Outbounds go back into the
    /// mailboxes; nothing else runs until the script asks.
    fn deliver(&mut self, dest: &Dest) -> Result<(), ScriptError> {
        let Some(msg) = self.mailboxes.get_mut(dest).and_then(VecDeque::pop_front) else {
            return Err(ScriptError::Expectation(format!("a message waiting for {dest:?}")));
        };
        self.t += 1_000;
        match (dest, msg) {
            (Dest::Obj(entity), ScriptMsg::Cmd(cmd)) => {
                let out = self
                    .objects
                    .get_mut(entity)
                    .expect("script objects are preset")
                    .handle_command(cmd)
                    .map_err(|source| ScriptError::Object { entity: entity.clone(), source })?;
                self.absorb_object(entity.clone(), out);
            }
            (Dest::Obj(entity), ScriptMsg::Res(id, res)) => {
                let out = self
                    .objects
                    .get_mut(entity)
                    .expect("script objects are preset")
                    .handle_resolution(id, res)
                    .map_err(|source| ScriptError::Object { entity: entity.clone(), source })?;
                self.absorb_object(entity.clone(), out);
            }
            (Dest::Coord(txn), ScriptMsg::Txn(m)) => {
                let outs = self.coords.get_mut(txn).expect("coordinator preset").step(m)?;
                self.absorb_txn(dest.clone(), outs)?;
            }
            (Dest::Part(id), ScriptMsg::Txn(m)) => {
                let part = self
                    .parts
                    .entry(*id)
                    .or_insert_with(|| Participant::new(*id, self.timers.clone()));
                let outs = part.step(m)?;
                self.absorb_txn(dest.clone(), outs)?;
            }
            (dest, msg) => {
                return Err(ScriptError::Expectation(format!(
                    "matching message kind for {dest:?}, got {msg:?}"
                )))
            }
        }
        Ok(())
    }

    fn absorb_object(&mut self, entity: EntityAddr, out: ObjectOutput) {
        let args = self.args_by_id.clone();
        self.trace.record_object_output(self.t, &entity, &out, |id| {
            args.get(&id).cloned().unwrap_or_default()
        });
        for reply in out.replies() {
            self.post(Dest::Part(reply.id()), ScriptMsg::Txn(TxnMessage::ObjectReplied(reply.clone())));
        }
    }

    fn absorb_txn(&mut self, from: Dest, outs: Vec<Outbound>) -> Result<(), ScriptError> {
        for outbound in outs {
            match outbound {
                Outbound::Journal(payload) => self.trace.record_txn_journal(self.t, &payload),
                Outbound::Send { to, msg } => {
                    let dest = match to {
                        ActorId::Coordinator(txn) => Dest::Coord(txn),
                        ActorId::Participant(id) => Dest::Part(id),
                    };
                    self.post(dest, ScriptMsg::Txn(msg));
                }
                Outbound::ObjectCommand { entity, cmd } => {
                    self.post(Dest::Obj(entity), ScriptMsg::Cmd(cmd));
                }
                Outbound::ObjectResolution { entity, id, resolution } => {
                    self.post(Dest::Obj(entity), ScriptMsg::Res(id, resolution));
                }
                Outbound::ClientReply { txn, committed, .. } => {
                    self.replies.push((txn, committed));
                }
                Outbound::ArmTimer { kind, generation, .. } => {
                    self.armed.insert(from.clone(), (kind, generation));
                }
            }
        }
        Ok(())
    }

    /// Fire the last timer a participant armed, as if its deadline passed.
    fn fire_timer(&mut self, id: CommandId) -> Result<(), ScriptError> {
        let dest = Dest::Part(id);
        let Some((kind, generation)) = self.armed.get(&dest).copied() else {
            return Err(ScriptError::Expectation(format!("an armed timer on {dest:?}")));
        };
        self.post(dest.clone(), ScriptMsg::Txn(TxnMessage::TimerFired { kind, generation }));
        self.deliver(&dest)
    }

    /// Deliver everything outstanding in address order until quiescent.
    fn drain(&mut self) -> Result<(), ScriptError> {
        loop {
            let Some(dest) = self
                .mailboxes
                .iter()
                .find(|(_, q)| !q.is_empty())
                .map(|(d, _)| d.clone())
            else {
                return Ok(());
            };
            self.deliver(&dest)?;
        }
    }

    fn finish(mut self) -> CrossAccountReport {
        self.trace.finalize();
        CrossAccountReport {
            trace: self.trace,
            final_states: self
                .objects
                .iter()
                .map(|(entity, object)| (entity.clone(), object.state().clone()))
                .collect(),
            committed: self
                .replies
                .iter()
                .filter(|(_, committed)| *committed)
                .map(|(txn, _)| *txn)
                .collect(),
        }
    }
}

/// Two transactions over two accounts, admitted in opposite orders.
///
/// Transaction 1 deposits 50 00 into account A and withdraws 50 00 from
/// account B; transaction 2 applies interest to both. A admits 1 before
/// 2, B admits 2 before 1. Under the tree engine all four commands are
/// admitted and both transactions commit, yielding final states that no
/// serial order of the two transactions can reproduce. Under the locking
/// engine each account ends up held by a different transaction; the
/// script then fires the parked participants' deadlines, which aborts
/// both transactions.
pub fn cross_account_interleaving(engine: Engine) -> Result<CrossAccountReport, ScriptError> {
    let config = engine.object_config(None);
    let locking = config.max_parallel == 1;
    let mut rig = Rig::new(config, &[("A", 10_000), ("B", 10_000)]);
    let a = EntityAddr::new("Account", "A");
    let b = EntityAddr::new("Account", "B");

    let t1 = TxnId(1);
    let t2 = TxnId(2);
    let deposit_a = {
        let mut args = Args::new();
        args.insert("amount".into(), Value::Money(Money(5_000)));
        Command { id: CommandId::new(t1, 0), action: "Deposit".into(), args }
    };
    let withdraw_b = withdraw(CommandId::new(t1, 1), 5_000);
    let interest_a = Command { id: CommandId::new(t2, 0), action: "Interest".into(), args: Args::new() };
    let interest_b = Command { id: CommandId::new(t2, 1), action: "Interest".into(), args: Args::new() };

    rig.begin(t1, vec![(a.clone(), deposit_a), (b.clone(), withdraw_b)])?;
    rig.begin(t2, vec![(a.clone(), interest_a), (b.clone(), interest_b)])?;

    // Vote requests fan out to the four participants, which forward the
    // commands to the objects. The forwarding order fixes each object's
    // arrival order: A sees transaction 1 first, B sees transaction 2
    // first.
    for id in [
        CommandId::new(t1, 0),
        CommandId::new(t2, 1),
        CommandId::new(t2, 0),
        CommandId::new(t1, 1),
    ] {
        rig.deliver(&Dest::Part(id))?;
    }
    rig.deliver(&Dest::Obj(a.clone()))?;
    rig.deliver(&Dest::Obj(a.clone()))?;
    rig.deliver(&Dest::Obj(b.clone()))?;
    rig.deliver(&Dest::Obj(b.clone()))?;

    if locking {
        // Each account granted one holder and parked the other command,
        // so each transaction holds one account and waits on the other:
        // a deadlock the protocol breaks by participant deadline.
        rig.drain()?;
        rig.fire_timer(CommandId::new(t2, 0))?;
        rig.fire_timer(CommandId::new(t1, 1))?;
    }
    rig.drain()?;
    Ok(rig.finish())
}
