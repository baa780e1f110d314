//! Deterministic discrete-event cluster simulation.
//!
//! One run is a single-threaded loop over a (time, insertion-seq) ordered
//! event queue. Every random choice (latency samples, workload draws,
//! coordinator placement) comes from one seeded splitmix64 stream, so an
//! identical scenario always produces an identical trace, byte for byte.
//!
//! The cluster model: `nodes` single-core machines. Objects live on the
//! node their entity hashes to; a participant is co-located with its
//! command's entity; a coordinator lives where the client request landed.
//! Handling a message charges the node `service_cost_us` of CPU per guard
//! evaluation, effect application, and journal append; each journal
//! append additionally blocks the acting actor (but not the CPU) for
//! `journal_latency_us`. A step runs when the message arrives, but its
//! outputs carry the completion time, so queueing for the CPU, for the
//! actor, and for the journal shows up as latency.
//!
//! Failures: a crashed node freezes its actors and silently eats every
//! message addressed to it; steps are atomic, so a crash lands between
//! steps and never tears one. After the detection delay, each frozen
//! actor with a non-empty journal stream is rebuilt on a live node by
//! replaying that stream; frozen actors with nothing journaled are
//! dropped, which is safe because nothing durable was promised on their
//! behalf. A restarted node returns empty and only receives new work.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use psac_core::command::{Command, CommandId, EntityAddr, Resolution, TxnId, Vote};
use psac_core::expr::Args;
use psac_core::journal::{Journal, JournalError};
use psac_core::object::{ObjectError, ObjectOutput, ObjectReply, PsacObject};
use psac_core::samples::bank_specs;
use psac_core::spec::{EntitySpec, EntityState, SpecError, SpecSet};
use psac_core::twophase::{
    object_stream_name, ActorId, Coordinator, Outbound, Participant, TimerKind, TwoPhaseError,
    TxnMessage,
};
use psac_core::value::Value;
use psac_core::Money;
use thiserror::Error;

use crate::rng::SimRng;
use crate::scenario::{OpMix, Scenario, ScenarioError, Workload};
use crate::trace::{Metrics, Trace, TraceKind};

pub struct SimResult {
    pub trace: Trace,
    pub metrics: Metrics,
    /// The run's durable store, kept for write-ahead and recovery checks.
    pub journal: Journal,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("object {entity}: {source}")]
    Object { entity: EntityAddr, source: ObjectError },
    #[error(transparent)]
    Protocol(#[from] TwoPhaseError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

pub fn run_scenario(sc: &Scenario) -> Result<SimResult, SimError> {
    sc.validate()?;
    let mut sim = Sim::new(sc);
    sim.trace.push(
        0,
        TraceKind::Meta {
            scenario: sc.name.clone(),
            engine: sc.engine.label(),
            nodes: sc.nodes,
            seed: sc.seed,
        },
    );
    for crash in &sc.crashes {
        sim.push(crash.at_us, Ev::Crash { node: crash.node });
        if let Some(at) = crash.recover_at_us {
            sim.push(at, Ev::Restart { node: crash.node });
        }
    }
    for user in 0..sc.users {
        sim.push(0, Ev::UserIssue { user });
    }
    while let Some(Reverse(next)) = sim.queue.pop() {
        sim.now = next.t;
        if sim.now > sim.horizon {
            break;
        }
        sim.handle(next.ev)?;
    }
    sim.annotate_blocked();
    sim.trace.finalize();
    let metrics = Metrics::from_trace(&sim.trace, sc.warmup_us, sc.measure_us);
    Ok(SimResult { trace: sim.trace, metrics, journal: sim.journal })
}

/// Logical actor address; doubles as the registry key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum ActorKey {
    Object(EntityAddr),
    Coord(TxnId),
    Part(CommandId),
}

enum ActorBody {
    Object(PsacObject),
    Coord(Coordinator),
    Part(Participant),
}

struct ActorSlot {
    body: ActorBody,
    node: u32,
    /// Bumped on failover so stale timers from an earlier life miss.
    incarnation: u32,
    alive: bool,
    free_at: u64,
}

#[derive(Debug, Clone)]
enum Msg {
    Txn(TxnMessage),
    ObjCommand(Command),
    ObjResolution { id: CommandId, resolution: Resolution },
}

#[derive(Debug, Clone)]
enum Ev {
    UserIssue { user: u32 },
    ClientTimeout { user: u32, txn: TxnId },
    /// A reply reaching the client.
    Answer { user: u32, txn: TxnId, committed: bool },
    Deliver { to: ActorKey, msg: Msg },
    TimerFire {
        actor: ActorKey,
        kind: TimerKind,
        generation: u64,
        incarnation: u32,
    },
    Crash { node: u32 },
    Restart { node: u32 },
    Failover { node: u32 },
}

struct QueuedEvent {
    t: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.t, self.seq).cmp(&(other.t, other.seq))
    }
}

struct NodeState {
    up: bool,
    cpu_free: u64,
}

#[derive(Clone, Copy, PartialEq)]
enum ReqKind {
    /// Single command, committed by the host as soon as it is admitted.
    Open,
    /// Full transaction under a coordinator.
    Txn,
}

struct RequestInfo {
    user: u32,
    done: bool,
    kind: ReqKind,
}

struct CmdMeta {
    entity: EntityAddr,
    args: Args,
}

enum StepOut {
    Obj(ObjectOutput),
    Txn(Vec<Outbound>),
    None,
}

struct Sim<'a> {
    sc: &'a Scenario,
    specs: SpecSet,
    account_spec: Arc<EntitySpec>,
    transfer_spec: Arc<EntitySpec>,
    rng: SimRng,
    now: u64,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    queue_seq: u64,
    nodes: Vec<NodeState>,
    actors: BTreeMap<ActorKey, ActorSlot>,
    coord_home: BTreeMap<TxnId, u32>,
    requests: BTreeMap<TxnId, RequestInfo>,
    cmd_meta: BTreeMap<CommandId, CmdMeta>,
    trace: Trace,
    journal: Journal,
    next_txn: u64,
    issue_until: u64,
    horizon: u64,
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Sim<'a> {
        let specs = bank_specs();
        let account_spec = Arc::new(specs.get("Account").expect("bundled spec").clone());
        let transfer_spec = Arc::new(specs.get("MoneyTransfer").expect("bundled spec").clone());
        let issue_until = sc.warmup_us + sc.measure_us;
        Sim {
            sc,
            specs,
            account_spec,
            transfer_spec,
            rng: SimRng::new(sc.seed),
            now: 0,
            queue: BinaryHeap::new(),
            queue_seq: 0,
            nodes: (0..sc.nodes).map(|_| NodeState { up: true, cpu_free: 0 }).collect(),
            actors: BTreeMap::new(),
            coord_home: BTreeMap::new(),
            requests: BTreeMap::new(),
            cmd_meta: BTreeMap::new(),
            trace: Trace::new(),
            journal: Journal::in_memory(),
            next_txn: 0,
            issue_until,
            horizon: issue_until + 60_000_000,
        }
    }

    fn push(&mut self, t: u64, ev: Ev) {
        let seq = self.queue_seq;
        self.queue_seq += 1;
        self.queue.push(Reverse(QueuedEvent { t, seq, ev }));
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::UserIssue { user } => self.issue(user),
            Ev::ClientTimeout { user, txn } => {
                self.finish_request(user, txn, false, true);
                Ok(())
            }
            Ev::Answer { user, txn, committed } => {
                self.finish_request(user, txn, committed, false);
                Ok(())
            }
            Ev::Deliver { to, msg } => self.deliver(to, msg),
            Ev::TimerFire { actor, kind, generation, incarnation } => {
                self.fire_timer(actor, kind, generation, incarnation)
            }
            Ev::Crash { node } => {
                self.nodes[node as usize].up = false;
                self.trace.push(self.now, TraceKind::NodeCrashed { node });
                for slot in self.actors.values_mut() {
                    if slot.node == node {
                        slot.alive = false;
                    }
                }
                if self.sc.failover.enabled {
                    let at = self.now + self.sc.failover.detection_delay_us;
                    self.push(at, Ev::Failover { node });
                }
                Ok(())
            }
            Ev::Restart { node } => {
                self.nodes[node as usize].up = true;
                self.trace.push(self.now, TraceKind::NodeRecovered { node });
                Ok(())
            }
            Ev::Failover { node } => self.failover(node),
        }
    }

    // Workload generation ------------------------------------------------

    fn issue(&mut self, user: u32) -> Result<(), SimError> {
        if self.now >= self.issue_until {
            return Ok(());
        }
        let txn = TxnId(self.next_txn);
        self.next_txn += 1;
        match self.sc.workload {
            Workload::NoSync => self.issue_open(user, txn),
            Workload::Sync => self.issue_pool_op(user, txn, self.sc.accounts),
            Workload::SyncHot { hot_accounts } => self.issue_pool_op(user, txn, hot_accounts),
        }
    }

    fn sample_amount(&mut self) -> Money {
        let (lo, hi) = self.sc.amount_cents;
        Money(self.rng.range(lo as u64, hi as u64) as i64)
    }

    fn issue_open(&mut self, user: u32, txn: TxnId) -> Result<(), SimError> {
        let entity = EntityAddr::new("Account", format!("open-{}", txn.0));
        let id = CommandId::new(txn, 0);
        let mut args = Args::new();
        args.insert("initialDeposit".into(), Value::Money(self.sample_amount()));
        let cmd = Command { id, action: "Open".into(), args: args.clone() };
        self.cmd_meta.insert(id, CmdMeta { entity: entity.clone(), args });
        self.begin_request(user, txn, ReqKind::Open);
        let lat = self.client_latency();
        self.push(self.now + lat, Ev::Deliver { to: ActorKey::Object(entity), msg: Msg::ObjCommand(cmd) });
        Ok(())
    }

    fn issue_pool_op(&mut self, user: u32, txn: TxnId, pool: u32) -> Result<(), SimError> {
        let commands = match self.sc.mix {
            OpMix::Transfers => self.build_transfer(txn, pool)?,
            OpMix::Deposits => self.build_deposit(txn, pool),
        };
        let coordinator_node = self.rng.index(self.sc.nodes as usize) as u32;
        self.coord_home.insert(txn, coordinator_node);
        self.begin_request(user, txn, ReqKind::Txn);
        let lat = self.client_latency();
        self.push(
            self.now + lat,
            Ev::Deliver {
                to: ActorKey::Coord(txn),
                msg: Msg::Txn(TxnMessage::Begin { txn, client: u64::from(user), commands }),
            },
        );
        Ok(())
    }

    fn build_transfer(&mut self, txn: TxnId, pool: u32) -> Result<Vec<(EntityAddr, Command)>, SimError> {
        let from = self.rng.index(pool as usize);
        let to = loop {
            let i = self.rng.index(pool as usize);
            if i != from {
                break i;
            }
        };
        let amount = self.sample_amount();
        let mt_name = format!("mt-{}", txn.0);
        let mt = EntityAddr::new("MoneyTransfer", mt_name.clone());
        let mut args = Args::new();
        args.insert("amount".into(), Value::Money(amount));
        args.insert("from".into(), Value::Id(pool_account_name(from)));
        args.insert("to".into(), Value::Id(pool_account_name(to)));
        let book = Command { id: CommandId::new(txn, 0), action: "Book".into(), args: args.clone() };
        let mt_state = self.transfer_spec.initial_state(&mt_name);
        let syncs = self.specs.sync_ops(&self.transfer_spec, &mt_state, "Book", &args)?;
        let mut commands = vec![(mt.clone(), book.clone())];
        self.cmd_meta.insert(book.id, CmdMeta { entity: mt, args });
        for (i, sync) in syncs.into_iter().enumerate() {
            let entity = EntityAddr::new(sync.target_spec, sync.target_id);
            let cmd = Command {
                id: CommandId::new(txn, i as u32 + 1),
                action: sync.action,
                args: sync.args,
            };
            self.cmd_meta.insert(cmd.id, CmdMeta { entity: entity.clone(), args: cmd.args.clone() });
            commands.push((entity, cmd));
        }
        Ok(commands)
    }

    fn build_deposit(&mut self, txn: TxnId, pool: u32) -> Vec<(EntityAddr, Command)> {
        let target = self.rng.index(pool as usize);
        let entity = EntityAddr::new("Account", pool_account_name(target));
        let mut args = Args::new();
        args.insert("amount".into(), Value::Money(self.sample_amount()));
        let cmd = Command { id: CommandId::new(txn, 0), action: "Deposit".into(), args: args.clone() };
        self.cmd_meta.insert(cmd.id, CmdMeta { entity: entity.clone(), args });
        vec![(entity, cmd)]
    }

    fn begin_request(&mut self, user: u32, txn: TxnId, kind: ReqKind) {
        self.requests.insert(txn, RequestInfo { user, done: false, kind });
        self.trace.push(self.now, TraceKind::RequestStart { user, txn });
        self.push(self.now + self.sc.client_timeout_us, Ev::ClientTimeout { user, txn });
    }

    fn finish_request(&mut self, user: u32, txn: TxnId, committed: bool, timed_out: bool) {
        let Some(req) = self.requests.get_mut(&txn) else { return };
        if req.done {
            return;
        }
        req.done = true;
        self.trace.push(self.now, TraceKind::RequestEnd { user, txn, committed, timed_out });
        self.push(self.now + self.sc.think_time_us, Ev::UserIssue { user });
    }

    // Placement and latency ----------------------------------------------

    fn first_live(&self, start: u64) -> Option<u32> {
        let n = u64::from(self.sc.nodes);
        (0..n).map(|i| ((start + i) % n) as u32).find(|&x| self.nodes[x as usize].up)
    }

    /// Where a message to this actor should land: the registered slot if
    /// one exists, otherwise the key's deterministic spawn location.
    fn dest_node(&self, key: &ActorKey) -> Option<u32> {
        if let Some(slot) = self.actors.get(key) {
            return Some(slot.node);
        }
        match key {
            ActorKey::Object(entity) => self.first_live(fnv(&entity.to_string())),
            ActorKey::Coord(txn) => self.coord_home.get(txn).copied(),
            ActorKey::Part(id) => {
                let entity = &self.cmd_meta.get(id)?.entity;
                self.dest_node(&ActorKey::Object(entity.clone()))
            }
        }
    }

    fn link_latency(&mut self, from: u32, to: u32) -> u64 {
        if from == to {
            self.sc.latency.intra_node_us
        } else {
            let (lo, hi) = self.sc.latency.inter_node_us;
            self.rng.range(lo, hi)
        }
    }

    fn client_latency(&mut self) -> u64 {
        let (lo, hi) = self.sc.latency.client_us;
        self.rng.range(lo, hi)
    }

    /// Occupy CPU and actor for one step: `units` costed operations of
    /// which `journal_appends` also wait out the journal's write latency.
    /// Returns the completion time stamped on the step's outputs.
    fn charge(&mut self, key: &ActorKey, units: u64, journal_appends: u64) -> u64 {
        let cpu = units * self.sc.service_cost_us;
        let io = journal_appends * self.sc.journal_latency_us;
        let slot = self.actors.get_mut(key).expect("charged actor exists");
        let node = &mut self.nodes[slot.node as usize];
        let start = self.now.max(node.cpu_free).max(slot.free_at);
        node.cpu_free = start + cpu;
        slot.free_at = start + cpu + io;
        slot.free_at
    }

    // Entity bootstrap -----------------------------------------------------

    fn spec_for(&self, entity: &EntityAddr) -> Arc<EntitySpec> {
        if entity.spec == "MoneyTransfer" {
            Arc::clone(&self.transfer_spec)
        } else {
            Arc::clone(&self.account_spec)
        }
    }

    /// State an entity has before its first traced command: pool accounts
    /// start opened with the configured balance, everything else starts
    /// in its lifecycle's initial state.
    fn initial_state_of(&self, entity: &EntityAddr) -> EntityState {
        let spec = self.spec_for(entity);
        let mut state = spec.initial_state(&entity.entity);
        if entity.spec == "Account" && is_pool_account(&entity.entity, self.sc.accounts) {
            state.lifecycle = "opened".into();
            state
                .data
                .insert("balance".into(), Value::Money(Money(self.sc.initial_balance_cents)));
        }
        state
    }

    // Delivery and step execution ----------------------------------------

    fn deliver(&mut self, to: ActorKey, msg: Msg) -> Result<(), SimError> {
        if !self.actors.contains_key(&to) && !self.spawn(&to, &msg) {
            return Ok(());
        }
        let slot = self.actors.get_mut(&to).expect("slot just ensured");
        if !slot.alive || !self.nodes[slot.node as usize].up {
            return Ok(());
        }
        let node = slot.node;
        let incarnation = slot.incarnation;
        let out = match (&mut slot.body, msg) {
            (ActorBody::Object(obj), Msg::ObjCommand(cmd)) => StepOut::Obj(
                obj.handle_command(cmd)
                    .map_err(|source| SimError::Object { entity: obj_entity(&to), source })?,
            ),
            (ActorBody::Object(obj), Msg::ObjResolution { id, resolution }) => StepOut::Obj(
                obj.handle_resolution(id, resolution)
                    .map_err(|source| SimError::Object { entity: obj_entity(&to), source })?,
            ),
            (ActorBody::Coord(coordinator), Msg::Txn(m)) => StepOut::Txn(coordinator.step(m)?),
            (ActorBody::Part(participant), Msg::Txn(m)) => StepOut::Txn(participant.step(m)?),
            // An object message to a protocol actor or vice versa:
            // impossible by construction of the keys.
            _ => StepOut::None,
        };
        match out {
            StepOut::Obj(out) => self.finish_object_step(&to, node, out),
            StepOut::Txn(outs) => self.finish_txn_step(&to, node, incarnation, outs),
            StepOut::None => Ok(()),
        }
    }

    /// Create the actor a first message is addressed to. Objects spawn
    /// for any message; protocol actors only for the messages that carry
    /// enough context to make a fresh instance meaningful.
    fn spawn(&mut self, key: &ActorKey, msg: &Msg) -> bool {
        let node = match self.dest_node(key) {
            Some(node) if self.nodes[node as usize].up => node,
            _ => return false,
        };
        let body = match (key, msg) {
            (ActorKey::Object(entity), _) => {
                let initial = self.initial_state_of(entity);
                self.trace.push(
                    self.now,
                    TraceKind::EntityInit { entity: entity.clone(), state: initial.clone() },
                );
                ActorBody::Object(PsacObject::new(
                    self.spec_for(entity),
                    entity.clone(),
                    initial,
                    self.sc.engine.object_config(self.sc.max_delays),
                ))
            }
            (ActorKey::Coord(txn), Msg::Txn(TxnMessage::Begin { .. })) => {
                ActorBody::Coord(Coordinator::new(*txn, self.sc.timers.to_config()))
            }
            (ActorKey::Part(id), Msg::Txn(TxnMessage::VoteRequest { .. }))
            | (ActorKey::Part(id), Msg::Txn(TxnMessage::DecisionMsg { .. })) => {
                ActorBody::Part(Participant::new(*id, self.sc.timers.to_config()))
            }
            _ => return false,
        };
        self.actors.insert(
            key.clone(),
            ActorSlot { body, node, incarnation: 0, alive: true, free_at: 0 },
        );
        true
    }

    fn finish_object_step(
        &mut self,
        key: &ActorKey,
        node: u32,
        out: ObjectOutput,
    ) -> Result<(), SimError> {
        let entity = obj_entity(key);
        let appends = out.journal_payloads().count() as u64;
        let done = self.charge(key, out.guard_evals + out.effect_applies + appends, appends);
        let stream = object_stream_name(&entity);
        for payload in out.journal_payloads() {
            self.journal.append(&stream, done, payload.clone())?;
        }
        {
            let meta = &self.cmd_meta;
            self.trace.record_object_output(done, &entity, &out, |id| {
                meta.get(&id).map(|m| m.args.clone()).unwrap_or_default()
            });
        }
        let replies: Vec<ObjectReply> = out.replies().cloned().collect();
        for reply in replies {
            self.route_reply(&entity, node, done, reply);
        }
        Ok(())
    }

    fn route_reply(&mut self, entity: &EntityAddr, node: u32, done: u64, reply: ObjectReply) {
        let id = reply.id();
        let Some(req) = self.requests.get(&id.txn) else { return };
        match req.kind {
            ReqKind::Txn => {
                let to = ActorKey::Part(id);
                if let Some(dest) = self.dest_node(&to) {
                    let lat = self.link_latency(node, dest);
                    self.push(
                        done + lat,
                        Ev::Deliver { to, msg: Msg::Txn(TxnMessage::ObjectReplied(reply)) },
                    );
                }
            }
            ReqKind::Open => {
                let user = req.user;
                match reply {
                    // A lone command has no other participants to wait
                    // for: admission is the whole vote, commit follows.
                    ObjectReply::Started { .. } => {
                        let lat = self.sc.latency.intra_node_us;
                        self.push(
                            done + lat,
                            Ev::Deliver {
                                to: ActorKey::Object(entity.clone()),
                                msg: Msg::ObjResolution { id, resolution: Resolution::Commit },
                            },
                        );
                    }
                    ObjectReply::Failed { .. } => {
                        let lat = self.client_latency();
                        self.push(done + lat, Ev::Answer { user, txn: id.txn, committed: false });
                    }
                    ObjectReply::Applied { .. } => {
                        let lat = self.client_latency();
                        self.push(done + lat, Ev::Answer { user, txn: id.txn, committed: true });
                    }
                    ObjectReply::SuccessNotified { .. } => {}
                }
            }
        }
    }

    fn finish_txn_step(
        &mut self,
        key: &ActorKey,
        node: u32,
        incarnation: u32,
        outs: Vec<Outbound>,
    ) -> Result<(), SimError> {
        let appends = outs.iter().filter(|o| matches!(o, Outbound::Journal(_))).count() as u64;
        let done = self.charge(key, appends, appends);
        let stream = txn_stream_name(key);
        for outbound in outs {
            match outbound {
                Outbound::Journal(payload) => {
                    self.trace.record_txn_journal(done, &payload);
                    self.journal.append(&stream, done, payload)?;
                }
                Outbound::Send { to, msg } => {
                    let to = match to {
                        ActorId::Coordinator(txn) => ActorKey::Coord(txn),
                        ActorId::Participant(id) => ActorKey::Part(id),
                    };
                    if let Some(dest) = self.dest_node(&to) {
                        let lat = self.link_latency(node, dest);
                        self.push(done + lat, Ev::Deliver { to, msg: Msg::Txn(msg) });
                    }
                }
                Outbound::ObjectCommand { entity, cmd } => {
                    let to = ActorKey::Object(entity);
                    if let Some(dest) = self.dest_node(&to) {
                        let lat = self.link_latency(node, dest);
                        self.push(done + lat, Ev::Deliver { to, msg: Msg::ObjCommand(cmd) });
                    }
                }
                Outbound::ObjectResolution { entity, id, resolution } => {
                    let to = ActorKey::Object(entity);
                    if let Some(dest) = self.dest_node(&to) {
                        let lat = self.link_latency(node, dest);
                        self.push(
                            done + lat,
                            Ev::Deliver { to, msg: Msg::ObjResolution { id, resolution } },
                        );
                    }
                }
                Outbound::ClientReply { client, txn, committed } => {
                    let lat = self.client_latency();
                    self.push(done + lat, Ev::Answer { user: client as u32, txn, committed });
                }
                Outbound::ArmTimer { kind, delay_us, generation } => {
                    self.push(
                        done + delay_us,
                        Ev::TimerFire { actor: key.clone(), kind, generation, incarnation },
                    );
                }
            }
        }
        Ok(())
    }

    fn fire_timer(
        &mut self,
        actor: ActorKey,
        kind: TimerKind,
        generation: u64,
        incarnation: u32,
    ) -> Result<(), SimError> {
        let Some(slot) = self.actors.get_mut(&actor) else { return Ok(()) };
        if !slot.alive || slot.incarnation != incarnation || !self.nodes[slot.node as usize].up {
            return Ok(());
        }
        let node = slot.node;
        let msg = TxnMessage::TimerFired { kind, generation };
        let outs = match &mut slot.body {
            ActorBody::Coord(coordinator) => coordinator.step(msg)?,
            ActorBody::Part(participant) => participant.step(msg)?,
            ActorBody::Object(_) => return Ok(()),
        };
        self.finish_txn_step(&actor, node, incarnation, outs)
    }

    // Failover -------------------------------------------------------------

    fn failover(&mut self, node: u32) -> Result<(), SimError> {
        let frozen: Vec<ActorKey> = self
            .actors
            .iter()
            .filter(|(_, slot)| slot.node == node && !slot.alive)
            .map(|(key, _)| key.clone())
            .collect();
        for key in frozen {
            let stream = match &key {
                ActorKey::Object(entity) => object_stream_name(entity),
                _ => txn_stream_name(&key),
            };
            let records = self.journal.replay(&stream).to_vec();
            if records.is_empty() {
                // Nothing durable: the actor never promised anything, so
                // a later message may simply spawn a fresh instance.
                self.actors.remove(&key);
                continue;
            }
            let Some(new_node) = self.first_live(fnv(&stream)) else { continue };
            let incarnation = self.actors[&key].incarnation + 1;
            let replay_cost = records.len() as u64 * self.sc.service_cost_us;
            let config = self.sc.timers.to_config();
            let (body, outs) = match &key {
                ActorKey::Object(entity) => {
                    let object = PsacObject::recover(
                        self.spec_for(entity),
                        entity.clone(),
                        self.initial_state_of(entity),
                        &records,
                        self.sc.engine.object_config(self.sc.max_delays),
                    )
                    .map_err(|source| SimError::Object { entity: entity.clone(), source })?;
                    (ActorBody::Object(object), Vec::new())
                }
                ActorKey::Coord(txn) => {
                    let client = self.requests.get(txn).map(|r| u64::from(r.user));
                    let (coordinator, outs) =
                        Coordinator::recover(*txn, client, &records, config)?;
                    self.coord_home.insert(*txn, new_node);
                    (ActorBody::Coord(coordinator), outs)
                }
                ActorKey::Part(id) => {
                    let (participant, outs) = Participant::recover(*id, &records, config)?;
                    (ActorBody::Part(participant), outs)
                }
            };
            let cpu = &mut self.nodes[new_node as usize].cpu_free;
            *cpu = (*cpu).max(self.now) + replay_cost;
            let free_at = *cpu;
            self.actors.insert(
                key.clone(),
                ActorSlot { body, node: new_node, incarnation, alive: true, free_at },
            );
            self.trace.push(self.now, TraceKind::Failover { stream, to_node: new_node });
            if !outs.is_empty() {
                self.finish_txn_step(&key, new_node, incarnation, outs)?;
            }
        }
        Ok(())
    }

    /// Participants still holding a yes vote when the run drains are
    /// blocked waiting on a decision that will never come.
    fn annotate_blocked(&mut self) {
        let mut blocked = Vec::new();
        for slot in self.actors.values() {
            if let ActorBody::Part(participant) = &slot.body {
                if slot.alive && participant.pending_vote() == Some(Vote::Yes) {
                    blocked.push(participant.id());
                }
            }
        }
        for id in blocked {
            self.trace.push(self.now, TraceKind::Blocked { id });
        }
    }
}

fn obj_entity(key: &ActorKey) -> EntityAddr {
    match key {
        ActorKey::Object(entity) => entity.clone(),
        _ => unreachable!("object step on a protocol actor"),
    }
}

fn txn_stream_name(key: &ActorKey) -> String {
    match key {
        ActorKey::Coord(txn) => Coordinator::stream_name(*txn),
        ActorKey::Part(id) => Participant::stream_name(*id),
        ActorKey::Object(_) => unreachable!("objects journal under their entity stream"),
    }
}

fn pool_account_name(index: usize) -> String {
    format!("acct-{index}")
}

fn is_pool_account(name: &str, pool: u32) -> bool {
    name.strip_prefix("acct-")
        .and_then(|rest| rest.parse::<u32>().ok())
        .is_some_and(|i| i < pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Engine;

    fn tiny(workload: Workload, engine: Engine) -> Scenario {
        let mut sc = Scenario::quick("smoke", engine, workload, 7);
        sc.users = 4;
        sc.accounts = 16;
        sc.warmup_us = 100_000;
        sc.measure_us = 400_000;
        sc
    }

    #[test]
    fn open_requests_complete() {
        let sc = tiny(Workload::NoSync, Engine::Psac { max_parallel: 8 });
        let result = run_scenario(&sc).expect("run");
        assert!(result.metrics.successes > 0, "no opens committed");
        assert_eq!(result.metrics.timeouts, 0);
    }

    #[test]
    fn transfers_complete_under_both_engines() {
        for engine in [Engine::Psac { max_parallel: 8 }, Engine::TwoPl] {
            let sc = tiny(Workload::Sync, engine);
            let result = run_scenario(&sc).expect("run");
            assert!(
                result.metrics.successes > 0,
                "no transfers committed under {}",
                sc.engine.label()
            );
        }
    }

    #[test]
    fn hot_pool_makes_delays_visible() {
        let sc = tiny(Workload::SyncHot { hot_accounts: 2 }, Engine::Psac { max_parallel: 8 });
        let result = run_scenario(&sc).expect("run");
        assert!(result.metrics.successes > 0);
    }
}
