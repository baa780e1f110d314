//! Atomic commitment across objects: one coordinator and one participant
//! per enrolled command, speaking classic presumed-abort two-phase commit.
//!
//! Actors here are pure step machines. Feeding a message in returns the
//! list of [`Outbound`] items the host must perform in order: journal
//! appends first, then the sends and replies that depend on them. All
//! timing comes from armed timers that the host fires back in; a
//! generation counter makes stale timers harmless.
//!
//! The flow for one transaction:
//!
//! 1. `Begin` carries every command the transaction needs (the target
//!    action plus its resolved synchronization calls). The coordinator
//!    journals each enrollment and sends one `VoteRequest` per command to
//!    a participant co-located with the command's entity. `Enroll` can add
//!    commands while votes are still being collected.
//! 2. The participant forwards the command to its object. An admission
//!    votes yes, a rejection votes no, and a delayed command that outlives
//!    the working timer votes no and aborts its own command so the object
//!    does not hold it forever. Votes are journaled before they are sent.
//! 3. The coordinator commits when every vote is yes, aborts on the first
//!    no or on its vote timeout, journals the decision, answers the
//!    client, and pushes the decision to every participant until each one
//!    acknowledges (bounded retries). A participant that voted yes and
//!    hears nothing is blocked: that is two-phase commit's known weakness,
//!    not a defect here.
//!
//! Decision messages carry the entity address, so a participant spawned
//! fresh after a crash (with an empty journal) can still clean up its
//! object. Object-side idempotence makes every re-send safe.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::command::{Command, CommandId, EntityAddr, Resolution, TxnId, Vote};
use crate::journal::{JournalPayload, JournalRecord};
use crate::object::ObjectReply;

/// Logical address of a transaction-layer actor. The host maps these to
/// nodes: a coordinator lives where the client request landed, a
/// participant lives with its command's entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorId {
    Coordinator(TxnId),
    Participant(CommandId),
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorId::Coordinator(txn) => write!(f, "coord:{txn}"),
            ActorId::Participant(id) => write!(f, "part:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    /// Coordinator: bound on how long vote collection may take.
    VoteTimeout,
    /// Coordinator: interval between decision re-sends.
    DecisionResend,
    /// Participant: bound on how long a forwarded command may sit
    /// undecided before the participant votes no on its own.
    WorkingTimeout,
}

/// Timeouts and retry policy, in simulation microseconds.
#[derive(Debug, Clone, Copy)]
pub struct TimerConfig {
    pub vote_timeout_us: u64,
    pub working_timeout_us: u64,
    pub resend_interval_us: u64,
    pub max_resends: u32,
}

impl Default for TimerConfig {
    fn default() -> TimerConfig {
        TimerConfig {
            vote_timeout_us: 500_000,
            working_timeout_us: 500_000,
            resend_interval_us: 1_000_000,
            max_resends: 10,
        }
    }
}

/// Messages between transaction-layer actors.
#[derive(Debug, Clone, PartialEq)]
pub enum TxnMessage {
    /// Client request: the full command set of one transaction.
    Begin {
        txn: TxnId,
        client: u64,
        commands: Vec<(EntityAddr, Command)>,
    },
    /// Add one more command to a transaction still collecting votes.
    Enroll { entity: EntityAddr, cmd: Command },
    /// Coordinator asks a participant to try one command.
    VoteRequest {
        entity: EntityAddr,
        cmd: Command,
    },
    /// Participant's journaled vote.
    VoteMsg { id: CommandId, vote: Vote },
    /// Coordinator's decision for one enrolled command. Carries the entity
    /// so a context-free participant can still reach the object.
    DecisionMsg {
        id: CommandId,
        entity: EntityAddr,
        resolution: Resolution,
    },
    /// Participant confirms it has processed the decision.
    DecisionAck { id: CommandId },
    /// A reply from the participant's object, routed back by the host.
    ObjectReplied(ObjectReply),
    /// An armed timer went off. Stale generations are ignored.
    TimerFired { kind: TimerKind, generation: u64 },
}

/// Side effects a step asks its host to perform, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    /// Append to this actor's own journal stream; blocks the actor until
    /// the write is acknowledged.
    Journal(JournalPayload),
    Send { to: ActorId, msg: TxnMessage },
    ObjectCommand { entity: EntityAddr, cmd: Command },
    ObjectResolution {
        entity: EntityAddr,
        id: CommandId,
        resolution: Resolution,
    },
    ClientReply {
        client: u64,
        txn: TxnId,
        committed: bool,
    },
    ArmTimer {
        kind: TimerKind,
        delay_us: u64,
        generation: u64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum TwoPhaseError {
    #[error("{actor} got contradictory vote for {id}: had {had}, got {got}")]
    ContradictoryVote {
        actor: String,
        id: CommandId,
        had: Vote,
        got: Vote,
    },
    #[error("participant {id} holds {had} but was told {got}")]
    ContradictoryDecision {
        id: CommandId,
        had: Resolution,
        got: Resolution,
    },
    #[error("enroll for {0} after the decision was made")]
    EnrollAfterDecision(TxnId),
    #[error("transaction {0} began with no commands")]
    EmptyTransaction(TxnId),
    #[error("vote from {id} which was never enrolled")]
    UnknownEnrollment { id: CommandId },
    #[error("{actor} cannot replay: {reason}")]
    Replay { actor: String, reason: String },
    #[error("{actor} did not expect {msg} in its current phase")]
    UnexpectedMessage { actor: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
enum CoordPhase {
    Idle,
    Collecting { votes: BTreeMap<u32, Vote> },
    Decided {
        resolution: Resolution,
        unacked: BTreeSet<u32>,
        resends_left: u32,
    },
    Finished { resolution: Resolution },
}

/// Coordinator for one transaction.
#[derive(Debug)]
pub struct Coordinator {
    txn: TxnId,
    client: Option<u64>,
    enrolled: BTreeMap<u32, (EntityAddr, Command)>,
    phase: CoordPhase,
    timer_gen: u64,
    config: TimerConfig,
}

impl Coordinator {
    pub fn new(txn: TxnId, config: TimerConfig) -> Coordinator {
        Coordinator {
            txn,
            client: None,
            enrolled: BTreeMap::new(),
            phase: CoordPhase::Idle,
            timer_gen: 0,
            config,
        }
    }

    pub fn stream_name(txn: TxnId) -> String {
        format!("coord:{txn}")
    }

    pub fn txn(&self) -> TxnId {
        self.txn
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, CoordPhase::Finished { .. })
    }

    pub fn resolution(&self) -> Option<Resolution> {
        match &self.phase {
            CoordPhase::Decided { resolution, .. } | CoordPhase::Finished { resolution } => {
                Some(*resolution)
            }
            _ => None,
        }
    }

    fn name(&self) -> String {
        ActorId::Coordinator(self.txn).to_string()
    }

    fn arm(&mut self, kind: TimerKind, delay_us: u64, out: &mut Vec<Outbound>) {
        self.timer_gen += 1;
        out.push(Outbound::ArmTimer {
            kind,
            delay_us,
            generation: self.timer_gen,
        });
    }

    fn enroll_one(&mut self, entity: EntityAddr, cmd: Command, out: &mut Vec<Outbound>) {
        let sub = cmd.id.sub;
        out.push(Outbound::Journal(JournalPayload::CommandAccepted {
            entity: entity.clone(),
            cmd: cmd.clone(),
        }));
        out.push(Outbound::Send {
            to: ActorId::Participant(cmd.id),
            msg: TxnMessage::VoteRequest {
                entity: entity.clone(),
                cmd: cmd.clone(),
            },
        });
        self.enrolled.insert(sub, (entity, cmd));
    }

    fn decide(&mut self, resolution: Resolution, out: &mut Vec<Outbound>) {
        out.push(Outbound::Journal(JournalPayload::Decision {
            txn: self.txn,
            resolution,
        }));
        if let Some(client) = self.client {
            out.push(Outbound::ClientReply {
                client,
                txn: self.txn,
                committed: resolution == Resolution::Commit,
            });
        }
        self.broadcast_decision(resolution, self.enrolled.keys().copied(), out);
        self.phase = CoordPhase::Decided {
            resolution,
            unacked: self.enrolled.keys().copied().collect(),
            resends_left: self.config.max_resends,
        };
        self.arm(TimerKind::DecisionResend, self.config.resend_interval_us, out);
    }

    fn broadcast_decision(
        &self,
        resolution: Resolution,
        subs: impl Iterator<Item = u32>,
        out: &mut Vec<Outbound>,
    ) {
        for sub in subs {
            let (entity, cmd) = &self.enrolled[&sub];
            out.push(Outbound::Send {
                to: ActorId::Participant(cmd.id),
                msg: TxnMessage::DecisionMsg {
                    id: cmd.id,
                    entity: entity.clone(),
                    resolution,
                },
            });
        }
    }

    pub fn step(&mut self, msg: TxnMessage) -> Result<Vec<Outbound>, TwoPhaseError> {
        let mut out = Vec::new();
        match msg {
            TxnMessage::Begin { txn, client, commands } => {
                debug_assert_eq!(txn, self.txn);
                if !matches!(self.phase, CoordPhase::Idle) {
                    // Re-delivered request; the client will get the reply
                    // from the original run.
                    return Ok(out);
                }
                if commands.is_empty() {
                    return Err(TwoPhaseError::EmptyTransaction(self.txn));
                }
                self.client = Some(client);
                self.phase = CoordPhase::Collecting { votes: BTreeMap::new() };
                for (entity, cmd) in commands {
                    self.enroll_one(entity, cmd, &mut out);
                }
                self.arm(TimerKind::VoteTimeout, self.config.vote_timeout_us, &mut out);
            }
            TxnMessage::Enroll { entity, cmd } => match &self.phase {
                CoordPhase::Collecting { .. } => self.enroll_one(entity, cmd, &mut out),
                _ => return Err(TwoPhaseError::EnrollAfterDecision(self.txn)),
            },
            TxnMessage::VoteMsg { id, vote } => {
                if !self.enrolled.contains_key(&id.sub) {
                    return Err(TwoPhaseError::UnknownEnrollment { id });
                }
                enum Followup {
                    Decide(Resolution),
                    Rebroadcast(Resolution),
                    Nothing,
                }
                let enrolled = self.enrolled.len();
                let followup = match &mut self.phase {
                    CoordPhase::Collecting { votes } => {
                        if let Some(prev) = votes.get(&id.sub) {
                            if *prev != vote {
                                return Err(TwoPhaseError::ContradictoryVote {
                                    actor: ActorId::Coordinator(self.txn).to_string(),
                                    id,
                                    had: *prev,
                                    got: vote,
                                });
                            }
                            Followup::Nothing
                        } else {
                            votes.insert(id.sub, vote);
                            if vote == Vote::No {
                                Followup::Decide(Resolution::Abort)
                            } else if votes.len() == enrolled {
                                Followup::Decide(Resolution::Commit)
                            } else {
                                Followup::Nothing
                            }
                        }
                    }
                    // A recovered participant re-sent its vote after the
                    // decision; help it along.
                    CoordPhase::Decided { resolution, .. }
                    | CoordPhase::Finished { resolution } => Followup::Rebroadcast(*resolution),
                    CoordPhase::Idle => {
                        return Err(TwoPhaseError::UnexpectedMessage {
                            actor: self.name(),
                            msg: format!("vote {vote} from {id} before begin"),
                        });
                    }
                };
                match followup {
                    Followup::Decide(resolution) => self.decide(resolution, &mut out),
                    Followup::Rebroadcast(resolution) => {
                        self.broadcast_decision(resolution, std::iter::once(id.sub), &mut out);
                    }
                    Followup::Nothing => {}
                }
            }
            TxnMessage::DecisionAck { id } => {
                if let CoordPhase::Decided { resolution, unacked, .. } = &mut self.phase {
                    unacked.remove(&id.sub);
                    if unacked.is_empty() {
                        let resolution = *resolution;
                        self.timer_gen += 1;
                        self.phase = CoordPhase::Finished { resolution };
                    }
                }
            }
            TxnMessage::TimerFired { kind, generation } => {
                if generation != self.timer_gen {
                    return Ok(out);
                }
                match (kind, &mut self.phase) {
                    (TimerKind::VoteTimeout, CoordPhase::Collecting { .. }) => {
                        self.decide(Resolution::Abort, &mut out);
                    }
                    (TimerKind::DecisionResend, CoordPhase::Decided { resolution, unacked, resends_left }) => {
                        if *resends_left == 0 {
                            // Give up; whoever never acked stays blocked.
                            let resolution = *resolution;
                            self.timer_gen += 1;
                            self.phase = CoordPhase::Finished { resolution };
                        } else {
                            *resends_left -= 1;
                            let resolution = *resolution;
                            let subs: Vec<u32> = unacked.iter().copied().collect();
                            self.broadcast_decision(resolution, subs.into_iter(), &mut out);
                            self.arm(
                                TimerKind::DecisionResend,
                                self.config.resend_interval_us,
                                &mut out,
                            );
                        }
                    }
                    _ => {}
                }
            }
            other => {
                return Err(TwoPhaseError::UnexpectedMessage {
                    actor: self.name(),
                    msg: format!("{other:?}"),
                });
            }
        }
        Ok(out)
    }

    /// Rebuild a coordinator from its journal. Without a journaled decision
    /// the safe outcome is abort: votes may have been collected, but no
    /// promise was made to anyone. With one, the decision is re-driven to
    /// every participant; re-sends are idempotent on their side.
    pub fn recover(
        txn: TxnId,
        client: Option<u64>,
        records: &[JournalRecord],
        config: TimerConfig,
    ) -> Result<(Coordinator, Vec<Outbound>), TwoPhaseError> {
        let mut coordinator = Coordinator::new(txn, config);
        coordinator.client = client;
        let mut decided = None;
        for record in records {
            match &record.payload {
                JournalPayload::CommandAccepted { entity, cmd } => {
                    coordinator
                        .enrolled
                        .insert(cmd.id.sub, (entity.clone(), cmd.clone()));
                }
                JournalPayload::Decision { resolution, .. } => decided = Some(*resolution),
                other => {
                    return Err(TwoPhaseError::Replay {
                        actor: Coordinator::stream_name(txn),
                        reason: format!("unexpected record {other:?}"),
                    });
                }
            }
        }
        if coordinator.enrolled.is_empty() {
            return Err(TwoPhaseError::Replay {
                actor: Coordinator::stream_name(txn),
                reason: "journal holds no enrollments".into(),
            });
        }
        let mut out = Vec::new();
        match decided {
            Some(resolution) => {
                if let Some(client) = coordinator.client {
                    out.push(Outbound::ClientReply {
                        client,
                        txn,
                        committed: resolution == Resolution::Commit,
                    });
                }
                coordinator.broadcast_decision(
                    resolution,
                    coordinator.enrolled.keys().copied().collect::<Vec<_>>().into_iter(),
                    &mut out,
                );
                coordinator.phase = CoordPhase::Decided {
                    resolution,
                    unacked: coordinator.enrolled.keys().copied().collect(),
                    resends_left: coordinator.config.max_resends,
                };
                coordinator.arm(
                    TimerKind::DecisionResend,
                    coordinator.config.resend_interval_us,
                    &mut out,
                );
            }
            None => {
                coordinator.phase = CoordPhase::Collecting { votes: BTreeMap::new() };
                coordinator.decide(Resolution::Abort, &mut out);
            }
        }
        Ok((coordinator, out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PartPhase {
    /// Spawned with no context yet: either awaiting its vote request or
    /// created fresh after a crash to process a decision.
    Fresh,
    /// Command forwarded to the object, awaiting its verdict.
    Working,
    Voted(Vote),
    Done(Resolution),
}

/// Participant for one command of one transaction.
#[derive(Debug)]
pub struct Participant {
    id: CommandId,
    entity: Option<EntityAddr>,
    cmd: Option<Command>,
    phase: PartPhase,
    timer_gen: u64,
    config: TimerConfig,
}

impl Participant {
    pub fn new(id: CommandId, config: TimerConfig) -> Participant {
        Participant {
            id,
            entity: None,
            cmd: None,
            phase: PartPhase::Fresh,
            timer_gen: 0,
            config,
        }
    }

    pub fn stream_name(id: CommandId) -> String {
        format!("part:{id}")
    }

    pub fn id(&self) -> CommandId {
        self.id
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, PartPhase::Done(_))
    }

    /// The vote this participant has cast, when it has cast one and not
    /// yet processed a decision. A yes here at the end of a run is the
    /// protocol's blocking case.
    pub fn pending_vote(&self) -> Option<Vote> {
        match self.phase {
            PartPhase::Voted(vote) => Some(vote),
            _ => None,
        }
    }

    fn name(&self) -> String {
        ActorId::Participant(self.id).to_string()
    }

    fn vote(&mut self, vote: Vote, out: &mut Vec<Outbound>) {
        self.timer_gen += 1;
        out.push(Outbound::Journal(JournalPayload::Vote { id: self.id, vote }));
        out.push(Outbound::Send {
            to: ActorId::Coordinator(self.id.txn),
            msg: TxnMessage::VoteMsg { id: self.id, vote },
        });
        self.phase = PartPhase::Voted(vote);
    }

    pub fn step(&mut self, msg: TxnMessage) -> Result<Vec<Outbound>, TwoPhaseError> {
        let mut out = Vec::new();
        match msg {
            TxnMessage::VoteRequest { entity, cmd } => match self.phase {
                PartPhase::Fresh => {
                    debug_assert_eq!(cmd.id, self.id);
                    out.push(Outbound::Journal(JournalPayload::CommandAccepted {
                        entity: entity.clone(),
                        cmd: cmd.clone(),
                    }));
                    out.push(Outbound::ObjectCommand {
                        entity: entity.clone(),
                        cmd: cmd.clone(),
                    });
                    self.timer_gen += 1;
                    out.push(Outbound::ArmTimer {
                        kind: TimerKind::WorkingTimeout,
                        delay_us: self.config.working_timeout_us,
                        generation: self.timer_gen,
                    });
                    self.entity = Some(entity);
                    self.cmd = Some(cmd);
                    self.phase = PartPhase::Working;
                }
                // Duplicate request: re-send the vote if one exists.
                PartPhase::Voted(vote) => {
                    out.push(Outbound::Send {
                        to: ActorId::Coordinator(self.id.txn),
                        msg: TxnMessage::VoteMsg { id: self.id, vote },
                    });
                }
                PartPhase::Working | PartPhase::Done(_) => {}
            },
            TxnMessage::ObjectReplied(reply) => {
                debug_assert_eq!(reply.id(), self.id);
                match (&reply, self.phase) {
                    (ObjectReply::Started { .. }, PartPhase::Working) => {
                        self.vote(Vote::Yes, &mut out);
                    }
                    (ObjectReply::Failed { .. }, PartPhase::Working) => {
                        self.vote(Vote::No, &mut out);
                    }
                    // Late or informational replies carry no new duty:
                    // SuccessNotified/Applied confirm a commit already
                    // driven by the decision, and Failed after a no-vote
                    // or an abort decision is the object confirming the
                    // cleanup this participant asked for.
                    _ => {}
                }
            }
            TxnMessage::TimerFired { kind, generation } => {
                if generation != self.timer_gen {
                    return Ok(out);
                }
                if kind == TimerKind::WorkingTimeout && self.phase == PartPhase::Working {
                    // The object is sitting on the command (delayed or
                    // still unresolved). Give up on it: vote no and clear
                    // the command so the object moves on.
                    self.vote(Vote::No, &mut out);
                    if let Some(entity) = &self.entity {
                        out.push(Outbound::ObjectResolution {
                            entity: entity.clone(),
                            id: self.id,
                            resolution: Resolution::Abort,
                        });
                    }
                }
            }
            TxnMessage::DecisionMsg { id, entity, resolution } => {
                debug_assert_eq!(id, self.id);
                match self.phase {
                    PartPhase::Done(had) => {
                        if had != resolution {
                            return Err(TwoPhaseError::ContradictoryDecision {
                                id: self.id,
                                had,
                                got: resolution,
                            });
                        }
                        out.push(Outbound::Send {
                            to: ActorId::Coordinator(self.id.txn),
                            msg: TxnMessage::DecisionAck { id: self.id },
                        });
                    }
                    PartPhase::Voted(Vote::No) if resolution == Resolution::Commit => {
                        return Err(TwoPhaseError::ContradictoryDecision {
                            id: self.id,
                            had: Resolution::Abort,
                            got: resolution,
                        });
                    }
                    PartPhase::Fresh | PartPhase::Working | PartPhase::Voted(_) => {
                        if self.phase == PartPhase::Fresh && resolution == Resolution::Commit {
                            // A commit requires this participant's yes
                            // vote, which requires context.
                            return Err(TwoPhaseError::UnexpectedMessage {
                                actor: self.name(),
                                msg: "commit decision without any vote context".into(),
                            });
                        }
                        self.timer_gen += 1;
                        let entity = self.entity.clone().unwrap_or(entity);
                        out.push(Outbound::ObjectResolution {
                            entity,
                            id: self.id,
                            resolution,
                        });
                        out.push(Outbound::Send {
                            to: ActorId::Coordinator(self.id.txn),
                            msg: TxnMessage::DecisionAck { id: self.id },
                        });
                        self.phase = PartPhase::Done(resolution);
                    }
                }
            }
            other => {
                return Err(TwoPhaseError::UnexpectedMessage {
                    actor: self.name(),
                    msg: format!("{other:?}"),
                });
            }
        }
        Ok(out)
    }

    /// Rebuild a participant from its journal. A journaled vote is
    /// re-sent; an unvoted command is re-forwarded to the object (which
    /// tolerates the duplicate) under a fresh working timer.
    pub fn recover(
        id: CommandId,
        records: &[JournalRecord],
        config: TimerConfig,
    ) -> Result<(Participant, Vec<Outbound>), TwoPhaseError> {
        let mut participant = Participant::new(id, config);
        for record in records {
            match &record.payload {
                JournalPayload::CommandAccepted { entity, cmd } => {
                    participant.entity = Some(entity.clone());
                    participant.cmd = Some(cmd.clone());
                    participant.phase = PartPhase::Working;
                }
                JournalPayload::Vote { vote, .. } => {
                    participant.phase = PartPhase::Voted(*vote);
                }
                other => {
                    return Err(TwoPhaseError::Replay {
                        actor: Participant::stream_name(id),
                        reason: format!("unexpected record {other:?}"),
                    });
                }
            }
        }
        let mut out = Vec::new();
        match participant.phase {
            PartPhase::Voted(vote) => {
                out.push(Outbound::Send {
                    to: ActorId::Coordinator(id.txn),
                    msg: TxnMessage::VoteMsg { id, vote },
                });
            }
            PartPhase::Working => {
                let (entity, cmd) = match (&participant.entity, &participant.cmd) {
                    (Some(e), Some(c)) => (e.clone(), c.clone()),
                    _ => {
                        return Err(TwoPhaseError::Replay {
                            actor: Participant::stream_name(id),
                            reason: "working phase without command context".into(),
                        });
                    }
                };
                out.push(Outbound::ObjectCommand { entity, cmd });
                participant.timer_gen += 1;
                out.push(Outbound::ArmTimer {
                    kind: TimerKind::WorkingTimeout,
                    delay_us: participant.config.working_timeout_us,
                    generation: participant.timer_gen,
                });
            }
            PartPhase::Fresh => {
                return Err(TwoPhaseError::Replay {
                    actor: Participant::stream_name(id),
                    reason: "journal stream empty".into(),
                });
            }
            PartPhase::Done(_) => unreachable!("done is never reconstructed from records"),
        }
        Ok((participant, out))
    }
}

/// Journal stream name for an object actor.
pub fn object_stream_name(entity: &EntityAddr) -> String {
    format!("obj:{entity}")
}
