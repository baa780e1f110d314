//! The per-entity object runtime: admission, delay, resolution, apply.
//!
//! A `PsacObject` wraps one entity's [`OutcomeTree`] and runs the full
//! admission loop over it. Incoming commands are decided against every
//! possible outcome of the commands already in progress: accepted when the
//! guard holds in all of them, rejected when it holds in none, delayed
//! otherwise (and when the object is at its parallelism cap). Resolutions
//! prune the tree; committed effects fold into the base state strictly in
//! admission order; every resolution re-tries the delayed queue, since
//! pruning may have collapsed a mixed guard to a uniform one.
//!
//! With `max_parallel == 1` the same loop degenerates to strict two-phase
//! locking: one command holds the object from admission to resolution and
//! everything else waits in the delayed queue.
//!
//! The object is a pure state machine. It performs no IO; journal appends
//! and replies are emitted as [`ObjectEvent`]s for the hosting node to
//! execute in order, and recovery consumes the journal records back.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::command::{Command, CommandId, CommandInstance, EntityAddr, Resolution};
use crate::journal::{JournalPayload, JournalRecord, ReplyKind};
use crate::spec::{EntitySpec, EntityState};
use crate::tree::{Decision, OutcomeTree, TreeError};

/// Replies the object sends back to the transaction layer.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectReply {
    /// Command admitted; its effect is pending its transaction's outcome.
    Started { id: CommandId },
    /// Command rejected, or its transaction aborted.
    Failed { id: CommandId },
    /// The transaction committed; the effect may still be queued behind
    /// earlier in-progress commands.
    SuccessNotified { id: CommandId },
    /// The effect has been folded into the entity state.
    Applied { id: CommandId, state: EntityState },
}

impl ObjectReply {
    pub fn id(&self) -> CommandId {
        match self {
            ObjectReply::Started { id }
            | ObjectReply::Failed { id }
            | ObjectReply::SuccessNotified { id }
            | ObjectReply::Applied { id, .. } => *id,
        }
    }
}

/// Everything an object operation produced, in the order the host must
/// perform it (journal appends strictly before the replies they cover).
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectEvent {
    Journal(JournalPayload),
    Decided {
        id: CommandId,
        action: String,
        decision: Decision,
    },
    Reply(ObjectReply),
}

/// Output of one object step plus the work it cost: `guard_evals` counts
/// per-leaf guard evaluations, `effect_applies` counts state transitions
/// (both tree branching and base-state folds).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectOutput {
    pub events: Vec<ObjectEvent>,
    pub guard_evals: u64,
    pub effect_applies: u64,
}

impl ObjectOutput {
    pub fn replies(&self) -> impl Iterator<Item = &ObjectReply> {
        self.events.iter().filter_map(|e| match e {
            ObjectEvent::Reply(r) => Some(r),
            _ => None,
        })
    }

    pub fn journal_payloads(&self) -> impl Iterator<Item = &JournalPayload> {
        self.events.iter().filter_map(|e| match e {
            ObjectEvent::Journal(p) => Some(p),
            _ => None,
        })
    }

    pub fn decisions(&self) -> impl Iterator<Item = (CommandId, Decision)> + '_ {
        self.events.iter().filter_map(|e| match e {
            ObjectEvent::Decided { id, decision, .. } => Some((*id, *decision)),
            _ => None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ObjectError {
    #[error("resolution for unknown command {0}")]
    UnknownCommand(CommandId),
    #[error("command {id} already resolved {have}, got {got}")]
    ConflictingResolution {
        id: CommandId,
        have: Resolution,
        got: Resolution,
    },
    #[error("commit for command {0} that was never admitted")]
    CommitOfUnadmitted(CommandId),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("journal replay mismatch: {0}")]
    Replay(String),
}

/// Where a command stands from this object's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Delayed,
    Started,
    Rejected,
    Committed,
    Aborted,
    Applied,
}

#[derive(Debug, Clone)]
struct DelayedCmd {
    cmd: Command,
    retries: u32,
}

/// Tuning knobs for one object.
#[derive(Debug, Clone, Copy)]
pub struct ObjectConfig {
    /// Upper bound on concurrently unresolved commands. 1 gives strict
    /// two-phase-locking behaviour; k gives a tree of up to 2^k leaves.
    pub max_parallel: usize,
    /// Re-delay budget per command before the object rejects it outright.
    /// None leaves starvation to the transaction layer's timeouts.
    pub max_delays: Option<u32>,
}

impl ObjectConfig {
    pub fn psac(max_parallel: usize) -> ObjectConfig {
        ObjectConfig {
            max_parallel,
            max_delays: None,
        }
    }

    pub fn locking() -> ObjectConfig {
        ObjectConfig::psac(1)
    }
}

#[derive(Debug)]
pub struct PsacObject {
    entity: EntityAddr,
    tree: OutcomeTree,
    delayed: VecDeque<DelayedCmd>,
    seen: BTreeMap<CommandId, Phase>,
    next_arrival: u64,
    config: ObjectConfig,
}

impl PsacObject {
    pub fn new(
        spec: Arc<EntitySpec>,
        entity: EntityAddr,
        initial: EntityState,
        config: ObjectConfig,
    ) -> PsacObject {
        assert!(config.max_parallel >= 1, "max_parallel must be at least 1");
        PsacObject {
            entity,
            tree: OutcomeTree::new(spec, initial),
            delayed: VecDeque::new(),
            seen: BTreeMap::new(),
            next_arrival: 0,
            config,
        }
    }

    pub fn entity(&self) -> &EntityAddr {
        &self.entity
    }

    /// The confirmed state: every committed-and-applied effect, nothing else.
    pub fn state(&self) -> &EntityState {
        self.tree.base()
    }

    pub fn leaf_states(&self) -> impl Iterator<Item = &EntityState> {
        self.tree.leaf_states()
    }

    pub fn in_progress(&self) -> impl Iterator<Item = &CommandInstance> {
        self.tree.admitted()
    }

    pub fn delayed_len(&self) -> usize {
        self.delayed.len()
    }

    pub fn unresolved_len(&self) -> usize {
        self.tree.unresolved_len()
    }

    /// True when nothing is admitted or waiting; the base state is final.
    pub fn is_quiescent(&self) -> bool {
        self.tree.admitted_len() == 0 && self.delayed.is_empty()
    }

    fn at_capacity(&self) -> bool {
        self.tree.unresolved_len() >= self.config.max_parallel
            || self.tree.admitted_len() >= OutcomeTree::MAX_ADMITTED
    }

    /// Handle a fresh command from the transaction layer. Duplicate
    /// deliveries re-emit the original outcome without re-deciding.
    pub fn handle_command(&mut self, cmd: Command) -> Result<ObjectOutput, ObjectError> {
        let mut out = ObjectOutput::default();
        if let Some(phase) = self.seen.get(&cmd.id) {
            match phase {
                Phase::Delayed => {}
                Phase::Started | Phase::Committed | Phase::Applied => {
                    out.events
                        .push(ObjectEvent::Reply(ObjectReply::Started { id: cmd.id }));
                }
                Phase::Rejected | Phase::Aborted => {
                    out.events
                        .push(ObjectEvent::Reply(ObjectReply::Failed { id: cmd.id }));
                }
            }
            return Ok(out);
        }
        if self.at_capacity() {
            self.park(cmd, 0, &mut out);
            return Ok(out);
        }
        self.decide_and_settle(cmd, 0, &mut out)?;
        Ok(out)
    }

    /// Handle a per-command resolution. Re-delivery of the same resolution
    /// is a no-op; a contradictory one is a protocol violation.
    pub fn handle_resolution(
        &mut self,
        id: CommandId,
        resolution: Resolution,
    ) -> Result<ObjectOutput, ObjectError> {
        let mut out = ObjectOutput::default();
        match self.seen.get(&id).copied() {
            None => match resolution {
                // An abort can outlive the command it belongs to (a fresh
                // participant cleaning up after a crash); record it so a
                // late duplicate of the command is turned away.
                Resolution::Abort => {
                    self.seen.insert(id, Phase::Aborted);
                    Ok(out)
                }
                Resolution::Commit => Err(ObjectError::CommitOfUnadmitted(id)),
            },
            Some(Phase::Delayed) => match resolution {
                Resolution::Abort => {
                    self.delayed.retain(|d| d.cmd.id != id);
                    self.seen.insert(id, Phase::Aborted);
                    out.events.push(ObjectEvent::Journal(JournalPayload::ReplyEmitted {
                        id,
                        reply: ReplyKind::Failed,
                    }));
                    out.events
                        .push(ObjectEvent::Reply(ObjectReply::Failed { id }));
                    // The queue shrank, not the tree; decisions for the
                    // other delayed commands cannot have changed.
                    Ok(out)
                }
                Resolution::Commit => Err(ObjectError::CommitOfUnadmitted(id)),
            },
            Some(Phase::Started) => {
                out.events.push(ObjectEvent::Journal(JournalPayload::Resolution {
                    id,
                    resolution,
                }));
                self.tree.resolve(id, resolution)?;
                match resolution {
                    Resolution::Commit => {
                        self.seen.insert(id, Phase::Committed);
                        out.events
                            .push(ObjectEvent::Reply(ObjectReply::SuccessNotified { id }));
                    }
                    Resolution::Abort => {
                        self.seen.insert(id, Phase::Aborted);
                        out.events
                            .push(ObjectEvent::Reply(ObjectReply::Failed { id }));
                    }
                }
                self.drain(&mut out)?;
                Ok(out)
            }
            Some(Phase::Rejected) | Some(Phase::Aborted) => match resolution {
                Resolution::Abort => Ok(out),
                Resolution::Commit => Err(ObjectError::ConflictingResolution {
                    id,
                    have: Resolution::Abort,
                    got: Resolution::Commit,
                }),
            },
            Some(Phase::Committed) | Some(Phase::Applied) => match resolution {
                Resolution::Commit => Ok(out),
                Resolution::Abort => Err(ObjectError::ConflictingResolution {
                    id,
                    have: Resolution::Commit,
                    got: Resolution::Abort,
                }),
            },
        }
    }

    /// Queue a command for retry, or reject it once its re-delay budget is
    /// spent. `retries` counts earlier stays in the queue.
    fn park(&mut self, cmd: Command, retries: u32, out: &mut ObjectOutput) {
        if let Some(limit) = self.config.max_delays {
            if retries > limit {
                self.reject(cmd, out);
                return;
            }
        }
        out.events.push(ObjectEvent::Decided {
            id: cmd.id,
            action: cmd.action.clone(),
            decision: Decision::Delay,
        });
        self.seen.insert(cmd.id, Phase::Delayed);
        self.delayed.push_back(DelayedCmd { cmd, retries });
    }

    /// Decide a command that is under the capacity bound and settle the
    /// Accept/Reject cases. Delay re-queues with the given retry count.
    fn decide_and_settle(
        &mut self,
        cmd: Command,
        retries: u32,
        out: &mut ObjectOutput,
    ) -> Result<(), ObjectError> {
        out.guard_evals += self.tree.leaf_count() as u64;
        let decision = self.tree.decide(&cmd.action, &cmd.args)?;
        match decision {
            Decision::Accept => {
                out.effect_applies += self.tree.leaf_count() as u64;
                let instance = CommandInstance {
                    cmd: cmd.clone(),
                    arrival_seq: self.next_arrival,
                };
                self.next_arrival += 1;
                self.tree.admit(instance)?;
                out.events.push(ObjectEvent::Journal(JournalPayload::CommandAccepted {
                    entity: self.entity.clone(),
                    cmd: cmd.clone(),
                }));
                out.events.push(ObjectEvent::Decided {
                    id: cmd.id,
                    action: cmd.action.clone(),
                    decision,
                });
                out.events
                    .push(ObjectEvent::Reply(ObjectReply::Started { id: cmd.id }));
                self.seen.insert(cmd.id, Phase::Started);
            }
            Decision::Reject => self.reject(cmd, out),
            Decision::Delay => self.park(cmd, retries, out),
        }
        Ok(())
    }

    fn reject(&mut self, cmd: Command, out: &mut ObjectOutput) {
        out.events.push(ObjectEvent::Journal(JournalPayload::ReplyEmitted {
            id: cmd.id,
            reply: ReplyKind::Failed,
        }));
        out.events.push(ObjectEvent::Decided {
            id: cmd.id,
            action: cmd.action.clone(),
            decision: Decision::Reject,
        });
        out.events
            .push(ObjectEvent::Reply(ObjectReply::Failed { id: cmd.id }));
        self.seen.insert(cmd.id, Phase::Rejected);
    }

    /// Fold every committed head into the base state, then give each
    /// delayed command one fresh decision against the pruned tree. A single
    /// pass suffices: applying heads never changes leaf states, and newly
    /// admitted commands only extend the tree, which cannot flip another
    /// delayed command's mixed verdict to a uniform one.
    fn drain(&mut self, out: &mut ObjectOutput) -> Result<(), ObjectError> {
        while self.tree.head_committed() {
            let (instance, state) = self.tree.pop_applied_head()?;
            out.effect_applies += 1;
            let id = instance.cmd.id;
            out.events
                .push(ObjectEvent::Journal(JournalPayload::EffectApplied { id }));
            out.events
                .push(ObjectEvent::Reply(ObjectReply::Applied { id, state }));
            self.seen.insert(id, Phase::Applied);
        }
        let waiting: Vec<DelayedCmd> = self.delayed.drain(..).collect();
        for entry in waiting {
            if self.at_capacity() {
                self.park(entry.cmd, entry.retries + 1, out);
            } else {
                self.decide_and_settle(entry.cmd, entry.retries + 1, out)?;
            }
        }
        Ok(())
    }

    /// Rebuild an object from its journal stream. Delayed commands are not
    /// journaled and are lost; the transaction layer re-sends them. No
    /// replies are re-emitted.
    pub fn recover(
        spec: Arc<EntitySpec>,
        entity: EntityAddr,
        initial: EntityState,
        records: &[JournalRecord],
        config: ObjectConfig,
    ) -> Result<PsacObject, ObjectError> {
        let mut object = PsacObject::new(spec, entity, initial, config);
        for record in records {
            match &record.payload {
                JournalPayload::CommandAccepted { cmd, .. } => {
                    let instance = CommandInstance {
                        cmd: cmd.clone(),
                        arrival_seq: object.next_arrival,
                    };
                    object.next_arrival += 1;
                    object.tree.admit(instance)?;
                    object.seen.insert(cmd.id, Phase::Started);
                }
                JournalPayload::Resolution { id, resolution } => {
                    match object.seen.get(id).copied() {
                        Some(Phase::Started) => {
                            object.tree.resolve(*id, *resolution)?;
                            let phase = match resolution {
                                Resolution::Commit => Phase::Committed,
                                Resolution::Abort => Phase::Aborted,
                            };
                            object.seen.insert(*id, phase);
                        }
                        other => {
                            return Err(ObjectError::Replay(format!(
                                "resolution for {id} in phase {other:?}"
                            )));
                        }
                    }
                }
                JournalPayload::EffectApplied { id } => {
                    let (instance, _) = object.tree.pop_applied_head()?;
                    if instance.cmd.id != *id {
                        return Err(ObjectError::Replay(format!(
                            "journal applied {id} but head was {}",
                            instance.cmd.id
                        )));
                    }
                    object.seen.insert(*id, Phase::Applied);
                }
                JournalPayload::ReplyEmitted { id, reply } => {
                    let phase = match reply {
                        ReplyKind::Failed => Phase::Rejected,
                        other => {
                            return Err(ObjectError::Replay(format!(
                                "object stream journaled reply {other:?}"
                            )));
                        }
                    };
                    object.seen.insert(*id, phase);
                }
                other => {
                    return Err(ObjectError::Replay(format!(
                        "unexpected record kind in object stream: {other:?}"
                    )));
                }
            }
        }
        Ok(object)
    }
}
