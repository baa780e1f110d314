//! An independent strict-locking reference object.
//!
//! One holder, a FIFO wait queue, no outcome tree anywhere: the lock is
//! granted by evaluating the guard against the single confirmed state.
//! With `max_parallel == 1` the admission engine must collapse to exactly
//! this discipline, so the two are run side by side on random schedules
//! and their externally visible reply sequences compared.
//!
//! Driver contract (the differential sweep honours it): command ids are
//! fresh, commits target only commands that have been granted, and no
//! command receives contradictory resolutions. The reference mirrors the
//! unlimited-delay configuration, where a waiter is never timed out by
//! the object itself.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use psac_core::command::{Command, CommandId, Resolution};
use psac_core::object::ObjectReply;
use psac_core::spec::{EntitySpec, EntityState, SpecError};

#[derive(Clone, Copy, PartialEq)]
enum RefPhase {
    Waiting,
    Holding,
    Committed,
    Rejected,
    Aborted,
}

pub struct LockRefObject {
    spec: Arc<EntitySpec>,
    state: EntityState,
    holder: Option<Command>,
    waiters: VecDeque<Command>,
    seen: BTreeMap<CommandId, RefPhase>,
}

impl LockRefObject {
    pub fn new(spec: Arc<EntitySpec>, initial: EntityState) -> LockRefObject {
        LockRefObject {
            spec,
            state: initial,
            holder: None,
            waiters: VecDeque::new(),
            seen: BTreeMap::new(),
        }
    }

    pub fn state(&self) -> &EntityState {
        &self.state
    }

    pub fn submit(&mut self, cmd: Command) -> Result<Vec<ObjectReply>, SpecError> {
        if let Some(phase) = self.seen.get(&cmd.id) {
            let reply = match phase {
                RefPhase::Waiting => None,
                RefPhase::Holding | RefPhase::Committed => {
                    Some(ObjectReply::Started { id: cmd.id })
                }
                RefPhase::Rejected | RefPhase::Aborted => {
                    Some(ObjectReply::Failed { id: cmd.id })
                }
            };
            return Ok(reply.into_iter().collect());
        }
        if self.holder.is_some() {
            self.seen.insert(cmd.id, RefPhase::Waiting);
            self.waiters.push_back(cmd);
            return Ok(Vec::new());
        }
        self.try_grant(cmd)
    }

    pub fn resolve(
        &mut self,
        id: CommandId,
        resolution: Resolution,
    ) -> Result<Vec<ObjectReply>, SpecError> {
        match self.seen.get(&id).copied() {
            None => {
                if resolution == Resolution::Abort {
                    self.seen.insert(id, RefPhase::Aborted);
                }
                Ok(Vec::new())
            }
            Some(RefPhase::Waiting) => {
                // Only aborts reach a waiter under the driver contract.
                self.waiters.retain(|w| w.id != id);
                self.seen.insert(id, RefPhase::Aborted);
                Ok(vec![ObjectReply::Failed { id }])
            }
            Some(RefPhase::Holding) => {
                let holder = self.holder.take().expect("holding phase implies a holder");
                let mut replies = Vec::new();
                match resolution {
                    Resolution::Commit => {
                        self.state =
                            self.spec.apply_effect(&self.state, &holder.action, &holder.args)?;
                        self.seen.insert(id, RefPhase::Committed);
                        replies.push(ObjectReply::SuccessNotified { id });
                        replies.push(ObjectReply::Applied { id, state: self.state.clone() });
                    }
                    Resolution::Abort => {
                        self.seen.insert(id, RefPhase::Aborted);
                        replies.push(ObjectReply::Failed { id });
                    }
                }
                while self.holder.is_none() {
                    let Some(next) = self.waiters.pop_front() else { break };
                    replies.extend(self.try_grant(next)?);
                }
                Ok(replies)
            }
            // Duplicate of an already-settled resolution.
            Some(RefPhase::Committed) | Some(RefPhase::Rejected) | Some(RefPhase::Aborted) => {
                Ok(Vec::new())
            }
        }
    }

    fn try_grant(&mut self, cmd: Command) -> Result<Vec<ObjectReply>, SpecError> {
        let id = cmd.id;
        if self.spec.eval_guard(&self.state, &cmd.action, &cmd.args)? {
            self.seen.insert(id, RefPhase::Holding);
            self.holder = Some(cmd);
            Ok(vec![ObjectReply::Started { id }])
        } else {
            self.seen.insert(id, RefPhase::Rejected);
            Ok(vec![ObjectReply::Failed { id }])
        }
    }
}
