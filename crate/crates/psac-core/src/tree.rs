//! The possible-outcome tree: every state the entity can end up in given
//! that each in-progress command may still commit or abort.
//!
//! With k unresolved commands the tree has 2^k leaves, one per commit
//! subset. The leaf for a subset is the state reached by applying exactly
//! those commands' effects, in arrival order, starting from the base state.
//! A candidate command is admitted only when its guard holds in every leaf,
//! rejected when it holds in none, and delayed otherwise: whichever subset
//! of the in-progress commands eventually commits, an admitted command was
//! enabled and a rejected one was not.
//!
//! Leaves are maintained incrementally. Admission applies the newcomer's
//! effect on top of each existing leaf (the newcomer is last in arrival
//! order, so its effect lands last). A commit discards the leaves where that
//! command aborted; an abort discards the leaves where it committed and
//! drops it from the admitted list. Applying the committed head migrates the
//! base state forward without touching any leaf state, since every surviving
//! leaf already contains the head's effect.
//!
//! [`brute_force_outcomes`] recomputes the leaf set from scratch by subset
//! enumeration and exists as the oracle for the incremental maintenance; it
//! shares nothing with it but `apply_effect`.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::command::{CommandId, CommandInstance, Resolution};
use crate::expr::Args;
use crate::spec::{EntitySpec, EntityState, SpecError};

/// Admission decision for a candidate command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Reject,
    Delay,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
            Decision::Delay => "delay",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("command {0} is not in progress")]
    UnknownCommand(CommandId),
    #[error("command {id} already resolved as {first}")]
    DoubleResolution { id: CommandId, first: Resolution },
    #[error("cannot apply head: {0}")]
    HeadNotApplicable(String),
    #[error("arrival sequence {seq} not greater than previously admitted {max}")]
    NonMonotonicArrival { seq: u64, max: u64 },
    #[error("admitted command limit reached")]
    Capacity,
    #[error(transparent)]
    Spec(#[from] SpecError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Admitted {
    instance: CommandInstance,
    committed: bool,
}

/// One leaf: a commit subset (bitmask over the admitted list, bit i =
/// admitted[i] commits) and the state that subset produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    mask: u64,
    pub state: EntityState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeTree {
    spec: std::sync::Arc<EntitySpec>,
    base: EntityState,
    admitted: Vec<Admitted>,
    leaves: Vec<Leaf>,
    max_arrival_seq: u64,
}

impl OutcomeTree {
    /// Hard cap on concurrently tracked commands: leaf masks are u64 bit
    /// sets, and one bit is reserved so shifts never overflow.
    pub const MAX_ADMITTED: usize = 63;

    pub fn new(spec: std::sync::Arc<EntitySpec>, base: EntityState) -> OutcomeTree {
        let leaves = vec![Leaf {
            mask: 0,
            state: base.clone(),
        }];
        OutcomeTree {
            spec,
            base,
            admitted: Vec::new(),
            leaves,
            max_arrival_seq: 0,
        }
    }

    pub fn spec(&self) -> &EntitySpec {
        &self.spec
    }

    /// The state with every in-progress command resolved and applied.
    pub fn base(&self) -> &EntityState {
        &self.base
    }

    pub fn admitted(&self) -> impl Iterator<Item = &CommandInstance> {
        self.admitted.iter().map(|a| &a.instance)
    }

    /// In-progress commands paired with whether each has already committed.
    pub fn admitted_status(&self) -> impl Iterator<Item = (&CommandInstance, bool)> {
        self.admitted.iter().map(|a| (&a.instance, a.committed))
    }

    pub fn admitted_len(&self) -> usize {
        self.admitted.len()
    }

    pub fn unresolved_len(&self) -> usize {
        self.admitted.iter().filter(|a| !a.committed).count()
    }

    pub fn is_committed(&self, id: CommandId) -> Option<bool> {
        self.index_of(id).map(|i| self.admitted[i].committed)
    }

    pub fn leaf_states(&self) -> impl Iterator<Item = &EntityState> {
        self.leaves.iter().map(|l| &l.state)
    }

    pub fn head(&self) -> Option<&CommandInstance> {
        self.admitted.first().map(|a| &a.instance)
    }

    pub fn head_committed(&self) -> bool {
        self.admitted.first().is_some_and(|a| a.committed)
    }

    fn index_of(&self, id: CommandId) -> Option<usize> {
        self.admitted.iter().position(|a| a.instance.cmd.id == id)
    }

    /// Classify a candidate by evaluating its guard in every leaf.
    pub fn decide(&self, action: &str, args: &Args) -> Result<Decision, TreeError> {
        let mut any_true = false;
        let mut any_false = false;
        for leaf in &self.leaves {
            if self.spec.eval_guard(&leaf.state, action, args)? {
                any_true = true;
            } else {
                any_false = true;
            }
            if any_true && any_false {
                return Ok(Decision::Delay);
            }
        }
        Ok(if any_true {
            Decision::Accept
        } else {
            Decision::Reject
        })
    }

    /// Number of guard evaluations `decide` performs (used for cost models).
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Append a command to the in-progress list, branching every leaf on its
    /// commit/abort. The caller has already established `decide == Accept`
    /// (or is replaying history); the guard is not re-checked.
    pub fn admit(&mut self, instance: CommandInstance) -> Result<(), TreeError> {
        if self.admitted.len() >= Self::MAX_ADMITTED {
            return Err(TreeError::Capacity);
        }
        if !self.admitted.is_empty() && instance.arrival_seq <= self.max_arrival_seq {
            return Err(TreeError::NonMonotonicArrival {
                seq: instance.arrival_seq,
                max: self.max_arrival_seq,
            });
        }
        let bit = 1u64 << self.admitted.len();
        let mut grown = Vec::with_capacity(self.leaves.len() * 2);
        for leaf in &self.leaves {
            let applied = self.spec.apply_effect(
                &leaf.state,
                &instance.cmd.action,
                &instance.cmd.args,
            )?;
            grown.push(leaf.clone());
            grown.push(Leaf {
                mask: leaf.mask | bit,
                state: applied,
            });
        }
        self.leaves = grown;
        self.max_arrival_seq = instance.arrival_seq;
        self.admitted.push(Admitted {
            instance,
            committed: false,
        });
        Ok(())
    }

    /// Prune the tree by one command's outcome. A commit keeps the command
    /// in the admitted list (its effect applies when it reaches the head);
    /// an abort excises it entirely.
    pub fn resolve(&mut self, id: CommandId, resolution: Resolution) -> Result<(), TreeError> {
        let idx = self.index_of(id).ok_or(TreeError::UnknownCommand(id))?;
        if self.admitted[idx].committed {
            return Err(TreeError::DoubleResolution {
                id,
                first: Resolution::Commit,
            });
        }
        let bit = 1u64 << idx;
        match resolution {
            Resolution::Commit => {
                self.admitted[idx].committed = true;
                self.leaves.retain(|l| l.mask & bit != 0);
            }
            Resolution::Abort => {
                self.admitted.remove(idx);
                self.leaves.retain(|l| l.mask & bit == 0);
                let low = bit - 1;
                for leaf in &mut self.leaves {
                    leaf.mask = (leaf.mask & low) | ((leaf.mask >> 1) & !low);
                }
            }
        }
        debug_assert_eq!(self.leaves.len(), 1usize << self.unresolved_len());
        Ok(())
    }

    /// Remove the committed head, folding its effect into the base state.
    /// Leaf states are untouched: every surviving leaf already includes the
    /// head. Returns the removed command and the new base.
    pub fn pop_applied_head(&mut self) -> Result<(CommandInstance, EntityState), TreeError> {
        let head = self
            .admitted
            .first()
            .ok_or_else(|| TreeError::HeadNotApplicable("no in-progress commands".into()))?;
        if !head.committed {
            return Err(TreeError::HeadNotApplicable(format!(
                "head {} is unresolved",
                head.instance.cmd.id
            )));
        }
        let head = self.admitted.remove(0);
        self.base = self.spec.apply_effect(
            &self.base,
            &head.instance.cmd.action,
            &head.instance.cmd.args,
        )?;
        for leaf in &mut self.leaves {
            debug_assert_eq!(leaf.mask & 1, 1);
            leaf.mask >>= 1;
        }
        Ok((head.instance, self.base.clone()))
    }
}

/// Subset-enumeration oracle for the outcome tree.
///
/// Enumerates every commit subset of the unresolved commands directly and
/// replays, in list order from `base`, the chosen commands plus every
/// already-committed one (flagged true). Returns the leaf states sorted,
/// as a multiset. Deliberately avoids the incremental structure above so
/// the two can check each other.
pub fn brute_force_outcomes(
    spec: &EntitySpec,
    base: &EntityState,
    in_progress: &[(CommandInstance, bool)],
) -> Result<Vec<EntityState>, SpecError> {
    let unresolved: Vec<usize> = in_progress
        .iter()
        .enumerate()
        .filter(|(_, (_, committed))| !committed)
        .map(|(i, _)| i)
        .collect();
    assert!(unresolved.len() <= 20, "oracle is exponential; keep k small");
    let mut out = Vec::with_capacity(1 << unresolved.len());
    for subset in 0u32..(1 << unresolved.len()) {
        let mut chosen: Vec<bool> = in_progress.iter().map(|(_, c)| *c).collect();
        for (pos, idx) in unresolved.iter().enumerate() {
            if subset & (1 << pos) != 0 {
                chosen[*idx] = true;
            }
        }
        let mut state = base.clone();
        for (i, (inst, _)) in in_progress.iter().enumerate() {
            if chosen[i] {
                state = spec.apply_effect(&state, &inst.cmd.action, &inst.cmd.args)?;
            }
        }
        out.push(state);
    }
    out.sort();
    Ok(out)
}

/// Classification a candidate gets from the oracle's leaf set; the
/// counterpart of [`OutcomeTree::decide`] for equivalence checks.
pub fn brute_force_decision(
    spec: &EntitySpec,
    leaves: &[EntityState],
    action: &str,
    args: &Args,
) -> Result<Decision, SpecError> {
    let mut trues = 0usize;
    for leaf in leaves {
        if spec.eval_guard(leaf, action, args)? {
            trues += 1;
        }
    }
    Ok(if trues == leaves.len() {
        Decision::Accept
    } else if trues == 0 {
        Decision::Reject
    } else {
        Decision::Delay
    })
}
