//! Transaction processing over guarded state-machine entities.
//!
//! Entities are specified as state machines whose actions carry guards,
//! effects, and synchronization calls onto other entities ([`spec`],
//! [`parse`]). Commands against one entity are admitted by evaluating
//! their guard in every possible outcome of the commands already in
//! flight ([`tree`], [`object`]): accepted if it holds everywhere,
//! rejected if nowhere, delayed otherwise. Setting the parallelism bound
//! to one recovers strict two-phase locking from the same machinery.
//! Cross-entity atomicity comes from two-phase commit ([`twophase`]), and
//! every actor journals its steps for crash recovery ([`journal`]).

pub mod command;
pub mod expr;
pub mod journal;
pub mod money;
pub mod object;
pub mod parse;
pub mod samples;
pub mod spec;
pub mod tree;
pub mod twophase;
pub mod value;

pub use command::{Command, CommandId, CommandInstance, EntityAddr, Resolution, TxnId, Vote};
pub use expr::{Args, CmpOp, EvalError, Expr};
pub use journal::{Journal, JournalError, JournalPayload, JournalRecord, ReplyKind};
pub use money::Money;
pub use object::{ObjectConfig, ObjectError, ObjectEvent, ObjectOutput, ObjectReply, PsacObject};
pub use parse::{parse_spec, parse_specs, ParseError};
pub use samples::bank_specs;
pub use spec::{EntitySpec, EntityState, SpecError, SpecSet};
pub use tree::{brute_force_decision, brute_force_outcomes, Decision, OutcomeTree, TreeError};
pub use twophase::{
    object_stream_name, ActorId, Coordinator, Outbound, Participant, TimerConfig, TimerKind,
    TwoPhaseError, TxnMessage,
};
pub use value::{Kind, Value};
