//! Identifiers and command instances shared across the transaction stack.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::expr::Args;

/// Globally unique transaction identifier.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// One command within a transaction. `sub` is the enrollment index: a
/// transaction that touches the same entity twice (a self-transfer books a
/// withdrawal and a deposit on one account) issues two distinct commands.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct CommandId {
    pub txn: TxnId,
    pub sub: u32,
}

impl CommandId {
    pub fn new(txn: TxnId, sub: u32) -> CommandId {
        CommandId { txn, sub }
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.txn, self.sub)
    }
}

/// Address of one entity: its spec name plus its identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityAddr {
    pub spec: String,
    pub entity: String,
}

impl EntityAddr {
    pub fn new(spec: impl Into<String>, entity: impl Into<String>) -> EntityAddr {
        EntityAddr {
            spec: spec.into(),
            entity: entity.into(),
        }
    }
}

impl fmt::Display for EntityAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.spec, self.entity)
    }
}

/// An action invocation as delivered to an object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub id: CommandId,
    pub action: String,
    pub args: Args,
}

/// A command the object has taken in, stamped with its per-object arrival
/// sequence number. Arrival order is the order effects apply in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandInstance {
    pub cmd: Command,
    pub arrival_seq: u64,
}

/// A participant's answer to a vote request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vote {
    Yes,
    No,
}

impl fmt::Display for Vote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Vote::Yes => "yes",
            Vote::No => "no",
        })
    }
}

/// Transaction outcome for one command or for the whole transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    Commit,
    Abort,
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resolution::Commit => "commit",
            Resolution::Abort => "abort",
        })
    }
}
