//! Runtime values and their kinds.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::money::Money;

/// The kind (type) of a field, parameter, or expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Money,
    Int,
    Bool,
    /// Opaque entity identifier.
    Id,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Money => "Money",
            Kind::Int => "Int",
            Kind::Bool => "Bool",
            Kind::Id => "Id",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Money(Money),
    Int(i64),
    Bool(bool),
    Id(String),
}

impl Value {
    pub fn kind(&self) -> Kind {
        match self {
            Value::Money(_) => Kind::Money,
            Value::Int(_) => Kind::Int,
            Value::Bool(_) => Kind::Bool,
            Value::Id(_) => Kind::Id,
        }
    }

    /// Zero value used to populate declared fields before initialization.
    pub fn zero_of(kind: Kind) -> Value {
        match kind {
            Kind::Money => Value::Money(Money::ZERO),
            Kind::Int => Value::Int(0),
            Kind::Bool => Value::Bool(false),
            Kind::Id => Value::Id(String::new()),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_money(&self) -> Option<Money> {
        match self {
            Value::Money(m) => Some(*m),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Money(m) => write!(f, "{m}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Id(s) => write!(f, "{s}"),
        }
    }
}
