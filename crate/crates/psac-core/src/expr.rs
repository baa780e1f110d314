//! Guard and effect expressions.
//!
//! Expressions are evaluated against an environment of entity fields and
//! action arguments. Evaluation is pure and total: every failure mode is an
//! `EvalError`, never a panic.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::money::Money;
use crate::value::{Kind, Value};

/// Named argument bindings for an action invocation.
pub type Args = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Lit(Value),
    /// Reference to a field of the entity being evaluated (`balance`, `this.balance`).
    Field(String),
    /// Reference to an action parameter.
    Param(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    /// Scale a Money or Int by the rational `p/q`, rounding half-up.
    Scale {
        expr: Box<Expr>,
        p: i64,
        q: i64,
    },
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("missing argument binding `{0}`")]
    MissingArg(String),
    #[error("kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: Kind, got: Kind },
    #[error("operands of `{op}` have different kinds: {left} vs {right}")]
    MixedOperands { op: String, left: Kind, right: Kind },
    #[error("arithmetic overflow")]
    Overflow,
}

/// Evaluation environment: entity field values plus argument bindings.
pub struct Env<'a> {
    pub fields: &'a BTreeMap<String, Value>,
    pub args: &'a Args,
}

impl Expr {
    pub fn eval(&self, env: &Env<'_>) -> Result<Value, EvalError> {
        match self {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Field(name) => env
                .fields
                .get(name)
                .cloned()
                .ok_or_else(|| EvalError::UnknownField(name.clone())),
            Expr::Param(name) => env
                .args
                .get(name)
                .cloned()
                .ok_or_else(|| EvalError::MissingArg(name.clone())),
            Expr::Add(a, b) => numeric_op("+", a.eval(env)?, b.eval(env)?, |x, y| {
                x.checked_add(y).ok_or(EvalError::Overflow)
            }),
            Expr::Sub(a, b) => numeric_op("-", a.eval(env)?, b.eval(env)?, |x, y| {
                x.checked_sub(y).ok_or(EvalError::Overflow)
            }),
            Expr::Scale { expr, p, q } => match expr.eval(env)? {
                Value::Money(m) => Ok(Value::Money(m.scale(*p, *q)?)),
                Value::Int(i) => Ok(Value::Int(Money(i).scale(*p, *q)?.0)),
                v => Err(EvalError::KindMismatch {
                    expected: Kind::Money,
                    got: v.kind(),
                }),
            },
            Expr::Cmp(op, a, b) => {
                let (x, y) = (a.eval(env)?, b.eval(env)?);
                if x.kind() != y.kind() {
                    return Err(EvalError::MixedOperands {
                        op: op.to_string(),
                        left: x.kind(),
                        right: y.kind(),
                    });
                }
                let ord = x.cmp(&y);
                let res = match op {
                    CmpOp::Lt => ord.is_lt(),
                    CmpOp::Le => ord.is_le(),
                    CmpOp::Eq => ord.is_eq(),
                    CmpOp::Ge => ord.is_ge(),
                    CmpOp::Gt => ord.is_gt(),
                };
                Ok(Value::Bool(res))
            }
            Expr::And(a, b) => Ok(Value::Bool(eval_bool(a, env)? && eval_bool(b, env)?)),
            Expr::Or(a, b) => Ok(Value::Bool(eval_bool(a, env)? || eval_bool(b, env)?)),
            Expr::Not(a) => Ok(Value::Bool(!eval_bool(a, env)?)),
        }
    }

    /// Static kind of this expression, or an error describing the mismatch.
    /// `lookup` resolves field and parameter kinds.
    pub fn kind_check(
        &self,
        field_kind: &dyn Fn(&str) -> Option<Kind>,
        param_kind: &dyn Fn(&str) -> Option<Kind>,
    ) -> Result<Kind, EvalError> {
        match self {
            Expr::Lit(v) => Ok(v.kind()),
            Expr::Field(name) => {
                field_kind(name).ok_or_else(|| EvalError::UnknownField(name.clone()))
            }
            Expr::Param(name) => {
                param_kind(name).ok_or_else(|| EvalError::MissingArg(name.clone()))
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let (ka, kb) = (
                    a.kind_check(field_kind, param_kind)?,
                    b.kind_check(field_kind, param_kind)?,
                );
                if ka != kb {
                    return Err(EvalError::MixedOperands {
                        op: "+/-".into(),
                        left: ka,
                        right: kb,
                    });
                }
                match ka {
                    Kind::Money | Kind::Int => Ok(ka),
                    other => Err(EvalError::KindMismatch {
                        expected: Kind::Money,
                        got: other,
                    }),
                }
            }
            Expr::Scale { expr, .. } => {
                let k = expr.kind_check(field_kind, param_kind)?;
                match k {
                    Kind::Money | Kind::Int => Ok(k),
                    other => Err(EvalError::KindMismatch {
                        expected: Kind::Money,
                        got: other,
                    }),
                }
            }
            Expr::Cmp(op, a, b) => {
                let (ka, kb) = (
                    a.kind_check(field_kind, param_kind)?,
                    b.kind_check(field_kind, param_kind)?,
                );
                if ka != kb {
                    return Err(EvalError::MixedOperands {
                        op: op.to_string(),
                        left: ka,
                        right: kb,
                    });
                }
                Ok(Kind::Bool)
            }
            Expr::And(a, b) | Expr::Or(a, b) => {
                for side in [a, b] {
                    let k = side.kind_check(field_kind, param_kind)?;
                    if k != Kind::Bool {
                        return Err(EvalError::KindMismatch {
                            expected: Kind::Bool,
                            got: k,
                        });
                    }
                }
                Ok(Kind::Bool)
            }
            Expr::Not(a) => {
                let k = a.kind_check(field_kind, param_kind)?;
                if k != Kind::Bool {
                    return Err(EvalError::KindMismatch {
                        expected: Kind::Bool,
                        got: k,
                    });
                }
                Ok(Kind::Bool)
            }
        }
    }
}

fn eval_bool(e: &Expr, env: &Env<'_>) -> Result<bool, EvalError> {
    match e.eval(env)? {
        Value::Bool(b) => Ok(b),
        v => Err(EvalError::KindMismatch {
            expected: Kind::Bool,
            got: v.kind(),
        }),
    }
}

fn numeric_op(
    op: &str,
    x: Value,
    y: Value,
    f: impl Fn(i64, i64) -> Result<i64, EvalError>,
) -> Result<Value, EvalError> {
    match (&x, &y) {
        (Value::Money(a), Value::Money(b)) => Ok(Value::Money(Money(f(a.0, b.0)?))),
        (Value::Int(a), Value::Int(b)) => Ok(Value::Int(f(*a, *b)?)),
        _ => Err(EvalError::MixedOperands {
            op: op.to_string(),
            left: x.kind(),
            right: y.kind(),
        }),
    }
}
