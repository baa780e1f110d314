//! Entity specifications: lifecycle states, guarded actions, effects, and
//! synchronized calls onto other entities.
//!
//! An `EntitySpec` is the static description; an `EntityState` is one
//! entity's current lifecycle state plus field values. The operations here
//! are the only way guards are checked and effects applied, and they are
//! shared by the admission tree, the object runtime, the reference lock
//! implementation, and the history checkers, so all of them agree on the
//! semantics by construction:
//!
//! * a guard holds only if the entity is in the action's source state and
//!   every `pre:` expression evaluates to true;
//! * effects are simultaneous assignments, all right-hand sides evaluated
//!   against the pre-state;
//! * `sync:` templates resolve to concrete actions on other entities.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

use crate::expr::{Args, Env, EvalError, Expr};
use crate::value::{Kind, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub kind: Kind,
    /// For `Kind::Id` fields declared with an entity type (`from: Account`),
    /// the referenced spec name. Used to resolve sync targets.
    pub entity_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDef {
    pub name: String,
    pub initial: bool,
    pub terminal: bool,
}

/// A template for a synchronized action on another entity, resolved against
/// a concrete invocation by [`sync_ops`](EntitySpec::sync_ops).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncTemplate {
    pub target_spec: String,
    /// Evaluates to the target entity's identity.
    pub target_id: Expr,
    pub action: String,
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDef {
    pub name: String,
    pub params: Vec<FieldDef>,
    pub from_state: String,
    pub to_state: String,
    /// `pre:` expressions; all must hold. Empty means always enabled.
    pub guards: Vec<Expr>,
    /// `post:` assignments `field := expr`; at most one per field.
    pub effects: Vec<(String, Expr)>,
    pub syncs: Vec<SyncTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub name: String,
    pub identity_field: String,
    pub fields: Vec<FieldDef>,
    pub states: Vec<StateDef>,
    pub actions: Vec<ActionDef>,
}

/// One entity's current lifecycle state and field values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityState {
    pub lifecycle: String,
    pub data: BTreeMap<String, Value>,
}

/// A concrete action on a concrete entity, produced by resolving a sync
/// template or by a client request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncAction {
    pub target_spec: String,
    pub target_id: String,
    pub action: String,
    pub args: Args,
}

impl fmt::Display for SyncAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}.{}({})",
            self.target_spec,
            self.target_id,
            self.action,
            self.args
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("action `{action}` is not enabled in state `{state}`")]
    NotEnabled { action: String, state: String },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("sync target id of `{action}` evaluated to non-id value")]
    SyncTargetNotId { action: String },
}

/// A validation finding; `validate` collects all of them rather than
/// stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub spec: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.spec, self.message)
    }
}

impl EntitySpec {
    pub fn initial_state_name(&self) -> &str {
        self.states
            .iter()
            .find(|s| s.initial)
            .map(|s| s.name.as_str())
            .unwrap_or_else(|| self.states[0].name.as_str())
    }

    /// Fresh entity state: initial lifecycle, identity bound, all other
    /// fields zero-valued.
    pub fn initial_state(&self, entity_id: &str) -> EntityState {
        let mut data = BTreeMap::new();
        for f in &self.fields {
            let v = if f.name == self.identity_field {
                Value::Id(entity_id.to_string())
            } else {
                Value::zero_of(f.kind)
            };
            data.insert(f.name.clone(), v);
        }
        EntityState {
            lifecycle: self.initial_state_name().to_string(),
            data,
        }
    }

    pub fn action(&self, name: &str) -> Result<&ActionDef, SpecError> {
        self.actions
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| SpecError::UnknownAction(name.to_string()))
    }

    fn field_kind(&self, name: &str) -> Option<Kind> {
        self.fields.iter().find(|f| f.name == name).map(|f| f.kind)
    }

    /// True iff the entity is in the action's source state and every guard
    /// expression holds. Pure; the state is not modified.
    pub fn eval_guard(
        &self,
        state: &EntityState,
        action: &str,
        args: &Args,
    ) -> Result<bool, SpecError> {
        let def = self.action(action)?;
        if state.lifecycle != def.from_state {
            return Ok(false);
        }
        let env = Env {
            fields: &state.data,
            args,
        };
        for g in &def.guards {
            match g.eval(&env)? {
                Value::Bool(true) => {}
                Value::Bool(false) => return Ok(false),
                v => {
                    return Err(SpecError::Eval(EvalError::KindMismatch {
                        expected: Kind::Bool,
                        got: v.kind(),
                    }))
                }
            }
        }
        Ok(true)
    }

    /// Apply the action's effects as simultaneous assignments (all right-hand
    /// sides read the pre-state) and move to the target lifecycle state.
    /// The guard is the caller's responsibility and is not re-checked.
    pub fn apply_effect(
        &self,
        state: &EntityState,
        action: &str,
        args: &Args,
    ) -> Result<EntityState, SpecError> {
        let def = self.action(action)?;
        let env = Env {
            fields: &state.data,
            args,
        };
        let mut assigned: Vec<(String, Value)> = Vec::with_capacity(def.effects.len());
        for (field, rhs) in &def.effects {
            assigned.push((field.clone(), rhs.eval(&env)?));
        }
        let mut next = state.clone();
        for (field, v) in assigned {
            next.data.insert(field, v);
        }
        next.lifecycle = def.to_state.clone();
        Ok(next)
    }

    /// Target lifecycle state of an action, provided it is enabled in `from`.
    pub fn next_state(&self, from: &str, action: &str) -> Result<&str, SpecError> {
        if !self.states.iter().any(|s| s.name == from) {
            return Err(SpecError::UnknownState(from.to_string()));
        }
        let def = self.action(action)?;
        if def.from_state != from {
            return Err(SpecError::NotEnabled {
                action: action.to_string(),
                state: from.to_string(),
            });
        }
        Ok(&def.to_state)
    }

}

/// A registry of specs, indexed by name. Cross-spec concerns (sync target
/// resolution and validation) live here.
#[derive(Debug, Clone, Default)]
pub struct SpecSet {
    specs: BTreeMap<String, EntitySpec>,
}

impl SpecSet {
    pub fn new(specs: Vec<EntitySpec>) -> SpecSet {
        SpecSet {
            specs: specs.into_iter().map(|s| (s.name.clone(), s)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&EntitySpec> {
        self.specs.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntitySpec> {
        self.specs.values()
    }

    /// Like [`EntitySpec::sync_ops`] but binds argument names from the
    /// target action's parameter list.
    pub fn sync_ops(
        &self,
        spec: &EntitySpec,
        state: &EntityState,
        action: &str,
        args: &Args,
    ) -> Result<Vec<SyncAction>, SpecError> {
        let def = spec.action(action)?;
        let env = Env {
            fields: &state.data,
            args,
        };
        let mut out = Vec::with_capacity(def.syncs.len());
        for t in &def.syncs {
            let id = match t.target_id.eval(&env)? {
                Value::Id(s) => s,
                _ => {
                    return Err(SpecError::SyncTargetNotId {
                        action: action.to_string(),
                    })
                }
            };
            let param_names: Vec<String> = self
                .get(&t.target_spec)
                .and_then(|target| target.action(&t.action).ok())
                .map(|a| a.params.iter().map(|p| p.name.clone()).collect())
                .unwrap_or_default();
            let mut bound = Args::new();
            for (i, arg_expr) in t.args.iter().enumerate() {
                let name = param_names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("arg{i}"));
                bound.insert(name, arg_expr.eval(&env)?);
            }
            out.push(SyncAction {
                target_spec: t.target_spec.clone(),
                target_id: id,
                action: t.action.clone(),
                args: bound,
            });
        }
        Ok(out)
    }

    /// Validate every spec in the set. Returns all findings; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for spec in self.specs.values() {
            validate_spec_inner(spec, Some(self), &mut out);
        }
        out
    }
}

/// Validate a single spec in isolation. Sync targets are only checked for
/// existence when a `SpecSet` is supplied (see [`SpecSet::validate`]).
pub fn validate_spec(spec: &EntitySpec) -> Vec<Violation> {
    let mut out = Vec::new();
    validate_spec_inner(spec, None, &mut out);
    out
}

fn validate_spec_inner(spec: &EntitySpec, set: Option<&SpecSet>, out: &mut Vec<Violation>) {
    let mut push = |message: String| {
        out.push(Violation {
            spec: spec.name.clone(),
            message,
        })
    };

    // States: unique names, exactly one initial, at least one state.
    if spec.states.is_empty() {
        push("spec has no states".into());
    }
    let mut seen = BTreeSet::new();
    for s in &spec.states {
        if !seen.insert(&s.name) {
            push(format!("duplicate state `{}`", s.name));
        }
    }
    match spec.states.iter().filter(|s| s.initial).count() {
        1 => {}
        0 => push("no initial state".into()),
        n => push(format!("{n} initial states; exactly one required")),
    }

    // Fields: unique names; identity field exists and has kind Id.
    let mut field_names = BTreeSet::new();
    for f in &spec.fields {
        if !field_names.insert(&f.name) {
            push(format!("duplicate field `{}`", f.name));
        }
    }
    match spec.fields.iter().find(|f| f.name == spec.identity_field) {
        None => push(format!("identity field `{}` not declared", spec.identity_field)),
        Some(f) if f.kind != Kind::Id => {
            push(format!("identity field `{}` must have kind Id", f.name))
        }
        Some(_) => {}
    }

    let state_names: BTreeSet<&str> = spec.states.iter().map(|s| s.name.as_str()).collect();
    let mut action_names = BTreeSet::new();

    for a in &spec.actions {
        if !action_names.insert(&a.name) {
            push(format!("duplicate action `{}`", a.name));
        }
        for st in [&a.from_state, &a.to_state] {
            if !state_names.contains(st.as_str()) {
                push(format!("action `{}` references unknown state `{st}`", a.name));
            }
        }
        // Terminal states must not enable actions.
        if let Some(s) = spec.states.iter().find(|s| s.name == a.from_state) {
            if s.terminal {
                push(format!(
                    "action `{}` starts from final state `{}`",
                    a.name, s.name
                ));
            }
        }

        let mut param_names = BTreeSet::new();
        for p in &a.params {
            if !param_names.insert(p.name.as_str()) {
                push(format!("action `{}` has duplicate param `{}`", a.name, p.name));
            }
            if field_names.contains(&p.name) {
                push(format!(
                    "action `{}` param `{}` shadows a field",
                    a.name, p.name
                ));
            }
        }

        let field_kind = |n: &str| spec.field_kind(n);
        let param_kind =
            |n: &str| a.params.iter().find(|p| p.name == n).map(|p| p.kind);

        for (i, g) in a.guards.iter().enumerate() {
            match g.kind_check(&field_kind, &param_kind) {
                Ok(Kind::Bool) => {}
                Ok(k) => push(format!(
                    "action `{}` guard #{i} has kind {k}, expected Bool",
                    a.name
                )),
                Err(e) => push(format!("action `{}` guard #{i}: {e}", a.name)),
            }
        }

        let mut assigned = BTreeSet::new();
        for (field, rhs) in &a.effects {
            if !assigned.insert(field.as_str()) {
                push(format!(
                    "action `{}` assigns field `{field}` more than once",
                    a.name
                ));
            }
            if field == &spec.identity_field {
                push(format!(
                    "action `{}` assigns the identity field `{field}`",
                    a.name
                ));
            }
            match spec.field_kind(field) {
                None => push(format!(
                    "action `{}` assigns unknown field `{field}`",
                    a.name
                )),
                Some(expected) => match rhs.kind_check(&field_kind, &param_kind) {
                    Ok(k) if k == expected => {}
                    Ok(k) => push(format!(
                        "action `{}` assigns {k} to {expected} field `{field}`",
                        a.name
                    )),
                    Err(e) => push(format!("action `{}` effect on `{field}`: {e}", a.name)),
                },
            }
        }

        for (i, t) in a.syncs.iter().enumerate() {
            match t.target_id.kind_check(&field_kind, &param_kind) {
                Ok(Kind::Id) => {}
                Ok(k) => push(format!(
                    "action `{}` sync #{i} target has kind {k}, expected Id",
                    a.name
                )),
                Err(e) => push(format!("action `{}` sync #{i} target: {e}", a.name)),
            }
            if let Some(set) = set {
                match set.get(&t.target_spec) {
                    None => push(format!(
                        "action `{}` sync #{i} targets unknown spec `{}`",
                        a.name, t.target_spec
                    )),
                    Some(target) => match target.action(&t.action) {
                        Err(_) => push(format!(
                            "action `{}` sync #{i} targets unknown action `{}.{}`",
                            a.name, t.target_spec, t.action
                        )),
                        Ok(tdef) => {
                            if tdef.params.len() != t.args.len() {
                                push(format!(
                                    "action `{}` sync #{i} passes {} args to `{}.{}` which takes {}",
                                    a.name,
                                    t.args.len(),
                                    t.target_spec,
                                    t.action,
                                    tdef.params.len()
                                ));
                            }
                            for (j, (arg, p)) in t.args.iter().zip(&tdef.params).enumerate() {
                                match arg.kind_check(&field_kind, &param_kind) {
                                    Ok(k) if k == p.kind => {}
                                    Ok(k) => push(format!(
                                        "action `{}` sync #{i} arg #{j} has kind {k}, `{}.{}` expects {}",
                                        a.name, t.target_spec, t.action, p.kind
                                    )),
                                    Err(e) => push(format!(
                                        "action `{}` sync #{i} arg #{j}: {e}",
                                        a.name
                                    )),
                                }
                            }
                        }
                    },
                }
            }
        }
    }
}
