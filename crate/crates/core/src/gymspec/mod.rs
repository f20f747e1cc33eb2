//! Declarative environment specifications.
//!
//! A [`GymSpec`] describes a finite-action environment: bounded state
//! variables, actions (optionally parameterised over discrete value sets),
//! per-action simultaneous assignments, a linear combination of reward
//! metrics and a termination condition. The interpreter in this module is
//! the reference semantics; [`codegen`] emits standalone sources that must
//! agree with it step for step.

pub mod codegen;
pub mod expr;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use expr::{BinOp, EvalError, Expr, Func, ParseError, Type, TypeError, Value};
pub use validate::{Finding, FindingCode, ValidationReport};

/// Reserved identifier holding the post-step counter.
pub const STEP_IDENT: &str = "step";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Integer,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateVar {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

impl StateVar {
    /// Rounds (integer vars, half away from zero) then clamps to bounds.
    pub fn fit(&self, value: f64) -> f64 {
        let v = match self.kind {
            VarKind::Integer => value.round(),
            VarKind::Real => value,
        };
        v.max(self.lower).min(self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionParam {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDef {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ActionParam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub var: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRule {
    pub action: String,
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardMetric {
    pub name: String,
    pub weight: f64,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GymSpec {
    pub name: String,
    pub description: String,
    pub state_vars: Vec<StateVar>,
    pub actions: Vec<ActionDef>,
    pub transition: Vec<TransitionRule>,
    pub reward_metrics: Vec<RewardMetric>,
    pub termination: Expr,
    pub max_steps: u32,
    /// Kept as a list so duplicate keys in a document stay detectable.
    pub initial_state: Vec<(String, f64)>,
}

/// One element of the expanded action set: a declared action with every
/// parameter bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteAction {
    pub index: usize,
    pub name: String,
    pub args: Vec<(String, f64)>,
}

impl ConcreteAction {
    pub fn label(&self) -> String {
        if self.args.is_empty() {
            return self.name.clone();
        }
        let args: Vec<String> = self.args.iter().map(|(n, v)| format!("{n}={v}")).collect();
        format!("{}({})", self.name, args.join(","))
    }
}

impl fmt::Display for ConcreteAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Values in `state_vars` declaration order.
    pub values: Vec<f64>,
    pub step: u32,
    pub done: bool,
}

impl EnvState {
    pub fn get(&self, spec: &GymSpec, name: &str) -> Option<f64> {
        spec.var_index(name).map(|i| self.values[i])
    }

    pub fn to_map(&self, spec: &GymSpec) -> BTreeMap<String, f64> {
        spec.state_vars
            .iter()
            .zip(&self.values)
            .map(|(v, x)| (v.name.clone(), *x))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    /// Metric values (unweighted) in declaration order.
    pub metrics: Vec<(String, f64)>,
    /// The termination expression held on the new state.
    pub terminated: bool,
    /// The horizon was reached without termination.
    pub truncated: bool,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("syntax error in {path} at line {line}, column {column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid spec: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("division by zero while evaluating {0}")]
    DivisionByZero(String),
    #[error("evaluation of {path} failed: {source}")]
    Eval { path: String, source: EvalError },
}

impl GymSpec {
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.state_vars.iter().position(|v| v.name == name)
    }

    pub fn action_def(&self, name: &str) -> Option<&ActionDef> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn rule_for(&self, action: &str) -> Option<&TransitionRule> {
        self.transition.iter().find(|r| r.action == action)
    }

    /// Every parameter name declared by any action, first occurrence order.
    pub fn all_param_names(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in self.actions.iter().flat_map(|a| &a.params) {
            if !out.contains(&p.name.as_str()) {
                out.push(&p.name);
            }
        }
        out
    }

    /// Expands declared actions over their parameter value sets. Actions
    /// keep declaration order; the first parameter varies slowest.
    pub fn expand_actions(&self) -> Vec<ConcreteAction> {
        let mut out = Vec::new();
        for def in &self.actions {
            let mut combos: Vec<Vec<(String, f64)>> = vec![Vec::new()];
            for p in &def.params {
                let mut next = Vec::with_capacity(combos.len() * p.values.len());
                for c in &combos {
                    for v in &p.values {
                        let mut c = c.clone();
                        c.push((p.name.clone(), *v));
                        next.push(c);
                    }
                }
                combos = next;
            }
            for args in combos {
                out.push(ConcreteAction {
                    index: out.len(),
                    name: def.name.clone(),
                    args,
                });
            }
        }
        out
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }

    /// Initial state of every episode.
    pub fn reset(&self) -> Result<EnvState, SpecError> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(SpecError::Invalid(report));
        }
        Ok(self.initial_env_state())
    }

    /// Initial state without re-validating; callers must have validated.
    pub fn initial_env_state(&self) -> EnvState {
        let values = self
            .state_vars
            .iter()
            .map(|v| {
                self.initial_state
                    .iter()
                    .find(|(n, _)| *n == v.name)
                    .map_or(v.lower, |(_, x)| *x)
            })
            .collect();
        EnvState {
            values,
            step: 0,
            done: false,
        }
    }

    /// Advances one step. Assignments of the matching rule are evaluated
    /// against the pre-step state and applied simultaneously; actions
    /// without a rule leave every variable unchanged.
    pub fn step(&self, state: &EnvState, action: &ConcreteAction) -> Result<StepOutcome, StepError> {
        if state.done {
            return Err(StepError::EpisodeFinished);
        }
        let def = self
            .action_def(&action.name)
            .ok_or_else(|| StepError::UnknownAction(action.label()))?;
        let arity_ok = def.params.len() == action.args.len()
            && def
                .params
                .iter()
                .zip(&action.args)
                .all(|(p, (n, v))| p.name == *n && p.values.contains(v));
        if !arity_ok {
            return Err(StepError::UnknownAction(action.label()));
        }

        let mut values = state.values.clone();
        if let Some((rule_idx, rule)) = self
            .transition
            .iter()
            .enumerate()
            .find(|(_, r)| r.action == action.name)
        {
            let scope = StepScope {
                spec: self,
                values: &state.values,
                step: state.step,
                action,
            };
            for (k, a) in rule.assignments.iter().enumerate() {
                let path = format!("transition[{rule_idx}].assignments[{k}]");
                let raw = eval_num(&a.expr, &scope, &path)?;
                let idx = self
                    .var_index(&a.var)
                    .ok_or_else(|| StepError::Eval {
                        path: path.clone(),
                        source: EvalError::UnknownIdentifier(a.var.clone()),
                    })?;
                values[idx] = self.state_vars[idx].fit(raw);
            }
        }

        let step = state.step + 1;
        let scope = StepScope {
            spec: self,
            values: &values,
            step,
            action,
        };
        let mut reward = 0.0;
        let mut metrics = Vec::with_capacity(self.reward_metrics.len());
        for (i, m) in self.reward_metrics.iter().enumerate() {
            let v = eval_num(&m.expr, &scope, &format!("reward_metrics[{i}].expr"))?;
            reward += m.weight * v;
            metrics.push((m.name.clone(), v));
        }
        let terminated = self
            .termination
            .eval(&scope)
            .and_then(Value::as_bool)
            .map_err(|e| map_eval_error(e, "termination"))?;
        let truncated = !terminated && step >= self.max_steps;
        Ok(StepOutcome {
            state: EnvState {
                values,
                step,
                done: terminated || truncated,
            },
            reward,
            metrics,
            terminated,
            truncated,
        })
    }

    pub fn to_document(&self) -> SpecDocument {
        SpecDocument {
            name: self.name.clone(),
            description: self.description.clone(),
            state_vars: self.state_vars.clone(),
            actions: self.actions.clone(),
            transition: self
                .transition
                .iter()
                .map(|r| RuleDoc {
                    action: r.action.clone(),
                    assignments: r
                        .assignments
                        .iter()
                        .map(|a| AssignmentDoc {
                            var: a.var.clone(),
                            expr: a.expr.to_string(),
                        })
                        .collect(),
                })
                .collect(),
            reward_metrics: self
                .reward_metrics
                .iter()
                .map(|m| MetricDoc {
                    name: m.name.clone(),
                    weight: m.weight,
                    expr: m.expr.to_string(),
                })
                .collect(),
            termination: self.termination.to_string(),
            max_steps: self.max_steps,
            initial_state: InitialState(self.initial_state.clone()),
        }
    }

    /// Canonical JSON text of the spec.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("spec documents always serialize")
    }
}

struct StepScope<'a> {
    spec: &'a GymSpec,
    values: &'a [f64],
    step: u32,
    action: &'a ConcreteAction,
}

impl expr::Scope for StepScope<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        if let Some(i) = self.spec.var_index(name) {
            return Some(self.values[i]);
        }
        if name == STEP_IDENT {
            return Some(f64::from(self.step));
        }
        if let Some((_, v)) = self.action.args.iter().find(|(n, _)| n == name) {
            return Some(*v);
        }
        // Parameters of other actions read as zero.
        self.spec
            .actions
            .iter()
            .flat_map(|a| &a.params)
            .any(|p| p.name == name)
            .then_some(0.0)
    }
}

fn map_eval_error(e: EvalError, path: &str) -> StepError {
    match e {
        EvalError::DivisionByZero => StepError::DivisionByZero(path.to_string()),
        source => StepError::Eval {
            path: path.to_string(),
            source,
        },
    }
}

fn eval_num(e: &Expr, scope: &StepScope<'_>, path: &str) -> Result<f64, StepError> {
    e.eval(scope)
        .and_then(Value::as_num)
        .map_err(|err| map_eval_error(err, path))
}

impl Serialize for GymSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GymSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        SpecDocument::deserialize(deserializer)?
            .into_spec()
            .map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Document format

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    pub name: String,
    pub description: String,
    pub state_vars: Vec<StateVar>,
    pub actions: Vec<ActionDef>,
    pub transition: Vec<RuleDoc>,
    pub reward_metrics: Vec<MetricDoc>,
    pub termination: String,
    pub max_steps: u32,
    pub initial_state: InitialState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDoc {
    pub action: String,
    pub assignments: Vec<AssignmentDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentDoc {
    pub var: String,
    pub expr: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricDoc {
    pub name: String,
    pub weight: f64,
    pub expr: String,
}

/// JSON object whose entries keep document order and duplicates.
#[derive(Debug, Clone, Default)]
pub struct InitialState(pub Vec<(String, f64)>);

impl Serialize for InitialState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for InitialState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = InitialState;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping state variable names to numbers")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, f64>()? {
                    entries.push((k, v));
                }
                Ok(InitialState(entries))
            }
        }
        deserializer.deserialize_map(EntriesVisitor)
    }
}

fn parse_expr_at(text: &str, path: &str) -> Result<Expr, SpecError> {
    Expr::parse(text).map_err(|e| SpecError::Syntax {
        path: path.to_string(),
        line: 1,
        column: e.column,
        message: e.message,
    })
}

impl SpecDocument {
    pub fn into_spec(self) -> Result<GymSpec, SpecError> {
        let mut transition = Vec::with_capacity(self.transition.len());
        for (i, r) in self.transition.into_iter().enumerate() {
            let mut assignments = Vec::with_capacity(r.assignments.len());
            for (k, a) in r.assignments.into_iter().enumerate() {
                let expr = parse_expr_at(&a.expr, &format!("transition[{i}].assignments[{k}].expr"))?;
                assignments.push(Assignment { var: a.var, expr });
            }
            transition.push(TransitionRule {
                action: r.action,
                assignments,
            });
        }
        let mut reward_metrics = Vec::with_capacity(self.reward_metrics.len());
        for (i, m) in self.reward_metrics.into_iter().enumerate() {
            let expr = parse_expr_at(&m.expr, &format!("reward_metrics[{i}].expr"))?;
            reward_metrics.push(RewardMetric {
                name: m.name,
                weight: m.weight,
                expr,
            });
        }
        let termination = parse_expr_at(&self.termination, "termination")?;
        Ok(GymSpec {
            name: self.name,
            description: self.description,
            state_vars: self.state_vars,
            actions: self.actions,
            transition,
            reward_metrics,
            termination,
            max_steps: self.max_steps,
            initial_state: self.initial_state.0,
        })
    }
}

/// Parses a JSON spec document.
///
/// Syntax errors (JSON or expression) carry a position; missing or unknown
/// fields, unresolved identifiers and ill-typed expressions are schema
/// errors. Remaining invariants are reported by [`GymSpec::validate`].
pub fn parse_spec(document: &str) -> Result<GymSpec, SpecError> {
    let doc: SpecDocument = serde_json::from_str(document).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => SpecError::Syntax {
                path: "document".into(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
            Category::Data => SpecError::Schema {
                path: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            },
        }
    })?;
    let spec = doc.into_spec()?;
    let report = spec.validate();
    if let Some(f) = report.findings.iter().find(|f| {
        matches!(
            f.code,
            FindingCode::UnknownIdentifier | FindingCode::TypeMismatch
        )
    }) {
        return Err(SpecError::Schema {
            path: f.path.clone(),
            message: f.message.clone(),
        });
    }
    Ok(spec)
}

/// One entry of a reference trace: either a reset or a step result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEntry {
    Reset {
        state: Vec<f64>,
    },
    Step {
        action: usize,
        state: Vec<f64>,
        reward: f64,
        terminated: bool,
        truncated: bool,
    },
    Error {
        action: usize,
        error: String,
    },
}

/// Drives the interpreter through a sequence of expanded-action indices,
/// resetting at the start and after every finished or failed episode.
/// Generated sources expose the same driver, so traces are comparable.
pub fn interpreter_trace(spec: &GymSpec, actions: &[usize]) -> Vec<TraceEntry> {
    let expanded = spec.expand_actions();
    let mut out = Vec::with_capacity(actions.len() + 1);
    let mut state = spec.initial_env_state();
    out.push(TraceEntry::Reset {
        state: state.values.clone(),
    });
    for &a in actions {
        if state.done {
            state = spec.initial_env_state();
            out.push(TraceEntry::Reset {
                state: state.values.clone(),
            });
        }
        let Some(action) = expanded.get(a) else {
            out.push(TraceEntry::Error {
                action: a,
                error: "unknown_action".into(),
            });
            continue;
        };
        match spec.step(&state, action) {
            Ok(o) => {
                out.push(TraceEntry::Step {
                    action: a,
                    state: o.state.values.clone(),
                    reward: o.reward,
                    terminated: o.terminated,
                    truncated: o.truncated,
                });
                state = o.state;
            }
            Err(e) => {
                let error = match e {
                    StepError::DivisionByZero(_) => "division_by_zero",
                    _ => "step_failed",
                };
                out.push(TraceEntry::Error {
                    action: a,
                    error: error.into(),
                });
                state.done = true;
            }
        }
    }
    out
}
