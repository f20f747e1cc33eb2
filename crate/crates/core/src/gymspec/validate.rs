use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::expr::{Expr, Type, TypeError, KEYWORDS};
use super::{GymSpec, VarKind, STEP_IDENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    InvalidName,
    ReservedName,
    DuplicateStateVar,
    DuplicateAction,
    DuplicateParam,
    DuplicateMetric,
    NameConflict,
    NoStateVars,
    NoActions,
    NoRewardMetrics,
    InvalidBounds,
    NonIntegerBounds,
    EmptyParamValues,
    NonFiniteValue,
    UnknownAction,
    DuplicateTransitionRule,
    UnknownStateVar,
    DuplicateAssignment,
    UnknownIdentifier,
    TypeMismatch,
    InvalidMaxSteps,
    InitialMissing,
    InitialDuplicate,
    InitialUnknownVar,
    InitialOutOfBounds,
    InitialNotInteger,
}

impl FindingCode {
    pub fn as_str(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    fn push(&mut self, code: FindingCode, path: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            code,
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} at {}: {}", finding.code.as_str(), finding.path, finding.message)?;
        }
        Ok(())
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn check_name(report: &mut ValidationReport, name: &str, path: String) {
    if !is_identifier(name) {
        report.push(FindingCode::InvalidName, path, format!("`{name}` is not an identifier"));
    } else if KEYWORDS.contains(&name) || name == STEP_IDENT {
        report.push(FindingCode::ReservedName, path, format!("`{name}` is reserved"));
    }
}

fn check_expr(
    report: &mut ValidationReport,
    expr: &Expr,
    want: Type,
    known: &dyn Fn(&str) -> bool,
    path: String,
) {
    if expr.has_non_finite_literal() {
        report.push(FindingCode::NonFiniteValue, path.clone(), "non-finite literal");
    }
    match expr.type_check(known) {
        Ok(ty) if ty == want => {}
        Ok(ty) => report.push(
            FindingCode::TypeMismatch,
            path,
            format!("expected {want} expression, found {ty}"),
        ),
        Err(TypeError::UnknownIdentifier(name)) => report.push(
            FindingCode::UnknownIdentifier,
            path,
            format!("unknown identifier `{name}`"),
        ),
        Err(e) => report.push(FindingCode::TypeMismatch, path, e.to_string()),
    }
}

pub(super) fn validate(spec: &GymSpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    check_name(&mut report, &spec.name, "name".into());
    if spec.state_vars.is_empty() {
        report.push(FindingCode::NoStateVars, "state_vars", "at least one state variable is required");
    }
    if spec.actions.is_empty() {
        report.push(FindingCode::NoActions, "actions", "at least one action is required");
    }
    if spec.reward_metrics.is_empty() {
        report.push(FindingCode::NoRewardMetrics, "reward_metrics", "at least one reward metric is required");
    }
    if spec.max_steps == 0 {
        report.push(FindingCode::InvalidMaxSteps, "max_steps", "max_steps must be positive");
    }

    let mut seen = HashSet::new();
    for (i, v) in spec.state_vars.iter().enumerate() {
        let path = format!("state_vars[{i}]");
        check_name(&mut report, &v.name, format!("{path}.name"));
        if !seen.insert(v.name.as_str()) {
            report.push(FindingCode::DuplicateStateVar, format!("{path}.name"), format!("duplicate state variable `{}`", v.name));
        }
        if !v.lower.is_finite() || !v.upper.is_finite() {
            report.push(FindingCode::NonFiniteValue, path.clone(), "bounds must be finite");
        } else if v.lower > v.upper {
            report.push(FindingCode::InvalidBounds, path.clone(), format!("lower {} exceeds upper {}", v.lower, v.upper));
        }
        if v.kind == VarKind::Integer && (v.lower.fract() != 0.0 || v.upper.fract() != 0.0) {
            report.push(FindingCode::NonIntegerBounds, path, "integer variables need integer bounds");
        }
    }

    let mut action_names = HashSet::new();
    let mut param_names: Vec<&str> = Vec::new();
    for (i, a) in spec.actions.iter().enumerate() {
        let path = format!("actions[{i}]");
        check_name(&mut report, &a.name, format!("{path}.name"));
        if !action_names.insert(a.name.as_str()) {
            report.push(FindingCode::DuplicateAction, format!("{path}.name"), format!("duplicate action `{}`", a.name));
        }
        let mut own = HashSet::new();
        for (k, p) in a.params.iter().enumerate() {
            let ppath = format!("{path}.params[{k}]");
            check_name(&mut report, &p.name, format!("{ppath}.name"));
            if !own.insert(p.name.as_str()) {
                report.push(FindingCode::DuplicateParam, format!("{ppath}.name"), format!("duplicate parameter `{}`", p.name));
            }
            if spec.var_index(&p.name).is_some() {
                report.push(FindingCode::NameConflict, format!("{ppath}.name"), format!("parameter `{}` shadows a state variable", p.name));
            }
            if p.values.is_empty() {
                report.push(FindingCode::EmptyParamValues, format!("{ppath}.values"), "parameter needs at least one value");
            }
            if p.values.iter().any(|v| !v.is_finite()) {
                report.push(FindingCode::NonFiniteValue, format!("{ppath}.values"), "parameter values must be finite");
            }
            if !param_names.contains(&p.name.as_str()) {
                param_names.push(&p.name);
            }
        }
    }

    let is_var = |n: &str| spec.var_index(n).is_some();
    let mut ruled = HashSet::new();
    for (i, rule) in spec.transition.iter().enumerate() {
        let path = format!("transition[{i}]");
        let def = spec.action_def(&rule.action);
        if def.is_none() {
            report.push(FindingCode::UnknownAction, format!("{path}.action"), format!("unknown action `{}`", rule.action));
        }
        if !ruled.insert(rule.action.as_str()) {
            report.push(FindingCode::DuplicateTransitionRule, format!("{path}.action"), format!("second rule for action `{}`", rule.action));
        }
        let own_params: Vec<&str> = def
            .map(|d| d.params.iter().map(|p| p.name.as_str()).collect())
            .unwrap_or_default();
        let known = |n: &str| is_var(n) || own_params.contains(&n);
        let mut assigned = HashSet::new();
        for (k, a) in rule.assignments.iter().enumerate() {
            let apath = format!("{path}.assignments[{k}]");
            if !is_var(&a.var) {
                report.push(FindingCode::UnknownStateVar, format!("{apath}.var"), format!("unknown state variable `{}`", a.var));
            }
            if !assigned.insert(a.var.as_str()) {
                report.push(FindingCode::DuplicateAssignment, format!("{apath}.var"), format!("`{}` assigned twice", a.var));
            }
            check_expr(&mut report, &a.expr, Type::Real, &known, format!("{apath}.expr"));
        }
    }

    let known_post = |n: &str| is_var(n) || n == STEP_IDENT || param_names.contains(&n);
    let mut metric_names = HashSet::new();
    for (i, m) in spec.reward_metrics.iter().enumerate() {
        let path = format!("reward_metrics[{i}]");
        check_name(&mut report, &m.name, format!("{path}.name"));
        if !metric_names.insert(m.name.as_str()) {
            report.push(FindingCode::DuplicateMetric, format!("{path}.name"), format!("duplicate metric `{}`", m.name));
        }
        if !m.weight.is_finite() {
            report.push(FindingCode::NonFiniteValue, format!("{path}.weight"), "weight must be finite");
        }
        check_expr(&mut report, &m.expr, Type::Real, &known_post, format!("{path}.expr"));
    }
    check_expr(&mut report, &spec.termination, Type::Bool, &known_post, "termination".into());

    let mut assigned = HashSet::new();
    for (name, value) in &spec.initial_state {
        let path = format!("initial_state.{name}");
        let Some(idx) = spec.var_index(name) else {
            report.push(FindingCode::InitialUnknownVar, path, format!("unknown state variable `{name}`"));
            continue;
        };
        if !assigned.insert(name.as_str()) {
            report.push(FindingCode::InitialDuplicate, path, format!("`{name}` assigned twice"));
            continue;
        }
        let var = &spec.state_vars[idx];
        if !value.is_finite() || *value < var.lower || *value > var.upper {
            report.push(
                FindingCode::InitialOutOfBounds,
                path.clone(),
                format!("{value} outside [{}, {}]", var.lower, var.upper),
            );
        }
        if var.kind == VarKind::Integer && value.fract() != 0.0 {
            report.push(FindingCode::InitialNotInteger, path, format!("{value} is not an integer"));
        }
    }
    for v in &spec.state_vars {
        if !assigned.contains(v.name.as_str()) {
            report.push(FindingCode::InitialMissing, "initial_state", format!("no initial value for `{}`", v.name));
        }
    }

    report
}
