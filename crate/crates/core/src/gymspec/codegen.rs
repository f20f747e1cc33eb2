//! Source generation for environment specs.
//!
//! The `python` backend emits a single self-contained module with a
//! gym-style `reset()` / `step(action)` environment class. When the
//! module is executed as a script it reads a JSON list of expanded-action
//! indices from stdin and prints the same trace document as
//! [`interpreter_trace`](super::interpreter_trace).

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::expr::{BinOp, Expr, Func};
use super::{GymSpec, VarKind, STEP_IDENT};

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("unknown code generation backend `{0}`")]
    UnknownBackend(String),
    #[error("spec is invalid: {0}")]
    InvalidSpec(super::ValidationReport),
    #[error("writing generated source: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Backend {
    fn name(&self) -> &'static str;
    fn file_extension(&self) -> &'static str;
    fn generate(&self, spec: &GymSpec) -> String;
}

pub fn backends() -> Vec<Box<dyn Backend>> {
    vec![Box::new(PythonGym)]
}

pub fn backend_names() -> Vec<&'static str> {
    backends().iter().map(|b| b.name()).collect()
}

pub fn generate_source(spec: &GymSpec, backend: &str) -> Result<String, CodegenError> {
    let backend = backends()
        .into_iter()
        .find(|b| b.name() == backend)
        .ok_or_else(|| CodegenError::UnknownBackend(backend.to_string()))?;
    let report = spec.validate();
    if !report.is_valid() {
        return Err(CodegenError::InvalidSpec(report));
    }
    Ok(backend.generate(spec))
}

/// Generates and writes the source to `path`.
pub fn write_source(spec: &GymSpec, backend: &str, path: &Path) -> Result<(), CodegenError> {
    let source = generate_source(spec, backend)?;
    std::fs::write(path, source)?;
    Ok(())
}

pub struct PythonGym;

fn py_float(v: f64) -> String {
    let s = format!("{v:?}");
    if v.is_sign_negative() {
        format!("({s})")
    } else {
        s
    }
}

fn py_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

struct PyNames<'a> {
    spec: &'a GymSpec,
}

impl PyNames<'_> {
    fn ident(&self, name: &str) -> String {
        if self.spec.var_index(name).is_some() {
            format!("v_{name}")
        } else if name == STEP_IDENT {
            "step_count".to_string()
        } else {
            format!("p_{name}")
        }
    }

    fn expr(&self, e: &Expr) -> String {
        match e {
            Expr::Num(v) => py_float(*v),
            Expr::Bool(true) => "True".into(),
            Expr::Bool(false) => "False".into(),
            Expr::Ident(name) => self.ident(name),
            Expr::Neg(inner) => format!("(-{})", self.expr(inner)),
            Expr::Not(inner) => format!("(not {})", self.expr(inner)),
            Expr::Binary { op, lhs, rhs } => {
                let (l, r) = (self.expr(lhs), self.expr(rhs));
                match op {
                    BinOp::Div => format!("_div({l}, {r})"),
                    op => format!("({l} {} {r})", op.symbol()),
                }
            }
            Expr::Call { func, args } => {
                let a: Vec<String> = args.iter().map(|x| self.expr(x)).collect();
                match func {
                    Func::If => format!("({} if {} else {})", a[1], a[0], a[2]),
                    Func::Abs => format!("abs({})", a[0]),
                    Func::Min => fold_call("min", &a),
                    Func::Max => fold_call("max", &a),
                }
            }
        }
    }
}

/// Pairwise nesting keeps argument evaluation order and tie behaviour
/// identical to the interpreter's left fold.
fn fold_call(name: &str, args: &[String]) -> String {
    let mut acc = args[0].clone();
    for a in &args[1..] {
        acc = format!("_{name}({acc}, {a})");
    }
    acc
}

impl Backend for PythonGym {
    fn name(&self) -> &'static str {
        "python"
    }

    fn file_extension(&self) -> &'static str {
        "py"
    }

    fn generate(&self, spec: &GymSpec) -> String {
        let names = PyNames { spec };
        let mut out = String::new();
        let class_name = class_name(&spec.name);
        let unpack = if spec.state_vars.len() == 1 {
            format!("{}, = s", names.ident(&spec.state_vars[0].name))
        } else {
            let vars: Vec<String> = spec.state_vars.iter().map(|v| names.ident(&v.name)).collect();
            format!("{} = s", vars.join(", "))
        };
        let all_params = spec.all_param_names();

        let _ = writeln!(out, "\"\"\"{} environment.", spec.name);
        if !spec.description.is_empty() {
            let _ = writeln!(out, "\n{}", spec.description.replace("\"\"\"", "'''"));
        }
        out.push_str(
            "\nGenerated from a declarative environment spec. The class follows the\n\
             gym reset()/step() convention; running this file as a script reads a\n\
             JSON list of action indices from stdin and prints a JSON trace.\n\"\"\"\n\n",
        );
        out.push_str("import json\nimport sys\n\n");
        out.push_str(
            "try:\n    import gymnasium as _gym\n    from gymnasium import spaces as _spaces\n    _Base = _gym.Env\nexcept ImportError:\n    _gym = None\n    _Base = object\n\n\n",
        );

        out.push_str("# (name, kind, lower, upper)\nSTATE_VARS = [\n");
        for v in &spec.state_vars {
            let kind = match v.kind {
                VarKind::Integer => "integer",
                VarKind::Real => "real",
            };
            let _ = writeln!(
                out,
                "    ({}, \"{kind}\", {}, {}),",
                py_string(&v.name),
                py_float(v.lower),
                py_float(v.upper)
            );
        }
        out.push_str("]\n\n# expanded action set: (label, declared action index, params)\nACTIONS = [\n");
        for a in spec.expand_actions() {
            let decl = spec.actions.iter().position(|d| d.name == a.name).unwrap_or(0);
            let params: Vec<String> = a
                .args
                .iter()
                .map(|(n, v)| format!("{}: {}", py_string(n), py_float(*v)))
                .collect();
            let _ = writeln!(out, "    ({}, {decl}, {{{}}}),", py_string(&a.label()), params.join(", "));
        }
        out.push_str("]\n\n");
        let init: Vec<String> = spec
            .initial_env_state()
            .values
            .iter()
            .map(|v| py_float(*v))
            .collect();
        let _ = writeln!(out, "INITIAL_STATE = [{}]", init.join(", "));
        let _ = writeln!(out, "MAX_STEPS = {}", spec.max_steps);
        let metric_names: Vec<String> = spec.reward_metrics.iter().map(|m| py_string(&m.name)).collect();
        let weights: Vec<String> = spec.reward_metrics.iter().map(|m| py_float(m.weight)).collect();
        let _ = writeln!(out, "METRIC_NAMES = [{}]", metric_names.join(", "));
        let _ = writeln!(out, "METRIC_WEIGHTS = [{}]\n\n", weights.join(", "));

        out.push_str(
            "class DivisionByZero(ArithmeticError):\n    pass\n\n\n\
             def _div(a, b):\n    if b == 0.0:\n        raise DivisionByZero()\n    return a / b\n\n\n\
             def _min(a, b):\n    return b if b < a else a\n\n\n\
             def _max(a, b):\n    return b if b > a else a\n\n\n\
             def _round_half_away(v):\n    t = float(int(v))\n    if abs(v - t) >= 0.5:\n        t += 1.0 if v > 0 else -1.0\n    return t\n\n\n\
             def _fit(value, index):\n    _, kind, lower, upper = STATE_VARS[index]\n    if kind == \"integer\":\n        value = _round_half_away(value)\n    return min(max(value, lower), upper)\n\n\n",
        );

        for (d, def) in spec.actions.iter().enumerate() {
            let _ = writeln!(out, "def _transition_{d}(s, p):");
            let _ = writeln!(out, "    \"\"\"{}\"\"\"", def.name);
            let _ = writeln!(out, "    {unpack}");
            for p in &def.params {
                let _ = writeln!(out, "    {} = p[{}]", names.ident(&p.name), py_string(&p.name));
            }
            let rule = spec.rule_for(&def.name);
            out.push_str("    return [\n");
            for (i, v) in spec.state_vars.iter().enumerate() {
                let assigned = rule.and_then(|r| r.assignments.iter().find(|a| a.var == v.name));
                match assigned {
                    Some(a) => {
                        let _ = writeln!(out, "        _fit({}, {i}),", names.expr(&a.expr));
                    }
                    None => {
                        let _ = writeln!(out, "        {},", names.ident(&v.name));
                    }
                }
            }
            out.push_str("    ]\n\n\n");
        }
        let _ = writeln!(out, "TRANSITIONS = [{}]\n\n", (0..spec.actions.len()).map(|d| format!("_transition_{d}")).collect::<Vec<_>>().join(", "));

        let bind_params = |out: &mut String| {
            for p in &all_params {
                let _ = writeln!(out, "    {} = p.get({}, 0.0)", names.ident(p), py_string(p));
            }
        };
        out.push_str("def _metrics(s, p, step_count):\n");
        let _ = writeln!(out, "    {unpack}");
        bind_params(&mut out);
        out.push_str("    return [\n");
        for m in &spec.reward_metrics {
            let _ = writeln!(out, "        {},", names.expr(&m.expr));
        }
        out.push_str("    ]\n\n\n");
        out.push_str("def _terminated(s, p, step_count):\n");
        let _ = writeln!(out, "    {unpack}");
        bind_params(&mut out);
        let _ = writeln!(out, "    return bool({})\n\n", names.expr(&spec.termination));

        let _ = write!(
            out,
            r#"class {class_name}(_Base):
    metadata = {{"render_modes": []}}

    def __init__(self):
        self.state = list(INITIAL_STATE)
        self.steps = 0
        self.done = False
        if _gym is not None:
            import numpy as _np
            self.action_space = _spaces.Discrete(len(ACTIONS))
            self.observation_space = _spaces.Box(
                low=_np.array([v[2] for v in STATE_VARS], dtype=_np.float64),
                high=_np.array([v[3] for v in STATE_VARS], dtype=_np.float64),
                dtype=_np.float64,
            )

    def reset(self, seed=None, options=None):
        self.state = list(INITIAL_STATE)
        self.steps = 0
        self.done = False
        return list(self.state), {{}}

    def step(self, action):
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        if not 0 <= action < len(ACTIONS):
            raise ValueError("unknown action %r" % (action,))
        _, decl, params = ACTIONS[action]
        new_state = TRANSITIONS[decl](self.state, params)
        step_count = float(self.steps + 1)
        values = _metrics(new_state, params, step_count)
        reward = 0.0
        for weight, value in zip(METRIC_WEIGHTS, values):
            reward += weight * value
        terminated = _terminated(new_state, params, step_count)
        truncated = (not terminated) and self.steps + 1 >= MAX_STEPS
        self.state = new_state
        self.steps += 1
        self.done = terminated or truncated
        info = {{"metrics": dict(zip(METRIC_NAMES, values))}}
        return list(new_state), reward, terminated, truncated, info


def trace(actions):
    env = {class_name}()
    state, _ = env.reset()
    out = [{{"kind": "reset", "state": state}}]
    for a in actions:
        if env.done:
            state, _ = env.reset()
            out.append({{"kind": "reset", "state": state}})
        if not 0 <= a < len(ACTIONS):
            out.append({{"kind": "error", "action": a, "error": "unknown_action"}})
            continue
        try:
            state, reward, terminated, truncated, _ = env.step(a)
        except DivisionByZero:
            out.append({{"kind": "error", "action": a, "error": "division_by_zero"}})
            env.done = True
            continue
        out.append({{
            "kind": "step",
            "action": a,
            "state": state,
            "reward": reward,
            "terminated": terminated,
            "truncated": truncated,
        }})
    return out


if __name__ == "__main__":
    json.dump(trace(json.load(sys.stdin)), sys.stdout)
    sys.stdout.write("\n")
"#
        );
        out
    }
}

fn class_name(spec_name: &str) -> String {
    let mut out = String::new();
    for part in spec_name.split(|c: char| !c.is_ascii_alphanumeric()).filter(|p| !p.is_empty()) {
        let mut chars = part.chars();
        if let Some(c) = chars.next() {
            out.push(c.to_ascii_uppercase());
            out.extend(chars);
        }
    }
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert_str(0, "Spec");
    }
    out.push_str("Env");
    out
}
