//! Tabular agents: training and greedy evaluation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{EmpiricalModel, TupleDataset};
use super::protocol::{assign_labels, state_key, EvaluationProtocol, ProtocolStep};
use super::{AgentKind, PipelineCandidate, TrainError};
use crate::gymspec::{ConcreteAction, EnvState, GymSpec, VarKind};

/// Where an agent gets its experience from.
#[derive(Debug, Clone, Copy)]
pub enum DataSource<'a> {
    Gym(&'a GymSpec),
    Dataset(&'a TupleDataset),
}

impl DataSource<'_> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DataSource::Gym(_) => "a gym spec",
            DataSource::Dataset(_) => "a tuple dataset",
        }
    }
}

/// Maps state vectors onto a finite grid of bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    /// Per variable: (lower, upper, bin count, integer-valued).
    vars: Vec<(f64, f64, usize, bool)>,
}

impl Discretizer {
    /// Integer variables get one bin per value; real variables get `bins`
    /// equal-width bins over their bounds.
    pub fn for_spec(spec: &GymSpec, bins: usize) -> Result<Discretizer, TrainError> {
        let mut vars = Vec::with_capacity(spec.state_vars.len());
        for v in &spec.state_vars {
            if !v.lower.is_finite() || !v.upper.is_finite() {
                return Err(TrainError::NonDiscretizableState(v.name.clone()));
            }
            match v.kind {
                VarKind::Integer => {
                    let n = (v.upper - v.lower) as usize + 1;
                    vars.push((v.lower, v.upper, n, true));
                }
                VarKind::Real => {
                    if bins == 0 {
                        return Err(TrainError::NonDiscretizableState(v.name.clone()));
                    }
                    vars.push((v.lower, v.upper, bins, false));
                }
            }
        }
        Ok(Discretizer { vars })
    }

    pub fn bin(&self, values: &[f64]) -> Vec<i64> {
        self.vars
            .iter()
            .zip(values)
            .map(|(&(lo, hi, n, integer), &x)| {
                let b = if integer {
                    (x - lo).round()
                } else if hi > lo {
                    ((x - lo) / (hi - lo) * n as f64).floor()
                } else {
                    0.0
                };
                b.clamp(0.0, (n - 1) as f64) as i64
            })
            .collect()
    }

    pub fn cell_count(&self) -> f64 {
        self.vars.iter().map(|v| v.2 as f64).product()
    }
}

/// How a state vector becomes a Q-table key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StateKeying {
    Bins(Discretizer),
    /// Exact identity under nine-decimal rounding.
    Exact,
}

impl StateKeying {
    pub fn key(&self, values: &[f64]) -> Vec<i64> {
        match self {
            StateKeying::Bins(d) => d.bin(values),
            StateKeying::Exact => state_key(values),
        }
    }
}

/// Sparse action-value table. Missing rows read as all zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QTable {
    pub n_actions: usize,
    #[serde(with = "entries")]
    pub rows: BTreeMap<Vec<i64>, Vec<f64>>,
}

mod entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<Vec<i64>, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Vec<i64>, Vec<f64>>, D::Error> {
        Ok(Vec::<(Vec<i64>, Vec<f64>)>::deserialize(d)?.into_iter().collect())
    }
}

impl QTable {
    pub fn new(n_actions: usize) -> QTable {
        QTable {
            n_actions,
            rows: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, key: &[i64], a: usize) -> f64 {
        self.rows.get(key).map_or(0.0, |r| r[a])
    }

    fn row_mut(&mut self, key: &[i64]) -> &mut Vec<f64> {
        if !self.rows.contains_key(key) {
            self.rows.insert(key.to_vec(), vec![0.0; self.n_actions]);
        }
        self.rows.get_mut(key).expect("row inserted above")
    }

    pub fn max(&self, key: &[i64]) -> f64 {
        match self.rows.get(key) {
            Some(r) => r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            None => 0.0,
        }
    }

    /// Greedy action, ties to the lowest index; action 0 for unseen states.
    pub fn argmax(&self, key: &[i64]) -> usize {
        match self.rows.get(key) {
            Some(r) => argmax(r),
            None => 0,
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Policy {
    /// Uniform over the available actions.
    Random,
    Greedy { keying: StateKeying, q: QTable },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAgent {
    pub kind: AgentKind,
    pub policy: Policy,
    pub n_actions: usize,
}

impl TrainedAgent {
    pub fn q_table(&self) -> Option<&QTable> {
        match &self.policy {
            Policy::Random => None,
            Policy::Greedy { q, .. } => Some(q),
        }
    }

    /// Greedy action for a state vector. `None` for the random policy.
    pub fn greedy_action(&self, values: &[f64]) -> Option<usize> {
        match &self.policy {
            Policy::Random => None,
            Policy::Greedy { keying, q } => Some(q.argmax(&keying.key(values))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub agent: TrainedAgent,
    /// Per-episode total reward (online) or per-iteration residual (offline).
    pub series: Vec<f64>,
    pub train_steps: u64,
}

/// Episode length of random-policy rollouts in a dataset's empirical model.
const RANDOM_ROLLOUT_HORIZON: u32 = 100;

/// Trains `candidate` on `source`. Deterministic under `seed`.
pub fn train(
    source: DataSource<'_>,
    candidate: &PipelineCandidate,
    episodes: usize,
    seed: u64,
) -> Result<TrainOutput, TrainError> {
    let incompatible = || TrainError::IncompatibleDataSource {
        agent: candidate.agent,
        source_kind: source.kind_name(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match (candidate.agent, source) {
        (AgentKind::FittedQ, DataSource::Dataset(data)) => Ok(fitted_q(data, candidate)),
        (AgentKind::FittedQ, DataSource::Gym(_)) => Err(incompatible()),
        (AgentKind::RandomPolicy, DataSource::Gym(spec)) => {
            check_spec(spec)?;
            let actions = spec.expand_actions();
            let mut series = Vec::with_capacity(episodes);
            let mut steps = 0;
            for _ in 0..episodes {
                let mut state = spec.initial_env_state();
                let mut total = 0.0;
                while !state.done {
                    let a = rng.gen_range(0..actions.len());
                    let out = spec.step(&state, &actions[a])?;
                    total += out.reward;
                    steps += 1;
                    state = out.state;
                }
                series.push(total);
            }
            Ok(TrainOutput {
                agent: TrainedAgent {
                    kind: AgentKind::RandomPolicy,
                    policy: Policy::Random,
                    n_actions: actions.len(),
                },
                series,
                train_steps: steps,
            })
        }
        (AgentKind::RandomPolicy, DataSource::Dataset(data)) => {
            let model = EmpiricalModel::new(data);
            let agent = TrainedAgent {
                kind: AgentKind::RandomPolicy,
                policy: Policy::Random,
                n_actions: model.n_actions,
            };
            let mut series = Vec::with_capacity(episodes);
            let mut steps = 0;
            for _ in 0..episodes {
                let rows = rollout(&model, &agent, RANDOM_ROLLOUT_HORIZON, &mut rng);
                steps += rows.len() as u64;
                series.push(rows.iter().map(|r| r.1).sum());
            }
            Ok(TrainOutput {
                agent,
                series,
                train_steps: steps,
            })
        }
        (_, DataSource::Dataset(_)) => Err(incompatible()),
        (kind, DataSource::Gym(spec)) => online(spec, kind, candidate, episodes, &mut rng),
    }
}

fn check_spec(spec: &GymSpec) -> Result<(), TrainError> {
    let report = spec.validate();
    if report.is_valid() {
        Ok(())
    } else {
        Err(TrainError::InvalidSpec(
            report
                .findings
                .iter()
                .map(|f| format!("{}: {}", f.path, f.message))
                .collect::<Vec<_>>()
                .join("; "),
        ))
    }
}

fn epsilon_greedy(q: &QTable, key: &[i64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.n_actions)
    } else {
        q.argmax(key)
    }
}

fn online(
    spec: &GymSpec,
    kind: AgentKind,
    candidate: &PipelineCandidate,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutput, TrainError> {
    check_spec(spec)?;
    let gamma = candidate.float("gamma", 0.95);
    let alpha = candidate.float("alpha", 0.1);
    let epsilon = candidate.float("epsilon", 0.1);
    let bins = candidate.int("bins", 10).max(0) as usize;
    let planning = candidate.int("planning_steps", 10).max(0) as usize;
    let discretizer = Discretizer::for_spec(spec, bins)?;
    let actions = spec.expand_actions();
    let mut q = QTable::new(actions.len());
    // deterministic model for planning: (s, a) -> (r, s', terminated)
    let mut model: BTreeMap<(Vec<i64>, usize), (f64, Vec<i64>, bool)> = BTreeMap::new();
    let mut visited: Vec<(Vec<i64>, usize)> = Vec::new();
    let mut series = Vec::with_capacity(episodes);
    let mut steps = 0u64;

    for _ in 0..episodes {
        let mut state = spec.initial_env_state();
        let mut key = discretizer.bin(&state.values);
        let mut a = epsilon_greedy(&q, &key, epsilon, rng);
        let mut total = 0.0;
        while !state.done {
            let out = spec.step(&state, &actions[a])?;
            steps += 1;
            total += out.reward;
            let next = discretizer.bin(&out.state.values);
            let next_a = epsilon_greedy(&q, &next, epsilon, rng);
            let bootstrap = if out.terminated {
                0.0
            } else if kind == AgentKind::Sarsa {
                q.get(&next, next_a)
            } else {
                q.max(&next)
            };
            let target = out.reward + gamma * bootstrap;
            let cell = &mut q.row_mut(&key)[a];
            *cell += alpha * (target - *cell);

            if kind == AgentKind::DynaQ {
                let sa = (key.clone(), a);
                if model.insert(sa.clone(), (out.reward, next.clone(), out.terminated)).is_none() {
                    visited.push(sa);
                }
                for _ in 0..planning {
                    let (ps, pa) = &visited[rng.gen_range(0..visited.len())];
                    let (r, sp, term) = &model[&(ps.clone(), *pa)];
                    let target = r + if *term { 0.0 } else { gamma * q.max(sp) };
                    let cell = &mut q.row_mut(ps)[*pa];
                    *cell += alpha * (target - *cell);
                }
            }
            state = out.state;
            key = next;
            a = next_a;
        }
        series.push(total);
    }
    Ok(TrainOutput {
        agent: TrainedAgent {
            kind,
            policy: Policy::Greedy {
                keying: StateKeying::Bins(discretizer),
                q,
            },
            n_actions: actions.len(),
        },
        series,
        train_steps: steps,
    })
}

/// Fitted Q iteration on the dataset's empirical model. Unobserved
/// (state, action) pairs are never chosen; terminal states are worth 0.
fn fitted_q(data: &TupleDataset, candidate: &PipelineCandidate) -> TrainOutput {
    let gamma = candidate.float("gamma", 0.95);
    let max_iter = candidate.int("max_iterations", 2000).max(1) as usize;
    let model = EmpiricalModel::new(data);
    let n = model.n_actions;
    let mut q = QTable::new(n);
    for (s, acts) in &model.outcomes {
        let row = q.row_mut(s);
        row.fill(f64::NEG_INFINITY);
        for a in acts.keys() {
            row[*a as usize] = 0.0;
        }
    }
    let value = |q: &QTable, s: &[i64]| -> f64 {
        if model.is_terminal(s) {
            0.0
        } else {
            q.max(s)
        }
    };
    let mut series = Vec::new();
    let mut sweeps = 0u64;
    for _ in 0..max_iter {
        let mut next = q.clone();
        let mut residual: f64 = 0.0;
        for (s, acts) in &model.outcomes {
            for (a, outs) in acts {
                let total: u32 = outs.iter().map(|o| o.count).sum();
                let target: f64 = outs
                    .iter()
                    .map(|o| o.count as f64 * (o.reward + gamma * value(&q, &o.next)))
                    .sum::<f64>()
                    / total as f64;
                let old = q.get(s, *a as usize);
                residual = residual.max((target - old).abs());
                next.row_mut(s)[*a as usize] = target;
            }
        }
        q = next;
        sweeps += 1;
        series.push(residual);
        if residual < 1e-12 {
            break;
        }
    }
    TrainOutput {
        agent: TrainedAgent {
            kind: AgentKind::FittedQ,
            policy: Policy::Greedy {
                keying: StateKeying::Exact,
                q,
            },
            n_actions: n,
        },
        series,
        train_steps: sweeps * data.rows().len() as u64,
    }
}

fn choose(agent: &TrainedAgent, values: &[f64], n_actions: usize, rng: &mut ChaCha8Rng) -> usize {
    match agent.greedy_action(values) {
        Some(a) => a,
        None => rng.gen_range(0..n_actions),
    }
}

/// Runs `episodes` evaluation episodes on the spec. The agent acts greedily
/// with ties to the lowest index; the random policy draws uniformly under
/// `seed`. A step error ends its episode and marks it failed.
pub fn evaluate(spec: &GymSpec, agent: &TrainedAgent, episodes: usize, seed: u64) -> Vec<EvaluationProtocol> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = spec.expand_actions();
    let names: Vec<String> = spec.state_vars.iter().map(|v| v.name.clone()).collect();
    let mut out = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut p = EvaluationProtocol {
            episode: episode as u32,
            rows: Vec::new(),
            failed: None,
            state_names: names.clone(),
        };
        let mut state: EnvState = spec.initial_env_state();
        let mut cumulative = 0.0;
        while !state.done {
            let a = choose(agent, &state.values, actions.len(), &mut rng).min(actions.len() - 1);
            let action: &ConcreteAction = &actions[a];
            match spec.step(&state, action) {
                Ok(o) => {
                    cumulative += o.reward;
                    p.rows.push(ProtocolStep {
                        step: o.state.step,
                        action: action.label(),
                        action_label: String::new(),
                        state_label: String::new(),
                        state: o.state.values.clone(),
                        reward: cumulative,
                        delta_reward: o.reward,
                    });
                    state = o.state;
                }
                Err(e) => {
                    p.failed = Some(e.to_string());
                    break;
                }
            }
        }
        out.push(p);
    }
    assign_labels(&mut out);
    out
}

/// One rollout in the empirical model: (action, reward, next state key).
fn rollout(
    model: &EmpiricalModel,
    agent: &TrainedAgent,
    horizon: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<(u32, f64, Vec<i64>)> {
    let mut s = model.start.clone();
    let mut rows = Vec::new();
    for _ in 0..horizon {
        let available = model.available(&s);
        if available.is_empty() {
            break;
        }
        let a = match agent.greedy_action(&model.vectors[&s]) {
            Some(a) if available.contains(&(a as u32)) => a as u32,
            Some(_) => available[0],
            None => available[rng.gen_range(0..available.len())],
        };
        let outs = &model.outcomes[&s][&a];
        let total: u32 = outs.iter().map(|o| o.count).sum();
        let mut pick = rng.gen_range(0..total);
        let mut chosen = &outs[0];
        for o in outs {
            if pick < o.count {
                chosen = o;
                break;
            }
            pick -= o.count;
        }
        rows.push((a, chosen.reward, chosen.next.clone()));
        s = chosen.next.clone();
    }
    rows
}

/// Evaluation by rollouts in the dataset's empirical model from the first
/// row's state, for at most `horizon` steps. Outcomes are sampled by count.
pub fn evaluate_offline(
    data: &TupleDataset,
    agent: &TrainedAgent,
    episodes: usize,
    horizon: u32,
    seed: u64,
) -> Vec<EvaluationProtocol> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = EmpiricalModel::new(data);
    let names: Vec<String> = (0..data.arity()).map(|i| format!("s_{i}")).collect();
    let mut out = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut cumulative = 0.0;
        let rows = rollout(&model, agent, horizon, &mut rng)
            .into_iter()
            .enumerate()
            .map(|(t, (a, r, next))| {
                cumulative += r;
                ProtocolStep {
                    step: t as u32 + 1,
                    action: data.action_name(a),
                    action_label: String::new(),
                    state_label: String::new(),
                    state: model.vectors[&next].clone(),
                    reward: cumulative,
                    delta_reward: r,
                }
            })
            .collect();
        out.push(EvaluationProtocol {
            episode: episode as u32,
            rows,
            failed: None,
            state_names: names.clone(),
        });
    }
    assign_labels(&mut out);
    out
}
