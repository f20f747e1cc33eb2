//! Support for the acceptance run: a criterion runner that prints one
//! line per check, and exact oracles for deterministic gym specs.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use autodo_core::engine::protocol::state_key;
use autodo_core::engine::TrainedAgent;
use autodo_core::gymspec::GymSpec;

pub struct Criterion {
    pub number: u32,
    pub title: &'static str,
    pub limit: Option<Duration>,
    pub check: fn() -> Result<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub number: u32,
    pub passed: bool,
    pub line: String,
}

/// Runs one criterion, turning panics and overruns into failures.
pub fn run(c: &Criterion) -> Outcome {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let elapsed = started.elapsed();
    let result = match (result, c.limit) {
        (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs_f64())),
        (r, _) => r,
    };
    let limit = c.limit.map(|l| format!(", limit {} s", l.as_secs_f64())).unwrap_or_default();
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        number: c.number,
        passed,
        line: format!(
            "{} [{:>2}] {} ({:.2} s{limit}): {detail}",
            if passed { "PASS" } else { "FAIL" },
            c.number,
            c.title,
            elapsed.as_secs_f64(),
        ),
    }
}

/// Reachable state graph of a deterministic spec: per state and action,
/// the reward, successor index and whether the step terminates.
pub struct Model {
    pub states: Vec<Vec<f64>>,
    pub edges: Vec<Vec<(f64, usize, bool)>>,
}

impl Model {
    pub fn explore(spec: &GymSpec) -> Model {
        let actions = spec.expand_actions();
        let start = spec.reset().expect("spec resets");
        let mut states = vec![start.values.clone()];
        let mut index = HashMap::from([(state_key(&start.values), 0usize)]);
        let mut edges: BTreeMap<usize, Vec<(f64, usize, bool)>> = BTreeMap::new();
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let mut s = start.clone();
            s.values = states[i].clone();
            let mut out = Vec::new();
            for a in &actions {
                let o = spec.step(&s, a).expect("deterministic step");
                let key = state_key(&o.state.values);
                let j = *index.entry(key).or_insert_with(|| {
                    states.push(o.state.values.clone());
                    if !o.terminated {
                        queue.push_back(states.len() - 1);
                    }
                    states.len() - 1
                });
                out.push((o.reward, j, o.terminated));
            }
            edges.insert(i, out);
        }
        let edges = (0..states.len()).map(|i| edges.remove(&i).unwrap_or_default()).collect();
        Model { states, edges }
    }

    /// Optimal values by value iteration to machine precision.
    pub fn optimal_values(&self, gamma: f64) -> Vec<f64> {
        self.sweep(gamma, |s| (0..self.edges[s].len()).collect())
    }

    /// Exact values of the agent's greedy policy.
    pub fn policy_values(&self, gamma: f64, agent: &TrainedAgent) -> Vec<f64> {
        self.sweep(gamma, |s| vec![agent.greedy_action(&self.states[s]).expect("greedy agent")])
    }

    fn sweep(&self, gamma: f64, choices: impl Fn(usize) -> Vec<usize>) -> Vec<f64> {
        let choices: Vec<Vec<usize>> = (0..self.states.len()).map(choices).collect();
        let mut v = vec![0.0; self.states.len()];
        for _ in 0..100_000 {
            let mut delta: f64 = 0.0;
            for s in 0..v.len() {
                if self.edges[s].is_empty() {
                    continue;
                }
                let best = choices[s]
                    .iter()
                    .map(|&a| {
                        let (r, j, t) = self.edges[s][a];
                        r + if t { 0.0 } else { gamma * v[j] }
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < 1e-15 {
                break;
            }
        }
        v
    }
}
