//! Offline `(s, a, r, s′)` tuple datasets and the empirical model they induce.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::protocol::state_key;
use crate::gymspec::{GymSpec, StepError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub s: Vec<f64>,
    pub a: u32,
    pub r: f64,
    pub sp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleDataset {
    arity: usize,
    rows: Vec<Tuple>,
    /// Action names by id when known.
    #[serde(default)]
    action_names: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("row {row}: expected {expected} state values, found {found}")]
    Arity { row: usize, expected: usize, found: usize },
    #[error("row {row}: non-finite value")]
    NonFinite { row: usize },
    #[error("dataset file: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("reachable state space exceeds {0} states")]
    TooLarge(usize),
    #[error("spec is invalid")]
    InvalidSpec,
    #[error(transparent)]
    Step(#[from] StepError),
}

impl TupleDataset {
    pub fn new(rows: Vec<Tuple>) -> Result<TupleDataset, DatasetError> {
        let first = rows.first().ok_or(DatasetError::Empty)?;
        let arity = first.s.len();
        for (i, t) in rows.iter().enumerate() {
            for v in [&t.s, &t.sp] {
                if v.len() != arity {
                    return Err(DatasetError::Arity {
                        row: i,
                        expected: arity,
                        found: v.len(),
                    });
                }
            }
            if !t.r.is_finite() || t.s.iter().chain(&t.sp).any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row: i });
            }
        }
        Ok(TupleDataset {
            arity,
            rows,
            action_names: Vec::new(),
        })
    }

    pub fn with_action_names(mut self, names: Vec<String>) -> TupleDataset {
        self.action_names = names;
        self
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn rows(&self) -> &[Tuple] {
        &self.rows
    }

    pub fn n_actions(&self) -> usize {
        let max = self.rows.iter().map(|t| t.a as usize + 1).max().unwrap_or(0);
        max.max(self.action_names.len())
    }

    pub fn action_name(&self, a: u32) -> String {
        self.action_names
            .get(a as usize)
            .cloned()
            .unwrap_or_else(|| format!("a{a}"))
    }

    /// Every transition of every state reachable from the spec's initial
    /// state, one tuple per (state, concrete action). Terminal states get
    /// no outgoing tuples. The episode horizon is ignored and expressions
    /// see `step = 1`.
    pub fn exhaustive(spec: &GymSpec, max_states: usize) -> Result<TupleDataset, DatasetError> {
        let start = spec.reset().map_err(|_| DatasetError::InvalidSpec)?;
        let actions = spec.expand_actions();
        let mut seen: HashMap<Vec<i64>, ()> = HashMap::new();
        let mut queue = VecDeque::new();
        seen.insert(state_key(&start.values), ());
        queue.push_back(start);
        let mut rows = Vec::new();
        while let Some(mut state) = queue.pop_front() {
            state.step = 0;
            for action in &actions {
                let out = spec.step(&state, action)?;
                rows.push(Tuple {
                    s: state.values.clone(),
                    a: action.index as u32,
                    r: out.reward,
                    sp: out.state.values.clone(),
                });
                if !out.terminated && seen.insert(state_key(&out.state.values), ()).is_none() {
                    if seen.len() > max_states {
                        return Err(DatasetError::TooLarge(max_states));
                    }
                    let mut next = out.state;
                    next.done = false;
                    queue.push_back(next);
                }
            }
        }
        Ok(TupleDataset::new(rows)?.with_action_names(actions.iter().map(|a| a.label()).collect()))
    }

    /// CSV with header `s_0..s_{n-1},a,r,sp_0..sp_{n-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.arity).map(|i| format!("s_{i}")).collect();
        header.push("a".into());
        header.push("r".into());
        header.extend((0..self.arity).map(|i| format!("sp_{i}")));
        w.write_record(&header)?;
        for t in &self.rows {
            let mut rec: Vec<String> = t.s.iter().map(|v| v.to_string()).collect();
            rec.push(t.a.to_string());
            rec.push(t.r.to_string());
            rec.extend(t.sp.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<TupleDataset, DatasetError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 2 || (header.len() - 2) % 2 != 0 {
            return Err(DatasetError::Format("header must be s_*, a, r, sp_*".into()));
        }
        let n = (header.len() - 2) / 2;
        let mut expected: Vec<String> = (0..n).map(|i| format!("s_{i}")).collect();
        expected.push("a".into());
        expected.push("r".into());
        expected.extend((0..n).map(|i| format!("sp_{i}")));
        for (i, e) in expected.iter().enumerate() {
            if &header[i] != e {
                return Err(DatasetError::Format(format!("column {i} must be `{e}`")));
            }
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64, DatasetError> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| DatasetError::Format(format!("row {}: `{}` is not a number", line + 2, &rec[i])))
            };
            rows.push(Tuple {
                s: (0..n).map(num).collect::<Result<_, _>>()?,
                a: rec[n].parse::<u32>().map_err(|_| {
                    DatasetError::Format(format!("row {}: action `{}` is not an id", line + 2, &rec[n]))
                })?,
                r: num(n + 1)?,
                sp: (0..n).map(|i| num(n + 2 + i)).collect::<Result<_, _>>()?,
            });
        }
        TupleDataset::new(rows)
    }
}

/// One observed outcome of a (state, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    pub next: Vec<i64>,
    pub count: u32,
}

/// Count-based model of a dataset. States are keyed by [`state_key`]; a
/// state with no outgoing tuples is terminal.
#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    pub n_actions: usize,
    pub start: Vec<i64>,
    /// Representative vector of each state key.
    pub vectors: HashMap<Vec<i64>, Vec<f64>>,
    /// Outcomes per state and action in first-appearance order.
    pub outcomes: BTreeMap<Vec<i64>, BTreeMap<u32, Vec<Outcome>>>,
}

impl EmpiricalModel {
    pub fn new(data: &TupleDataset) -> EmpiricalModel {
        let mut vectors = HashMap::new();
        let mut outcomes: BTreeMap<Vec<i64>, BTreeMap<u32, Vec<Outcome>>> = BTreeMap::new();
        for t in data.rows() {
            let s = state_key(&t.s);
            let sp = state_key(&t.sp);
            vectors.entry(s.clone()).or_insert_with(|| t.s.clone());
            vectors.entry(sp.clone()).or_insert_with(|| t.sp.clone());
            let list = outcomes.entry(s).or_default().entry(t.a).or_default();
            match list.iter_mut().find(|o| o.next == sp && o.reward == t.r) {
                Some(o) => o.count += 1,
                None => list.push(Outcome {
                    reward: t.r,
                    next: sp,
                    count: 1,
                }),
            }
        }
        EmpiricalModel {
            n_actions: data.n_actions(),
            start: state_key(&data.rows()[0].s),
            vectors,
            outcomes,
        }
    }

    pub fn is_terminal(&self, s: &[i64]) -> bool {
        !self.outcomes.contains_key(s)
    }

    pub fn available(&self, s: &[i64]) -> Vec<u32> {
        self.outcomes
            .get(s)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }
}
