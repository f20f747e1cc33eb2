//! Evaluation protocols: one row per greedy step of an evaluation episode.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One row of an evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStep {
    pub step: u32,
    /// Concrete action name, e.g. `bake_bread(batches=2)`.
    pub action: String,
    pub action_label: String,
    pub state_label: String,
    /// State after the step. Empty when only labels are known.
    pub state: Vec<f64>,
    /// Cumulative reward up to and including this step.
    pub reward: f64,
    pub delta_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationProtocol {
    pub episode: u32,
    pub rows: Vec<ProtocolStep>,
    /// Set when a step error aborted the episode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
    #[serde(default)]
    pub state_names: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("protocol file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WellFormedError {
    #[error("episode {episode}: step {found} follows step {previous}")]
    StepGap { episode: u32, previous: u32, found: u32 },
    #[error("episode {episode}, step {step}: delta {delta} does not match cumulative reward")]
    Delta { episode: u32, step: u32, delta: f64 },
    #[error("label {label} appears before {expected}")]
    LabelOrder { label: String, expected: String },
}

/// Canonical identity of a state vector: components rounded to nine decimals.
pub fn state_key(values: &[f64]) -> Vec<i64> {
    values
        .iter()
        .map(|v| {
            let scaled = (v * 1e9).round();
            if scaled.is_nan() {
                i64::MIN
            } else {
                scaled as i64
            }
        })
        .collect()
}

impl EvaluationProtocol {
    /// Builds a protocol from labels and cumulative rewards alone, the shape
    /// in which protocols are usually reported. Deltas are recomputed; the
    /// first row's delta is its cumulative reward.
    pub fn from_labels(
        episode: u32,
        first_step: u32,
        actions: &[&str],
        states: &[&str],
        cumulative: &[f64],
    ) -> EvaluationProtocol {
        assert!(actions.len() == states.len() && states.len() == cumulative.len());
        let rows = (0..actions.len())
            .map(|i| ProtocolStep {
                step: first_step + i as u32,
                action: actions[i].to_string(),
                action_label: actions[i].to_string(),
                state_label: states[i].to_string(),
                state: Vec::new(),
                reward: cumulative[i],
                delta_reward: 0.0,
            })
            .collect();
        let mut p = EvaluationProtocol {
            episode,
            rows,
            failed: None,
            state_names: Vec::new(),
        };
        p.recompute_deltas();
        p
    }

    pub fn recompute_deltas(&mut self) {
        let mut previous = 0.0;
        for row in &mut self.rows {
            row.delta_reward = row.reward - previous;
            previous = row.reward;
        }
    }

    /// Total reward of the episode: the last cumulative reward.
    pub fn total_reward(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.reward)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks step contiguity and the delta rule for rows after the first.
    pub fn check(&self) -> Result<(), WellFormedError> {
        for w in self.rows.windows(2) {
            if w[1].step != w[0].step + 1 {
                return Err(WellFormedError::StepGap {
                    episode: self.episode,
                    previous: w[0].step,
                    found: w[1].step,
                });
            }
            let expected = w[1].reward - w[0].reward;
            if (w[1].delta_reward - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(WellFormedError::Delta {
                    episode: self.episode,
                    step: w[1].step,
                    delta: w[1].delta_reward,
                });
            }
        }
        Ok(())
    }
}

/// Assigns `S1, S2, …` and `A1, A2, …` by first appearance across all
/// protocols. States with a vector are identified by [`state_key`]; states
/// without one keep their identity through their existing label.
pub fn assign_labels(protocols: &mut [EvaluationProtocol]) {
    let mut states: HashMap<StateIdentity, String> = HashMap::new();
    let mut actions: HashMap<String, String> = HashMap::new();
    for p in protocols.iter_mut() {
        for row in &mut p.rows {
            let id = StateIdentity::of(row);
            let n = states.len() + 1;
            row.state_label = states.entry(id).or_insert_with(|| format!("S{n}")).clone();
            let n = actions.len() + 1;
            row.action_label = actions
                .entry(row.action.clone())
                .or_insert_with(|| format!("A{n}"))
                .clone();
        }
    }
}

/// Checks that labels follow first-appearance numbering.
pub fn check_labels(protocols: &[EvaluationProtocol]) -> Result<(), WellFormedError> {
    let mut seen_s: HashMap<&str, ()> = HashMap::new();
    let mut seen_a: HashMap<&str, ()> = HashMap::new();
    for row in protocols.iter().flat_map(|p| &p.rows) {
        for (label, seen, prefix) in [
            (&row.state_label, &mut seen_s, 'S'),
            (&row.action_label, &mut seen_a, 'A'),
        ] {
            if !seen.contains_key(label.as_str()) {
                let expected = format!("{prefix}{}", seen.len() + 1);
                if *label != expected {
                    return Err(WellFormedError::LabelOrder {
                        label: label.clone(),
                        expected,
                    });
                }
                seen.insert(label, ());
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) enum StateIdentity {
    Vector(Vec<i64>),
    Label(String),
}

impl StateIdentity {
    pub(crate) fn of(row: &ProtocolStep) -> StateIdentity {
        if row.state.is_empty() {
            StateIdentity::Label(row.state_label.clone())
        } else {
            StateIdentity::Vector(state_key(&row.state))
        }
    }
}

/// Writes protocols as CSV with header
/// `episode,step,action,reward,delta_reward,s_0..s_{n-1}`.
pub fn write_csv<W: Write>(protocols: &[EvaluationProtocol], out: W) -> Result<(), ProtocolError> {
    let arity = protocols
        .iter()
        .flat_map(|p| p.rows.iter())
        .map(|r| r.state.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["episode", "step", "action", "reward", "delta_reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..arity).map(|i| format!("s_{i}")));
    w.write_record(&header)?;
    for p in protocols {
        for row in &p.rows {
            if row.state.len() != arity {
                return Err(ProtocolError::Format(format!(
                    "episode {} step {} has {} state values, expected {arity}",
                    p.episode,
                    row.step,
                    row.state.len()
                )));
            }
            let mut rec = vec![
                p.episode.to_string(),
                row.step.to_string(),
                row.action.clone(),
                row.reward.to_string(),
                row.delta_reward.to_string(),
            ];
            rec.extend(row.state.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads the CSV written by [`write_csv`]. Rows are grouped by episode in
/// file order and labels are recomputed.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<EvaluationProtocol>, ProtocolError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    let fixed = ["episode", "step", "action", "reward", "delta_reward"];
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(ProtocolError::Format(format!("column {i} must be `{name}`")));
        }
    }
    let arity = header.len() - fixed.len();
    for i in 0..arity {
        let expected = format!("s_{i}");
        if header.get(fixed.len() + i) != Some(expected.as_str()) {
            return Err(ProtocolError::Format(format!("column {} must be `{expected}`", fixed.len() + i)));
        }
    }
    let names: Vec<String> = (0..arity).map(|i| format!("s_{i}")).collect();
    let mut out: Vec<EvaluationProtocol> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, ProtocolError> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| ProtocolError::Format(format!("row {}: `{}` is not a number", line + 2, &rec[i])))
        };
        let int = |i: usize| -> Result<u32, ProtocolError> {
            rec[i]
                .parse::<u32>()
                .map_err(|_| ProtocolError::Format(format!("row {}: `{}` is not an integer", line + 2, &rec[i])))
        };
        let episode = int(0)?;
        let row = ProtocolStep {
            step: int(1)?,
            action: rec[2].to_string(),
            action_label: String::new(),
            state_label: String::new(),
            state: (0..arity).map(|i| num(fixed.len() + i)).collect::<Result<_, _>>()?,
            reward: num(3)?,
            delta_reward: num(4)?,
        };
        match out.last_mut() {
            Some(p) if p.episode == episode => p.rows.push(row),
            _ => out.push(EvaluationProtocol {
                episode,
                rows: vec![row],
                failed: None,
                state_names: names.clone(),
            }),
        }
    }
    assign_labels(&mut out);
    Ok(out)
}
