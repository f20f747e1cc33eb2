//! Behavioral abstractions over evaluation protocols: transition matrices,
//! temporal graphs, state clustering and graph layouts.

mod kmeans;
mod layout;

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{cluster_states, cluster_states_with, ClusterFeatures, StateClustering};
pub use layout::{layout, GraphLayout, LayoutExport, LayoutNode, LayoutOptions};

use crate::engine::protocol::{EvaluationProtocol, ProtocolStep, StateIdentity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("no protocol rows to analyze")]
    EmptyProtocol,
    #[error("{distinct} distinct states cannot form {k} clusters")]
    TooFewStates { distinct: usize, k: usize },
    #[error("state {0} has no cluster")]
    UnassignedState(String),
    #[error("protocol rows carry no state vectors")]
    MissingStateVectors,
    #[error("state vectors have differing lengths")]
    ArityMismatch,
    #[error("all dissimilarities are zero")]
    DegenerateInput,
    #[error("invalid dissimilarity matrix: {0}")]
    InvalidDissimilarity(String),
    #[error("layout has no coordinates for {0}")]
    MissingCoordinates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    State,
    Action,
    ClusteredState,
}

/// Square count matrix; `counts[i][j]` counts moves from `labels[i]` to `labels[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub kind: MatrixKind,
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl TransitionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, from: &str, to: &str) -> Option<u64> {
        let i = self.labels.iter().position(|l| l == from)?;
        let j = self.labels.iter().position(|l| l == to)?;
        Some(self.counts[i][j])
    }

    /// Nonzero cells as (from, to, count) in row-major order.
    pub fn nonzero(&self) -> Vec<(&str, &str, u64)> {
        let mut out = Vec::new();
        for (i, row) in self.counts.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if *c > 0 {
                    out.push((self.labels[i].as_str(), self.labels[j].as_str(), *c));
                }
            }
        }
        out
    }

    /// Sum of the `n` largest cells.
    pub fn top_mass(&self, n: usize) -> u64 {
        let mut cells: Vec<u64> = self.counts.iter().flatten().copied().collect();
        cells.sort_unstable_by(|a, b| b.cmp(a));
        cells.into_iter().take(n).sum()
    }
}

/// Consecutive row pairs of one episode. Rows separated by a step gap
/// (left behind by filtering) do not form a transition.
pub fn transitions(p: &EvaluationProtocol) -> impl Iterator<Item = (&ProtocolStep, &ProtocolStep)> {
    p.rows
        .windows(2)
        .filter(|w| w[1].step == w[0].step + 1)
        .map(|w| (&w[0], &w[1]))
}

fn nonempty(protocols: &[EvaluationProtocol]) -> Result<(), AnalyticsError> {
    if protocols.iter().all(|p| p.rows.is_empty()) {
        Err(AnalyticsError::EmptyProtocol)
    } else {
        Ok(())
    }
}

/// Distinct states of a protocol set in first-appearance order. Each state
/// keeps the label it carried at its first occurrence.
pub(crate) struct StateIndex {
    pub ids: HashMap<StateIdentity, usize>,
    pub labels: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl StateIndex {
    pub(crate) fn new(protocols: &[EvaluationProtocol]) -> StateIndex {
        let mut idx = StateIndex {
            ids: HashMap::new(),
            labels: Vec::new(),
            vectors: Vec::new(),
        };
        for row in protocols.iter().flat_map(|p| &p.rows) {
            let id = StateIdentity::of(row);
            if !idx.ids.contains_key(&id) {
                idx.ids.insert(id, idx.labels.len());
                idx.labels.push(row.state_label.clone());
                idx.vectors.push(row.state.clone());
            }
        }
        idx
    }

    pub(crate) fn of(&self, row: &ProtocolStep) -> usize {
        self.ids[&StateIdentity::of(row)]
    }
}

fn count<F: Fn(&ProtocolStep) -> usize>(
    protocols: &[EvaluationProtocol],
    n: usize,
    index: F,
) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; n]; n];
    for p in protocols {
        for (a, b) in transitions(p) {
            counts[index(a)][index(b)] += 1;
        }
    }
    counts
}

pub fn state_transition_matrix(protocols: &[EvaluationProtocol]) -> Result<TransitionMatrix, AnalyticsError> {
    nonempty(protocols)?;
    let idx = StateIndex::new(protocols);
    let counts = count(protocols, idx.labels.len(), |r| idx.of(r));
    Ok(TransitionMatrix {
        kind: MatrixKind::State,
        labels: idx.labels,
        counts,
    })
}

pub fn action_transition_matrix(protocols: &[EvaluationProtocol]) -> Result<TransitionMatrix, AnalyticsError> {
    nonempty(protocols)?;
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut labels = Vec::new();
    for row in protocols.iter().flat_map(|p| &p.rows) {
        if !ids.contains_key(row.action.as_str()) {
            ids.insert(&row.action, labels.len());
            labels.push(row.action_label.clone());
        }
    }
    let counts = count(protocols, labels.len(), |r| ids[r.action.as_str()]);
    Ok(TransitionMatrix {
        kind: MatrixKind::Action,
        labels,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub from: String,
    pub to: String,
    /// Step of the row the agent arrives in.
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalTransitionGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<TemporalEdge>,
}

pub fn temporal_graph(protocol: &EvaluationProtocol) -> Result<TemporalTransitionGraph, AnalyticsError> {
    if protocol.rows.is_empty() {
        return Err(AnalyticsError::EmptyProtocol);
    }
    let single = std::slice::from_ref(protocol);
    let idx = StateIndex::new(single);
    let edges = transitions(protocol)
        .map(|(a, b)| TemporalEdge {
            from: idx.labels[idx.of(a)].clone(),
            to: idx.labels[idx.of(b)].clone(),
            step: b.step,
        })
        .collect();
    Ok(TemporalTransitionGraph {
        nodes: idx.labels,
        edges,
    })
}

/// Aggregates state transitions through a clustering. Labels are
/// `C0..C{k-1}` in cluster-id order.
pub fn clustered_matrix(
    protocols: &[EvaluationProtocol],
    clustering: &StateClustering,
) -> Result<TransitionMatrix, AnalyticsError> {
    nonempty(protocols)?;
    let idx = StateIndex::new(protocols);
    let mut cluster_of = Vec::with_capacity(idx.labels.len());
    for label in &idx.labels {
        match clustering.assignment.get(label) {
            Some(c) if *c < clustering.k => cluster_of.push(*c),
            _ => return Err(AnalyticsError::UnassignedState(label.clone())),
        }
    }
    let counts = count(protocols, clustering.k, |r| cluster_of[idx.of(r)]);
    Ok(TransitionMatrix {
        kind: MatrixKind::ClusteredState,
        labels: (0..clustering.k).map(|c| format!("C{c}")).collect(),
        counts,
    })
}

/// Drops rows failing the predicate, and episodes left without rows.
/// Surviving rows keep their step numbers, so rows that were not
/// consecutive originally never form a transition.
pub fn filter_states<F: Fn(&ProtocolStep) -> bool>(
    protocols: &[EvaluationProtocol],
    keep: F,
) -> Vec<EvaluationProtocol> {
    protocols
        .iter()
        .filter_map(|p| {
            let rows: Vec<ProtocolStep> = p.rows.iter().filter(|r| keep(r)).cloned().collect();
            (!rows.is_empty()).then(|| EvaluationProtocol { rows, ..p.clone() })
        })
        .collect()
}

/// Shortest-path hop counts on the undirected graph of a matrix's nonzero
/// off-diagonal cells. Unreachable pairs get the largest finite hop + 1.
pub fn hop_dissimilarity(matrix: &TransitionMatrix) -> Vec<Vec<f64>> {
    let n = matrix.labels.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (matrix.counts[i][j] > 0 || matrix.counts[j][i] > 0) {
                adj[i].push(j);
            }
        }
    }
    let mut hops = vec![vec![None; n]; n];
    for (s, row) in hops.iter_mut().enumerate() {
        row[s] = Some(0usize);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v].is_none() {
                    row[v] = Some(row[u].unwrap() + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    let max_hop = hops.iter().flatten().flatten().copied().max().unwrap_or(0);
    hops.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|h| h.unwrap_or(max_hop + 1) as f64)
                .collect()
        })
        .collect()
}

/// Euclidean distances between state vectors.
pub fn feature_dissimilarity(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|a| {
            vectors
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

/// Distinct state vectors of a protocol set, labeled as in
/// [`state_transition_matrix`].
pub fn state_vectors(protocols: &[EvaluationProtocol]) -> (Vec<String>, Vec<Vec<f64>>) {
    let idx = StateIndex::new(protocols);
    (idx.labels, idx.vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourEdge {
    pub from: String,
    pub to: String,
    pub step: u32,
    /// `(i + 1) / m` for the i-th of m edges.
    pub weight: f64,
    pub from_point: Vec<f64>,
    pub to_point: Vec<f64>,
}

/// The episode's path through a layout, with step-normalized edge weights.
pub fn agent_tour(protocol: &EvaluationProtocol, layout: &GraphLayout) -> Result<Vec<TourEdge>, AnalyticsError> {
    let single = std::slice::from_ref(protocol);
    let idx = StateIndex::new(single);
    let points: BTreeMap<&str, &Vec<f64>> = layout
        .nodes
        .iter()
        .map(String::as_str)
        .zip(&layout.coords)
        .collect();
    let point = |label: &str| -> Result<Vec<f64>, AnalyticsError> {
        points
            .get(label)
            .map(|p| (*p).clone())
            .ok_or_else(|| AnalyticsError::MissingCoordinates(label.to_string()))
    };
    let pairs: Vec<(&ProtocolStep, &ProtocolStep)> = transitions(protocol).collect();
    let m = pairs.len();
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let from = idx.labels[idx.of(a)].clone();
            let to = idx.labels[idx.of(b)].clone();
            Ok(TourEdge {
                from_point: point(&from)?,
                to_point: point(&to)?,
                from,
                to,
                step: b.step,
                weight: (i + 1) as f64 / m as f64,
            })
        })
        .collect()
}
