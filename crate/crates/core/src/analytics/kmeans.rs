use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnalyticsError, StateIndex};
use crate::engine::protocol::{EvaluationProtocol, StateIdentity};

const MAX_ITER: usize = 300;
const TOL: f64 = 1e-6;

/// Feature space used for clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterFeatures {
    /// The raw state vector.
    #[default]
    State,
    /// State vector with the step's reward delta appended. A state's
    /// reward is taken from its first occurrence.
    StateAndReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateClustering {
    pub k: usize,
    /// State label to cluster id in `0..k`.
    pub assignment: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    pub iterations: usize,
}

impl StateClustering {
    /// A clustering given by explicit groups of state labels; centroids are empty.
    pub fn from_groups(groups: &[&[&str]]) -> StateClustering {
        let mut assignment = BTreeMap::new();
        for (c, g) in groups.iter().enumerate() {
            for label in g.iter() {
                assignment.insert(label.to_string(), c);
            }
        }
        StateClustering {
            k: groups.len(),
            assignment,
            centroids: Vec::new(),
            seed: 0,
            iterations: 0,
        }
    }

    /// Sum of squared distances from each point to its centroid.
    pub fn inertia(&self, labels: &[String], points: &[Vec<f64>]) -> f64 {
        labels
            .iter()
            .zip(points)
            .map(|(l, p)| sq_dist(p, &self.centroids[self.assignment[l]]))
            .sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

pub fn cluster_states(
    protocols: &[EvaluationProtocol],
    k: usize,
    seed: u64,
) -> Result<StateClustering, AnalyticsError> {
    cluster_states_with(protocols, k, seed, ClusterFeatures::State)
}

/// k-means over the distinct states of the protocols: k-means++ seeding,
/// then Lloyd iterations until no centroid moves more than 1e-6 (at most
/// 300). An emptied cluster takes the point of the largest cluster that
/// lies farthest from its centroid.
pub fn cluster_states_with(
    protocols: &[EvaluationProtocol],
    k: usize,
    seed: u64,
    features: ClusterFeatures,
) -> Result<StateClustering, AnalyticsError> {
    let idx = StateIndex::new(protocols);
    if idx.labels.is_empty() {
        return Err(AnalyticsError::EmptyProtocol);
    }
    if idx.vectors.iter().any(Vec::is_empty) {
        return Err(AnalyticsError::MissingStateVectors);
    }
    let arity = idx.vectors[0].len();
    if idx.vectors.iter().any(|v| v.len() != arity) {
        return Err(AnalyticsError::ArityMismatch);
    }
    let mut points = idx.vectors.clone();
    if features == ClusterFeatures::StateAndReward {
        let mut reward = vec![None; points.len()];
        for row in protocols.iter().flat_map(|p| &p.rows) {
            let i = idx.ids[&StateIdentity::of(row)];
            reward[i].get_or_insert(row.delta_reward);
        }
        for (p, r) in points.iter_mut().zip(reward) {
            p.push(r.unwrap_or(0.0));
        }
    }
    let n = points.len();
    if k == 0 || k > n {
        return Err(AnalyticsError::TooFewStates { distinct: n, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            if d2[chosen] == 0.0 {
                d2.iter().rposition(|d| *d > 0.0).unwrap_or(chosen)
            } else {
                chosen
            }
        } else {
            // only reachable if distinct states coincide numerically;
            // the duplicate centroid is repaired below
            0
        };
        centroids.push(points[pick].clone());
    }

    let mut assign = vec![0usize; n];
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        for (i, p) in points.iter().enumerate() {
            assign[i] = nearest(p, &centroids);
        }
        repair_empty(&points, &mut assign, &centroids, k);
        let mut next = vec![vec![0.0; points[0].len()]; k];
        let mut sizes = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sizes[assign[i]] += 1;
            for (acc, x) in next[assign[i]].iter_mut().zip(p) {
                *acc += x;
            }
        }
        for (c, size) in sizes.iter().enumerate() {
            for x in &mut next[c] {
                *x /= *size as f64;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < TOL {
            break;
        }
    }
    Ok(StateClustering {
        k,
        assignment: idx.labels.iter().cloned().zip(assign).collect(),
        centroids,
        seed,
        iterations,
    })
}

fn repair_empty(points: &[Vec<f64>], assign: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for a in assign.iter() {
            sizes[*a] += 1;
        }
        let Some(empty) = sizes.iter().position(|s| *s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|c| (sizes[*c], std::cmp::Reverse(*c))).expect("k > 0");
        let far = (0..points.len())
            .filter(|i| assign[*i] == largest)
            .max_by(|a, b| {
                sq_dist(&points[*a], &centroids[largest])
                    .partial_cmp(&sq_dist(&points[*b], &centroids[largest]))
                    .expect("finite distances")
                    .then(b.cmp(a))
            })
            .expect("largest cluster is nonempty");
        assign[far] = empty;
    }
}
