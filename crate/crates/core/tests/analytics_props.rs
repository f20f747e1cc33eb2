use std::collections::{BTreeMap, VecDeque};

use autodo_core::analytics::*;
use autodo_core::catalog::seed;
use autodo_core::engine::{evaluate, train, AgentKind, DataSource, EvaluationProtocol, ParamValue, PipelineCandidate};
use proptest::prelude::*;

fn worked_example() -> EvaluationProtocol {
    EvaluationProtocol::from_labels(
        0,
        1,
        &["A1", "A2", "A3", "A1", "A3", "A2", "A3"],
        &["S1", "S3", "S1", "S4", "S2", "S1", "S3"],
        &[72.0, 75.0, 74.0, 78.0, 81.0, 80.0, 82.0],
    )
}

fn cells(m: &TransitionMatrix) -> BTreeMap<(String, String), u64> {
    m.nonzero()
        .into_iter()
        .map(|(a, b, c)| ((a.to_string(), b.to_string()), c))
        .collect()
}

fn expected(rows: &[(&str, &str, u64)]) -> BTreeMap<(String, String), u64> {
    rows.iter().map(|(a, b, c)| ((a.to_string(), b.to_string()), *c)).collect()
}

#[test]
fn worked_example_state_and_action_matrices() {
    let p = vec![worked_example()];
    let states = state_transition_matrix(&p).unwrap();
    assert_eq!(
        cells(&states),
        expected(&[("S1", "S3", 2), ("S1", "S4", 1), ("S2", "S1", 1), ("S3", "S1", 1), ("S4", "S2", 1)])
    );
    let actions = action_transition_matrix(&p).unwrap();
    assert_eq!(
        cells(&actions),
        expected(&[("A1", "A2", 1), ("A1", "A3", 1), ("A2", "A3", 2), ("A3", "A1", 1), ("A3", "A2", 1)])
    );
}

#[test]
fn worked_example_temporal_graph() {
    let g = temporal_graph(&worked_example()).unwrap();
    let edges: Vec<(&str, &str, u32)> = g.edges.iter().map(|e| (e.from.as_str(), e.to.as_str(), e.step)).collect();
    assert_eq!(
        edges,
        [("S1", "S3", 2), ("S3", "S1", 3), ("S1", "S4", 4), ("S4", "S2", 5), ("S2", "S1", 6), ("S1", "S3", 7)]
    );
}

#[test]
fn worked_example_deltas() {
    let mut p = worked_example();
    for r in &mut p.rows {
        r.delta_reward = f64::NAN;
    }
    p.recompute_deltas();
    let deltas: Vec<f64> = p.rows[1..].iter().map(|r| r.delta_reward).collect();
    assert_eq!(deltas, [3.0, -1.0, 4.0, 3.0, -1.0, 2.0]);
}

fn protocols() -> impl Strategy<Value = Vec<EvaluationProtocol>> {
    let episode = prop::collection::vec((0usize..3, 0usize..8), 1..25);
    prop::collection::vec(episode, 1..4).prop_map(|episodes| {
        episodes
            .into_iter()
            .enumerate()
            .map(|(e, rows)| {
                let actions: Vec<String> = rows.iter().map(|(a, _)| format!("A{a}")).collect();
                let states: Vec<String> = rows.iter().map(|(_, s)| format!("S{s}")).collect();
                let rewards: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
                let a: Vec<&str> = actions.iter().map(String::as_str).collect();
                let s: Vec<&str> = states.iter().map(String::as_str).collect();
                EvaluationProtocol::from_labels(e as u32, 1, &a, &s, &rewards)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn clustering_conserves_transition_count(ps in protocols(), k in 1usize..6, salt in any::<u64>()) {
        let raw = state_transition_matrix(&ps).unwrap();
        let k = k.min(raw.labels.len());
        let mut assignment = BTreeMap::new();
        for (i, l) in raw.labels.iter().enumerate() {
            // every cluster gets one state, the rest land pseudo-randomly
            let c = if i < k { i } else { (salt.wrapping_mul(i as u64 + 7) >> 7) as usize % k };
            assignment.insert(l.clone(), c);
        }
        let clustering = StateClustering { k, assignment, centroids: Vec::new(), seed: 0, iterations: 0 };
        let clustered = clustered_matrix(&ps, &clustering).unwrap();
        prop_assert_eq!(clustered.total(), raw.total());
        let expected_total: usize = ps.iter().map(|p| p.rows.len().saturating_sub(1)).sum();
        prop_assert_eq!(raw.total(), expected_total as u64);
    }

    #[test]
    fn identity_clustering_is_a_permutation(ps in protocols(), perm_seed in any::<u64>()) {
        let raw = state_transition_matrix(&ps).unwrap();
        let n = raw.labels.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut x = perm_seed | 1;
        for i in (1..n).rev() {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            perm.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let assignment = raw.labels.iter().cloned().zip(perm.iter().copied()).collect();
        let clustering = StateClustering { k: n, assignment, centroids: Vec::new(), seed: 0, iterations: 0 };
        let clustered = clustered_matrix(&ps, &clustering).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(clustered.counts[perm[i]][perm[j]], raw.counts[i][j]);
            }
        }
    }
}

/// Share of all transitions held by the three heaviest cells.
fn top3_share(m: &TransitionMatrix) -> f64 {
    m.top_mass(3) as f64 / m.total() as f64
}

#[test]
fn late_training_concentrates_behavior() {
    let spec = seed::gridworld();
    let q = PipelineCandidate {
        candidate_id: 0,
        agent: AgentKind::QLearning,
        hyperparams: BTreeMap::from([("gamma".to_string(), ParamValue::Float(0.95))]),
        rank_score: None,
        train_steps: 0,
    };
    let untrained = PipelineCandidate {
        agent: AgentKind::RandomPolicy,
        hyperparams: BTreeMap::new(),
        ..q.clone()
    };
    let early_agent = train(DataSource::Gym(&spec), &untrained, 1, 0).unwrap().agent;
    let late_agent = train(DataSource::Gym(&spec), &q, 500, 0).unwrap().agent;
    let early = evaluate(&spec, &early_agent, 10, 3);
    let late = evaluate(&spec, &late_agent, 10, 3);

    let mut both = early.clone();
    both.extend(late.iter().cloned().map(|mut p| {
        p.episode += 100;
        p
    }));
    let clustering = cluster_states(&both, 10, 0).unwrap();
    let early_m = clustered_matrix(&early, &clustering).unwrap();
    let late_m = clustered_matrix(&late, &clustering).unwrap();
    assert_eq!(early_m.labels.len(), 10);
    assert!(
        top3_share(&late_m) >= top3_share(&early_m),
        "late {} < early {}",
        top3_share(&late_m),
        top3_share(&early_m)
    );
}

/// Connected random graph as shortest-path hop counts.
fn hop_matrix(n: usize, extra: &[(usize, usize)], tree: &[usize]) -> Vec<Vec<f64>> {
    let mut adj = vec![Vec::new(); n];
    for (i, &p) in tree.iter().enumerate() {
        let child = i + 1;
        let parent = p % child;
        adj[child].push(parent);
        adj[parent].push(child);
    }
    for &(a, b) in extra {
        let (a, b) = (a % n, b % n);
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    (0..n)
        .map(|s| {
            let mut d = vec![f64::INFINITY; n];
            d[s] = 0.0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if d[v].is_infinite() {
                        d[v] = d[u] + 1.0;
                        q.push_back(v);
                    }
                }
            }
            d
        })
        .collect()
}

fn graphs() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..16).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<usize>(), n - 1),
            prop::collection::vec((any::<usize>(), any::<usize>()), 0..n),
        )
            .prop_map(move |(tree, extra)| hop_matrix(n, &extra, &tree))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn stress_never_increases(d in graphs(), seed in any::<u64>(), dims in 2usize..4) {
        let nodes: Vec<String> = (0..d.len()).map(|i| format!("n{i}")).collect();
        let l = layout(&nodes, &d, LayoutOptions { dims, seed, ..LayoutOptions::default() }).unwrap();
        prop_assert!(!l.stress_trace.is_empty());
        for w in l.stress_trace.windows(2) {
            prop_assert!(w[1] <= w[0], "stress rose from {} to {}", w[0], w[1]);
        }
        prop_assert_eq!(*l.stress_trace.last().unwrap(), l.final_stress);
    }
}

#[test]
fn embeddable_inputs_reach_zero_stress() {
    let s2 = 2f64.sqrt();
    let square = vec![
        vec![0.0, 1.0, s2, 1.0],
        vec![1.0, 0.0, 1.0, s2],
        vec![s2, 1.0, 0.0, 1.0],
        vec![1.0, s2, 1.0, 0.0],
    ];
    let pair = vec![vec![0.0, 3.0], vec![3.0, 0.0]];
    for seed in 0..10 {
        for d in [&pair, &square] {
            let nodes: Vec<String> = (0..d.len()).map(|i| i.to_string()).collect();
            let l = layout(&nodes, d, LayoutOptions { seed, ..LayoutOptions::default() }).unwrap();
            assert!(l.final_stress < 1e-6, "seed {seed}: {}", l.final_stress);
            for i in 0..d.len() {
                for j in 0..d.len() {
                    assert!((l.distance(i, j) - d[i][j]).abs() < 1e-3);
                }
            }
        }
    }
}
