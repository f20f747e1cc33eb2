//! One line per acceptance criterion. Exits non-zero if any fails.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;
use std::time::Duration;

use autodo_acceptance::{run, Criterion, Model};
use autodo_core::analytics::*;
use autodo_core::catalog::{node_id, seed, BrowseTarget, Catalog, CategoryNode, Taxonomy};
use autodo_core::engine::dataset::TupleDataset;
use autodo_core::engine::protocol::state_key;
use autodo_core::engine::{
    default_schemas, evaluate, search, train, AgentKind, CandidateStatus, DataSource, EngineConfig, EvaluationProtocol,
    NullSink, ParamValue, PipelineCandidate, TrainedAgent,
};
use autodo_core::gymspec::codegen::write_source;
use autodo_core::gymspec::{interpreter_trace, GymSpec, TraceEntry, VarKind};
use autodo_core::rules::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const GAMMA: f64 = 0.95;

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { number: 1, title: "worked example to state/action matrices and temporal graph", limit: secs(1), check: golden_tables },
        Criterion { number: 2, title: "reward deltas on the worked example", limit: None, check: deltas },
        Criterion { number: 3, title: "q_learning and fitted_q against exact optima", limit: secs(10), check: engine_oracle },
        Criterion { number: 4, title: "search ranking with random_policy in the budget", limit: secs(60), check: search_ranking },
        Criterion { number: 5, title: "clustering properties", limit: None, check: clustering },
        Criterion { number: 6, title: "stress majorization", limit: None, check: layout_stress },
        Criterion { number: 7, title: "rule induction", limit: None, check: rules },
        Criterion { number: 8, title: "controller log integrity", limit: secs(30), check: log_integrity },
        Criterion { number: 9, title: "bakery end to end through the controller", limit: secs(120), check: smoke },
        Criterion { number: 10, title: "catalog subtree counts", limit: None, check: catalog_counts },
        Criterion { number: 11, title: "generated Python against the interpreter", limit: None, check: codegen },
    ];
    let mut failed = 0;
    for c in &criteria {
        let out = run(c);
        println!("{}", out.line);
        if !out.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn worked_example() -> EvaluationProtocol {
    EvaluationProtocol::from_labels(
        0,
        1,
        &["A1", "A2", "A3", "A1", "A3", "A2", "A3"],
        &["S1", "S3", "S1", "S4", "S2", "S1", "S3"],
        &[72.0, 75.0, 74.0, 78.0, 81.0, 80.0, 82.0],
    )
}

fn cells(m: &TransitionMatrix) -> Vec<(String, String, u64)> {
    let mut out: Vec<_> = m.nonzero().into_iter().map(|(a, b, c)| (a.to_string(), b.to_string(), c)).collect();
    out.sort();
    out
}

fn owned(rows: &[(&str, &str, u64)]) -> Vec<(String, String, u64)> {
    rows.iter().map(|(a, b, c)| (a.to_string(), b.to_string(), *c)).collect()
}

fn golden_tables() -> Check {
    let p = vec![worked_example()];
    let states = cells(&state_transition_matrix(&p).map_err(|e| e.to_string())?);
    let want = owned(&[("S1", "S3", 2), ("S1", "S4", 1), ("S2", "S1", 1), ("S3", "S1", 1), ("S4", "S2", 1)]);
    ensure!(states == want, "state matrix {states:?}");
    let actions = cells(&action_transition_matrix(&p).map_err(|e| e.to_string())?);
    let want = owned(&[("A1", "A2", 1), ("A1", "A3", 1), ("A2", "A3", 2), ("A3", "A1", 1), ("A3", "A2", 1)]);
    ensure!(actions == want, "action matrix {actions:?}");
    let g = temporal_graph(&p[0]).map_err(|e| e.to_string())?;
    let edges: Vec<(&str, &str, u32)> = g.edges.iter().map(|e| (e.from.as_str(), e.to.as_str(), e.step)).collect();
    let want = [("S1", "S3", 2), ("S3", "S1", 3), ("S1", "S4", 4), ("S4", "S2", 5), ("S2", "S1", 6), ("S1", "S3", 7)];
    ensure!(edges == want, "temporal edges {edges:?}");
    Ok("5 + 5 cells and 6 edges exact".into())
}

fn deltas() -> Check {
    let mut p = worked_example();
    for r in &mut p.rows {
        r.delta_reward = f64::NAN;
    }
    p.recompute_deltas();
    let got: Vec<f64> = p.rows[1..].iter().map(|r| r.delta_reward).collect();
    ensure!(got == [3.0, -1.0, 4.0, 3.0, -1.0, 2.0], "deltas {got:?}");
    Ok("+3 -1 +4 +3 -1 +2".into())
}

fn candidate(agent: AgentKind, params: &[(&str, ParamValue)]) -> PipelineCandidate {
    PipelineCandidate {
        candidate_id: 0,
        agent,
        hyperparams: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        rank_score: None,
        train_steps: 0,
    }
}

fn q_learning(spec: &GymSpec, seed: u64) -> TrainedAgent {
    let c = candidate(AgentKind::QLearning, &[("gamma", ParamValue::Float(GAMMA))]);
    train(DataSource::Gym(spec), &c, 500, seed).unwrap().agent
}

fn engine_oracle() -> Check {
    let spec = seed::gridworld();
    let m = Model::explore(&spec);
    let optimal = m.optimal_values(GAMMA);
    let mut worst_policy: f64 = 0.0;
    for seed in [0, 1, 2] {
        let got = m.policy_values(GAMMA, &q_learning(&spec, seed));
        for s in 0..m.states.len() {
            worst_policy = worst_policy.max((got[s] - optimal[s]).abs());
        }
    }
    ensure!(worst_policy <= 1e-9, "greedy policy value off by {worst_policy:e}");

    let data = TupleDataset::exhaustive(&spec, 10_000).map_err(|e| e.to_string())?;
    let c = candidate(AgentKind::FittedQ, &[("gamma", ParamValue::Float(GAMMA))]);
    let agent = train(DataSource::Dataset(&data), &c, 1, 0).map_err(|e| e.to_string())?.agent;
    let q = agent.q_table().ok_or("fitted_q has no table")?;
    let mut worst_q: f64 = 0.0;
    for (s, edges) in m.edges.iter().enumerate() {
        for (a, &(r, j, t)) in edges.iter().enumerate() {
            let fixed = r + if t { 0.0 } else { GAMMA * optimal[j] };
            worst_q = worst_q.max((q.get(&state_key(&m.states[s]), a) - fixed).abs());
        }
    }
    ensure!(worst_q <= 1e-6, "fitted_q off the Bellman fixed point by {worst_q:e}");
    Ok(format!("{} states; policy gap {worst_policy:.1e} (tol 1e-9), Q gap {worst_q:.1e} (tol 1e-6)", m.states.len()))
}

fn search_ranking() -> Check {
    let spec = seed::gridworld();
    let mut wins = 0;
    for seed in 0..5 {
        let config = EngineConfig {
            enabled_agents: vec![AgentKind::QLearning, AgentKind::RandomPolicy],
            candidate_budget: 6,
            seed,
            ..EngineConfig::default()
        };
        let r = search(DataSource::Gym(&spec), &config, &default_schemas(), &NullSink).map_err(|e| e.to_string())?;
        ensure!(r.all.len() == 6, "seed {seed}: {} candidates", r.all.len());
        ensure!(
            r.all.iter().any(|c| c.candidate.agent == AgentKind::RandomPolicy),
            "seed {seed}: random_policy never sampled"
        );
        for w in r.all.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.status == CandidateStatus::Failed {
                continue;
            }
            ensure!(a.status == CandidateStatus::Succeeded, "seed {seed}: failure ranked above a success");
            let (sa, sb) = (a.candidate.rank_score.unwrap(), b.candidate.rank_score.unwrap());
            ensure!(sa >= sb, "seed {seed}: scores out of order");
            if sa == sb {
                let ka = (a.candidate.train_steps, a.candidate.candidate_id);
                let kb = (b.candidate.train_steps, b.candidate.candidate_id);
                ensure!(ka < kb, "seed {seed}: tie not broken by steps then id");
            }
        }
        ensure!(r.top_k.as_slice() == &r.all[..r.top_k.len()], "seed {seed}: top_k is not the head");
        let pos = |agent| r.top_k.iter().position(|c| c.candidate.agent == agent);
        match (pos(AgentKind::QLearning), pos(AgentKind::RandomPolicy)) {
            (Some(q), Some(rp)) if q < rp => wins += 1,
            (Some(_), None) => wins += 1,
            _ => {}
        }
    }
    ensure!(wins >= 4, "q_learning ahead in {wins} of 5 seeds");
    Ok(format!("q_learning ahead in {wins} of 5 seeds"))
}

fn random_protocols(rng: &mut ChaCha8Rng) -> Vec<EvaluationProtocol> {
    (0..rng.gen_range(1..4))
        .map(|e| {
            let n = rng.gen_range(1..25);
            let actions: Vec<String> = (0..n).map(|_| format!("A{}", rng.gen_range(0..3))).collect();
            let states: Vec<String> = (0..n).map(|_| format!("S{}", rng.gen_range(0..8))).collect();
            let rewards: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let a: Vec<&str> = actions.iter().map(String::as_str).collect();
            let s: Vec<&str> = states.iter().map(String::as_str).collect();
            EvaluationProtocol::from_labels(e, 1, &a, &s, &rewards)
        })
        .collect()
}

fn clustering() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let ps = random_protocols(&mut rng);
        let raw = state_transition_matrix(&ps).map_err(|e| e.to_string())?;
        let n = raw.labels.len();
        let k = rng.gen_range(1..6).min(n);
        let assignment = raw
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), if i < k { i } else { rng.gen_range(0..k) }))
            .collect();
        let c = StateClustering { k, assignment, centroids: Vec::new(), seed: 0, iterations: 0 };
        let clustered = clustered_matrix(&ps, &c).map_err(|e| e.to_string())?;
        ensure!(clustered.total() == raw.total(), "case {case}: {} vs {}", clustered.total(), raw.total());
        let expected: usize = ps.iter().map(|p| p.rows.len().saturating_sub(1)).sum();
        ensure!(raw.total() == expected as u64, "case {case}: raw total {}", raw.total());

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let assignment = raw.labels.iter().cloned().zip(perm.iter().copied()).collect();
        let c = StateClustering { k: n, assignment, centroids: Vec::new(), seed: 0, iterations: 0 };
        let clustered = clustered_matrix(&ps, &c).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n {
                ensure!(clustered.counts[perm[i]][perm[j]] == raw.counts[i][j], "case {case}: identity cell ({i},{j})");
            }
        }
    }

    let spec = seed::gridworld();
    let random = candidate(AgentKind::RandomPolicy, &[]);
    let early_agent = train(DataSource::Gym(&spec), &random, 1, 0).map_err(|e| e.to_string())?.agent;
    let early = evaluate(&spec, &early_agent, 10, 3);
    let late = evaluate(&spec, &q_learning(&spec, 0), 10, 3);
    let mut both = early.clone();
    both.extend(late.iter().cloned().map(|mut p| {
        p.episode += 100;
        p
    }));
    let c = cluster_states(&both, 10, 0).map_err(|e| e.to_string())?;
    let share = |ps: &[EvaluationProtocol]| -> Result<f64, String> {
        let m = clustered_matrix(ps, &c).map_err(|e| e.to_string())?;
        Ok(m.top_mass(3) as f64 / m.total() as f64)
    };
    let (e, l) = (share(&early)?, share(&late)?);
    ensure!(l >= e, "late top-3 share {l:.3} < early {e:.3}");
    Ok(format!("1000 cases conserved and permuted; top-3 share early {e:.3}, late {l:.3}"))
}

fn hop_matrix(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut adj = vec![Vec::new(); n];
    for child in 1..n {
        let parent = rng.gen_range(0..child);
        adj[child].push(parent);
        adj[parent].push(child);
    }
    for _ in 0..rng.gen_range(0..n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
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

fn layout_stress() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut iterations = 0;
    for g in 0..100 {
        let n = rng.gen_range(2..16);
        let d = hop_matrix(&mut rng, n);
        let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let opts = LayoutOptions { dims: rng.gen_range(2..4), seed: rng.gen(), ..LayoutOptions::default() };
        let l = layout(&nodes, &d, opts).map_err(|e| e.to_string())?;
        for w in l.stress_trace.windows(2) {
            ensure!(w[1] <= w[0], "graph {g}: stress rose from {} to {}", w[0], w[1]);
        }
        iterations += l.stress_trace.len();
    }
    let s2 = 2f64.sqrt();
    let square = vec![
        vec![0.0, 1.0, s2, 1.0],
        vec![1.0, 0.0, 1.0, s2],
        vec![s2, 1.0, 0.0, 1.0],
        vec![1.0, s2, 1.0, 0.0],
    ];
    let pair = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let mut worst: f64 = 0.0;
    for d in [&pair, &square] {
        let nodes: Vec<String> = (0..d.len()).map(|i| i.to_string()).collect();
        for seed in 0..10 {
            let l = layout(&nodes, d, LayoutOptions { dims: 2, seed, ..LayoutOptions::default() }).map_err(|e| e.to_string())?;
            worst = worst.max(l.final_stress);
        }
    }
    ensure!(worst < 1e-6, "embeddable input left stress {worst:e}");
    Ok(format!("100 graphs, {iterations} iterations monotone; pair and square stress {worst:.1e} (tol 1e-6)"))
}

fn numeric(name: &str) -> Column {
    Column { name: name.into(), kind: ColumnKind::Numeric }
}

fn rules() -> Check {
    // labels are a function of axis-aligned regions plus a category
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let (tx, ty) = (rng.gen_range(1..9) as f64 + 0.5, rng.gen_range(1..9) as f64 + 0.5);
        let rows: Vec<(f64, f64, usize)> = (0..rng.gen_range(20..120))
            .map(|_| (rng.gen_range(0..10) as f64, rng.gen_range(0..10) as f64, rng.gen_range(0..2)))
            .collect();
        let label = |&(x, y, c): &(f64, f64, usize)| match (x < tx, y < ty, c) {
            (true, _, _) => "A",
            (false, true, _) => "B",
            (false, false, 0) => "C",
            (false, false, _) => "D",
        };
        let data = LabeledDataset::new(
            vec![numeric("x"), numeric("y"), Column { name: "c".into(), kind: ColumnKind::Categorical }],
            rows.iter()
                .map(|&(x, y, c)| vec![Cell::Num(x), Cell::Num(y), Cell::Cat(["red", "blue"][c].into())])
                .collect(),
            rows.iter().map(|r| label(r).to_string()).collect(),
            "label",
        );
        let set = induce_rules(&data, InduceOptions::for_rows(data.len())).map_err(|e| e.to_string())?;
        let acc = set.accuracy(&data).map_err(|e| e.to_string())?;
        ensure!(acc == 1.0, "separable case {case}: accuracy {acc}\n{}", set.render());
        list_invariants(&set, &format!("separable case {case}"))?;
    }

    // gridworld: every non-terminal reachable state against the agent's greedy action
    let spec = seed::gridworld();
    let agent = q_learning(&spec, 0);
    let actions = spec.expand_actions();
    let start = spec.reset().map_err(|e| e.to_string())?;
    let mut seen = HashSet::from([state_key(&start.values)]);
    let mut queue = VecDeque::from([start.values.clone()]);
    let mut states = Vec::new();
    while let Some(v) = queue.pop_front() {
        states.push(v.clone());
        let mut s = start.clone();
        s.values = v;
        for a in &actions {
            let o = spec.step(&s, a).map_err(|e| e.to_string())?;
            if !o.terminated && seen.insert(state_key(&o.state.values)) {
                queue.push_back(o.state.values);
            }
        }
    }
    let greedy: Vec<String> = states.iter().map(|s| actions[agent.greedy_action(s).unwrap()].label()).collect();
    let data = LabeledDataset::new(
        spec.state_vars.iter().map(|v| numeric(&v.name)).collect(),
        states.iter().map(|s| s.iter().map(|x| Cell::Num(*x)).collect()).collect(),
        greedy.clone(),
        "action",
    );
    let set = induce_rules(&data, InduceOptions::for_rows(data.len())).map_err(|e| e.to_string())?;
    let predicted = set.predict(&data).map_err(|e| e.to_string())?;
    let agree = predicted.iter().zip(&greedy).filter(|(a, b)| a == b).count();
    ensure!(agree * 10 >= greedy.len() * 9, "fidelity {agree}/{}", greedy.len());
    list_invariants(&set, "gridworld")?;
    Ok(format!("20 separable sets at 100 %; gridworld fidelity {agree}/{}", greedy.len()))
}

fn list_invariants(set: &RuleSet, what: &str) -> Result<(), String> {
    let weight: f64 = set.treemap.iter().map(|t| t.weight).sum();
    ensure!((weight - 1.0).abs() <= 1e-12, "{what}: treemap weights sum to {weight}");
    for w in set.rules.windows(2) {
        ensure!(w[0].coverage_count >= w[1].coverage_count, "{what}: coverage rises along the list");
    }
    Ok(())
}

fn catalog_nodes() -> Vec<CategoryNode> {
    let mut out = Vec::new();
    let mut push = |tax: Taxonomy, code: String, parent: Option<&str>| {
        out.push(CategoryNode {
            id: node_id(tax, &code),
            title: format!("node {code}"),
            parent_id: parent.map(|p| node_id(tax, p)),
            taxonomy: tax,
            code,
        });
    };
    for (tax, roots, sep) in [(Taxonomy::Industry, ["11", "21", "22"], ""), (Taxonomy::DoType, ["plan", "route", "assign"], "_")] {
        for root in roots {
            push(tax, root.to_string(), None);
            for c in 1..=3 {
                let child = format!("{root}{sep}{c}");
                push(tax, child.clone(), Some(root));
                for g in 1..=2 {
                    push(tax, format!("{child}{sep}{g}"), Some(&child));
                }
            }
        }
    }
    out
}

fn catalog_counts() -> Check {
    let all = catalog_nodes();
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for n in &all {
        if let Some(p) = &n.parent_id {
            children.entry(p.as_str()).or_default().push(&n.id);
        }
    }
    let mut catalog = Catalog::from_nodes(all.clone()).map_err(|e| e.to_string())?;
    let spec = seed::gridworld();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut attachments = Vec::new();
    for i in 0..200 {
        let cats: BTreeSet<String> = (0..rng.gen_range(1..4)).map(|_| all[rng.gen_range(0..all.len())].id.clone()).collect();
        catalog
            .publish_template(spec.clone(), &format!("t{i}"), "", cats.clone(), "acceptance")
            .map_err(|e| e.to_string())?;
        attachments.push(cats);
    }
    for n in &all {
        let mut subtree = BTreeSet::new();
        let mut stack = vec![n.id.as_str()];
        while let Some(x) = stack.pop() {
            subtree.insert(x.to_string());
            stack.extend(children.get(x).into_iter().flatten());
        }
        let expected = attachments.iter().filter(|c| !c.is_disjoint(&subtree)).count();
        ensure!(catalog.template_count(&n.id) == expected, "{}: {} vs {expected}", n.id, catalog.template_count(&n.id));
        let view = catalog.browse(BrowseTarget::Node(&n.id)).map_err(|e| e.to_string())?;
        ensure!(view.pinned.map(|p| p.template_count) == Some(expected), "{}: browse count differs", n.id);
    }
    Ok(format!("{} nodes over 3 levels match enumeration", all.len()))
}

const DRIVER: &str = r#"
import importlib.util, json, sys
spec = importlib.util.spec_from_file_location("generated_env", sys.argv[1])
mod = importlib.util.module_from_spec(spec)
spec.loader.exec_module(mod)
json.dump([mod.trace(seq) for seq in json.load(sys.stdin)], sys.stdout)
"#;

fn python_traces(spec: &GymSpec, sequences: &[Vec<usize>]) -> Result<Vec<Vec<TraceEntry>>, String> {
    use std::io::Write;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let module = dir.path().join("generated_env.py");
    write_source(spec, "python", &module).map_err(|e| e.to_string())?;
    let mut child = Command::new("python3")
        .arg("-c")
        .arg(DRIVER)
        .arg(&module)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("python3 unavailable: {e}"))?;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(&serde_json::to_vec(sequences).unwrap())
        .map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "python failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn close(spec: &GymSpec, a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && spec.state_vars.iter().zip(a.iter().zip(b)).all(|(v, (x, y))| match v.kind {
            VarKind::Integer => x == y,
            VarKind::Real => (x - y).abs() <= 1e-9,
        })
}

fn same(spec: &GymSpec, ours: &TraceEntry, theirs: &TraceEntry) -> bool {
    match (ours, theirs) {
        (TraceEntry::Reset { state: a }, TraceEntry::Reset { state: b }) => close(spec, a, b),
        (
            TraceEntry::Step { action: a1, state: s1, reward: r1, terminated: t1, truncated: u1 },
            TraceEntry::Step { action: a2, state: s2, reward: r2, terminated: t2, truncated: u2 },
        ) => a1 == a2 && close(spec, s1, s2) && (r1 - r2).abs() <= 1e-9 && t1 == t2 && u1 == u2,
        (a, b) => a == b,
    }
}

fn codegen() -> Check {
    let templates = seed::templates();
    for (i, (spec, _)) in templates.iter().enumerate() {
        let n = spec.expand_actions().len();
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + i as u64);
        let sequences: Vec<Vec<usize>> = (0..100).map(|_| (0..20).map(|_| rng.gen_range(0..n)).collect()).collect();
        let theirs = python_traces(spec, &sequences)?;
        ensure!(theirs.len() == 100, "{}: {} traces", spec.name, theirs.len());
        for (k, (seq, py)) in sequences.iter().zip(&theirs).enumerate() {
            let ours = interpreter_trace(spec, seq);
            ensure!(ours.len() == py.len(), "{} sequence {k}: lengths {} vs {}", spec.name, ours.len(), py.len());
            for (a, b) in ours.iter().zip(py) {
                ensure!(same(spec, a, b), "{} sequence {k}: {a:?} vs {b:?}", spec.name);
            }
        }
    }
    Ok(format!("{} seed specs x 100 sequences x 20 steps agree", templates.len()))
}

mod http {
    use std::collections::HashMap;

    use autodo_controller::{start, ControllerConfig, Running};
    use reqwest::StatusCode;
    use serde_json::{json, Value};
    use tempfile::TempDir;

    pub const USER: &str = "acceptance-user";

    pub struct Harness {
        pub running: Running,
        pub http: reqwest::Client,
        pub idle_endpoint: String,
        _dir: TempDir,
    }

    pub async fn harness(pool: usize) -> Harness {
        let dir = TempDir::new().unwrap();
        let mut config = ControllerConfig::new(dir.path().join("autodo.db"));
        config.bind_addr = "127.0.0.1:0".into();
        config.shared_pool_size = pool;
        config.user_tokens = HashMap::from([(USER.into(), "acceptance".into())]);
        let running = start(config).await.unwrap();
        let idle = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let idle_endpoint = format!("http://{}/launch", idle.local_addr().unwrap());
        let app = axum::Router::new().route("/launch", axum::routing::post(|| async { "ok" }));
        tokio::spawn(async move { axum::serve(idle, app).await.unwrap() });
        Harness { running, http: reqwest::Client::new(), idle_endpoint, _dir: dir }
    }

    impl Harness {
        pub fn url(&self, path: &str) -> String {
            format!("{}/api/v1{path}", self.running.url())
        }

        pub async fn send(&self, req: reqwest::RequestBuilder) -> (StatusCode, Value) {
            let r = req.send().await.unwrap();
            let status = r.status();
            let text = r.text().await.unwrap();
            (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
        }

        pub async fn post(&self, token: &str, path: &str, body: Value) -> (StatusCode, Value) {
            self.send(self.http.post(self.url(path)).bearer_auth(token).json(&body)).await
        }

        pub async fn get(&self, token: &str, path: &str) -> (StatusCode, Value) {
            self.send(self.http.get(self.url(path)).bearer_auth(token)).await
        }

        pub async fn sse(&self, job: &str, from_seq: u64) -> String {
            let url = self.url(&format!("/jobs/{job}/events?from_seq={from_seq}"));
            self.http.get(url).bearer_auth(USER).send().await.unwrap().text().await.unwrap()
        }

        pub async fn append(&self, job: &str, token: &str, kind: &str, payload: Value) -> (StatusCode, Value) {
            self.post(token, &format!("/jobs/{job}/events"), json!({ "kind": kind, "payload": payload })).await
        }

        /// Project, gym, config and job; returns (project, gym, job, job token).
        pub async fn job(&self, name: &str, spec: &str, budget: usize, cluster: Value) -> Result<[String; 4], String> {
            let (s, p) = self.post(USER, "/projects", json!({ "name": name })).await;
            expect(s, StatusCode::CREATED, &p)?;
            let p = p["id"].as_str().unwrap().to_string();
            let (s, g) = self
                .send(self.http.post(self.url(&format!("/projects/{p}/gyms"))).bearer_auth(USER).body(spec.to_string()))
                .await;
            expect(s, StatusCode::CREATED, &g)?;
            let config = json!({
                "enabled_agents": ["q_learning", "random_policy"],
                "search_strategy": "discrepancy_grid",
                "candidate_budget": budget,
                "optimization_workers": 2,
                "episodes_train": 60,
                "episodes_eval": 2,
                "top_k": 2,
                "seed": 1
            });
            let (s, c) = self.post(USER, "/configs", json!({ "project_id": p, "config": config, "share": false })).await;
            expect(s, StatusCode::CREATED, &c)?;
            let body = json!({ "gym_id": g["gym_id"], "config_id": c["config_id"], "cluster": cluster });
            let (s, j) = self.post(USER, &format!("/projects/{p}/jobs"), body).await;
            expect(s, StatusCode::CREATED, &j)?;
            let field = |v: &Value, k: &str| v[k].as_str().unwrap_or_default().to_string();
            Ok([p, field(&g, "gym_id"), field(&j, "job_id"), field(&j, "api_token")])
        }
    }

    pub fn expect(got: StatusCode, want: StatusCode, body: &Value) -> Result<(), String> {
        if got == want {
            Ok(())
        } else {
            Err(format!("HTTP {got}, expected {want}: {body}"))
        }
    }

    /// Frames of an SSE body with keep-alive comments removed.
    pub fn frames(body: &str) -> Vec<String> {
        body.split("\n\n")
            .map(|f| f.lines().filter(|l| !l.starts_with(':')).collect::<Vec<_>>().join("\n"))
            .filter(|f| !f.is_empty())
            .collect()
    }

    pub fn frame_events(body: &str) -> Vec<Value> {
        frames(body)
            .iter()
            .filter(|f| !f.contains("event: end"))
            .map(|f| {
                let data: String = f.lines().filter_map(|l| l.strip_prefix("data: ")).collect();
                serde_json::from_str(&data).unwrap()
            })
            .collect()
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap()
}

fn log_integrity() -> Check {
    runtime().block_on(async {
        use http::*;
        use reqwest::StatusCode;

        let h = Arc::new(harness(0).await);
        let cluster = json!({ "kind": "custom", "endpoint": h.idle_endpoint });
        let [_, _, j, t] = h.job("log", seed::GRIDWORLD, 3, cluster).await?;
        let (s, v) = h.post(USER, &format!("/jobs/{j}/launch"), json!({})).await;
        expect(s, StatusCode::ACCEPTED, &v)?;

        let (s, v) = h.append(&j, &t, "status", json!({ "status": "running" })).await;
        expect(s, StatusCode::CREATED, &v)?;
        let mut live = Vec::new();
        let producers: Vec<_> = (0..4)
            .map(|p| {
                let (h, j, t) = (h.clone(), j.clone(), t.clone());
                tokio::spawn(async move {
                    let mut seqs = Vec::with_capacity(2500);
                    for i in 0..2500 {
                        let (s, v) = h.append(&j, &t, "metric", json!({ "producer": p, "i": i })).await;
                        if s != StatusCode::CREATED {
                            return Err(format!("append {p}/{i}: {s} {v}"));
                        }
                        seqs.push(v["seq"].as_u64().unwrap());
                    }
                    Ok(seqs)
                })
            })
            .collect();
        // subscribers join while the producers are running
        for k in [1u64, 2, 777, 5000] {
            let (h, j) = (h.clone(), j.clone());
            live.push((k, tokio::spawn(async move { h.sse(&j, k).await })));
            tokio::time::sleep(Duration::from_millis(150)).await;
        }
        let mut all = Vec::new();
        for p in producers {
            let seqs = p.await.unwrap()?;
            ensure!(seqs.windows(2).all(|w| w[0] < w[1]), "a producer saw seqs go backwards");
            all.extend(seqs);
        }
        all.push(1);
        all.sort_unstable();
        ensure!(all == (1..=10_001).collect::<Vec<u64>>(), "seqs are not dense");

        // forged and missing tokens leave the log untouched
        let (_, before) = h.get(USER, &format!("/jobs/{j}/log")).await;
        let (s, _) = h.append(&j, &"0".repeat(64), "log", json!({ "line": "forged" })).await;
        expect(s, StatusCode::UNAUTHORIZED, &Value::Null)?;
        let (s, _) = h.append(&j, USER, "log", json!({ "line": "forged" })).await;
        expect(s, StatusCode::UNAUTHORIZED, &Value::Null)?;
        let (s, _) = h
            .send(h.http.post(h.url(&format!("/jobs/{j}/events"))).json(&json!({ "kind": "log", "payload": {} })))
            .await;
        expect(s, StatusCode::UNAUTHORIZED, &Value::Null)?;
        let (_, after) = h.get(USER, &format!("/jobs/{j}/log")).await;
        ensure!(before == after, "log changed after rejected appends");

        let (s, v) = h
            .send(h.http.post(h.url(&format!("/jobs/{j}/result"))).bearer_auth(&t).json(&json!({ "ok": true })))
            .await;
        expect(s, StatusCode::NO_CONTENT, &v)?;
        let (s, v) = h.append(&j, &t, "status", json!({ "status": "succeeded" })).await;
        expect(s, StatusCode::CREATED, &v)?;

        for (k, task) in live {
            let body = tokio::time::timeout(Duration::from_secs(15), task)
                .await
                .map_err(|_| format!("stream from {k} did not end"))?
                .unwrap();
            let replay = h.sse(&j, k).await;
            ensure!(frames(&body) == frames(&replay), "from_seq={k}: live stream differs from replay");
            let events = frame_events(&body);
            ensure!(events.len() as u64 == 10_002 - k + 1, "from_seq={k}: {} events", events.len());
            ensure!(events[0]["seq"] == k, "from_seq={k}: starts at {}", events[0]["seq"]);
        }
        Ok("4 x 2500 appends dense; 4 live subscribers equal replay; 3 forged appends rejected".into())
    })
}

fn smoke() -> Check {
    runtime().block_on(async {
        use http::*;
        use reqwest::StatusCode;

        let h = harness(2).await;
        let bakery: Value = serde_json::from_str(seed::BAKERY).unwrap();
        let (s, published) = h
            .post(
                USER,
                "/catalog/templates",
                json!({
                    "spec": bakery,
                    "name": "Neighbourhood bakery",
                    "category_ids": ["do_type:supply_demand_planning", "industry:311811"]
                }),
            )
            .await;
        expect(s, StatusCode::CREATED, &published)?;
        let template = published["id"].as_str().unwrap();
        let (_, loaded) = h.get(USER, &format!("/catalog/templates/{template}")).await;
        let mut draft = loaded["spec"].clone();
        draft["description"] = json!("edited in the composer");
        let [p, g, j, _] = h.job("bakery", &draft.to_string(), 3, json!({ "kind": "shared" })).await?;
        let (_, reloaded) = h.get(USER, &format!("/catalog/templates/{template}")).await;
        ensure!(reloaded["spec"] == published["spec"], "editing the draft changed the template");
        let (_, stored) = h.get(USER, &format!("/projects/{p}/gyms/{g}")).await;
        ensure!(stored["spec"]["description"] == "edited in the composer", "stored gym lost the edit: {stored}");

        let (s, v) = h.post(USER, &format!("/jobs/{j}/launch"), json!({})).await;
        expect(s, StatusCode::ACCEPTED, &v)?;
        let body = tokio::time::timeout(Duration::from_secs(100), h.sse(&j, 1))
            .await
            .map_err(|_| "job stream did not end".to_string())?;
        let events = frame_events(&body);
        let statuses: Vec<&str> =
            events.iter().filter(|e| e["kind"] == "status").filter_map(|e| e["payload"]["status"].as_str()).collect();
        ensure!(statuses == ["running", "succeeded"], "statuses {statuses:?}");

        let (s, result) = h.get(USER, &format!("/jobs/{j}/result")).await;
        expect(s, StatusCode::OK, &result)?;
        let best = &result["document"]["top_k"][0];
        let entry = result["document"]["candidates"]
            .as_array()
            .and_then(|cs| cs.iter().find(|c| &c["candidate_id"] == best))
            .ok_or("best candidate missing from the result")?;
        let reference = entry["protocols"].as_str().ok_or("no protocols ref")?;
        let (s, protocols) = h.send(h.http.get(format!("{}{reference}", h.running.url())).bearer_auth(USER)).await;
        expect(s, StatusCode::OK, &protocols)?;

        let calls = [
            ("/analytics/matrix", json!({ "protocols": protocols, "kind": "state" })),
            ("/analytics/matrix", json!({ "protocols": protocols, "kind": "action" })),
            ("/analytics/matrix", json!({ "protocols": protocols, "kind": "clustered", "k": 2 })),
            ("/analytics/graph", json!({ "protocols": protocols })),
            ("/analytics/layout", json!({ "protocols": protocols })),
            ("/analytics/rules", json!({ "protocols": protocols })),
        ];
        for (path, body) in calls {
            let (s, v) = h.post(USER, path, body).await;
            expect(s, StatusCode::OK, &v)?;
        }
        Ok(format!("{} protocol episodes; matrices, graph, layout and rules served", protocols.as_array().map_or(0, Vec::len)))
    })
}
