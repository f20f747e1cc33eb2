use std::time::{Duration, Instant};

use autodo_core::catalog::seed;
use autodo_core::engine::{
    default_schemas, search, AgentKind, CandidateStatus, DataSource, EngineConfig, NullSink, SearchResult,
};

fn run(seed: u64) -> SearchResult {
    let spec = seed::gridworld();
    let config = EngineConfig {
        enabled_agents: vec![AgentKind::QLearning, AgentKind::RandomPolicy],
        candidate_budget: 6,
        seed,
        ..EngineConfig::default()
    };
    search(DataSource::Gym(&spec), &config, &default_schemas(), &NullSink).unwrap()
}

fn position(r: &SearchResult, agent: AgentKind) -> Option<usize> {
    r.top_k.iter().position(|c| c.candidate.agent == agent)
}

fn check_order(r: &SearchResult) {
    for w in r.all.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.status == CandidateStatus::Failed {
            continue;
        }
        assert_eq!(a.status, CandidateStatus::Succeeded, "failures sort last");
        let (sa, sb) = (a.candidate.rank_score.unwrap(), b.candidate.rank_score.unwrap());
        assert!(sa >= sb, "scores out of order");
        if sa == sb {
            let ka = (a.candidate.train_steps, a.candidate.candidate_id);
            let kb = (b.candidate.train_steps, b.candidate.candidate_id);
            assert!(ka < kb, "tie broken by fewer training steps, then id");
        }
    }
    assert_eq!(r.top_k.as_slice(), &r.all[..r.top_k.len()]);
}

#[test]
fn q_learning_outranks_random_policy() {
    let started = Instant::now();
    let mut wins = 0;
    for seed in 0..5 {
        let r = run(seed);
        assert_eq!(r.all.len(), 6);
        assert!(r.all.iter().any(|c| c.candidate.agent == AgentKind::RandomPolicy));
        check_order(&r);
        let q = position(&r, AgentKind::QLearning);
        let random = position(&r, AgentKind::RandomPolicy);
        if matches!((q, random), (Some(q), Some(r)) if q < r) || (q.is_some() && random.is_none()) {
            wins += 1;
        }
    }
    assert!(wins >= 4, "q_learning ahead in {wins} of 5 seeds");
    assert!(started.elapsed() < Duration::from_secs(60));
}

#[test]
fn same_seed_same_ranking() {
    let a = run(7);
    let b = run(7);
    let ids = |r: &SearchResult| r.all.iter().map(|c| c.candidate.candidate_id).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
    assert_eq!(a.top_k, b.top_k);
}
