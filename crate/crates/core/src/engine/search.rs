//! Joint agent-kind × hyperparameter search.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::agents::{evaluate, evaluate_offline, train, DataSource};
use super::candidates::enumerate_candidates;
use super::protocol::EvaluationProtocol;
use super::{mix_seed, AgentKind, EngineConfig, HyperparamSchema, ParamValue, PipelineCandidate, SearchError};

/// Progress record emitted while a search runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EngineEvent {
    Log {
        message: String,
    },
    CandidateStarted {
        candidate_id: u32,
        agent: AgentKind,
        hyperparams: BTreeMap<String, ParamValue>,
    },
    /// Per-episode training series of one candidate.
    TrainingSeries {
        candidate_id: u32,
        series: Vec<f64>,
    },
    CandidateFinished {
        candidate_id: u32,
        agent: AgentKind,
        status: CandidateStatus,
        rank_score: Option<f64>,
        train_steps: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Progress {
        completed: usize,
        total: usize,
    },
}

impl EngineEvent {
    /// Job-event kind under which the controller stores this event.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineEvent::Log { .. } => "log",
            EngineEvent::CandidateStarted { .. } => "candidate_started",
            EngineEvent::CandidateFinished { .. } => "candidate_finished",
            EngineEvent::TrainingSeries { .. } | EngineEvent::Progress { .. } => "metric",
        }
    }

    /// Job-event payload: the event's fields, with `name` set on metrics.
    pub fn payload(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("engine events serialize");
        let obj = v.as_object_mut().expect("tagged enum serializes to an object");
        let tag = obj.remove("event");
        if self.kind() == "metric" {
            obj.insert("name".into(), tag.unwrap_or(Value::Null));
        }
        v
    }
}

/// Receives engine events. Implementations must be callable from worker threads.
pub trait EventSink: Sync {
    fn emit(&self, event: EngineEvent);

    /// Polled between candidates; returning true stops the search.
    fn cancelled(&self) -> bool {
        false
    }
}

pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: EngineEvent) {}
}

/// Keeps every event in arrival order.
#[derive(Default)]
pub struct CollectingSink {
    events: Mutex<Vec<EngineEvent>>,
}

impl CollectingSink {
    pub fn new() -> CollectingSink {
        CollectingSink::default()
    }

    pub fn events(&self) -> Vec<EngineEvent> {
        self.events.lock().expect("sink lock").clone()
    }
}

impl EventSink for CollectingSink {
    fn emit(&self, event: EngineEvent) {
        self.events.lock().expect("sink lock").push(event);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub candidate: PipelineCandidate,
    pub status: CandidateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub train_series: Vec<f64>,
    pub protocols: Vec<EvaluationProtocol>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Best `top_k` successful candidates, best first.
    pub top_k: Vec<CandidateOutcome>,
    /// Every candidate: ranked successes, then failures by id.
    pub all: Vec<CandidateOutcome>,
}

/// Serialized summary of a search; protocols are referenced, not inlined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDocument {
    pub top_k: Vec<u32>,
    pub candidates: Vec<CandidateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub candidate_id: u32,
    pub agent: AgentKind,
    pub hyperparams: BTreeMap<String, ParamValue>,
    pub rank_score: Option<f64>,
    pub train_steps: u64,
    pub status: CandidateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocols: Option<String>,
}

impl SearchResult {
    pub fn document(&self, protocol_ref: impl Fn(u32) -> String) -> SearchDocument {
        SearchDocument {
            top_k: self.top_k.iter().map(|c| c.candidate.candidate_id).collect(),
            candidates: self
                .all
                .iter()
                .map(|c| CandidateEntry {
                    candidate_id: c.candidate.candidate_id,
                    agent: c.candidate.agent,
                    hyperparams: c.candidate.hyperparams.clone(),
                    rank_score: c.candidate.rank_score,
                    train_steps: c.candidate.train_steps,
                    status: c.status,
                    error: c.error.clone(),
                    protocols: (c.status == CandidateStatus::Succeeded)
                        .then(|| protocol_ref(c.candidate.candidate_id)),
                })
                .collect(),
        }
    }

    pub fn candidate(&self, id: u32) -> Option<&CandidateOutcome> {
        self.all.iter().find(|c| c.candidate.candidate_id == id)
    }
}

fn run_candidate(source: DataSource<'_>, config: &EngineConfig, mut c: PipelineCandidate) -> CandidateOutcome {
    let id = c.candidate_id as u64;
    let failed = |c: PipelineCandidate, error: String| CandidateOutcome {
        candidate: c,
        status: CandidateStatus::Failed,
        error: Some(error),
        train_series: Vec::new(),
        protocols: Vec::new(),
    };
    let trained = match train(source, &c, config.episodes_train, mix_seed(config.seed, 2 * id + 1)) {
        Ok(t) => t,
        Err(e) => return failed(c, e.to_string()),
    };
    c.train_steps = trained.train_steps;
    let eval_seed = mix_seed(config.seed, 2 * id + 2);
    let protocols = match source {
        DataSource::Gym(spec) => evaluate(spec, &trained.agent, config.episodes_eval, eval_seed),
        DataSource::Dataset(data) => {
            evaluate_offline(data, &trained.agent, config.episodes_eval, config.offline_horizon, eval_seed)
        }
    };
    let ok: Vec<f64> = protocols
        .iter()
        .filter(|p| p.failed.is_none())
        .map(EvaluationProtocol::total_reward)
        .collect();
    if ok.is_empty() {
        let reason = protocols
            .iter()
            .find_map(|p| p.failed.clone())
            .unwrap_or_else(|| "no evaluation episodes".into());
        return CandidateOutcome {
            protocols,
            train_series: trained.series,
            ..failed(c, format!("every evaluation episode failed: {reason}"))
        };
    }
    let score = ok.iter().sum::<f64>() / ok.len() as f64;
    if !score.is_finite() {
        return failed(c, "rank score is not finite".into());
    }
    c.rank_score = Some(score);
    CandidateOutcome {
        candidate: c,
        status: CandidateStatus::Succeeded,
        error: None,
        train_series: trained.series,
        protocols,
    }
}

/// Orders successes by score descending, then fewer training steps, then id.
pub fn rank(outcomes: &mut [CandidateOutcome]) {
    outcomes.sort_by(|a, b| {
        let key = |o: &CandidateOutcome| (o.status == CandidateStatus::Failed, o.candidate.rank_score);
        let (fa, sa) = key(a);
        let (fb, sb) = key(b);
        fa.cmp(&fb)
            .then_with(|| {
                sb.unwrap_or(f64::NEG_INFINITY)
                    .partial_cmp(&sa.unwrap_or(f64::NEG_INFINITY))
                    .expect("scores are finite")
            })
            .then_with(|| {
                if fa {
                    std::cmp::Ordering::Equal
                } else {
                    a.candidate.train_steps.cmp(&b.candidate.train_steps)
                }
            })
            .then_with(|| a.candidate.candidate_id.cmp(&b.candidate.candidate_id))
    });
}

/// Trains and evaluates every candidate on up to `optimization_workers`
/// threads and returns the ranked result. Deterministic under the config
/// seed regardless of worker count; only event interleaving varies.
pub fn search(
    source: DataSource<'_>,
    config: &EngineConfig,
    schemas: &BTreeMap<AgentKind, HyperparamSchema>,
    sink: &dyn EventSink,
) -> Result<SearchResult, SearchError> {
    let candidates = enumerate_candidates(config, schemas)?;
    let total = candidates.len();
    sink.emit(EngineEvent::Log {
        message: format!("searching {total} candidates on {}", source.kind_name()),
    });
    let next = AtomicUsize::new(0);
    let completed = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CandidateOutcome>>> = Mutex::new(vec![None; total]);
    let workers = config.optimization_workers.min(total).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if sink.cancelled() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= total {
                    return;
                }
                let c = candidates[i].clone();
                sink.emit(EngineEvent::CandidateStarted {
                    candidate_id: c.candidate_id,
                    agent: c.agent,
                    hyperparams: c.hyperparams.clone(),
                });
                let outcome = run_candidate(source, config, c);
                if !outcome.train_series.is_empty() {
                    sink.emit(EngineEvent::TrainingSeries {
                        candidate_id: outcome.candidate.candidate_id,
                        series: outcome.train_series.clone(),
                    });
                }
                sink.emit(EngineEvent::CandidateFinished {
                    candidate_id: outcome.candidate.candidate_id,
                    agent: outcome.candidate.agent,
                    status: outcome.status,
                    rank_score: outcome.candidate.rank_score,
                    train_steps: outcome.candidate.train_steps,
                    error: outcome.error.clone(),
                });
                slots.lock().expect("slot lock")[i] = Some(outcome);
                let done = completed.fetch_add(1, Ordering::SeqCst) + 1;
                sink.emit(EngineEvent::Progress { completed: done, total });
            });
        }
    });
    let slots = slots.into_inner().expect("slot lock");
    if slots.iter().any(Option::is_none) {
        return Err(SearchError::Cancelled);
    }
    let mut all: Vec<CandidateOutcome> = slots.into_iter().flatten().collect();
    rank(&mut all);
    if all.iter().all(|o| o.status == CandidateStatus::Failed) {
        return Err(SearchError::AllCandidatesFailed);
    }
    let top_k = all
        .iter()
        .filter(|o| o.status == CandidateStatus::Succeeded)
        .take(config.top_k)
        .cloned()
        .collect();
    Ok(SearchResult { top_k, all })
}

/// Convenience payload for a status-style summary of a finished search.
pub fn summary(result: &SearchResult) -> Value {
    json!({
        "top_k": result.top_k.iter().map(|c| json!({
            "candidate_id": c.candidate.candidate_id,
            "agent": c.candidate.agent,
            "rank_score": c.candidate.rank_score,
        })).collect::<Vec<_>>(),
        "candidates": result.all.len(),
    })
}
