use std::collections::BTreeMap;

use autodo_core::engine::EngineConfig;
use autodo_core::gymspec::GymSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub name: String,
    pub members: Vec<String>,
    /// Unix milliseconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredGym {
    pub gym_id: String,
    pub project_id: String,
    /// 1 for the first gym of a given name in a project, then 2, 3, …
    pub version: u32,
    pub spec: GymSpec,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredConfig {
    pub config_id: String,
    pub project_id: String,
    pub owner: String,
    pub shared: bool,
    pub config: EngineConfig,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Created,
    Launched,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Created => "created",
            JobStatus::Launched => "launched",
            JobStatus::Running => "running",
            JobStatus::Succeeded => "succeeded",
            JobStatus::Failed => "failed",
            JobStatus::Cancelled => "cancelled",
        }
    }

    pub fn parse(s: &str) -> Option<JobStatus> {
        [
            JobStatus::Created,
            JobStatus::Launched,
            JobStatus::Running,
            JobStatus::Succeeded,
            JobStatus::Failed,
            JobStatus::Cancelled,
        ]
        .into_iter()
        .find(|j| j.as_str() == s)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed | JobStatus::Cancelled)
    }

    /// Allowed moves: created → launched → running → succeeded | failed,
    /// launched → failed, and cancellation from any non-terminal status.
    pub fn can_move_to(self, next: JobStatus) -> bool {
        use JobStatus::*;
        match (self, next) {
            (Created, Launched) | (Launched, Running) | (Running, Succeeded) => true,
            (Launched | Running, Failed) => true,
            (s, Cancelled) => !s.is_terminal(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cluster {
    /// In-process worker pool.
    Shared,
    /// The launcher POSTs the job descriptor to `endpoint`.
    Custom { endpoint: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Log,
    Metric,
    CandidateStarted,
    CandidateFinished,
    ProtocolChunk,
    Status,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Log,
        EventKind::Metric,
        EventKind::CandidateStarted,
        EventKind::CandidateFinished,
        EventKind::ProtocolChunk,
        EventKind::Status,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Log => "log",
            EventKind::Metric => "metric",
            EventKind::CandidateStarted => "candidate_started",
            EventKind::CandidateFinished => "candidate_finished",
            EventKind::ProtocolChunk => "protocol_chunk",
            EventKind::Status => "status",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub job_id: String,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    /// Unix milliseconds at append time.
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewEvent {
    pub kind: EventKind,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub project_id: String,
    pub gym_id: String,
    pub config_id: String,
    pub status: JobStatus,
    pub cluster: Cluster,
    pub created_at: u64,
    pub result_ref: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    #[serde(flatten)]
    pub job: Job,
    pub last_seq: u64,
    pub event_counts: BTreeMap<EventKind, u64>,
}

/// Returned once, to the creator, when a job is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedJob {
    pub job_id: String,
    pub status: JobStatus,
    pub api_token: String,
}

/// What a worker needs to start: sent to custom launch endpoints and
/// handed to shared-pool workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDescriptor {
    pub job_id: String,
    pub api_token: String,
    pub controller_url: String,
}

/// What a worker fetches after start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobBundle {
    pub job_id: String,
    pub gym: GymSpec,
    pub config: EngineConfig,
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
