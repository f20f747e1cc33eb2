//! The worker side of a job: fetch the bundle, run the search, stream
//! events back with the job token, post the result and the final status.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use autodo_core::engine::protocol::EvaluationProtocol;
use autodo_core::engine::{
    default_schemas, search, summary, CandidateStatus, DataSource, EngineEvent, EventSink, SearchError,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{EventKind, JobBundle, NewEvent};
use crate::PAYLOAD_CAP;

/// Protocol JSON is split into pieces of at most this many bytes, leaving
/// room for the chunk envelope under the payload cap.
pub const CHUNK_BYTES: usize = 192 * 1024;

const HEARTBEAT_EVERY: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("request failed: {0}")]
    Http(String),
    #[error("controller answered {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("job is already terminal")]
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkerOutcome {
    Succeeded,
    Failed(String),
    Cancelled,
}

pub struct WorkerClient {
    http: reqwest::blocking::Client,
    base: String,
    job_id: String,
    token: String,
}

impl WorkerClient {
    pub fn new(controller: &str, job_id: &str, token: &str) -> WorkerClient {
        WorkerClient {
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client"),
            base: format!("{}/api/v1/jobs/{job_id}", controller.trim_end_matches('/')),
            job_id: job_id.to_string(),
            token: token.to_string(),
        }
    }

    fn check(response: reqwest::Result<reqwest::blocking::Response>) -> Result<reqwest::blocking::Response, WorkerError> {
        let response = response.map_err(|e| WorkerError::Http(e.to_string()))?;
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let body = response.text().unwrap_or_default();
        if status.as_u16() == 409 && body.contains("\"job_terminal\"") {
            return Err(WorkerError::Terminal);
        }
        Err(WorkerError::Rejected {
            status: status.as_u16(),
            body,
        })
    }

    pub fn bundle(&self) -> Result<JobBundle, WorkerError> {
        let r = Self::check(self.http.get(format!("{}/bundle", self.base)).bearer_auth(&self.token).send())?;
        r.json().map_err(|e| WorkerError::Http(e.to_string()))
    }

    /// Appends one event and returns its seq.
    pub fn append(&self, kind: EventKind, payload: Value) -> Result<u64, WorkerError> {
        let r = Self::check(
            self.http
                .post(format!("{}/events", self.base))
                .bearer_auth(&self.token)
                .json(&NewEvent { kind, payload })
                .send(),
        )?;
        let v: Value = r.json().map_err(|e| WorkerError::Http(e.to_string()))?;
        Ok(v["seq"].as_u64().unwrap_or(0))
    }

    pub fn heartbeat(&self) -> Result<(), WorkerError> {
        Self::check(self.http.post(format!("{}/heartbeat", self.base)).bearer_auth(&self.token).send()).map(|_| ())
    }

    pub fn post_result(&self, result: &Value) -> Result<(), WorkerError> {
        Self::check(
            self.http
                .post(format!("{}/result", self.base))
                .bearer_auth(&self.token)
                .json(result)
                .send(),
        )
        .map(|_| ())
    }
}

/// Splits a candidate's protocols into `protocol_chunk` payloads.
pub fn chunk_protocols(candidate_id: u32, protocols: &[EvaluationProtocol]) -> Vec<Value> {
    let text = serde_json::to_string(protocols).expect("protocols serialize");
    let mut pieces = Vec::new();
    let mut rest = text.as_str();
    while !rest.is_empty() {
        let mut end = rest.len().min(CHUNK_BYTES);
        while !rest.is_char_boundary(end) {
            end -= 1;
        }
        pieces.push(&rest[..end]);
        rest = &rest[end..];
    }
    if pieces.is_empty() {
        pieces.push("");
    }
    let total = pieces.len();
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            json!({
                "candidate_id": candidate_id,
                "chunk_index": i,
                "total_chunks": total,
                "data": data,
            })
        })
        .collect()
}

/// Inverse of [`chunk_protocols`]. Chunks may arrive in any order.
pub fn assemble_protocols(chunks: &[Value]) -> Result<Vec<EvaluationProtocol>, String> {
    let total = chunks
        .first()
        .and_then(|c| c["total_chunks"].as_u64())
        .ok_or("no protocol chunks")? as usize;
    let mut parts = vec![None; total];
    for c in chunks {
        let i = c["chunk_index"].as_u64().ok_or("chunk without index")? as usize;
        let data = c["data"].as_str().ok_or("chunk without data")?;
        *parts.get_mut(i).ok_or("chunk index out of range")? = Some(data);
    }
    let mut text = String::new();
    for (i, p) in parts.into_iter().enumerate() {
        text.push_str(p.ok_or(format!("chunk {i} of {total} is missing"))?);
    }
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

/// Thins a series until its payload fits under the cap.
fn fit_payload(mut payload: Value) -> Value {
    while serde_json::to_vec(&payload).map_or(0, |v| v.len()) > PAYLOAD_CAP {
        let Some(series) = payload.get_mut("series").and_then(Value::as_array_mut) else {
            return json!({ "name": "omitted", "reason": "payload over the size cap" });
        };
        let thinned: Vec<Value> = series.iter().step_by(2).cloned().collect();
        *series = thinned;
        payload["thinned"] = json!(true);
    }
    payload
}

struct HttpSink<'a> {
    client: &'a WorkerClient,
    stop: AtomicBool,
    /// Set when the controller could not be reached.
    lost: Mutex<Option<String>>,
}

impl EventSink for HttpSink<'_> {
    fn emit(&self, event: EngineEvent) {
        if self.stop.load(Ordering::SeqCst) {
            return;
        }
        let kind = EventKind::parse(event.kind()).unwrap_or(EventKind::Log);
        match self.client.append(kind, fit_payload(event.payload())) {
            Ok(_) => {}
            Err(WorkerError::Terminal) => self.stop.store(true, Ordering::SeqCst),
            Err(e) => {
                *self.lost.lock().unwrap_or_else(|p| p.into_inner()) = Some(e.to_string());
                self.stop.store(true, Ordering::SeqCst);
            }
        }
    }

    fn cancelled(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

/// Runs one job to completion against the controller at `controller`.
pub fn run(controller: &str, job_id: &str, token: &str) -> Result<WorkerOutcome, WorkerError> {
    let client = WorkerClient::new(controller, job_id, token);
    let bundle = client.bundle()?;
    match client.append(EventKind::Status, json!({ "status": "running" })) {
        Ok(_) => {}
        Err(WorkerError::Terminal) => return Ok(WorkerOutcome::Cancelled),
        Err(e) => return Err(e),
    }
    let done = AtomicBool::new(false);
    let sink = HttpSink {
        client: &client,
        stop: AtomicBool::new(false),
        lost: Mutex::new(None),
    };
    let outcome = thread::scope(|scope| {
        scope.spawn(|| {
            let mut last = Instant::now();
            while !done.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(200));
                if last.elapsed() >= HEARTBEAT_EVERY {
                    let _ = client.heartbeat();
                    last = Instant::now();
                }
            }
        });
        let result = search(DataSource::Gym(&bundle.gym), &bundle.config, &default_schemas(), &sink);
        let outcome = finish(&client, &sink, result);
        done.store(true, Ordering::SeqCst);
        outcome
    });
    let lost = sink.lost.lock().unwrap_or_else(|p| p.into_inner()).take();
    match (outcome, lost) {
        (Ok(WorkerOutcome::Cancelled), Some(reason)) => Err(WorkerError::Http(reason)),
        (outcome, _) => outcome,
    }
}

fn finish(
    client: &WorkerClient,
    sink: &HttpSink<'_>,
    result: Result<autodo_core::engine::SearchResult, SearchError>,
) -> Result<WorkerOutcome, WorkerError> {
    let report_failure = |message: String| match client.append(EventKind::Status, json!({ "status": "failed", "error": message })) {
        Ok(_) => Ok(WorkerOutcome::Failed(message)),
        Err(WorkerError::Terminal) => Ok(WorkerOutcome::Cancelled),
        Err(e) => Err(e),
    };
    let result = match result {
        Ok(r) => r,
        Err(SearchError::Cancelled) => return Ok(WorkerOutcome::Cancelled),
        Err(e) => return report_failure(e.to_string()),
    };
    if sink.cancelled() {
        return Ok(WorkerOutcome::Cancelled);
    }
    let job_id = &client.job_id;
    let steps = (|| -> Result<(), WorkerError> {
        for outcome in result.all.iter().filter(|c| c.status == CandidateStatus::Succeeded) {
            for chunk in chunk_protocols(outcome.candidate.candidate_id, &outcome.protocols) {
                client.append(EventKind::ProtocolChunk, chunk)?;
            }
        }
        let document = result.document(|id| format!("/api/v1/jobs/{job_id}/candidates/{id}/protocols"));
        client.post_result(&json!({ "document": document, "summary": summary(&result) }))?;
        client.append(EventKind::Status, json!({ "status": "succeeded" }))?;
        Ok(())
    })();
    match steps {
        Ok(()) => Ok(WorkerOutcome::Succeeded),
        Err(WorkerError::Terminal) => Ok(WorkerOutcome::Cancelled),
        Err(e) => Err(e),
    }
}
