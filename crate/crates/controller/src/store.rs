//! SQLite persistence. One connection behind a mutex; every mutation is a
//! single transaction, so per-job sequence numbers stay dense even across
//! crashes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use autodo_core::catalog::TemplateEntry;
use autodo_core::engine::EngineConfig;
use autodo_core::gymspec::GymSpec;
use rand::RngCore;
use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::model::*;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS projects (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    members TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS project_members (
    project_id TEXT NOT NULL,
    principal TEXT NOT NULL,
    PRIMARY KEY (project_id, principal)
);
CREATE TABLE IF NOT EXISTS gyms (
    id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL,
    name TEXT NOT NULL,
    version INTEGER NOT NULL,
    spec TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS configs (
    id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL,
    owner TEXT NOT NULL,
    shared INTEGER NOT NULL,
    config TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS jobs (
    id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL,
    gym_id TEXT NOT NULL,
    config_id TEXT NOT NULL,
    status TEXT NOT NULL,
    cluster TEXT NOT NULL,
    token TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    result_ref TEXT,
    result TEXT,
    error TEXT,
    last_seq INTEGER NOT NULL DEFAULT 0,
    last_heartbeat INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS events (
    job_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    kind TEXT NOT NULL,
    payload TEXT NOT NULL,
    ts INTEGER NOT NULL,
    PRIMARY KEY (job_id, seq)
) WITHOUT ROWID;
CREATE TABLE IF NOT EXISTS templates (
    id TEXT PRIMARY KEY,
    entry TEXT NOT NULL
);
";

pub struct Store {
    conn: Mutex<Connection>,
}

fn new_id(prefix: &str) -> String {
    format!("{prefix}-{}", uuid::Uuid::new_v4().simple())
}

/// 256 random bits, hex encoded.
fn new_token() -> String {
    let mut bytes = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tokens_match(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Outcome of a successful append.
#[derive(Debug, Clone)]
pub struct Appended {
    pub event: JobEvent,
    pub status: JobStatus,
}

pub struct EventPage {
    pub events: Vec<JobEvent>,
    pub status: JobStatus,
    pub last_seq: u64,
}

impl Store {
    pub fn open(path: &Path) -> Result<Store, ApiError> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn: Mutex::new(conn) })
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create_project(&self, name: &str, principal: &str, members: &[String]) -> Result<Project, ApiError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ApiError::validation("project name must not be empty"));
        }
        let mut all = vec![principal.to_string()];
        for m in members {
            if !all.contains(m) {
                all.push(m.clone());
            }
        }
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let clash: Option<String> = tx
            .query_row(
                "SELECT p.id FROM projects p JOIN project_members m ON m.project_id = p.id
                 WHERE p.name = ?1 AND m.principal = ?2",
                params![name, principal],
                |r| r.get(0),
            )
            .optional()?;
        if clash.is_some() {
            return Err(ApiError::DuplicateName(name.to_string()));
        }
        let project = Project {
            id: new_id("prj"),
            name: name.to_string(),
            members: all,
            created_at: now_ms(),
        };
        tx.execute(
            "INSERT INTO projects (id, name, members, created_at) VALUES (?1, ?2, ?3, ?4)",
            params![project.id, project.name, serde_json::to_string(&project.members)?, project.created_at],
        )?;
        for m in &project.members {
            tx.execute(
                "INSERT INTO project_members (project_id, principal) VALUES (?1, ?2)",
                params![project.id, m],
            )?;
        }
        tx.commit()?;
        Ok(project)
    }

    pub fn list_projects(&self, principal: &str) -> Result<Vec<Project>, ApiError> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT p.id, p.name, p.members, p.created_at FROM projects p
             JOIN project_members m ON m.project_id = p.id
             WHERE m.principal = ?1 ORDER BY p.created_at, p.id",
        )?;
        let rows = stmt.query_map([principal], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, u64>(3)?))
        })?;
        rows.map(|row| {
            let (id, name, members, created_at) = row?;
            Ok(Project {
                id,
                name,
                members: serde_json::from_str(&members)?,
                created_at,
            })
        })
        .collect()
    }

    /// Fails with NotFound for unknown projects and Forbidden for non-members.
    pub fn require_member(&self, project_id: &str, principal: &str) -> Result<(), ApiError> {
        let conn = self.lock();
        Self::member_check(&conn, project_id, principal)
    }

    fn member_check(conn: &Connection, project_id: &str, principal: &str) -> Result<(), ApiError> {
        let exists: bool = conn
            .query_row("SELECT 1 FROM projects WHERE id = ?1", [project_id], |_| Ok(true))
            .optional()?
            .is_some();
        if !exists {
            return Err(ApiError::NotFound(format!("project `{project_id}`")));
        }
        let member = conn
            .query_row(
                "SELECT 1 FROM project_members WHERE project_id = ?1 AND principal = ?2",
                params![project_id, principal],
                |_| Ok(()),
            )
            .optional()?
            .is_some();
        if member {
            Ok(())
        } else {
            Err(ApiError::Forbidden(project_id.to_string()))
        }
    }

    pub fn put_gym(&self, project_id: &str, spec: &GymSpec) -> Result<StoredGym, ApiError> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let version: u32 = tx.query_row(
            "SELECT COALESCE(MAX(version), 0) + 1 FROM gyms WHERE project_id = ?1 AND name = ?2",
            params![project_id, spec.name],
            |r| r.get(0),
        )?;
        let gym = StoredGym {
            gym_id: new_id("gym"),
            project_id: project_id.to_string(),
            version,
            spec: spec.clone(),
            created_at: now_ms(),
        };
        tx.execute(
            "INSERT INTO gyms (id, project_id, name, version, spec, created_at) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![gym.gym_id, project_id, spec.name, version, serde_json::to_string(spec)?, gym.created_at],
        )?;
        tx.commit()?;
        Ok(gym)
    }

    fn gym_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<(String, String, u32, String, u64)> {
        Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?))
    }

    fn to_gym((gym_id, project_id, version, spec, created_at): (String, String, u32, String, u64)) -> Result<StoredGym, ApiError> {
        Ok(StoredGym {
            gym_id,
            project_id,
            version,
            spec: serde_json::from_str(&spec)?,
            created_at,
        })
    }

    pub fn gym(&self, project_id: &str, gym_id: &str) -> Result<StoredGym, ApiError> {
        let conn = self.lock();
        let row = conn
            .query_row(
                "SELECT id, project_id, version, spec, created_at FROM gyms WHERE id = ?1 AND project_id = ?2",
                params![gym_id, project_id],
                Self::gym_row,
            )
            .optional()?
            .ok_or_else(|| ApiError::NotFound(format!("gym `{gym_id}`")))?;
        Self::to_gym(row)
    }

    pub fn list_gyms(&self, project_id: &str) -> Result<Vec<StoredGym>, ApiError> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT id, project_id, version, spec, created_at FROM gyms WHERE project_id = ?1 ORDER BY created_at, id",
        )?;
        let rows: Vec<_> = stmt.query_map([project_id], Self::gym_row)?.collect::<Result<_, _>>()?;
        rows.into_iter().map(Self::to_gym).collect()
    }

    pub fn put_config(&self, project_id: &str, owner: &str, config: &EngineConfig, shared: bool) -> Result<StoredConfig, ApiError> {
        let stored = StoredConfig {
            config_id: new_id("cfg"),
            project_id: project_id.to_string(),
            owner: owner.to_string(),
            shared,
            config: config.clone(),
            created_at: now_ms(),
        };
        self.lock().execute(
            "INSERT INTO configs (id, project_id, owner, shared, config, created_at) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                stored.config_id,
                project_id,
                owner,
                shared,
                serde_json::to_string(config)?,
                stored.created_at
            ],
        )?;
        Ok(stored)
    }

    fn config_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<(String, String, String, bool, String, u64)> {
        Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?))
    }

    fn to_config(
        (config_id, project_id, owner, shared, config, created_at): (String, String, String, bool, String, u64),
    ) -> Result<StoredConfig, ApiError> {
        Ok(StoredConfig {
            config_id,
            project_id,
            owner,
            shared,
            config: serde_json::from_str(&config)?,
            created_at,
        })
    }

    pub fn config(&self, config_id: &str) -> Result<StoredConfig, ApiError> {
        let conn = self.lock();
        let row = conn
            .query_row(
                "SELECT id, project_id, owner, shared, config, created_at FROM configs WHERE id = ?1",
                [config_id],
                Self::config_row,
            )
            .optional()?
            .ok_or_else(|| ApiError::NotFound(format!("config `{config_id}`")))?;
        Self::to_config(row)
    }

    /// Configs usable from `project_id`: its own, plus shared configs of
    /// any project the principal belongs to.
    pub fn visible_configs(&self, project_id: &str, principal: &str) -> Result<Vec<StoredConfig>, ApiError> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT id, project_id, owner, shared, config, created_at FROM configs c
             WHERE c.project_id = ?1
                OR (c.shared = 1 AND EXISTS (SELECT 1 FROM project_members m
                                             WHERE m.project_id = c.project_id AND m.principal = ?2))
             ORDER BY created_at, id",
        )?;
        let rows: Vec<_> = stmt.query_map(params![project_id, principal], Self::config_row)?.collect::<Result<_, _>>()?;
        rows.into_iter().map(Self::to_config).collect()
    }

    pub fn config_visible(&self, config: &StoredConfig, project_id: &str, principal: &str) -> Result<bool, ApiError> {
        if config.project_id == project_id {
            return Ok(true);
        }
        if !config.shared {
            return Ok(false);
        }
        let conn = self.lock();
        Ok(conn
            .query_row(
                "SELECT 1 FROM project_members WHERE project_id = ?1 AND principal = ?2",
                params![config.project_id, principal],
                |_| Ok(()),
            )
            .optional()?
            .is_some())
    }

    pub fn create_job(&self, project_id: &str, gym_id: &str, config_id: &str, cluster: &Cluster) -> Result<(Job, String), ApiError> {
        let job = Job {
            id: new_id("job"),
            project_id: project_id.to_string(),
            gym_id: gym_id.to_string(),
            config_id: config_id.to_string(),
            status: JobStatus::Created,
            cluster: cluster.clone(),
            created_at: now_ms(),
            result_ref: None,
            error: None,
        };
        let token = new_token();
        self.lock().execute(
            "INSERT INTO jobs (id, project_id, gym_id, config_id, status, cluster, token, created_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                job.id,
                project_id,
                gym_id,
                config_id,
                job.status.as_str(),
                serde_json::to_string(cluster)?,
                token,
                job.created_at
            ],
        )?;
        Ok((job, token))
    }

    fn load_job(conn: &Connection, job_id: &str) -> Result<(Job, String, u64), ApiError> {
        let row = conn
            .query_row(
                "SELECT id, project_id, gym_id, config_id, status, cluster, created_at, result_ref, error, token, last_seq
                 FROM jobs WHERE id = ?1",
                [job_id],
                |r| {
                    Ok((
                        r.get::<_, String>(0)?,
                        r.get::<_, String>(1)?,
                        r.get::<_, String>(2)?,
                        r.get::<_, String>(3)?,
                        r.get::<_, String>(4)?,
                        r.get::<_, String>(5)?,
                        r.get::<_, u64>(6)?,
                        r.get::<_, Option<String>>(7)?,
                        r.get::<_, Option<String>>(8)?,
                        r.get::<_, String>(9)?,
                        r.get::<_, u64>(10)?,
                    ))
                },
            )
            .optional()?
            .ok_or_else(|| ApiError::NotFound(format!("job `{job_id}`")))?;
        let (id, project_id, gym_id, config_id, status, cluster, created_at, result_ref, error, token, last_seq) = row;
        let job = Job {
            id,
            project_id,
            gym_id,
            config_id,
            status: JobStatus::parse(&status).ok_or_else(|| ApiError::Internal(format!("bad status `{status}`")))?,
            cluster: serde_json::from_str(&cluster)?,
            created_at,
            result_ref,
            error,
        };
        Ok((job, token, last_seq))
    }

    pub fn job(&self, job_id: &str) -> Result<Job, ApiError> {
        Ok(Self::load_job(&self.lock(), job_id)?.0)
    }

    /// The job's token, for launchers.
    pub fn job_token(&self, job_id: &str) -> Result<String, ApiError> {
        Ok(Self::load_job(&self.lock(), job_id)?.1)
    }

    pub fn check_token(&self, job_id: &str, token: &str) -> Result<Job, ApiError> {
        let (job, expected, _) = Self::load_job(&self.lock(), job_id)?;
        if tokens_match(&expected, token) {
            Ok(job)
        } else {
            Err(ApiError::AuthFailed)
        }
    }

    fn insert_event(tx: &rusqlite::Transaction<'_>, job_id: &str, seq: u64, kind: EventKind, payload: &Value) -> Result<JobEvent, ApiError> {
        let event = JobEvent {
            job_id: job_id.to_string(),
            seq,
            kind,
            payload: payload.clone(),
            ts: now_ms(),
        };
        tx.execute(
            "INSERT INTO events (job_id, seq, kind, payload, ts) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![job_id, seq, kind.as_str(), serde_json::to_string(payload)?, event.ts],
        )?;
        tx.execute("UPDATE jobs SET last_seq = ?2 WHERE id = ?1", params![job_id, seq])?;
        Ok(event)
    }

    /// Moves a job to `next` and records the matching `status` event in the
    /// same transaction. `payload` may carry extra fields such as `error`.
    pub fn transition(&self, job_id: &str, next: JobStatus, payload: Value) -> Result<Appended, ApiError> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let (job, _, last_seq) = Self::load_job(&tx, job_id)?;
        let event = Self::apply_transition(&tx, &job, last_seq, next, payload)?;
        tx.commit()?;
        Ok(Appended { event, status: next })
    }

    /// created → launched. Recorded on the job row only, so the worker's
    /// first append gets seq 1.
    pub fn launch(&self, job_id: &str) -> Result<Job, ApiError> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let (job, _, _) = Self::load_job(&tx, job_id)?;
        if job.status.is_terminal() {
            return Err(ApiError::JobTerminal(job.status.as_str().into()));
        }
        if job.status != JobStatus::Created {
            return Err(ApiError::AlreadyLaunched);
        }
        tx.execute(
            "UPDATE jobs SET status = 'launched', last_heartbeat = ?2 WHERE id = ?1",
            params![job_id, now_ms()],
        )?;
        tx.commit()?;
        Ok(Job {
            status: JobStatus::Launched,
            ..job
        })
    }

    fn apply_transition(
        tx: &rusqlite::Transaction<'_>,
        job: &Job,
        last_seq: u64,
        next: JobStatus,
        payload: Value,
    ) -> Result<JobEvent, ApiError> {
        if job.status.is_terminal() {
            return Err(ApiError::JobTerminal(job.status.as_str().into()));
        }
        if next == JobStatus::Launched && job.status != JobStatus::Created {
            return Err(ApiError::AlreadyLaunched);
        }
        if !job.status.can_move_to(next) {
            return Err(ApiError::InvalidTransition {
                from: job.status.as_str().into(),
                to: next.as_str().into(),
            });
        }
        let mut payload = match payload {
            Value::Object(m) => Value::Object(m),
            Value::Null => json!({}),
            other => json!({ "detail": other }),
        };
        payload["status"] = json!(next.as_str());
        let mut result_ref = None;
        if next == JobStatus::Succeeded {
            let has_result: bool = tx.query_row("SELECT result IS NOT NULL FROM jobs WHERE id = ?1", [&job.id], |r| r.get(0))?;
            if !has_result {
                return Err(ApiError::validation("post the search result before reporting success"));
            }
            let r = format!("/api/v1/jobs/{}/result", job.id);
            payload["result_ref"] = json!(r);
            result_ref = Some(r);
        }
        let error = payload.get("error").and_then(Value::as_str).map(str::to_string);
        tx.execute(
            "UPDATE jobs SET status = ?2, result_ref = ?3, error = COALESCE(?4, error), last_heartbeat = ?5 WHERE id = ?1",
            params![job.id, next.as_str(), result_ref, error, now_ms()],
        )?;
        Self::insert_event(tx, &job.id, last_seq + 1, EventKind::Status, &payload)
    }

    /// Worker append. Status events drive the job's status.
    pub fn append_event(&self, job_id: &str, token: &str, event: &NewEvent) -> Result<Appended, ApiError> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let (job, expected, last_seq) = Self::load_job(&tx, job_id)?;
        if !tokens_match(&expected, token) {
            return Err(ApiError::AuthFailed);
        }
        if job.status.is_terminal() {
            return Err(ApiError::JobTerminal(job.status.as_str().into()));
        }
        if job.status == JobStatus::Created {
            return Err(ApiError::NotLaunched);
        }
        let (event, status) = if event.kind == EventKind::Status {
            let next = event
                .payload
                .get("status")
                .and_then(Value::as_str)
                .and_then(JobStatus::parse)
                .ok_or_else(|| ApiError::BadRequest("status events need a `status` field".into()))?;
            if matches!(next, JobStatus::Launched | JobStatus::Cancelled) {
                return Err(ApiError::BadRequest(format!("workers cannot report `{}`", next.as_str())));
            }
            (Self::apply_transition(&tx, &job, last_seq, next, event.payload.clone())?, next)
        } else {
            tx.execute("UPDATE jobs SET last_heartbeat = ?2 WHERE id = ?1", params![job_id, now_ms()])?;
            (Self::insert_event(&tx, job_id, last_seq + 1, event.kind, &event.payload)?, job.status)
        };
        tx.commit()?;
        Ok(Appended { event, status })
    }

    pub fn heartbeat(&self, job_id: &str, token: &str) -> Result<JobStatus, ApiError> {
        let job = self.check_token(job_id, token)?;
        self.lock()
            .execute("UPDATE jobs SET last_heartbeat = ?2 WHERE id = ?1", params![job_id, now_ms()])?;
        Ok(job.status)
    }

    pub fn store_result(&self, job_id: &str, token: &str, result: &Value) -> Result<(), ApiError> {
        let job = self.check_token(job_id, token)?;
        if job.status != JobStatus::Running {
            return Err(ApiError::InvalidTransition {
                from: job.status.as_str().into(),
                to: "result".into(),
            });
        }
        self.lock().execute(
            "UPDATE jobs SET result = ?2, last_heartbeat = ?3 WHERE id = ?1",
            params![job_id, serde_json::to_string(result)?, now_ms()],
        )?;
        Ok(())
    }

    pub fn result(&self, job_id: &str) -> Result<Value, ApiError> {
        let conn = self.lock();
        let (job, _, _) = Self::load_job(&conn, job_id)?;
        if job.status != JobStatus::Succeeded {
            return Err(ApiError::NotFound(format!("result of job `{job_id}`")));
        }
        let raw: String = conn.query_row("SELECT result FROM jobs WHERE id = ?1", [job_id], |r| r.get(0))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Up to `limit` events with seq ≥ `from_seq`, read together with the
    /// job's status so callers can tell a finished log from a quiet one.
    pub fn events(&self, job_id: &str, from_seq: u64, limit: usize) -> Result<EventPage, ApiError> {
        let conn = self.lock();
        let (job, _, last_seq) = Self::load_job(&conn, job_id)?;
        let mut stmt = conn.prepare_cached(
            "SELECT seq, kind, payload, ts FROM events WHERE job_id = ?1 AND seq >= ?2 ORDER BY seq LIMIT ?3",
        )?;
        let rows = stmt.query_map(params![job_id, from_seq, limit as i64], |r| {
            Ok((r.get::<_, u64>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, u64>(3)?))
        })?;
        let mut events = Vec::new();
        for row in rows {
            let (seq, kind, payload, ts) = row?;
            events.push(JobEvent {
                job_id: job_id.to_string(),
                seq,
                kind: EventKind::parse(&kind).ok_or_else(|| ApiError::Internal(format!("bad kind `{kind}`")))?,
                payload: serde_json::from_str(&payload)?,
                ts,
            });
        }
        Ok(EventPage {
            events,
            status: job.status,
            last_seq,
        })
    }

    pub fn summary(&self, job_id: &str) -> Result<JobSummary, ApiError> {
        let conn = self.lock();
        let (job, _, last_seq) = Self::load_job(&conn, job_id)?;
        let mut stmt = conn.prepare_cached("SELECT kind, COUNT(*) FROM events WHERE job_id = ?1 GROUP BY kind")?;
        let mut event_counts = BTreeMap::new();
        for row in stmt.query_map([job_id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, u64>(1)?)))? {
            let (kind, n) = row?;
            if let Some(k) = EventKind::parse(&kind) {
                event_counts.insert(k, n);
            }
        }
        Ok(JobSummary {
            job,
            last_seq,
            event_counts,
        })
    }

    pub fn list_jobs(&self, project_id: &str) -> Result<Vec<JobSummary>, ApiError> {
        let ids: Vec<String> = {
            let conn = self.lock();
            let mut stmt = conn.prepare("SELECT id FROM jobs WHERE project_id = ?1 ORDER BY created_at, id")?;
            let ids = stmt.query_map([project_id], |r| r.get(0))?.collect::<Result<_, _>>()?;
            ids
        };
        ids.iter().map(|id| self.summary(id)).collect()
    }

    /// Launched or running jobs whose last sign of life is older than `cutoff_ms`.
    pub fn stale_jobs(&self, cutoff_ms: u64) -> Result<Vec<String>, ApiError> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT id FROM jobs WHERE status IN ('launched', 'running') AND last_heartbeat < ?1 ORDER BY id",
        )?;
        let ids = stmt.query_map([cutoff_ms], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(ids)
    }

    /// Payloads of a candidate's protocol chunks in seq order.
    pub fn protocol_chunks(&self, job_id: &str, candidate_id: u32) -> Result<Vec<Value>, ApiError> {
        let conn = self.lock();
        Self::load_job(&conn, job_id)?;
        let mut stmt = conn.prepare(
            "SELECT payload FROM events WHERE job_id = ?1 AND kind = 'protocol_chunk'
             AND json_extract(payload, '$.candidate_id') = ?2 ORDER BY seq",
        )?;
        let rows: Vec<String> = stmt.query_map(params![job_id, candidate_id], |r| r.get(0))?.collect::<Result<_, _>>()?;
        rows.iter().map(|p| Ok(serde_json::from_str(p)?)).collect()
    }

    pub fn save_template(&self, entry: &TemplateEntry) -> Result<(), ApiError> {
        self.lock().execute(
            "INSERT OR REPLACE INTO templates (id, entry) VALUES (?1, ?2)",
            params![entry.id, serde_json::to_string(entry)?],
        )?;
        Ok(())
    }

    pub fn templates(&self) -> Result<Vec<TemplateEntry>, ApiError> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT entry FROM templates ORDER BY id")?;
        let rows: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        rows.iter().map(|e| Ok(serde_json::from_str(e)?)).collect()
    }
}
