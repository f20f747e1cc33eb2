use std::collections::HashMap;
use std::sync::{Mutex, OnceLock, RwLock};
use std::time::Duration;

use autodo_core::catalog::Catalog;
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::error::ApiError;
use crate::launcher::Launcher;
use crate::model::*;
use crate::store::{Appended, Store};
use crate::ControllerConfig;

/// Shared server state: the store plus everything that is not persisted.
pub struct Controller {
    pub store: Store,
    pub config: ControllerConfig,
    catalog: RwLock<Catalog>,
    tails: Mutex<HashMap<String, watch::Sender<u64>>>,
    launcher: Launcher,
    public_url: OnceLock<String>,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Controller, ApiError> {
        let store = Store::open(&config.db_path)?;
        let mut catalog = Catalog::seeded();
        for entry in store.templates()? {
            catalog
                .restore(entry)
                .map_err(|e| ApiError::Internal(format!("stored template: {e}")))?;
        }
        let launcher = Launcher::new(config.shared_pool_size);
        let public_url = OnceLock::new();
        if let Some(url) = &config.public_url {
            let _ = public_url.set(url.clone());
        }
        Ok(Controller {
            store,
            config,
            catalog: RwLock::new(catalog),
            tails: Mutex::new(HashMap::new()),
            launcher,
            public_url,
        })
    }

    /// Base URL handed to workers; set once the listener is bound unless
    /// configured explicitly.
    pub fn set_public_url(&self, url: String) {
        let _ = self.public_url.set(url);
    }

    pub fn public_url(&self) -> Option<&str> {
        self.public_url.get().map(String::as_str)
    }

    pub fn catalog(&self) -> std::sync::RwLockReadGuard<'_, Catalog> {
        self.catalog.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn catalog_mut(&self) -> std::sync::RwLockWriteGuard<'_, Catalog> {
        self.catalog.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Receiver that changes whenever the job's log grows.
    pub fn subscribe(&self, job_id: &str) -> watch::Receiver<u64> {
        let mut tails = self.tails.lock().unwrap_or_else(|e| e.into_inner());
        tails
            .entry(job_id.to_string())
            .or_insert_with(|| watch::channel(0).0)
            .subscribe()
    }

    fn notify(&self, appended: &Appended) {
        let tails = self.tails.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(tx) = tails.get(&appended.event.job_id) {
            tx.send_replace(appended.event.seq);
        }
    }

    pub fn append_event(&self, job_id: &str, token: &str, event: &NewEvent) -> Result<Appended, ApiError> {
        let size = serde_json::to_vec(&event.payload)?.len();
        if size > crate::PAYLOAD_CAP {
            return Err(ApiError::PayloadTooLarge(size));
        }
        let appended = self.store.append_event(job_id, token, event)?;
        self.notify(&appended);
        Ok(appended)
    }

    pub fn transition(&self, job_id: &str, next: JobStatus, payload: Value) -> Result<Appended, ApiError> {
        let appended = self.store.transition(job_id, next, payload)?;
        self.notify(&appended);
        Ok(appended)
    }

    /// Marks the job launched, then hands it to its cluster's launcher. A
    /// launcher failure fails the job.
    pub async fn launch(&self, job_id: &str) -> Result<Job, ApiError> {
        let job = self.store.launch(job_id)?;
        let descriptor = JobDescriptor {
            job_id: job_id.to_string(),
            api_token: self.store.job_token(job_id)?,
            controller_url: self
                .public_url()
                .ok_or_else(|| ApiError::Internal("controller URL is not known yet".into()))?
                .to_string(),
        };
        if let Err(e) = self.launcher.dispatch(&job.cluster, descriptor).await {
            let message = e.to_string();
            // the job may have been cancelled meanwhile; that status stands
            let _ = self.transition(job_id, JobStatus::Failed, json!({ "error": message }));
            return Err(e);
        }
        self.store.job(job_id)
    }

    pub fn cancel(&self, job_id: &str, principal: &str) -> Result<Job, ApiError> {
        self.transition(job_id, JobStatus::Cancelled, json!({ "by": principal }))?;
        self.store.job(job_id)
    }

    /// Fails launched or running jobs that have been silent for longer than
    /// the heartbeat timeout. Returns the ids it failed.
    pub fn sweep(&self, timeout: Duration) -> Vec<String> {
        let cutoff = now_ms().saturating_sub(timeout.as_millis() as u64);
        let mut failed = Vec::new();
        for id in self.store.stale_jobs(cutoff).unwrap_or_default() {
            let payload = json!({ "error": format!("worker heartbeat lost for more than {} s", timeout.as_secs()) });
            if self.transition(&id, JobStatus::Failed, payload).is_ok() {
                failed.push(id);
            }
        }
        failed
    }
}
