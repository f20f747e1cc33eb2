//! Hands launched jobs to workers: a shared in-process pool, or a
//! user-supplied endpoint that receives the job descriptor.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;

use crate::error::ApiError;
use crate::model::{Cluster, JobDescriptor};
use crate::worker;

pub struct Launcher {
    pool: Option<Mutex<Sender<JobDescriptor>>>,
    http: reqwest::Client,
}

impl Launcher {
    /// Starts `pool_size` shared worker threads. With zero threads, shared
    /// launches fail.
    pub fn new(pool_size: usize) -> Launcher {
        let pool = (pool_size > 0).then(|| {
            let (tx, rx) = channel::<JobDescriptor>();
            let rx = Arc::new(Mutex::new(rx));
            for i in 0..pool_size {
                let rx = Arc::clone(&rx);
                thread::Builder::new()
                    .name(format!("autodo-worker-{i}"))
                    .spawn(move || pool_loop(&rx))
                    .expect("spawn worker thread");
            }
            Mutex::new(tx)
        });
        Launcher {
            pool,
            http: reqwest::Client::new(),
        }
    }

    pub async fn dispatch(&self, cluster: &Cluster, descriptor: JobDescriptor) -> Result<(), ApiError> {
        match cluster {
            Cluster::Shared => {
                let pool = self
                    .pool
                    .as_ref()
                    .ok_or_else(|| ApiError::LaunchFailed("the shared pool has no workers".into()))?;
                pool.lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .send(descriptor)
                    .map_err(|_| ApiError::LaunchFailed("the shared pool has shut down".into()))
            }
            Cluster::Custom { endpoint } => {
                let response = self
                    .http
                    .post(endpoint)
                    .json(&descriptor)
                    .send()
                    .await
                    .map_err(|e| ApiError::LaunchFailed(format!("{endpoint}: {e}")))?;
                if response.status().is_success() {
                    Ok(())
                } else {
                    Err(ApiError::LaunchFailed(format!("{endpoint} answered {}", response.status())))
                }
            }
        }
    }
}

fn pool_loop(rx: &Mutex<Receiver<JobDescriptor>>) {
    loop {
        let next = rx.lock().unwrap_or_else(|e| e.into_inner()).recv();
        let Ok(job) = next else { return };
        if let Err(e) = worker::run(&job.controller_url, &job.job_id, &job.api_token) {
            tracing::warn!(job = %job.job_id, "worker stopped: {e}");
        }
    }
}
