use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use tokio::task::JoinHandle;

use super::jobs::{run_job, Job, JobSpec};
use super::store::Session;
use crate::error::{Error, Result};

pub const DATA_DIR_ENV: &str = "MICROINPAINT_DATA_DIR";
pub const BIND_ENV: &str = "MICROINPAINT_BIND";

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("microinpaint-data"), bind: "127.0.0.1:8080".into() }
    }
}

impl ServiceConfig {
    /// Defaults overridden by the environment.
    pub fn from_env() -> Self {
        let d = Self::default();
        Self {
            data_dir: std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or(d.data_dir),
            bind: std::env::var(BIND_ENV).unwrap_or(d.bind),
        }
    }
}

struct Inner {
    sessions_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

/// Shared service state: session and job registries plus worker handles.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Open the data directory, restoring every persisted session.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self> {
        let sessions_dir = data_dir.into().join("sessions");
        std::fs::create_dir_all(&sessions_dir).map_err(|e| Error::io(&sessions_dir, e))?;
        let mut sessions = HashMap::new();
        let entries = std::fs::read_dir(&sessions_dir).map_err(|e| Error::io(&sessions_dir, e))?;
        for entry in entries.flatten() {
            if !entry.path().is_dir() {
                continue;
            }
            match Session::open(&entry.path()) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), Arc::new(s));
                }
                Err(e) => log::warn!("skipping session {}: {e}", entry.path().display()),
            }
        }
        log::info!("restored {} sessions from {}", sessions.len(), sessions_dir.display());
        Ok(Self(Arc::new(Inner {
            sessions_dir,
            sessions: RwLock::new(sessions),
            jobs: RwLock::new(HashMap::new()),
            workers: Mutex::new(Vec::new()),
        })))
    }

    pub fn sessions_dir(&self) -> &std::path::Path {
        &self.0.sessions_dir
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.0.sessions.read().expect("registry lock").get(id).cloned()
    }

    pub fn insert_session(&self, s: Session) -> Arc<Session> {
        let s = Arc::new(s);
        self.0.sessions.write().expect("registry lock").insert(s.id.clone(), s.clone());
        s
    }

    pub fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.0.jobs.read().expect("registry lock").get(id).cloned()
    }

    /// Register a job unless `conflicts` finds an active job it clashes with;
    /// the check and insert happen under one write lock.
    pub fn insert_job(&self, job: Job, conflicts: impl Fn(&Job) -> bool) -> std::result::Result<Arc<Job>, String> {
        let mut jobs = self.0.jobs.write().expect("registry lock");
        if let Some(other) = jobs.values().find(|j| j.is_active() && conflicts(j)) {
            return Err(other.id.clone());
        }
        let job = Arc::new(job);
        jobs.insert(job.id.clone(), job.clone());
        Ok(job)
    }

    /// Run a job on the blocking pool.
    pub fn spawn(&self, session: Arc<Session>, job: Arc<Job>, spec: JobSpec) {
        let handle = tokio::task::spawn_blocking(move || run_job(&session, &job, spec));
        let mut workers = self.0.workers.lock().expect("worker lock");
        workers.retain(|h| !h.is_finished());
        workers.push(handle);
    }

    pub fn cancel_all(&self) {
        for job in self.0.jobs.read().expect("registry lock").values() {
            if job.is_active() {
                job.request_cancel();
            }
        }
    }

    /// Wait for every worker to finish (and persist its partial output).
    pub async fn join_workers(&self) {
        let handles: Vec<_> = std::mem::take(&mut *self.0.workers.lock().expect("worker lock"));
        for h in handles {
            if let Err(e) = h.await {
                log::error!("worker panicked: {e}");
            }
        }
    }
}
