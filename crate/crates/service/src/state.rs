use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, PoisonError, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use handmend_core::{Pipeline, PipelineSession, StepName};
use rand::RngCore;

use crate::config::ServiceConfig;
use crate::error::ApiError;

/// 128 random bits, hex encoded.
pub fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

pub struct SessionSlot {
    pub id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    last_access: Mutex<Instant>,
    /// Held for the whole of a step run.
    pub session: Arc<tokio::sync::Mutex<PipelineSession>>,
    /// Copy of the session as of the last completed mutation, readable while
    /// a step runs.
    snapshot: RwLock<PipelineSession>,
    running: Mutex<Option<StepName>>,
}

impl SessionSlot {
    pub fn new(id: String, session: PipelineSession) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            id,
            created_at,
            last_access: Mutex::new(Instant::now()),
            snapshot: RwLock::new(session.clone()),
            session: Arc::new(tokio::sync::Mutex::new(session)),
            running: Mutex::new(None),
        }
    }

    pub fn touch(&self) {
        *lock(&self.last_access) = Instant::now();
    }

    pub fn idle_for(&self) -> Duration {
        lock(&self.last_access).elapsed()
    }

    pub fn snapshot(&self) -> PipelineSession {
        self.snapshot.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn publish(&self, session: &PipelineSession) {
        *self.snapshot.write().unwrap_or_else(PoisonError::into_inner) = session.clone();
    }

    pub fn running(&self) -> Option<StepName> {
        *lock(&self.running)
    }

    pub fn set_running(&self, step: Option<StepName>) {
        *lock(&self.running) = step;
    }

    pub fn dir(&self) -> PathBuf {
        self.snapshot.read().unwrap_or_else(PoisonError::into_inner).dir().to_path_buf()
    }
}

pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    expired: Mutex<HashSet<String>>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, config: ServiceConfig) -> Self {
        Self {
            pipeline: Arc::new(pipeline),
            config,
            sessions: RwLock::new(HashMap::new()),
            expired: Mutex::new(HashSet::new()),
        }
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.config.artifact_root.join(id)
    }

    pub fn insert(&self, slot: Arc<SessionSlot>) {
        self.sessions
            .write()
            .unwrap_or_else(PoisonError::into_inner)
            .insert(slot.id.clone(), slot);
    }

    pub fn remove(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions.write().unwrap_or_else(PoisonError::into_inner).remove(id)
    }

    /// Finds a live session and refreshes its idle timer. Expired sessions
    /// are dropped on the spot and answer 410 from then on.
    pub fn lookup(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        let slot = self
            .sessions
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .get(id)
            .cloned();
        match slot {
            Some(slot) if self.is_stale(&slot) => {
                self.expire(&slot);
                Err(ApiError::gone(id))
            }
            Some(slot) => {
                slot.touch();
                Ok(slot)
            }
            None if lock(&self.expired).contains(id) => Err(ApiError::gone(id)),
            None => Err(ApiError::not_found(format!("no session {id}"))),
        }
    }

    fn is_stale(&self, slot: &SessionSlot) -> bool {
        slot.running().is_none() && slot.idle_for() >= self.config.session_ttl
    }

    fn expire(&self, slot: &SessionSlot) {
        if self.remove(&slot.id).is_some() {
            lock(&self.expired).insert(slot.id.clone());
            let _ = std::fs::remove_dir_all(slot.dir());
        }
    }

    /// Expires every idle session past its TTL; returns how many went.
    pub fn sweep(&self) -> usize {
        let stale: Vec<Arc<SessionSlot>> = self
            .sessions
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .values()
            .filter(|s| self.is_stale(s))
            .cloned()
            .collect();
        for slot in &stale {
            self.expire(slot);
        }
        stale.len()
    }
}
