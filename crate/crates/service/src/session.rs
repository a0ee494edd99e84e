use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use surface_fixtures::io::{surface_from, CloudData};
use surface_fixtures::{Fixture, PointCloud, RegionId};

use crate::error::ApiError;

pub struct StoredFixture {
    pub fixture: Arc<Fixture>,
    pub undefined_count: usize,
    pub seed: Option<u64>,
}

/// Mutable part of a session, guarded by the session lock.
pub struct SessionData {
    pub source: CloudData,
    /// Surfaces per neighbor count; labels follow the default surface.
    pub surfaces: HashMap<usize, Arc<PointCloud>>,
    pub k: usize,
    pub labels: Vec<RegionId>,
    pub version: u64,
    pub fixtures: HashMap<String, Arc<StoredFixture>>,
}

impl SessionData {
    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.surfaces[&self.k]
    }

    /// Surface built with `k` neighbors over the same deduplicated points.
    pub fn surface(&mut self, k: usize) -> Result<Arc<PointCloud>, ApiError> {
        if let Some(cloud) = self.surfaces.get(&k) {
            return Ok(Arc::clone(cloud));
        }
        let (cloud, _) = surface_from(&self.source, k).map_err(|e| ApiError::invalid(e.to_string()))?;
        let cloud = Arc::new(cloud);
        self.surfaces.insert(k, Arc::clone(&cloud));
        Ok(cloud)
    }

    /// Content address of a solve: spec, neighbor count and labels.
    pub fn fixture_id(&self, spec_json: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(spec_json.as_bytes());
        hasher.update([0u8]);
        for label in &self.labels {
            hasher.update(label.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..16])
    }
}

pub struct Session {
    pub id: String,
    pub data: RwLock<SessionData>,
    last_used: Mutex<Instant>,
}

impl Session {
    pub fn new(id: String, source: CloudData, k: usize) -> Result<Self, ApiError> {
        let (cloud, labels) = surface_from(&source, k).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let surfaces = HashMap::from([(k, Arc::new(cloud))]);
        Ok(Self {
            id,
            data: RwLock::new(SessionData {
                source,
                surfaces,
                k,
                labels,
                version: 0,
                fixtures: HashMap::new(),
            }),
            last_used: Mutex::new(Instant::now()),
        })
    }

    fn touch(&self, now: Instant) {
        *self.last_used.lock().expect("clock lock") = now;
    }

    fn idle_since(&self) -> Instant {
        *self.last_used.lock().expect("clock lock")
    }

    pub fn read(&self) -> std::sync::RwLockReadGuard<'_, SessionData> {
        self.data.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> std::sync::RwLockWriteGuard<'_, SessionData> {
        self.data.write().unwrap_or_else(|e| e.into_inner())
    }
}

/// In-memory sessions with an idle time-to-live.
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            ttl,
        }
    }

    pub fn insert(&self, session: Session) -> Arc<Session> {
        let session = Arc::new(session);
        self.sessions
            .lock()
            .expect("session map lock")
            .insert(session.id.clone(), Arc::clone(&session));
        session
    }

    /// Looks up a live session; expired ones are dropped and reported missing.
    pub fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session map lock");
        let session = sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session '{id}'")))?;
        if now.duration_since(session.idle_since()) > self.ttl {
            sessions.remove(id);
            return Err(ApiError::not_found(format!("session '{id}' expired")));
        }
        session.touch(now);
        Ok(session)
    }

    pub fn remove(&self, id: &str) -> bool {
        self.sessions.lock().expect("session map lock").remove(id).is_some()
    }

    /// Drops every session idle for longer than the TTL.
    pub fn sweep(&self) -> usize {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session map lock");
        let before = sessions.len();
        sessions.retain(|_, s| now.duration_since(s.idle_since()) <= self.ttl);
        before - sessions.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
