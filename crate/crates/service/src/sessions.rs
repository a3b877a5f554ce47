//! Live sessions. Each session sits behind its own lock, so inputs to one
//! session are handled strictly in order while sessions run side by side.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use scopevoice_core::dictation::ListeningProfile;
use scopevoice_core::router::{ChatBackend, DeterministicBackend, RemoteBackend};
use thiserror::Error;
use uuid::Uuid;

use crate::catalog::{CaseCatalog, CatalogError};
use crate::config::{BackendKind, ServiceConfig};
use crate::engine::{Mode, SessionError, SessionRecord};

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("unknown session {0}")]
    UnknownSession(Uuid),
    #[error("backend {0:?} is not configured")]
    BackendMissing(BackendKind),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// The chat backends sessions can be opened with.
#[derive(Clone)]
pub struct Backends {
    pub default: BackendKind,
    pub deterministic: Arc<dyn ChatBackend>,
    pub remote: Option<Arc<dyn ChatBackend>>,
}

impl Backends {
    pub fn from_config(cfg: &ServiceConfig) -> Self {
        Self {
            default: cfg.backend.kind,
            deterministic: Arc::new(DeterministicBackend),
            remote: Some(Arc::new(RemoteBackend::new(cfg.backend.remote()))),
        }
    }

    pub fn offline() -> Self {
        Self::with_deterministic(Arc::new(DeterministicBackend))
    }

    /// Only an offline backend; `backend` stands in for the resolver.
    pub fn with_deterministic(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            default: BackendKind::Deterministic,
            deterministic: backend,
            remote: None,
        }
    }

    pub fn pick(&self, kind: Option<BackendKind>) -> Result<Arc<dyn ChatBackend>, ManagerError> {
        match kind.unwrap_or(self.default) {
            BackendKind::Deterministic => Ok(self.deterministic.clone()),
            BackendKind::Remote => self
                .remote
                .clone()
                .ok_or(ManagerError::BackendMissing(BackendKind::Remote)),
        }
    }
}

pub type SharedSession = Arc<Mutex<SessionRecord>>;

pub struct SessionManager {
    catalog: Arc<CaseCatalog>,
    backends: Backends,
    default_profile: ListeningProfile,
    sessions: RwLock<HashMap<Uuid, SharedSession>>,
}

impl SessionManager {
    pub fn new(catalog: Arc<CaseCatalog>, backends: Backends, default_profile: ListeningProfile) -> Self {
        Self {
            catalog,
            backends,
            default_profile,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn catalog(&self) -> &Arc<CaseCatalog> {
        &self.catalog
    }

    /// Grammar sessions never receive a backend.
    pub fn create(
        &self,
        case_id: &str,
        mode: Mode,
        profile: Option<ListeningProfile>,
        backend: Option<BackendKind>,
    ) -> Result<SharedSession, ManagerError> {
        let loaded = self.catalog.get(case_id)?;
        let backend = match mode {
            Mode::Grammar => None,
            Mode::Llm => Some(self.backends.pick(backend)?),
        };
        let record = SessionRecord::new(
            loaded,
            mode,
            profile.unwrap_or_else(|| self.default_profile.clone()),
            backend,
        )?;
        let id = record.session_id;
        let shared = Arc::new(Mutex::new(record));
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, shared.clone());
        Ok(shared)
    }

    pub fn get(&self, id: Uuid) -> Result<SharedSession, ManagerError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&id)
            .cloned()
            .ok_or(ManagerError::UnknownSession(id))
    }

    pub fn remove(&self, id: Uuid) -> Result<SharedSession, ManagerError> {
        let s = self
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&id)
            .ok_or(ManagerError::UnknownSession(id))?;
        s.lock().unwrap_or_else(|e| e.into_inner()).close();
        Ok(s)
    }

    pub fn ids(&self) -> Vec<Uuid> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .copied()
            .collect()
    }
}
