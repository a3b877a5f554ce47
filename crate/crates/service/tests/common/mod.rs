#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha8Rng;
use scopevoice::catalog::CaseCatalog;
use scopevoice::engine::{Mode, SessionRecord};
use scopevoice::script::{load_script, replay, ReplayReport};
use scopevoice::sessions::{Backends, SessionManager};
use scopevoice_core::dictation::ListeningProfile;
use scopevoice_core::prompt::ExampleStore;
use scopevoice_core::router::{BackendError, ChatBackend, DeterministicBackend, Role};
use scopevoice_testkit::{fixtures_dir, fuzz_reply};

pub fn scripts_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scripts")
}

pub fn catalog() -> Arc<CaseCatalog> {
    Arc::new(CaseCatalog::new(fixtures_dir(), None, ExampleStore::shipped()))
}

pub fn manager(backends: Backends) -> Arc<SessionManager> {
    Arc::new(SessionManager::new(catalog(), backends, ListeningProfile::refined()))
}

pub fn session(case_id: &str, mode: Mode, backend: Option<Arc<dyn ChatBackend>>) -> SessionRecord {
    session_with(case_id, mode, ListeningProfile::refined(), backend)
}

pub fn session_with(
    case_id: &str,
    mode: Mode,
    profile: ListeningProfile,
    backend: Option<Arc<dyn ChatBackend>>,
) -> SessionRecord {
    let loaded = catalog().get(case_id).unwrap();
    SessionRecord::new(loaded, mode, profile, backend).unwrap()
}

/// Script file for `case_id` and `mode`, e.g. `case_a/tasks_5_6.llm.jsonl`.
pub fn script_path(case_id: &str, stem: &str, mode: Mode) -> PathBuf {
    let m = match mode {
        Mode::Grammar => "grammar",
        Mode::Llm => "llm",
    };
    scripts_dir().join(case_id).join(format!("{stem}.{m}.jsonl"))
}

pub fn replay_script(case_id: &str, stem: &str, mode: Mode) -> ReplayReport {
    let backend: Option<Arc<dyn ChatBackend>> = match mode {
        Mode::Grammar => None,
        Mode::Llm => Some(Arc::new(DeterministicBackend)),
    };
    let mut s = session(case_id, mode, backend);
    let steps = load_script(&script_path(case_id, stem, mode)).unwrap();
    replay(&mut s, &steps).unwrap()
}

/// Delegates to the offline resolver and counts requests.
#[derive(Default)]
pub struct Counting {
    inner: DeterministicBackend,
    pub calls: AtomicUsize,
}

impl Counting {
    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for Counting {
    fn name(&self) -> &str {
        "counting"
    }

    fn complete(&self, messages: &[(Role, &str)]) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(messages)
    }
}

/// Answers every request with a fuzzed reply.
pub struct Fuzzed {
    pub rng: Mutex<ChaCha8Rng>,
}

impl ChatBackend for Fuzzed {
    fn name(&self) -> &str {
        "fuzzed"
    }

    fn complete(&self, _: &[(Role, &str)]) -> Result<String, BackendError> {
        Ok(fuzz_reply(&mut *self.rng.lock().unwrap()))
    }
}
