//! The LLM voice interface: chat sessions seeded with the initial prompt,
//! reply validation, prompt re-injection after every turn, and the
//! reset/correction flow.

pub mod backend;

use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;
use tracing::{debug, warn};
use uuid::Uuid;

use crate::call::{parse_response, FunctionCall};
use crate::dispatcher::{Registry, RESET_CHAT};
use crate::prompt::{build_initial_prompt, render_json, ExampleStore, PromptDocument, PromptError};
use crate::proximity::DistanceMatrix;
use crate::scene::PatientCase;

pub use backend::{BackendError, ChatBackend, DeterministicBackend, RemoteBackend, RemoteConfig, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum RouterError {
    #[error(transparent)]
    BackendUnavailable(BackendError),
    #[error("chat session {0} is closed")]
    SessionClosed(Uuid),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One chat with the model. The first message is always the initial prompt.
pub struct ChatSession {
    id: Uuid,
    backend: Arc<dyn ChatBackend>,
    prompt: PromptDocument,
    prompt_text: String,
    transcript: Vec<Message>,
    turn_count: usize,
    closed: bool,
}

impl std::fmt::Debug for ChatSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatSession")
            .field("id", &self.id)
            .field("backend", &self.backend.name())
            .field("turn_count", &self.turn_count)
            .field("closed", &self.closed)
            .finish()
    }
}

impl ChatSession {
    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn prompt(&self) -> &PromptDocument {
        &self.prompt
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn transcript(&self) -> &[Message] {
        &self.transcript
    }

    pub fn turn_count(&self) -> usize {
        self.turn_count
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Number of times the initial prompt was re-sent after the first message.
    pub fn reinjections(&self) -> usize {
        self.transcript
            .iter()
            .skip(1)
            .filter(|m| m.role == Role::System && m.text == self.prompt_text)
            .count()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    fn push(&mut self, role: Role, text: String) {
        self.transcript.push(Message {
            role,
            text,
            at: Utc::now(),
        });
    }

    /// Sends one user turn and returns the raw reply. A failed backend call
    /// leaves the transcript as it was; a completed turn ends with the
    /// initial prompt sent again.
    fn exchange(&mut self, query: &str) -> Result<String, BackendError> {
        let content = serde_json::json!({ "sentence": query }).to_string();
        self.push(Role::User, content);
        let messages: Vec<(Role, &str)> = self.transcript.iter().map(|m| (m.role, m.text.as_str())).collect();
        match self.backend.complete(&messages) {
            Ok(reply) => {
                self.push(Role::Assistant, reply.clone());
                self.turn_count += 1;
                self.push(Role::System, self.prompt_text.clone());
                Ok(reply)
            }
            Err(e) => {
                self.transcript.pop();
                Err(e)
            }
        }
    }
}

/// Starts a chat with `doc` as its first message.
pub fn start_session(backend: Arc<dyn ChatBackend>, doc: PromptDocument) -> Result<ChatSession, RouterError> {
    backend.open().map_err(RouterError::BackendUnavailable)?;
    let prompt_text = render_json(&doc);
    let mut s = ChatSession {
        id: Uuid::new_v4(),
        backend,
        prompt: doc,
        prompt_text,
        transcript: Vec::new(),
        turn_count: 0,
        closed: false,
    };
    s.push(Role::System, s.prompt_text.clone());
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionRequest {
    pub sentence: String,
    pub result: Vec<FunctionCall>,
}

#[derive(Debug)]
pub enum RouterOutcome {
    /// Every call is registry-valid; dispatch them in order.
    Executed(Vec<FunctionCall>),
    /// Nothing to execute. `diagnostic` explains why, for the operator.
    Retry { diagnostic: String },
    /// The reply asked for a reset; the caller must switch to `session`.
    ResetPerformed {
        session: Box<ChatSession>,
        correction: CorrectionRequest,
    },
}

/// Routes queries for one case through a chat backend.
#[derive(Clone)]
pub struct IntentRouter {
    case: Arc<PatientCase>,
    matrix: Arc<DistanceMatrix>,
    registry: Arc<Registry>,
    backend: Arc<dyn ChatBackend>,
    store: Arc<Mutex<ExampleStore>>,
}

impl IntentRouter {
    pub fn new(
        case: Arc<PatientCase>,
        matrix: Arc<DistanceMatrix>,
        registry: Arc<Registry>,
        backend: Arc<dyn ChatBackend>,
        store: Arc<Mutex<ExampleStore>>,
    ) -> Self {
        Self {
            case,
            matrix,
            registry,
            backend,
            store,
        }
    }

    pub fn case(&self) -> &PatientCase {
        &self.case
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn store(&self) -> &Arc<Mutex<ExampleStore>> {
        &self.store
    }

    /// The current initial prompt, including every correction so far.
    pub fn prompt(&self) -> Result<PromptDocument, RouterError> {
        let store = self.store.lock().unwrap_or_else(|e| e.into_inner());
        Ok(build_initial_prompt(&self.case, &self.matrix, &self.registry, &store)?)
    }

    pub fn start_session(&self) -> Result<ChatSession, RouterError> {
        start_session(self.backend.clone(), self.prompt()?)
    }

    /// Sends `query` and validates the reply. Backend failures and replies
    /// without a valid call come back as [`RouterOutcome::Retry`].
    pub fn submit_query(&self, session: &mut ChatSession, query: &str) -> Result<RouterOutcome, RouterError> {
        if session.closed {
            return Err(RouterError::SessionClosed(session.id));
        }
        let reply = match session.exchange(query) {
            Ok(r) => r,
            Err(e) => {
                warn!(session = %session.id, error = %e, "backend call failed");
                return Ok(RouterOutcome::Retry {
                    diagnostic: e.to_string(),
                });
            }
        };
        let calls = match parse_response(&reply) {
            Ok(c) => c,
            Err(e) => {
                debug!(session = %session.id, %reply, "unparsable reply");
                return Ok(RouterOutcome::Retry {
                    diagnostic: format!("reply rejected: {e}"),
                });
            }
        };
        if let Some(reset) = calls.iter().find(|c| c.name == RESET_CHAT) {
            let correction = match self.correction_from(reset) {
                Ok(c) => c,
                Err(diagnostic) => return Ok(RouterOutcome::Retry { diagnostic }),
            };
            return match self.handle_reset(session, correction.clone()) {
                Ok(next) => Ok(RouterOutcome::ResetPerformed {
                    session: Box::new(next),
                    correction,
                }),
                Err(RouterError::Prompt(e)) => Ok(RouterOutcome::Retry {
                    diagnostic: e.to_string(),
                }),
                Err(e) => Err(e),
            };
        }
        let reasons: Vec<String> = calls
            .iter()
            .filter_map(|c| self.registry.validate(&self.case, c).err())
            .collect();
        if !reasons.is_empty() {
            return Ok(RouterOutcome::Retry {
                diagnostic: format!("reply rejected: {}", reasons.join("; ")),
            });
        }
        Ok(RouterOutcome::Executed(calls))
    }

    fn correction_from(&self, reset: &FunctionCall) -> Result<CorrectionRequest, String> {
        if let Err(e) = self.registry.validate(&self.case, reset) {
            return Err(format!("reset rejected: {e}"));
        }
        let result = parse_response(&reset.args[1]).map_err(|e| format!("reset rejected: corrected result: {e}"))?;
        Ok(CorrectionRequest {
            sentence: reset.args[0].clone(),
            result,
        })
    }

    /// Records `correction`, closes `session` and opens a new session whose
    /// prompt lists the correction as its last example.
    pub fn handle_reset(
        &self,
        session: &mut ChatSession,
        correction: CorrectionRequest,
    ) -> Result<ChatSession, RouterError> {
        if session.closed {
            return Err(RouterError::SessionClosed(session.id));
        }
        {
            let mut store = self.store.lock().unwrap_or_else(|e| e.into_inner());
            store.append_correction(&self.registry, &self.case, &correction.sentence, correction.result)?;
        }
        session.close();
        self.start_session()
    }
}
