//! Dictation timing: activation, transcript fragments and clock ticks in,
//! completed queries and feedback out.
//!
//! Time only arrives with events, in milliseconds, so every rule runs on a
//! simulated clock. After activation the machine listens until
//! `max(activated_at + min_listen, last_fragment + silence_tail)`; without
//! any fragment it gives up at `activated_at + max(min_listen, no_speech)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEEDBACK_OK: &str = "OK";
pub const FEEDBACK_RETRY: &str = "Please state your request differently";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Study,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListeningProfile {
    pub name: ProfileName,
    pub min_listen_ms: u64,
    pub silence_tail_ms: u64,
    /// How long to wait for the first fragment before giving up.
    pub no_speech_ms: u64,
    pub activation_phrase: String,
}

impl ListeningProfile {
    /// Fixed ten-second window, extended while speech continues until two
    /// seconds of silence.
    pub fn study() -> Self {
        Self {
            name: ProfileName::Study,
            min_listen_ms: 10_000,
            silence_tail_ms: 2_000,
            no_speech_ms: 10_000,
            activation_phrase: "assistant".into(),
        }
    }

    /// No minimum window; one and a half seconds of silence ends the query.
    pub fn refined() -> Self {
        Self {
            name: ProfileName::Refined,
            min_listen_ms: 0,
            silence_tail_ms: 1_500,
            no_speech_ms: 10_000,
            activation_phrase: "assistant".into(),
        }
    }

    pub fn named(name: ProfileName) -> Self {
        match name {
            ProfileName::Study => Self::study(),
            ProfileName::Refined => Self::refined(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.silence_tail_ms == 0 {
            return Err("silence_tail_ms must be positive".into());
        }
        if self.activation_phrase.trim().is_empty() {
            return Err("activation_phrase must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DictationEvent {
    Activation { at: u64 },
    Fragment { at: u64, text: String },
    Tick { at: u64 },
}

impl DictationEvent {
    pub fn at(&self) -> u64 {
        match self {
            DictationEvent::Activation { at } | DictationEvent::Fragment { at, .. } | DictationEvent::Tick { at } => {
                *at
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Ok,
    Retry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    Feedback {
        feedback: FeedbackKind,
        message: String,
        at: u64,
    },
    QueryReady {
        text: String,
        at: u64,
    },
    QueryEmpty {
        at: u64,
    },
}

impl SessionEvent {
    pub fn ok(at: u64) -> Self {
        SessionEvent::Feedback {
            feedback: FeedbackKind::Ok,
            message: FEEDBACK_OK.into(),
            at,
        }
    }

    pub fn retry(at: u64) -> Self {
        SessionEvent::Feedback {
            feedback: FeedbackKind::Retry,
            message: FEEDBACK_RETRY.into(),
            at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DictationError {
    #[error("event at {at} ms arrived after an event at {last} ms")]
    OutOfOrderEvent { at: u64, last: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ListenState {
    Idle,
    Listening,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictationMachine {
    profile: ListeningProfile,
    state: ListenState,
    activated_at: u64,
    fragments: Vec<(u64, String)>,
    last_seen: Option<u64>,
}

impl DictationMachine {
    pub fn new(profile: ListeningProfile) -> Self {
        Self {
            profile,
            state: ListenState::Idle,
            activated_at: 0,
            fragments: Vec::new(),
            last_seen: None,
        }
    }

    pub fn profile(&self) -> &ListeningProfile {
        &self.profile
    }

    pub fn state(&self) -> ListenState {
        self.state
    }

    pub fn is_listening(&self) -> bool {
        self.state == ListenState::Listening
    }

    pub fn fragments(&self) -> &[(u64, String)] {
        &self.fragments
    }

    /// When the pending query will be emitted if nothing else is said.
    pub fn deadline(&self) -> Option<u64> {
        if self.state != ListenState::Listening {
            return None;
        }
        let p = &self.profile;
        Some(match self.fragments.last() {
            Some((last, _)) => (self.activated_at + p.min_listen_ms).max(last + p.silence_tail_ms),
            None => self.activated_at + p.min_listen_ms.max(p.no_speech_ms),
        })
    }

    pub fn on_event(&mut self, event: &DictationEvent) -> Result<Vec<SessionEvent>, DictationError> {
        let at = event.at();
        if let Some(last) = self.last_seen {
            if at < last {
                return Err(DictationError::OutOfOrderEvent { at, last });
            }
        }
        self.last_seen = Some(at);
        let mut out = self.advance(at);
        match event {
            DictationEvent::Activation { .. } if self.state == ListenState::Idle => {
                self.state = ListenState::Listening;
                self.activated_at = at;
                self.fragments.clear();
                out.push(SessionEvent::ok(at));
            }
            DictationEvent::Fragment { text, .. }
                if self.state == ListenState::Listening && !text.trim().is_empty() =>
            {
                self.fragments.push((at, text.trim().to_string()));
            }
            _ => {}
        }
        Ok(out)
    }

    /// Emits the terminal events if the deadline has passed by `now`.
    fn advance(&mut self, now: u64) -> Vec<SessionEvent> {
        match self.deadline() {
            Some(due) if due <= now => {
                self.state = ListenState::Idle;
                let fragments = std::mem::take(&mut self.fragments);
                if fragments.is_empty() {
                    vec![SessionEvent::QueryEmpty { at: due }, SessionEvent::retry(due)]
                } else {
                    let text = fragments.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join(" ");
                    vec![SessionEvent::QueryReady { text, at: due }]
                }
            }
            _ => Vec::new(),
        }
    }
}
