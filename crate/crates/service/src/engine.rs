//! Per-session engine: one scene, one dictation machine and, in LLM mode,
//! one chat. Every input is stamped with a session clock in milliseconds and
//! every observable change becomes a numbered event.

use std::sync::Arc;

use regex::Regex;
use scopevoice_core::call::FunctionCall;
use scopevoice_core::dictation::{
    DictationError, DictationEvent, DictationMachine, FeedbackKind, ListeningProfile, SessionEvent, FEEDBACK_RETRY,
};
use scopevoice_core::dispatcher::{execute, replay_effects, Effect};
use scopevoice_core::grammar::parse_utterance;
use scopevoice_core::router::{ChatBackend, ChatSession, CorrectionRequest, IntentRouter, RouterError, RouterOutcome};
use scopevoice_core::scene::{CtScroll, SceneState};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::broadcast;
use tracing::{debug, info};
use uuid::Uuid;

use crate::catalog::LoadedCase;

/// CT auto-scroll advances one slice per period.
pub const CT_TICK_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Keyword commands, executed as soon as they are recognized.
    Grammar,
    /// Dictated sentences routed through a chat backend.
    Llm,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("input at {at} ms is earlier than the session clock ({clock} ms)")]
    OutOfOrder { at: u64, clock: u64 },
    #[error("{0} is only available in llm mode")]
    WrongMode(&'static str),
    #[error("llm sessions need a chat backend")]
    NoBackend,
    #[error(transparent)]
    Router(#[from] RouterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    KeywordRecognized,
    Unrecognized,
    Ignored,
    QueryReady,
    QueryEmpty,
    Feedback,
    Retry,
    Rejected,
    ChatReset,
    Effects,
    StateSnapshot,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFrame {
    pub seq: u64,
    pub kind: EventKind,
    pub at_ms: u64,
    pub payload: Value,
}

/// What a client sees of a session.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: Uuid,
    pub case_id: String,
    pub mode: Mode,
    pub profile: ListeningProfile,
    pub clock_ms: u64,
    pub listening: bool,
    pub pending_deadline_ms: Option<u64>,
    pub chat_turns: Option<usize>,
    pub last_seq: u64,
    pub digest: String,
    pub scene: SceneState,
}

pub struct SessionRecord {
    pub session_id: Uuid,
    pub case_id: String,
    pub mode: Mode,
    pub scene: SceneState,
    pub dictation: DictationMachine,
    pub chat: Option<ChatSession>,
    loaded: Arc<LoadedCase>,
    router: Option<IntentRouter>,
    activation: Regex,
    initial: SceneState,
    effects: Vec<Effect>,
    events: Vec<EventFrame>,
    seq: u64,
    clock_ms: u64,
    queries: usize,
    closed: bool,
    tx: broadcast::Sender<EventFrame>,
}

impl std::fmt::Debug for SessionRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionRecord")
            .field("session_id", &self.session_id)
            .field("case_id", &self.case_id)
            .field("mode", &self.mode)
            .field("clock_ms", &self.clock_ms)
            .finish()
    }
}

fn activation_regex(phrase: &str) -> Regex {
    let words: Vec<String> = scopevoice_core::text::tokens(phrase)
        .iter()
        .map(|w| regex::escape(w))
        .collect();
    Regex::new(&format!(r"(?i)\b{}\b", words.join(r"\W+"))).expect("escaped activation phrase")
}

impl SessionRecord {
    /// Opens a session. LLM sessions open their chat right away, so an
    /// unreachable backend fails here rather than on the first query.
    pub fn new(
        loaded: Arc<LoadedCase>,
        mode: Mode,
        profile: ListeningProfile,
        backend: Option<Arc<dyn ChatBackend>>,
    ) -> Result<Self, SessionError> {
        let (router, chat) = match mode {
            Mode::Grammar => (None, None),
            Mode::Llm => {
                let backend = backend.ok_or(SessionError::NoBackend)?;
                let router = IntentRouter::new(
                    loaded.case.clone(),
                    loaded.matrix.clone(),
                    loaded.registry.clone(),
                    backend,
                    loaded.examples.clone(),
                );
                let chat = router.start_session()?;
                (Some(router), Some(chat))
            }
        };
        let initial = SceneState::initial(&loaded.case);
        let (tx, _) = broadcast::channel(1024);
        let mut s = Self {
            session_id: Uuid::new_v4(),
            case_id: loaded.case.case_id.clone(),
            mode,
            scene: initial.clone(),
            activation: activation_regex(&profile.activation_phrase),
            dictation: DictationMachine::new(profile),
            chat,
            loaded,
            router,
            initial,
            effects: Vec::new(),
            events: Vec::new(),
            seq: 0,
            clock_ms: 0,
            queries: 0,
            closed: false,
            tx,
        };
        s.snapshot(0);
        info!(session = %s.session_id, case = %s.case_id, ?mode, "session opened");
        Ok(s)
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    /// Commands or queries handled so far: keyword utterances in grammar
    /// mode, completed dictations in LLM mode.
    pub fn attempts(&self) -> usize {
        self.queries
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn initial_scene(&self) -> &SceneState {
        &self.initial
    }

    pub fn effect_log(&self) -> &[Effect] {
        &self.effects
    }

    pub fn events(&self) -> &[EventFrame] {
        &self.events
    }

    pub fn events_since(&self, seq: u64) -> Vec<EventFrame> {
        let start = self.events.partition_point(|e| e.seq <= seq);
        self.events[start..].to_vec()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EventFrame> {
        self.tx.subscribe()
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.session_id,
            case_id: self.case_id.clone(),
            mode: self.mode,
            profile: self.dictation.profile().clone(),
            clock_ms: self.clock_ms,
            listening: self.dictation.is_listening(),
            pending_deadline_ms: self.dictation.deadline(),
            chat_turns: self.chat.as_ref().map(ChatSession::turn_count),
            last_seq: self.seq,
            digest: format!("{:016x}", self.scene.digest()),
            scene: self.scene.clone(),
        }
    }

    fn emit(&mut self, kind: EventKind, at_ms: u64, payload: Value) -> EventFrame {
        self.seq += 1;
        let frame = EventFrame {
            seq: self.seq,
            kind,
            at_ms,
            payload,
        };
        self.events.push(frame.clone());
        // nobody listening is fine
        let _ = self.tx.send(frame.clone());
        frame
    }

    fn snapshot(&mut self, at_ms: u64) -> EventFrame {
        let payload = json!({ "digest": format!("{:016x}", self.scene.digest()), "scene": self.scene });
        self.emit(EventKind::StateSnapshot, at_ms, payload)
    }

    fn apply(&mut self, next: SceneState, effects: Vec<Effect>, at_ms: u64, out: &mut Vec<EventFrame>) {
        if effects.is_empty() && next == self.scene {
            return;
        }
        out.push(self.emit(EventKind::Effects, at_ms, json!({ "effects": effects })));
        self.effects.extend(effects);
        self.scene = next;
        out.push(self.snapshot(at_ms));
    }

    fn run_calls(&mut self, calls: &[FunctionCall], at_ms: u64, out: &mut Vec<EventFrame>) -> bool {
        let registry = self.loaded.registry.clone();
        match execute(&registry, &self.loaded.case, &self.scene, calls) {
            Ok((next, effects)) => {
                self.apply(next, effects, at_ms, out);
                true
            }
            Err(e) => {
                let calls: Vec<String> = calls.iter().map(ToString::to_string).collect();
                out.push(self.emit(
                    EventKind::Rejected,
                    at_ms,
                    json!({ "calls": calls, "reason": e.to_string() }),
                ));
                false
            }
        }
    }

    fn check_clock(&mut self, at_ms: u64) -> Result<(), SessionError> {
        if self.closed {
            return Err(SessionError::Router(RouterError::SessionClosed(self.session_id)));
        }
        if at_ms < self.clock_ms {
            return Err(SessionError::OutOfOrder {
                at: at_ms,
                clock: self.clock_ms,
            });
        }
        Ok(())
    }

    /// Moves the clock to `at_ms`. A dictation deadline passed on the way is
    /// handled at its own time, so scrolling it starts runs from there.
    pub fn advance_to(&mut self, at_ms: u64) -> Result<Vec<EventFrame>, SessionError> {
        self.check_clock(at_ms)?;
        let mut out = Vec::new();
        if self.mode == Mode::Llm {
            while let Some(due) = self.dictation.deadline().filter(|d| *d <= at_ms) {
                let due = due.max(self.clock_ms);
                self.scroll_to(due, &mut out);
                self.feed(DictationEvent::Tick { at: due }, &mut out)?;
            }
        }
        self.scroll_to(at_ms, &mut out);
        if self.mode == Mode::Llm {
            self.feed(DictationEvent::Tick { at: at_ms }, &mut out)?;
        }
        Ok(out)
    }

    /// CT auto-scroll from the session clock to `at_ms`, one slice per
    /// period, reported as a single effect.
    fn scroll_to(&mut self, at_ms: u64, out: &mut Vec<EventFrame>) {
        let steps = at_ms / CT_TICK_MS - self.clock_ms / CT_TICK_MS;
        if steps > 0 && self.scene.ct_scroll() != CtScroll::Idle {
            let before = self.scene.ct_index();
            let steps = steps.min(u32::MAX as u64) as u32;
            let index = match self.scene.ct_scroll() {
                CtScroll::Up => before.saturating_sub(steps),
                _ => before.saturating_add(steps),
            };
            if index != before {
                let next = self.scene.with_ct_index(index);
                self.apply(next, vec![Effect::CtScrolled { index }], at_ms, out);
            }
        }
        self.clock_ms = at_ms;
    }

    /// Advances to the pending dictation deadline, if any, so a query in
    /// flight is handled.
    pub fn settle(&mut self) -> Result<Vec<EventFrame>, SessionError> {
        match self.dictation.deadline() {
            Some(due) => self.advance_to(due.max(self.clock_ms)),
            None => Ok(Vec::new()),
        }
    }

    /// One transcribed utterance at `at_ms`.
    pub fn handle_utterance(&mut self, text: &str, at_ms: u64) -> Result<Vec<EventFrame>, SessionError> {
        let mut out = self.advance_to(at_ms)?;
        match self.mode {
            Mode::Grammar => self.keyword(text, at_ms, &mut out),
            Mode::Llm => {
                let mut rest = text;
                while let Some(m) = self.activation.find(rest) {
                    self.fragment(&rest[..m.start()], at_ms, &mut out)?;
                    self.feed(DictationEvent::Activation { at: at_ms }, &mut out)?;
                    rest = &rest[m.end()..];
                }
                self.fragment(rest, at_ms, &mut out)?;
            }
        }
        Ok(out)
    }

    fn keyword(&mut self, text: &str, at_ms: u64, out: &mut Vec<EventFrame>) {
        self.queries += 1;
        match parse_utterance(&self.loaded.lexicon, text) {
            Some(parse) => {
                let call = parse.to_call();
                out.push(self.emit(
                    EventKind::KeywordRecognized,
                    at_ms,
                    json!({ "phrase": parse.matched_phrase, "call": call.to_string() }),
                ));
                self.run_calls(&[call], at_ms, out);
            }
            None => out.push(self.emit(EventKind::Unrecognized, at_ms, json!({ "text": text }))),
        }
    }

    fn fragment(&mut self, text: &str, at_ms: u64, out: &mut Vec<EventFrame>) -> Result<(), SessionError> {
        let text = text.trim_matches(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | ':' | '!'));
        if text.is_empty() {
            return Ok(());
        }
        if !self.dictation.is_listening() {
            out.push(self.emit(
                EventKind::Ignored,
                at_ms,
                json!({ "text": text, "reason": "not listening" }),
            ));
            return Ok(());
        }
        self.feed(
            DictationEvent::Fragment {
                at: at_ms,
                text: text.to_string(),
            },
            out,
        )
    }

    fn feed(&mut self, event: DictationEvent, out: &mut Vec<EventFrame>) -> Result<(), SessionError> {
        let emitted = self.dictation.on_event(&event).map_err(|e| match e {
            DictationError::OutOfOrderEvent { at, last } => SessionError::OutOfOrder { at, clock: last },
        })?;
        for ev in emitted {
            match ev {
                SessionEvent::Feedback { feedback, message, at } => out.push(self.emit(
                    EventKind::Feedback,
                    at,
                    json!({ "feedback": feedback, "message": message }),
                )),
                SessionEvent::QueryEmpty { at } => out.push(self.emit(EventKind::QueryEmpty, at, json!({}))),
                SessionEvent::QueryReady { text, at } => {
                    self.queries += 1;
                    out.push(self.emit(EventKind::QueryReady, at, json!({ "text": text })));
                    self.query(&text, at, out)?;
                }
            }
        }
        Ok(())
    }

    fn retry(&mut self, at_ms: u64, diagnostic: String, out: &mut Vec<EventFrame>) {
        debug!(session = %self.session_id, %diagnostic, "retry");
        out.push(self.emit(EventKind::Retry, at_ms, json!({ "diagnostic": diagnostic })));
        out.push(self.emit(
            EventKind::Feedback,
            at_ms,
            json!({ "feedback": FeedbackKind::Retry, "message": FEEDBACK_RETRY }),
        ));
    }

    fn query(&mut self, text: &str, at_ms: u64, out: &mut Vec<EventFrame>) -> Result<(), SessionError> {
        let (Some(router), Some(chat)) = (self.router.clone(), self.chat.as_mut()) else {
            return Err(SessionError::NoBackend);
        };
        match router.submit_query(chat, text)? {
            RouterOutcome::Executed(calls) => {
                if !self.run_calls(&calls, at_ms, out) {
                    self.retry(at_ms, "reply could not be applied to the scene".into(), out);
                }
            }
            RouterOutcome::Retry { diagnostic } => self.retry(at_ms, diagnostic, out),
            RouterOutcome::ResetPerformed { session, correction } => {
                self.chat = Some(*session);
                self.reset_done(correction, at_ms, out);
            }
        }
        Ok(())
    }

    fn reset_done(&mut self, correction: CorrectionRequest, at_ms: u64, out: &mut Vec<EventFrame>) {
        let effect = Effect::ChatReset {
            sentence: correction.sentence.clone(),
            result: correction.result.clone(),
        };
        self.effects.push(effect.clone());
        let chat_id = self.chat.as_ref().map(ChatSession::id);
        out.push(self.emit(
            EventKind::ChatReset,
            at_ms,
            json!({ "chat_id": chat_id, "effect": effect }),
        ));
    }

    /// Records a correction typed by the operator and restarts the chat.
    pub fn correct(
        &mut self,
        sentence: &str,
        result: Vec<FunctionCall>,
        at_ms: u64,
    ) -> Result<Vec<EventFrame>, SessionError> {
        if self.mode != Mode::Llm {
            return Err(SessionError::WrongMode("correction"));
        }
        let mut out = self.advance_to(at_ms)?;
        let (Some(router), Some(chat)) = (self.router.clone(), self.chat.as_mut()) else {
            return Err(SessionError::NoBackend);
        };
        let correction = CorrectionRequest {
            sentence: sentence.to_string(),
            result,
        };
        let next = router.handle_reset(chat, correction.clone())?;
        self.chat = Some(next);
        self.reset_done(correction, at_ms, &mut out);
        Ok(out)
    }

    /// Scene rebuilt from the effect log; always equals the live scene.
    pub fn replayed_scene(&self) -> SceneState {
        replay_effects(&self.initial, &self.effects).expect("logged effects replay onto their own initial state")
    }

    pub fn close(&mut self) -> EventFrame {
        if let Some(chat) = self.chat.as_mut() {
            chat.close();
        }
        self.closed = true;
        let at = self.clock_ms;
        self.emit(EventKind::Closed, at, json!({}))
    }
}
