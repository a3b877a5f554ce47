//! Voice-control engine for a surgical AR assistance system.
//!
//! Two interfaces share one function registry and one scene model:
//! a keyword grammar ([`grammar`]) and an LLM function-calling router
//! ([`router`]) seeded with a patient-specific prompt ([`prompt`]).

pub mod call;
pub mod dictation;
pub mod dispatcher;
pub mod grammar;
pub mod mesh;
pub mod prompt;
pub mod proximity;
pub mod resolver;
pub mod router;
pub mod scene;
pub mod text;
