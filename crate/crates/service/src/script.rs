//! Scenario scripts and their replay.
//!
//! A script is JSON lines. `{"at_ms": 1200, "utterance": "tumor on"}` feeds
//! one utterance; `{"task": "1", "expect_visible": ["tumor"]}` closes a task
//! and compares the visible structures. Blank lines and lines starting with
//! `#` are skipped.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{SessionError, SessionRecord};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("script step {step}: {source}")]
    Session { step: usize, source: SessionError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Step {
    Utterance {
        at_ms: u64,
        utterance: String,
    },
    Checkpoint {
        #[serde(default)]
        task: Option<String>,
        expect_visible: BTreeSet<String>,
    },
}

pub fn parse_script(text: &str) -> Result<Vec<Step>, ScriptError> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let step: Step = serde_json::from_str(line).map_err(|e| ScriptError::Parse {
            line: i + 1,
            message: format!("not an utterance or checkpoint: {e}"),
        })?;
        steps.push(step);
    }
    Ok(steps)
}

pub fn load_script(path: &Path) -> Result<Vec<Step>, ScriptError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(path.display().to_string(), e))?;
    parse_script(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskReport {
    pub task: String,
    pub expected: BTreeSet<String>,
    pub actual: BTreeSet<String>,
    pub passed: bool,
    /// Simulated time from the task's first utterance to the checkpoint.
    pub elapsed_ms: u64,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub case_id: String,
    pub tasks: Vec<TaskReport>,
    pub passed: usize,
    pub total: usize,
}

impl ReplayReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

/// Runs `steps` against `session`. Before each checkpoint a pending
/// dictation is allowed to finish.
pub fn replay(session: &mut SessionRecord, steps: &[Step]) -> Result<ReplayReport, ScriptError> {
    let mut tasks = Vec::new();
    let mut started: Option<u64> = None;
    let mut attempts_before = session.attempts();
    for (i, step) in steps.iter().enumerate() {
        let wrap = |source| ScriptError::Session { step: i + 1, source };
        match step {
            Step::Utterance { at_ms, utterance } => {
                started.get_or_insert(*at_ms);
                session.handle_utterance(utterance, *at_ms).map_err(wrap)?;
            }
            Step::Checkpoint { task, expect_visible } => {
                session.settle().map_err(wrap)?;
                let actual: BTreeSet<String> = session.scene.visible_set().iter().map(|s| s.to_string()).collect();
                let now = session.clock_ms();
                tasks.push(TaskReport {
                    task: task.clone().unwrap_or_else(|| (tasks.len() + 1).to_string()),
                    passed: actual == *expect_visible,
                    expected: expect_visible.clone(),
                    actual,
                    elapsed_ms: started.map_or(0, |s| now.saturating_sub(s)),
                    attempts: session.attempts() - attempts_before,
                });
                started = None;
                attempts_before = session.attempts();
            }
        }
    }
    let passed = tasks.iter().filter(|t| t.passed).count();
    Ok(ReplayReport {
        case_id: session.case_id.clone(),
        total: tasks.len(),
        passed,
        tasks,
    })
}
