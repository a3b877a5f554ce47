//! Keyword grammar: the baseline voice interface.
//!
//! One command per utterance. The longest lexicon phrase found in the
//! utterance wins (leftmost on ties); a trailing `on`/`off` right after a
//! visualization phrase forces the mode, otherwise it toggles.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::call::FunctionCall;
use crate::scene::{Category, ControlAction, PatientCase, Target, VisibilityMode};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "target")]
pub enum GrammarBinding {
    Visibility(Target),
    Control(ControlAction),
}

impl fmt::Display for GrammarBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarBinding::Visibility(t) => write!(f, "visibility:{t}"),
            GrammarBinding::Control(a) => write!(f, "control:{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LexiconEntry {
    pub binding: GrammarBinding,
    pub allows_onoff: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    On,
    Off,
    Toggle,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommandParse {
    pub binding: GrammarBinding,
    pub mode: ParseMode,
    pub matched_phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("phrase {phrase:?} is bound to both {first} and {second}")]
    AliasCollision {
        phrase: String,
        first: String,
        second: String,
    },
}

/// Control and panel vocabulary that does not depend on the case.
const FIXED_VOCABULARY: &[(&str, ControlAction)] = &[
    ("patient history", ControlAction::TogglePatientInfo),
    ("patient diagnosis", ControlAction::TogglePatientInfo),
    ("patient medication", ControlAction::TogglePatientInfo),
    ("diagnosis", ControlAction::TogglePatientInfo),
    ("medication", ControlAction::TogglePatientInfo),
    ("ct", ControlAction::ToggleCt),
    ("ct image", ControlAction::ToggleCt),
    ("ct images", ControlAction::ToggleCt),
    ("tomography", ControlAction::ToggleCt),
    ("computed tomography", ControlAction::ToggleCt),
    ("ct scan", ControlAction::ToggleCt),
    ("ct scans", ControlAction::ToggleCt),
    ("go up", ControlAction::ScrollUp),
    ("go down", ControlAction::ScrollDown),
    ("stop", ControlAction::ScrollStop),
    ("capture photo", ControlAction::CapturePhoto),
    ("capture hologram", ControlAction::CaptureHologram),
    ("freeze", ControlAction::Freeze),
    ("marker tracking", ControlAction::MarkerTracking),
    ("reset", ControlAction::ResetPose),
];

const GROUP_VOCABULARY: &[(&str, Category)] = &[("arteries", Category::Artery), ("veins", Category::Vein)];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexiconEntry>,
    max_tokens: usize,
}

impl Lexicon {
    fn insert(&mut self, phrase: &str, entry: LexiconEntry) -> Result<(), GrammarError> {
        let phrase = text::normalize(phrase);
        if phrase.is_empty() {
            return Ok(());
        }
        if let Some(existing) = self.entries.get(&phrase) {
            if existing.binding != entry.binding {
                return Err(GrammarError::AliasCollision {
                    phrase,
                    first: existing.binding.to_string(),
                    second: entry.binding.to_string(),
                });
            }
            return Ok(());
        }
        self.max_tokens = self.max_tokens.max(phrase.split(' ').count());
        self.entries.insert(phrase, entry);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &LexiconEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, phrase: &str) -> Option<&LexiconEntry> {
        self.entries.get(&text::normalize(phrase))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Matches one command in `utterance`, or `None` when no phrase occurs.
    pub fn parse(&self, utterance: &str) -> Option<CommandParse> {
        let tokens = text::tokens(utterance);
        let mut best: Option<(usize, usize, &str, &LexiconEntry)> = None;
        for start in 0..tokens.len() {
            let longest = self.max_tokens.min(tokens.len() - start);
            for len in (1..=longest).rev() {
                let candidate = tokens[start..start + len].join(" ");
                if let Some((phrase, entry)) = self.entries.get_key_value(&candidate) {
                    if best.is_none_or(|(_, best_len, _, _)| len > best_len) {
                        best = Some((start, len, phrase.as_str(), entry));
                    }
                    break;
                }
            }
        }
        let (start, len, phrase, entry) = best?;
        let trailing = tokens.get(start + len).map(String::as_str);
        let mode = match (&entry.binding, trailing) {
            (GrammarBinding::Visibility(_), Some("on")) if entry.allows_onoff => ParseMode::On,
            (GrammarBinding::Visibility(_), Some("off")) if entry.allows_onoff => ParseMode::Off,
            (GrammarBinding::Visibility(_), _) => ParseMode::Toggle,
            (GrammarBinding::Control(_), _) => ParseMode::NotApplicable,
        };
        Some(CommandParse {
            binding: entry.binding.clone(),
            mode,
            matched_phrase: phrase.to_string(),
        })
    }
}

/// Builds the lexicon for a case: segment display names and synonyms, the
/// artery/vein group words and the fixed control vocabulary.
pub fn build_lexicon(case: &PatientCase) -> Result<Lexicon, GrammarError> {
    let mut lex = Lexicon {
        entries: BTreeMap::new(),
        max_tokens: 0,
    };
    for (phrase, action) in FIXED_VOCABULARY {
        lex.insert(
            phrase,
            LexiconEntry {
                binding: GrammarBinding::Control(*action),
                allows_onoff: false,
            },
        )?;
    }
    for (phrase, category) in GROUP_VOCABULARY {
        lex.insert(
            phrase,
            LexiconEntry {
                binding: GrammarBinding::Visibility(Target::Category(*category)),
                allows_onoff: true,
            },
        )?;
    }
    for seg in &case.segments {
        for phrase in seg.phrases() {
            lex.insert(
                &phrase,
                LexiconEntry {
                    binding: GrammarBinding::Visibility(Target::Segment(seg.id.clone())),
                    allows_onoff: true,
                },
            )?;
        }
    }
    Ok(lex)
}

pub fn parse_utterance(lex: &Lexicon, utterance: &str) -> Option<CommandParse> {
    lex.parse(utterance)
}

impl CommandParse {
    /// The registry call this command stands for.
    pub fn to_call(&self) -> FunctionCall {
        let mode = match self.mode {
            ParseMode::On => VisibilityMode::On,
            ParseMode::Off => VisibilityMode::Off,
            ParseMode::Toggle | ParseMode::NotApplicable => VisibilityMode::Toggle,
        };
        match &self.binding {
            GrammarBinding::Visibility(Target::Segment(id)) => {
                FunctionCall::new("set_visibility", [id.as_str(), mode.as_str()])
            }
            GrammarBinding::Visibility(Target::Category(c)) => {
                FunctionCall::new("set_group_visibility", [c.as_str(), mode.as_str()])
            }
            GrammarBinding::Control(a) => FunctionCall::new("control", [a.as_str()]),
        }
    }
}
