//! The patient-specific initial prompt sent to the language model, and the
//! example store that feeds it.
//!
//! The document is a JSON object with a fixed key order. Distances are listed
//! in millimeters with two decimals so rendered prompts stay byte-stable.

pub mod schema;

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::{parse_response, render_calls, FunctionCall};
use crate::dispatcher::{Registry, RESET_CHAT};
use crate::proximity::DistanceMatrix;
use crate::scene::{PatientCase, DIAGNOSIS_KEY};

/// Task statement at the top of every prompt.
pub const DESCRIPTION: &str = "You control the visualization of a surgical AR assistant. \
Answer each sentence with the executable method call or calls that fulfil it and nothing else. \
Use only the methods, organ types and categories listed here. \
distanceData holds the shortest surface distance in millimeters between two organ types; \
guidlines holds the diagnosis and the surgical rules for this patient. \
Call reset_chat only when the user asks to start over and states the corrected result.";

const HEURISTIC_DATA: &str = include_str!("../../data/heuristic_examples.json");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("registry exposes no executable function")]
    RegistryEmpty,
    #[error("distance matrix does not match case {0}")]
    MatrixCaseMismatch(String),
    #[error("invalid correction result: {0}")]
    InvalidCorrectionResult(String),
    #[error("example data: {0}")]
    ExampleData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sentence and the calls it should produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub sentence: String,
    #[serde(serialize_with = "ser_result", deserialize_with = "de_result")]
    pub result: Vec<FunctionCall>,
}

impl Example {
    pub fn new(sentence: impl Into<String>, result: Vec<FunctionCall>) -> Self {
        Self {
            sentence: sentence.into(),
            result,
        }
    }
}

/// A single call is written as a string, several as an array of strings.
fn ser_result<S: Serializer>(calls: &[FunctionCall], s: S) -> Result<S::Ok, S::Error> {
    match calls {
        [one] => s.serialize_str(&one.to_string()),
        many => s.collect_seq(many.iter().map(ToString::to_string)),
    }
}

fn de_result<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<FunctionCall>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        One(String),
        Many(Vec<String>),
    }
    let texts = match Raw::deserialize(d)? {
        Raw::One(s) => vec![s],
        Raw::Many(v) => v,
    };
    let mut out = Vec::new();
    for t in texts {
        out.extend(parse_response(&t).map_err(de::Error::custom)?);
    }
    if out.is_empty() {
        return Err(de::Error::custom("result lists no call"));
    }
    Ok(out)
}

/// A user correction as recorded in the per-case log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub sentence: String,
    pub result: Vec<FunctionCall>,
    pub noted_at: DateTime<Utc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeuristicFile {
    version: u32,
    examples: Vec<Example>,
}

/// Heuristic examples plus the append-only list of user corrections.
#[derive(Debug, Clone, Default)]
pub struct ExampleStore {
    heuristic: Vec<Example>,
    corrections: Vec<Correction>,
    log: Option<PathBuf>,
}

impl ExampleStore {
    pub fn new(heuristic: Vec<Example>) -> Self {
        Self {
            heuristic,
            ..Self::default()
        }
    }

    /// The example set bundled with the crate.
    pub fn shipped() -> Self {
        Self::new(parse_heuristics(HEURISTIC_DATA).expect("bundled heuristic examples parse"))
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        Ok(Self::new(parse_heuristics(&fs::read_to_string(path)?)?))
    }

    /// Attaches the correction log `dir/<case_id>.jsonl`, loading any
    /// corrections already recorded there. Later appends go to the same file.
    pub fn with_log(mut self, dir: &Path, case_id: &str) -> Result<Self, PromptError> {
        let path = dir.join(format!("{case_id}.jsonl"));
        if path.is_file() {
            let reader = BufReader::new(fs::File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let c: Correction = serde_json::from_str(&line)
                    .map_err(|e| PromptError::ExampleData(format!("{}:{}: {e}", path.display(), n + 1)))?;
                self.corrections.push(c);
            }
        }
        self.log = Some(path);
        Ok(self)
    }

    pub fn heuristic(&self) -> &[Example] {
        &self.heuristic
    }

    pub fn corrections(&self) -> &[Correction] {
        &self.corrections
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_deref()
    }

    /// Validates and records a correction. The result must be non-empty and
    /// every call registry-valid for `case`; a nested reset is refused.
    pub fn append_correction(
        &mut self,
        registry: &Registry,
        case: &PatientCase,
        sentence: &str,
        result: Vec<FunctionCall>,
    ) -> Result<&Correction, PromptError> {
        if sentence.trim().is_empty() {
            return Err(PromptError::InvalidCorrectionResult("sentence is empty".into()));
        }
        if result.is_empty() {
            return Err(PromptError::InvalidCorrectionResult("result lists no call".into()));
        }
        for call in &result {
            if call.name == RESET_CHAT {
                return Err(PromptError::InvalidCorrectionResult(
                    "a correction cannot reset the chat".into(),
                ));
            }
            registry
                .validate(case, call)
                .map_err(PromptError::InvalidCorrectionResult)?;
        }
        let correction = Correction {
            sentence: sentence.trim().to_string(),
            result,
            noted_at: Utc::now(),
        };
        if let Some(path) = &self.log {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut line = serde_json::to_string(&correction).map_err(|e| PromptError::ExampleData(e.to_string()))?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(line.as_bytes())?;
        }
        self.corrections.push(correction);
        Ok(self.corrections.last().expect("just pushed"))
    }
}

pub fn parse_heuristics(text: &str) -> Result<Vec<Example>, PromptError> {
    let file: HeuristicFile = serde_json::from_str(text).map_err(|e| PromptError::ExampleData(e.to_string()))?;
    if file.version != 1 {
        return Err(PromptError::ExampleData(format!(
            "unsupported version {}",
            file.version
        )));
    }
    Ok(file.examples)
}

/// Millimeter value written with exactly two decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mm(pub f64);

impl Mm {
    pub fn rounded(v: f64) -> Self {
        Mm((v * 100.0).round() / 100.0)
    }
}

impl Serialize for Mm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw =
            serde_json::value::RawValue::from_string(format!("{:.2}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptDocument {
    pub description: String,
    #[serde(rename = "executableMethods")]
    pub executable_methods: Vec<String>,
    #[serde(rename = "organTypes")]
    pub organ_types: Vec<String>,
    #[serde(rename = "OrganCategories")]
    pub organ_categories: Vec<String>,
    #[serde(rename = "distanceData")]
    pub distance_data: IndexMap<String, IndexMap<String, Mm>>,
    #[serde(rename = "guidlines")]
    pub guidelines: IndexMap<String, String>,
    #[serde(rename = "sentencesAndResultsExamples")]
    pub examples: Vec<Example>,
}

impl PromptDocument {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        self.distance_data.get(a)?.get(b).map(|m| m.0)
    }

    /// Function names listed in `executableMethods`.
    pub fn method_names(&self) -> Vec<&str> {
        self.executable_methods
            .iter()
            .map(|m| m.split('(').next().unwrap_or(m).trim())
            .collect()
    }
}

/// Assembles the prompt for `case`. Heuristic examples that do not validate
/// against this case (for instance naming a segment it lacks) are left out;
/// corrections follow them in the order they were noted.
pub fn build_initial_prompt(
    case: &PatientCase,
    matrix: &DistanceMatrix,
    registry: &Registry,
    store: &ExampleStore,
) -> Result<PromptDocument, PromptError> {
    if registry.descriptors().iter().all(|d| d.name == RESET_CHAT) {
        return Err(PromptError::RegistryEmpty);
    }
    if !matrix.matches_case(case) {
        return Err(PromptError::MatrixCaseMismatch(case.case_id.clone()));
    }
    let organ_types: Vec<String> = case.segment_ids().map(|id| id.to_string()).collect();
    let distance_data = organ_types
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let row = organ_types
                .iter()
                .enumerate()
                .map(|(j, b)| (b.clone(), Mm::rounded(matrix.at(i, j))))
                .collect();
            (a.clone(), row)
        })
        .collect();
    let mut guidelines = IndexMap::new();
    guidelines.insert(DIAGNOSIS_KEY.to_string(), case.diagnosis.clone());
    for g in &case.guidelines {
        guidelines.insert(g.rule_id.clone(), g.description.clone());
    }
    let usable = |calls: &[FunctionCall]| calls.iter().all(|c| registry.validate(case, c).is_ok());
    let examples = store
        .heuristic()
        .iter()
        .filter(|e| usable(&e.result))
        .cloned()
        .chain(
            store
                .corrections()
                .iter()
                .map(|c| Example::new(c.sentence.clone(), c.result.clone())),
        )
        .collect();
    Ok(PromptDocument {
        description: DESCRIPTION.to_string(),
        executable_methods: registry.signatures(),
        organ_types,
        organ_categories: case.segments.iter().map(|s| s.category.to_string()).collect(),
        distance_data,
        guidelines,
        examples,
    })
}

/// Canonical text: two-space indentation, keys in document order, trailing
/// newline.
pub fn render_json(doc: &PromptDocument) -> String {
    let mut out = serde_json::to_string_pretty(doc).expect("prompt documents always serialize");
    out.push('\n');
    out
}

/// Renders an example result the way a correction carries it.
pub fn render_result(calls: &[FunctionCall]) -> String {
    render_calls(calls)
}
