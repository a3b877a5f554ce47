//! Rule-based stand-in for the language model.
//!
//! Everything the resolver knows comes from a [`PromptDocument`]; it never
//! sees the case itself. That makes it a check that the prompt carries enough
//! context, and a deterministic backend for offline runs and tests.
//!
//! Rules, in order: a stored example whose sentence matches the query wins
//! outright; a reset cue with a quoted sentence becomes `reset_chat`;
//! otherwise the result is the union of named structures, category plurals,
//! the infiltration set, the resection set and control phrases.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use regex::Regex;

use crate::call::{render_calls, FunctionCall};
use crate::dispatcher::RESET_CHAT;
use crate::prompt::PromptDocument;
use crate::scene::Category;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unresolvable;

impl fmt::Display for Unresolvable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("no rule matches the query")
    }
}

impl std::error::Error for Unresolvable {}

#[derive(Debug, Clone)]
struct Organ {
    id: String,
    category: Option<Category>,
    phrase: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ResolverContext {
    organs: Vec<Organ>,
    methods: BTreeSet<String>,
    controls: Vec<(Vec<String>, String)>,
    examples: HashMap<String, Vec<FunctionCall>>,
    tumor: Option<usize>,
    margin_mm: Option<f64>,
    resect_extra: BTreeSet<usize>,
    /// distances from the tumor, by organ index
    tumor_row: Vec<Option<f64>>,
}

fn mm_pattern() -> Regex {
    Regex::new(r"(\d+(?:\.\d+)?)\s*mm\b").expect("static pattern")
}

impl ResolverContext {
    pub fn from_document(doc: &PromptDocument) -> Self {
        let organs: Vec<Organ> = doc
            .organ_types
            .iter()
            .enumerate()
            .map(|(i, id)| Organ {
                id: id.clone(),
                category: doc.organ_categories.get(i).and_then(|c| c.parse().ok()),
                phrase: text::tokens(&text::id_to_phrase(id)),
            })
            .collect();
        let methods: BTreeSet<String> = doc.method_names().into_iter().map(str::to_string).collect();

        // actions are read off the control signature, e.g. control(freeze|marker_tracking)
        let controls = doc
            .executable_methods
            .iter()
            .filter_map(|m| m.strip_prefix("control(")?.strip_suffix(')'))
            .flat_map(|list| list.split('|'))
            .map(|a| (text::tokens(&text::id_to_phrase(a)), a.trim().to_string()))
            .filter(|(p, _)| !p.is_empty())
            .collect();

        let mut examples = HashMap::new();
        for e in &doc.examples {
            examples.insert(text::normalize(&e.sentence), e.result.clone());
        }

        let tumor = organs.iter().position(|o| o.category == Some(Category::Tumor));
        let mm = mm_pattern();
        let margin_mm = doc
            .guidelines
            .values()
            .filter(|d| d.to_lowercase().contains("infiltrat"))
            .find_map(|d| mm.captures(d).and_then(|c| c[1].parse::<f64>().ok()))
            .filter(|m| *m > 0.0);

        let mut resect_extra = BTreeSet::new();
        for d in doc.guidelines.values() {
            let tokens = text::tokens(d);
            if tokens.iter().any(|t| t.starts_with("resect")) && has_run(&tokens, &["with", "the", "tumor"]) {
                resect_extra.extend(mentions(&organs, &tokens).into_iter().filter(|&i| Some(i) != tumor));
            }
        }

        let tumor_row = organs
            .iter()
            .map(|o| tumor.and_then(|t| doc.distance(&organs[t].id, &o.id)))
            .collect();

        Self {
            organs,
            methods,
            controls,
            examples,
            tumor,
            margin_mm,
            resect_extra,
            tumor_row,
        }
    }

    pub fn margin_mm(&self) -> Option<f64> {
        self.margin_mm
    }

    /// Tumor plus every structure listed within the guideline margin.
    pub fn infiltration_set(&self) -> BTreeSet<String> {
        self.infiltration_indices()
            .into_iter()
            .map(|i| self.organs[i].id.clone())
            .collect()
    }

    /// Infiltration set plus the structures guidelines remove with the tumor.
    pub fn resection_set(&self) -> BTreeSet<String> {
        self.resection_indices()
            .into_iter()
            .map(|i| self.organs[i].id.clone())
            .collect()
    }

    fn infiltration_indices(&self) -> BTreeSet<usize> {
        let (Some(t), Some(margin)) = (self.tumor, self.margin_mm) else {
            return BTreeSet::new();
        };
        let mut out: BTreeSet<usize> = self
            .tumor_row
            .iter()
            .enumerate()
            .filter(|(_, d)| matches!(d, Some(d) if *d <= margin))
            .map(|(i, _)| i)
            .collect();
        out.insert(t);
        out
    }

    fn resection_indices(&self) -> BTreeSet<usize> {
        let mut out = self.infiltration_indices();
        if self.tumor.is_some() {
            out.extend(self.resect_extra.iter().copied());
        }
        out
    }

    pub fn resolve(&self, query: &str) -> Result<Vec<FunctionCall>, Unresolvable> {
        if let Some(result) = self.examples.get(&text::normalize(query)) {
            return Ok(result.clone());
        }
        if let Some(calls) = self.reset(query) {
            return Ok(calls);
        }
        self.interpret(&text::tokens(query))
    }

    fn reset(&self, query: &str) -> Option<Vec<FunctionCall>> {
        if !self.methods.contains(RESET_CHAT) {
            return None;
        }
        let tokens = text::tokens(query);
        let cue = tokens.iter().any(|t| t == "reset")
            || has_run(&tokens, &["start", "over"])
            || has_run(&tokens, &["new", "chat"]);
        if !cue {
            return None;
        }
        let (sentence, rest) = quoted(query)?;
        let calls = self.interpret(&text::tokens(rest)).ok()?;
        Some(vec![FunctionCall::new(
            RESET_CHAT,
            [sentence.to_string(), render_calls(&calls)],
        )])
    }

    fn interpret(&self, tokens: &[String]) -> Result<Vec<FunctionCall>, Unresolvable> {
        let has = |p: &str| tokens.iter().any(|t| t.starts_with(p));
        let resection = has("resect")
            || (has("remov") && (has_run(tokens, &["with", "the", "tumor"]) || has_run(tokens, &["along", "with"])));
        let infiltration = has("infiltrat") || has("invad") || tokens.iter().any(|t| t == "affected");

        let mut picked: BTreeSet<usize> = mentions(&self.organs, tokens).into_iter().collect();
        if resection {
            picked.extend(self.resection_indices());
        }
        if infiltration {
            picked.extend(self.infiltration_indices());
        }
        // with an intent cue, "veins and arteries" qualifies the set instead of naming groups
        let groups: Vec<Category> = if resection || infiltration {
            Vec::new()
        } else {
            Category::ALL
                .into_iter()
                .filter(|c| tokens.iter().any(|t| t == c.plural()))
                .filter(|c| self.organs.iter().any(|o| o.category == Some(*c)))
                .collect()
        };
        let controls: Vec<&str> = self
            .controls
            .iter()
            .filter(|(phrase, _)| has_run(tokens, &phrase.iter().map(String::as_str).collect::<Vec<_>>()))
            .map(|(_, a)| a.as_str())
            .collect();

        if picked.is_empty() && groups.is_empty() && controls.is_empty() {
            return Err(Unresolvable);
        }

        let word = |w: &[&str]| tokens.iter().any(|t| w.contains(&t.as_str()));
        let mode = if word(&["hide", "off", "disable", "deactivate", "hidden"]) {
            "off"
        } else if word(&["toggle"]) {
            "toggle"
        } else {
            "on"
        };
        let exclusive = mode == "on" && word(&["only", "just", "exclusively"]);

        let mut calls = Vec::new();
        if exclusive && (!picked.is_empty() || !groups.is_empty()) && self.methods.contains("exclusive_visibility") {
            for (i, o) in self.organs.iter().enumerate() {
                if o.category.is_some_and(|c| groups.contains(&c)) {
                    picked.insert(i);
                }
            }
            calls.push(FunctionCall::new(
                "exclusive_visibility",
                picked.iter().map(|&i| self.organs[i].id.clone()),
            ));
        } else {
            if self.methods.contains("set_group_visibility") {
                for c in &groups {
                    calls.push(FunctionCall::new("set_group_visibility", [c.as_str(), mode]));
                }
            }
            if self.methods.contains("set_visibility") {
                for &i in &picked {
                    calls.push(FunctionCall::new("set_visibility", [self.organs[i].id.as_str(), mode]));
                }
            }
        }
        if self.methods.contains("control") {
            for a in controls {
                calls.push(FunctionCall::new("control", [a]));
            }
        }
        if calls.is_empty() {
            Err(Unresolvable)
        } else {
            Ok(calls)
        }
    }
}

pub fn resolve(ctx: &ResolverContext, query: &str) -> Result<Vec<FunctionCall>, Unresolvable> {
    ctx.resolve(query)
}

fn has_run(tokens: &[String], run: &[&str]) -> bool {
    !run.is_empty()
        && tokens
            .windows(run.len())
            .any(|w| w.iter().zip(run).all(|(a, b)| a == b))
}

/// Organs named in `tokens`, longest phrase first so that overlapping names
/// resolve to the more specific structure.
fn mentions(organs: &[Organ], tokens: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..organs.len()).filter(|&i| !organs[i].phrase.is_empty()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(organs[i].phrase.len()));
    let mut used = vec![false; tokens.len()];
    let mut out = Vec::new();
    for i in order {
        let p = &organs[i].phrase;
        for start in text::find_token_run(tokens, p) {
            if used[start..start + p.len()].iter().any(|u| *u) {
                continue;
            }
            used[start..start + p.len()].iter_mut().for_each(|u| *u = true);
            out.push(i);
            break;
        }
    }
    out.sort_unstable();
    out
}

/// First double-quoted span (straight or typographic quotes) and the text
/// after it.
fn quoted(query: &str) -> Option<(&str, &str)> {
    let open = query.find(['"', '\u{201c}'])?;
    let after_open = open + query[open..].chars().next()?.len_utf8();
    let close_rel = query[after_open..].find(['"', '\u{201d}'])?;
    let close = after_open + close_rel;
    let sentence = query[after_open..close].trim();
    if sentence.is_empty() {
        return None;
    }
    let rest = &query[close + query[close..].chars().next()?.len_utf8()..];
    Some((sentence, rest))
}
