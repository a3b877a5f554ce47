//! Structural checks on rendered prompt text, independent of the serde model.
//!
//! The checks mirror the prompt layout: key order, value shapes, a complete
//! symmetric distance table over exactly the listed organ types, and examples
//! whose calls parse and name listed methods.

use std::collections::HashSet;

use serde_json::{Map, Value};

use crate::call::parse_response;
use crate::scene::{Category, SegmentId};

pub const KEYS: [&str; 7] = [
    "description",
    "executableMethods",
    "organTypes",
    "OrganCategories",
    "distanceData",
    "guidlines",
    "sentencesAndResultsExamples",
];

/// Returns every violation found, or `Ok` for a well-formed prompt.
pub fn validate(text: &str) -> Result<(), Vec<String>> {
    let mut errs = Vec::new();
    let root: Map<String, Value> = match serde_json::from_str(text) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return Err(vec!["top level is not an object".into()]),
        Err(e) => return Err(vec![format!("not JSON: {e}")]),
    };
    let keys: Vec<&str> = root.keys().map(String::as_str).collect();
    if keys != KEYS {
        errs.push(format!("keys {keys:?} differ from {KEYS:?}"));
        return Err(errs);
    }

    match &root["description"] {
        Value::String(s) if !s.trim().is_empty() => {}
        _ => errs.push("description must be a non-empty string".into()),
    }

    let methods = strings(&root["executableMethods"], "executableMethods", &mut errs);
    let mut names = HashSet::new();
    for m in &methods {
        match m.split_once('(') {
            Some((name, rest)) if is_ident(name) && rest.ends_with(')') => {
                if !names.insert(name.to_string()) {
                    errs.push(format!("executableMethods: {name} listed twice"));
                }
            }
            _ => errs.push(format!("executableMethods: {m:?} is not a signature")),
        }
    }

    let organs = strings(&root["organTypes"], "organTypes", &mut errs);
    let mut seen = HashSet::new();
    for o in &organs {
        if !SegmentId::is_canonical(o) || !seen.insert(o.as_str()) {
            errs.push(format!("organTypes: {o:?} is not a unique canonical id"));
        }
    }

    let cats = strings(&root["OrganCategories"], "OrganCategories", &mut errs);
    if cats.len() != organs.len() {
        errs.push(format!(
            "OrganCategories has {} entries for {} organ types",
            cats.len(),
            organs.len()
        ));
    }
    for c in &cats {
        if !Category::ALL.iter().any(|k| k.as_str() == c) {
            errs.push(format!("OrganCategories: unknown category {c:?}"));
        }
    }

    check_distances(&root["distanceData"], &organs, &mut errs);

    match &root["guidlines"] {
        Value::Object(m) => {
            for (k, v) in m {
                if k.trim().is_empty() || !v.is_string() {
                    errs.push(format!("guidlines: entry {k:?} must map a rule id to text"));
                }
            }
        }
        _ => errs.push("guidlines must be an object".into()),
    }

    match &root["sentencesAndResultsExamples"] {
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                check_example(i, item, &names, &mut errs);
            }
        }
        _ => errs.push("sentencesAndResultsExamples must be an array".into()),
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn strings(v: &Value, field: &str, errs: &mut Vec<String>) -> Vec<String> {
    match v {
        Value::Array(items) => items
            .iter()
            .filter_map(|x| match x {
                Value::String(s) => Some(s.clone()),
                other => {
                    errs.push(format!("{field}: {other} is not a string"));
                    None
                }
            })
            .collect(),
        _ => {
            errs.push(format!("{field} must be an array of strings"));
            Vec::new()
        }
    }
}

fn check_distances(v: &Value, organs: &[String], errs: &mut Vec<String>) {
    let Value::Object(rows) = v else {
        errs.push("distanceData must be an object".into());
        return;
    };
    if !rows.keys().eq(organs.iter()) {
        errs.push("distanceData keys differ from organTypes".into());
        return;
    }
    let mut table = Vec::with_capacity(organs.len());
    for (a, row) in rows {
        let Value::Object(row) = row else {
            errs.push(format!("distanceData.{a} must be an object"));
            return;
        };
        if !row.keys().eq(organs.iter()) {
            errs.push(format!("distanceData.{a} keys differ from organTypes"));
            return;
        }
        let mut values = Vec::with_capacity(organs.len());
        for (b, x) in row {
            match x.as_f64() {
                Some(d) if d >= 0.0 && d.is_finite() => values.push(d),
                _ => {
                    errs.push(format!("distanceData.{a}.{b} must be a non-negative number"));
                    return;
                }
            }
        }
        table.push(values);
    }
    for i in 0..organs.len() {
        if table[i][i] != 0.0 {
            errs.push(format!("distanceData.{0}.{0} must be 0", organs[i]));
        }
        for j in 0..i {
            if table[i][j] != table[j][i] {
                errs.push(format!("distanceData is not symmetric at {}/{}", organs[i], organs[j]));
            }
        }
    }
}

fn check_example(i: usize, item: &Value, names: &HashSet<String>, errs: &mut Vec<String>) {
    let Value::Object(m) = item else {
        errs.push(format!("example {i} is not an object"));
        return;
    };
    if !m.keys().eq(["sentence", "result"].iter()) {
        errs.push(format!("example {i} must have exactly sentence and result"));
        return;
    }
    if !matches!(&m["sentence"], Value::String(s) if !s.trim().is_empty()) {
        errs.push(format!("example {i}: sentence must be non-empty text"));
    }
    let texts: Vec<&str> = match &m["result"] {
        Value::String(s) => vec![s],
        Value::Array(a) if !a.is_empty() && a.iter().all(Value::is_string) => {
            a.iter().filter_map(Value::as_str).collect()
        }
        _ => {
            errs.push(format!(
                "example {i}: result must be a call or a non-empty list of calls"
            ));
            return;
        }
    };
    for t in texts {
        match parse_response(t) {
            Ok(calls) => {
                for c in calls {
                    if !names.contains(&c.name) {
                        errs.push(format!("example {i}: {} is not an executable method", c.name));
                    }
                }
            }
            Err(e) => errs.push(format!("example {i}: {t:?}: {e}")),
        }
    }
}
