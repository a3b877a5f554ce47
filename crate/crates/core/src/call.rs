//! Function calls as exchanged with the language model, and the tolerant
//! extractor that pulls them out of a model reply.
//!
//! Accepted shapes: `name(arg, "quoted arg", ...)` items separated by commas,
//! semicolons or newlines, optionally wrapped in a JSON array of strings.
//! Prose around the calls is ignored as long as at least one well-formed call
//! is present.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FunctionCall {
    pub name: String,
    pub args: Vec<String>,
}

impl FunctionCall {
    pub fn new<I, S>(name: impl Into<String>, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: name.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }
}

fn is_bare(arg: &str) -> bool {
    !arg.is_empty() && arg.chars().all(is_bare_char)
}

fn is_bare_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '-' | '+')
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl fmt::Display for FunctionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            if is_bare(a) {
                f.write_str(a)?;
            } else {
                f.write_str("\"")?;
                for c in a.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")?;
            }
        }
        f.write_str(")")
    }
}

impl From<FunctionCall> for String {
    fn from(c: FunctionCall) -> Self {
        c.to_string()
    }
}

impl TryFrom<String> for FunctionCall {
    type Error = FormatError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for FunctionCall {
    type Err = FormatError;

    /// Parses exactly one call.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut calls = parse_response(s)?;
        if calls.len() != 1 {
            return Err(FormatError::NotSingle(calls.len()));
        }
        Ok(calls.remove(0))
    }
}

/// Renders a call list the way examples and corrections carry it.
pub fn render_calls(calls: &[FunctionCall]) -> String {
    calls.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("no function call found")]
    NoCall,
    #[error("unbalanced parentheses or quotes starting at offset {0}")]
    Unbalanced(usize),
    #[error("expected exactly one call, found {0}")]
    NotSingle(usize),
}

/// Extracts every well-formed call from a model reply.
pub fn parse_response(text: &str) -> Result<Vec<FunctionCall>, FormatError> {
    if let Ok(serde_json::Value::Array(items)) = serde_json::from_str::<serde_json::Value>(text.trim()) {
        if !items.is_empty() && items.iter().all(|v| v.is_string()) {
            let mut out = Vec::new();
            for item in items {
                out.extend(scan(item.as_str().unwrap_or_default())?);
            }
            return if out.is_empty() {
                Err(FormatError::NoCall)
            } else {
                Ok(out)
            };
        }
    }
    let calls = scan(text)?;
    if calls.is_empty() {
        Err(FormatError::NoCall)
    } else {
        Ok(calls)
    }
}

enum ArgsError {
    /// Parenthesised text that is not an argument list (prose).
    NotACall,
    Unbalanced,
}

fn scan(text: &str) -> Result<Vec<FunctionCall>, FormatError> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut calls = Vec::new();
    let mut i = 0;
    while i < n {
        let starts_word = is_ident_start(chars[i]) && (i == 0 || !is_ident_char(chars[i - 1]));
        if !starts_word {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < n && is_ident_char(chars[j]) {
            j += 1;
        }
        let mut k = j;
        while k < n && (chars[k] == ' ' || chars[k] == '\t') {
            k += 1;
        }
        if k < n && chars[k] == '(' {
            match parse_args(&chars, k + 1) {
                Ok((args, end)) => {
                    calls.push(FunctionCall {
                        name: chars[i..j].iter().collect(),
                        args,
                    });
                    i = end + 1;
                }
                Err(ArgsError::NotACall) => match matching_paren(&chars, k) {
                    Some(end) => i = end + 1,
                    None => return Err(FormatError::Unbalanced(k)),
                },
                Err(ArgsError::Unbalanced) => return Err(FormatError::Unbalanced(k)),
            }
        } else {
            i = j;
        }
    }
    Ok(calls)
}

/// Parses `arg, arg, ...)` starting just after an opening parenthesis.
/// Returns the arguments and the index of the closing parenthesis.
fn parse_args(chars: &[char], start: usize) -> Result<(Vec<String>, usize), ArgsError> {
    let n = chars.len();
    let mut args = Vec::new();
    let mut i = start;
    let skip_ws = |i: &mut usize| {
        while *i < n && chars[*i].is_whitespace() {
            *i += 1;
        }
    };
    skip_ws(&mut i);
    if i < n && chars[i] == ')' {
        return Ok((args, i));
    }
    loop {
        skip_ws(&mut i);
        if i >= n {
            return Err(ArgsError::Unbalanced);
        }
        let c = chars[i];
        if c == '"' || c == '\'' {
            let mut value = String::new();
            i += 1;
            loop {
                if i >= n {
                    return Err(ArgsError::Unbalanced);
                }
                match chars[i] {
                    '\\' if i + 1 < n => {
                        value.push(match chars[i + 1] {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                        i += 2;
                    }
                    q if q == c => {
                        i += 1;
                        break;
                    }
                    other => {
                        value.push(other);
                        i += 1;
                    }
                }
            }
            args.push(value);
        } else if is_bare_char(c) {
            let begin = i;
            while i < n && is_bare_char(chars[i]) {
                i += 1;
            }
            args.push(chars[begin..i].iter().collect());
        } else {
            return Err(ArgsError::NotACall);
        }
        skip_ws(&mut i);
        if i >= n {
            return Err(ArgsError::Unbalanced);
        }
        match chars[i] {
            ',' => i += 1,
            ')' => return Ok((args, i)),
            _ => return Err(ArgsError::NotACall),
        }
    }
}

/// Index of the parenthesis closing the one at `open`, honoring nesting and
/// quoted strings.
fn matching_paren(chars: &[char], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut i = open;
    while i < chars.len() {
        let c = chars[i];
        match quote {
            Some(q) => {
                if c == '\\' {
                    i += 1;
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '"' => quote = Some(c),
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i);
                    }
                }
                _ => {}
            },
        }
        i += 1;
    }
    None
}
