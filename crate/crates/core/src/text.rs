//! Utterance and phrase normalization shared by the grammar, the case loader
//! and the offline resolver.

/// Splits `text` into lowercase alphanumeric tokens. Everything that is not a
/// letter or digit acts as a separator, so "CT-Image," and "ct image" agree.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Canonical phrase form: lowercase tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

/// Turns a snake_case identifier into the phrase a speaker would use.
pub fn id_to_phrase(id: &str) -> String {
    normalize(&id.replace('_', " "))
}

/// Finds `needle` as a whole-token run inside `haystack`, returning the start
/// index of every occurrence.
pub fn find_token_run(haystack: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .collect()
}
