//! Caption templates with a single `{}` subject placeholder.

use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "{}";

pub fn placeholder_count(caption: &str) -> usize {
    caption.matches(PLACEHOLDER).count()
}

/// Substitute the single `{}` slot and collapse whitespace runs to one space.
pub fn fill_caption(caption: &str, replacement: &str) -> Result<String> {
    let found = placeholder_count(caption);
    if found != 1 {
        return Err(Error::Placeholder {
            caption: caption.to_string(),
            found,
        });
    }
    let filled = caption.replacen(PLACEHOLDER, replacement, 1);
    Ok(filled.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Lowercased words of a caption, with the placeholder removed. Words are
/// maximal runs of alphanumerics, `_` and `-`.
pub fn caption_words(caption: &str) -> Vec<String> {
    caption
        .replace(PLACEHOLDER, " ")
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Words of `caption` that exactly match (case-insensitively) any forbidden term.
pub fn leaked_terms(caption: &str, forbidden: &[&str]) -> Vec<String> {
    let forbidden: Vec<String> = forbidden.iter().map(|f| f.to_lowercase()).collect();
    let mut hits: Vec<String> = caption_words(caption)
        .into_iter()
        .filter(|w| forbidden.contains(w))
        .collect();
    hits.dedup();
    hits
}
