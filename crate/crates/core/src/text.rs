//! Tokenization, stemming and word-list helpers shared by every stage.

use std::collections::BTreeSet;
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const DEFAULT_REALTIME_KEYWORDS: &str = include_str!("../data/realtime_keywords.txt");

/// Lowercases `text`, replaces every non-alphanumeric character with a space
/// and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mapped: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped
        .to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Lowercase, single-spaced normal form used for lexicon and keyword entries.
pub fn normalize_phrase(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Collapses whitespace runs to a single space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Query cleaning: special characters become spaces, whitespace collapsed.
/// Case is preserved.
pub fn clean_query_text(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    collapse_whitespace(&mapped)
}

/// True iff `phrase` occurs in `tokens` as a contiguous run of whole tokens.
pub fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return false;
    }
    tokens.windows(phrase.len()).any(|w| w == phrase)
}

/// Token-boundary containment on raw strings.
pub fn text_contains_phrase(text: &str, phrase: &str) -> bool {
    contains_phrase(&tokenize(text), &tokenize(phrase))
}

/// Porter-family English stemmer (Snowball English).
pub struct PorterStemmer(Stemmer);

impl PorterStemmer {
    pub fn new() -> Self {
        PorterStemmer(Stemmer::create(Algorithm::English))
    }

    pub fn stem(&self, token: &str) -> String {
        self.0.stem(token).into_owned()
    }
}

impl Default for PorterStemmer {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for PorterStemmer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PorterStemmer")
    }
}

fn parse_word_list(contents: &str) -> BTreeSet<String> {
    contents
        .lines()
        .map(normalize_phrase)
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn default_stopwords() -> BTreeSet<String> {
    parse_word_list(DEFAULT_STOPWORDS)
}

pub fn default_realtime_keywords() -> BTreeSet<String> {
    parse_word_list(DEFAULT_REALTIME_KEYWORDS)
}

/// Reads a one-entry-per-line UTF-8 word list. Entries are normalized and
/// blank lines skipped.
pub fn read_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&contents))
}
