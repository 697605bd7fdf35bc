//! Normalization of noisy tweet text.
//!
//! Rules run in a fixed order:
//!
//! 1. drop URLs (`https?://\S+`, `www.\S+`)
//! 2. drop @-mentions (`@` followed by word characters)
//! 3. replace every codepoint that is not a letter, combining mark, decimal
//!    digit, whitespace or allowed punctuation with a space (emoji, symbols,
//!    `#`, `@`, `/`, `_` ...)
//! 4. collapse runs of one repeated punctuation character to a single one
//! 5. collapse whitespace runs to one space and trim
//!
//! Case is never changed. One pass is a fixed point of the pipeline.

use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::LabeledSample;

/// Punctuation that survives normalization.
pub const ALLOWED_PUNCTUATION: &[char] = &['.', ',', '!', '?', '¡', '¿', '\'', '"', '-', ':', ';'];

struct Rules {
    url: Regex,
    mention: Regex,
    disallowed: Regex,
    whitespace: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        url: Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap(),
        mention: Regex::new(r"@\w+").unwrap(),
        disallowed: Regex::new(r#"[^\p{L}\p{M}\p{Nd}\s.,!?¡¿'"\-:;]"#).unwrap(),
        whitespace: Regex::new(r"\s+").unwrap(),
    })
}

fn collapse_punctuation_runs(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev: Option<char> = None;
    for c in s.chars() {
        if prev == Some(c) && ALLOWED_PUNCTUATION.contains(&c) {
            continue;
        }
        out.push(c);
        prev = Some(c);
    }
    out
}

pub fn normalize_text(raw: &str) -> String {
    let rules = rules();
    let s = rules.url.replace_all(raw, " ");
    let s = rules.mention.replace_all(&s, " ");
    let s = rules.disallowed.replace_all(&s, " ");
    let s = collapse_punctuation_runs(&s);
    rules.whitespace.replace_all(&s, " ").trim().to_string()
}

/// Normalize every sample; samples that clean to nothing are dropped and
/// their ids returned.
pub fn preprocess_corpus(corpus: Vec<LabeledSample>) -> (Vec<LabeledSample>, Vec<String>) {
    let mut kept = Vec::with_capacity(corpus.len());
    let mut dropped = Vec::new();
    for mut sample in corpus {
        let clean = normalize_text(&sample.text);
        if clean.is_empty() {
            dropped.push(sample.id);
        } else {
            sample.text_clean = clean;
            kept.push(sample);
        }
    }
    (kept, dropped)
}
