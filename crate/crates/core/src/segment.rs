//! Rule-based sentence splitting and tokenisation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Findings,
    Impression,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Findings => "findings",
            Section::Impression => "impression",
        }
    }

    pub fn parse(s: &str) -> Option<Section> {
        match s.trim().to_ascii_lowercase().as_str() {
            "findings" => Some(Section::Findings),
            "impression" => Some(Section::Impression),
            _ => None,
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub study_id: String,
    pub section: Section,
    /// 0-based within the report; findings sentences are numbered first.
    pub index: usize,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(study_id: impl Into<String>, section: Section, index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence {
            study_id: study_id.into(),
            section,
            index,
            text,
            tokens,
        }
    }
}

const ABBREVIATIONS: &[&str] = &["dr", "mr", "e.g", "i.e", "vs"];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, ')' | ']' | '"' | '\'')
}

/// True when the single period at byte `dot` ends an abbreviation rather than
/// a sentence.
fn is_abbreviation(text: &str, dot: usize, after: &str) -> bool {
    let before = &text[..dot];
    let word_start = before
        .rfind(char::is_whitespace)
        .map_or(0, |i| i + before[i..].chars().next().map_or(1, char::len_utf8));
    let word = before[word_start..].trim_start_matches(|c: char| !c.is_alphanumeric());
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    let mut chars = word.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_alphabetic() {
            return true;
        }
    }
    lower == "no"
        && after
            .trim_start()
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_digit())
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits section text into sentences with whitespace collapsed to single
/// spaces. Casing is preserved.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !is_terminator(c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        let mut run = 1;
        while let Some(&(j, d)) = iter.peek() {
            if is_terminator(d) {
                run += 1;
            } else if !is_closer(d) {
                break;
            }
            end = j + d.len_utf8();
            iter.next();
        }
        let rest = &text[end..];
        if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
            continue;
        }
        if c == '.' && run == 1 && is_abbreviation(text, i, rest) {
            continue;
        }
        let sentence = normalize_whitespace(&text[start..end]);
        if !sentence.is_empty() {
            out.push(sentence);
        }
        start = end;
    }
    let tail = normalize_whitespace(&text[start..]);
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercases, splits on whitespace, and peels leading/trailing punctuation
/// off each chunk as single-character tokens. Interior punctuation
/// (hyphens, decimal points) stays inside the token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let body_start = lower.find(|c: char| !is_punct(c)).unwrap_or(lower.len());
        let body_end = lower
            .rfind(|c: char| !is_punct(c))
            .map_or(body_start, |i| i + lower[i..].chars().next().map_or(1, char::len_utf8));
        tokens.extend(lower[..body_start].chars().map(String::from));
        if body_end > body_start {
            tokens.push(lower[body_start..body_end].to_string());
            tokens.extend(lower[body_end..].chars().map(String::from));
        }
    }
    tokens
}

/// Sentences of a report's Findings then Impression, indexed from 0.
pub fn segment_report(report: &Report) -> Vec<Sentence> {
    let mut out = Vec::new();
    let sections = [
        (Section::Findings, report.findings.as_deref()),
        (Section::Impression, report.impression.as_deref()),
    ];
    for (section, text) in sections {
        let Some(text) = text else { continue };
        for s in split_sentences(text) {
            let index = out.len();
            out.push(Sentence::new(report.meta.study_id.clone(), section, index, s));
        }
    }
    out
}
