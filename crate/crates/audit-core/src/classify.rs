//! Response classification: assigns every raw model reply to exactly one of
//! five categories (valid, fixed, empty, refused, invalid), repairs truncated
//! JSON arrays, normalizes diacritics, and extracts recommendation records.
//!
//! The decision procedure, in order:
//! 1. empty or whitespace-only text -> `empty`
//! 2. a strict parse of the first JSON array (after stripping code fences and
//!    any reasoning preamble) with every required field populated -> `valid`
//! 3. truncation repair recovering at least one complete record -> `fixed`
//! 4. a declination phrase with no parsable candidate array -> `refused`
//! 5. anything else -> `invalid`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{AuditError, Result};
use crate::response::RawResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Valid,
    Fixed,
    Empty,
    Refused,
    Invalid,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Valid => "valid",
            Category::Fixed => "fixed",
            Category::Empty => "empty",
            Category::Refused => "refused",
            Category::Invalid => "invalid",
        }
    }
}

/// Secondary label on valid/fixed responses: whether any name needed
/// diacritic normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Unchanged,
    Cleaned,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Affiliation {
    #[serde(default)]
    pub position: String,
    #[serde(default)]
    pub affiliation: String,
}

/// One recommended scholar as parsed from a model reply. Only `name` and
/// `lastname` are required to be populated; the remaining schema fields are
/// carried through best-effort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRecord {
    pub name: String,
    pub lastname: String,
    #[serde(default)]
    pub current_affiliations: Vec<Affiliation>,
    #[serde(default)]
    pub areas_of_research_or_work: serde_json::Value,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifiedResponse {
    pub prompt_id: String,
    pub llm_id: String,
    pub run_idx: u32,
    pub category: Category,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normalization: Option<Normalization>,
    #[serde(default)]
    pub records: Vec<RecommendationRecord>,
}

/// Declination phrase list, matched case-insensitively against responses that
/// carry no parsable candidate array. Shipped as a data file per language.
#[derive(Debug, Clone)]
pub struct RefusalPatterns {
    patterns: Vec<String>,
}

impl RefusalPatterns {
    pub fn bundled() -> RefusalPatterns {
        Self::from_json(include_str!("../data/refusal_patterns.json"))
            .expect("bundled refusal patterns must parse")
    }

    pub fn load(path: &std::path::Path) -> Result<RefusalPatterns> {
        let raw = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        Self::from_json(&raw).map_err(|e| AuditError::parse(path, 0, e.to_string()))
    }

    pub fn from_json(raw: &str) -> std::result::Result<RefusalPatterns, serde_json::Error> {
        let per_language: BTreeMap<String, Vec<String>> = serde_json::from_str(raw)?;
        let mut patterns: Vec<String> = per_language
            .into_values()
            .flatten()
            .map(|p| p.to_lowercase())
            .collect();
        patterns.sort();
        patterns.dedup();
        Ok(RefusalPatterns { patterns })
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.patterns.iter().any(|p| lower.contains(p.as_str()))
    }
}

/// Strips combining marks after Unicode decomposition, maps sharp s to "ss",
/// collapses whitespace runs, and trims. Returns the normalized string and
/// whether anything changed. Idempotent.
pub fn normalize_name(s: &str) -> (String, bool) {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.nfd() {
        if is_combining_mark(c) {
            continue;
        }
        if c.is_whitespace() {
            if !out.is_empty() {
                pending_space = true;
            }
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        match c {
            'ß' => out.push_str("ss"),
            'ẞ' => out.push_str("SS"),
            _ => out.push(c),
        }
    }
    let changed = out != s;
    (out, changed)
}

pub fn classify_response(raw: &RawResponse, patterns: &RefusalPatterns) -> ClassifiedResponse {
    let (category, normalization, records) = classify_text(&raw.raw_text, patterns);
    ClassifiedResponse {
        prompt_id: raw.prompt_id.clone(),
        llm_id: raw.llm_id.clone(),
        run_idx: raw.run_idx,
        category,
        normalization,
        records,
    }
}

/// Classifies a single reply body. Total: every input maps to exactly one
/// category, and never panics.
///
/// Array regions are scanned left to right; the first one that yields
/// schema-complete records decides between valid (strict parse) and fixed
/// (truncation repair). Reasoning models intersperse bracketed citations
/// before the payload, so a recordless leading region does not condemn the
/// response. Refusal applies only when no region produced records.
pub fn classify_text(
    text: &str,
    patterns: &RefusalPatterns,
) -> (Category, Option<Normalization>, Vec<RecommendationRecord>) {
    if text.trim().is_empty() {
        return (Category::Empty, None, Vec::new());
    }

    let body = strip_fences(text);
    let mut rest = body;
    while let Some(region) = extract_array(rest) {
        match region {
            ArrayRegion::Complete(span) => {
                if let ParseOutcome::Records(records) = parse_complete_array(span) {
                    let (records, normalization) = normalize_records(records);
                    return (Category::Valid, Some(normalization), records);
                }
                // Region is not the candidate array; scan past it.
                let consumed = span.as_ptr() as usize - rest.as_ptr() as usize + span.len();
                rest = &rest[consumed..];
            }
            ArrayRegion::Truncated(span) => {
                if let ParseOutcome::Records(records) = repair_truncated_array(span) {
                    let (records, normalization) = normalize_records(records);
                    return (Category::Fixed, Some(normalization), records);
                }
                break;
            }
        }
    }

    if patterns.matches(text) {
        (Category::Refused, None, Vec::new())
    } else {
        (Category::Invalid, None, Vec::new())
    }
}

fn normalize_records(records: Vec<RecommendationRecord>) -> (Vec<RecommendationRecord>, Normalization) {
    let mut changed_any = false;
    let normalized = records
        .into_iter()
        .map(|mut r| {
            let (name, c1) = normalize_name(&r.name);
            let (lastname, c2) = normalize_name(&r.lastname);
            changed_any |= c1 || c2;
            r.name = name;
            r.lastname = lastname;
            r
        })
        .collect();
    let flag = if changed_any {
        Normalization::Cleaned
    } else {
        Normalization::Unchanged
    };
    (normalized, flag)
}

/// If the text carries a fenced code block containing a `[`, classification
/// runs on the block's contents; reasoning models routinely wrap the JSON.
fn strip_fences(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after_marker = &text[open + 3..];
    // Skip an optional language tag line ("json\n").
    let content_start = after_marker.find('\n').map(|i| i + 1).unwrap_or(0);
    let content = &after_marker[content_start..];
    let inner = match content.find("```") {
        Some(close) => &content[..close],
        None => content,
    };
    if inner.contains('[') {
        inner
    } else {
        text
    }
}

enum ArrayRegion<'a> {
    /// A balanced array: the exact span from `[` to its matching `]`.
    Complete(&'a str),
    /// An opening `[` whose close never arrives: span to end of text.
    Truncated(&'a str),
}

/// Finds the first top-level JSON array, tracking string and escape state so
/// brackets inside string values do not confuse the scan.
fn extract_array(text: &str) -> Option<ArrayRegion<'_>> {
    let start = text.find('[')?;
    let bytes = text.as_bytes();
    let mut depth = 0i32;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(ArrayRegion::Complete(&text[start..start + offset + 1]));
                }
            }
            _ => {}
        }
    }
    Some(ArrayRegion::Truncated(&text[start..]))
}

enum ParseOutcome {
    Records(Vec<RecommendationRecord>),
    Reject,
}

fn record_from_value(value: &serde_json::Value) -> Option<RecommendationRecord> {
    let record: RecommendationRecord = serde_json::from_value(value.clone()).ok()?;
    if record.name.trim().is_empty() || record.lastname.trim().is_empty() {
        return None;
    }
    Some(record)
}

fn parse_complete_array(span: &str) -> ParseOutcome {
    let Ok(serde_json::Value::Array(elements)) = serde_json::from_str(span) else {
        return ParseOutcome::Reject;
    };
    if elements.is_empty() {
        return ParseOutcome::Reject;
    }
    let mut records = Vec::with_capacity(elements.len());
    for element in &elements {
        match record_from_value(element) {
            Some(record) => records.push(record),
            None => return ParseOutcome::Reject,
        }
    }
    ParseOutcome::Records(records)
}

/// Truncation repair: parses complete top-level elements of an unterminated
/// array and discards the trailing partial entry. Any complete element that
/// is not a schema-complete record rejects the whole response, so repaired
/// responses never smuggle in malformed records.
fn repair_truncated_array(span: &str) -> ParseOutcome {
    debug_assert!(span.starts_with('['));
    let bytes = span.as_bytes();
    let mut records = Vec::new();
    let mut element_start: Option<usize> = None;
    let mut depth = 0i32;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(1) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => {
                if depth == 0 && element_start.is_none() {
                    element_start = Some(i);
                    depth = 0;
                }
                in_string = true;
            }
            b'{' | b'[' => {
                if depth == 0 && element_start.is_none() {
                    element_start = Some(i);
                }
                depth += 1;
            }
            b'}' | b']' => {
                depth -= 1;
                if depth == 0 {
                    if let Some(start) = element_start.take() {
                        let element_span = &span[start..=i];
                        match serde_json::from_str::<serde_json::Value>(element_span) {
                            Ok(value) => match record_from_value(&value) {
                                Some(record) => records.push(record),
                                None => return ParseOutcome::Reject,
                            },
                            Err(_) => return ParseOutcome::Reject,
                        }
                    }
                }
                if depth < 0 {
                    break;
                }
            }
            _ => {}
        }
    }
    if records.is_empty() {
        ParseOutcome::Reject
    } else {
        ParseOutcome::Records(records)
    }
}
