use super::MrgError;
use crate::corpus::ResponseSet;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// More responses than requested; the extra ones were dropped.
    OverGeneration { found: usize, kept: usize },
    /// Fewer responses than requested; the rest of the slots are missing.
    UnderGeneration { found: usize, expected: usize },
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseWarning::OverGeneration { found, kept } => {
                write!(f, "completion had {found} responses, kept the first {kept}")
            }
            ParseWarning::UnderGeneration { found, expected } => {
                write!(f, "completion had {found} of {expected} responses")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSet {
    pub set: ResponseSet,
    pub warnings: Vec<ParseWarning>,
}

fn enumerated_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:\(?\d{1,3}[.):]|[-•*]|response\s*\d+\s*[:.)-])\s*(.*)$").expect("enumeration regex")
    })
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:new\s+)?responses?\s*:\s*").expect("label regex"))
}

fn explanation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)[(\[]?\bexplanation\b\s*:").expect("explanation regex"))
}

/// Cuts an inline or whole-line explanation and trims decoration.
fn clean(body: &str) -> &str {
    let body = match explanation_re().find(body) {
        Some(m) => &body[..m.start()],
        None => body,
    };
    let body = label_re().find(body).map_or(body, |m| &body[m.end()..]);
    let body = body.trim().trim_end_matches(['-', '–']).trim();
    match body.strip_prefix('"').and_then(|b| b.strip_suffix('"')) {
        Some(inner) if !inner.trim().is_empty() => inner.trim(),
        _ => body,
    }
}

/// Candidate responses in the order they appear. When any line carries an
/// enumeration marker only marked lines count; otherwise every remaining
/// non-empty line does. Headers ending in ':' and explanation lines are
/// dropped.
pub fn extract_responses(raw: &str) -> Vec<&str> {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let enumerated = lines.iter().any(|l| enumerated_re().is_match(l));
    let mut out = Vec::new();
    for line in lines {
        let body = if enumerated {
            match enumerated_re().captures(line) {
                Some(c) => c.get(1).map_or("", |m| m.as_str()),
                None => continue,
            }
        } else {
            if line.ends_with(':') {
                continue;
            }
            line
        };
        let text = clean(body);
        if !text.is_empty() && !text.ends_with(':') {
            out.push(text);
        }
    }
    out
}

/// Parses a completion into exactly `n` slots.
pub fn parse_response_set(raw: &str, n: usize) -> Result<ParsedSet, MrgError> {
    if n == 0 {
        return Err(MrgError::InvalidStrategy("n must be positive".into()));
    }
    let found = extract_responses(raw);
    if found.is_empty() {
        return Err(MrgError::UnparseableCompletion);
    }
    let mut warnings = Vec::new();
    if found.len() > n {
        warnings.push(ParseWarning::OverGeneration { found: found.len(), kept: n });
    } else if found.len() < n {
        warnings.push(ParseWarning::UnderGeneration { found: found.len(), expected: n });
    }
    let mut slots: Vec<Option<String>> = found.iter().take(n).map(|t| Some(t.to_string())).collect();
    slots.resize(n, None);
    let set = ResponseSet::new(slots).map_err(|e| MrgError::Template(e.to_string()))?;
    Ok(ParsedSet { set, warnings })
}

/// The first response of a single-response completion.
pub fn parse_single(raw: &str) -> Result<String, MrgError> {
    extract_responses(raw).first().map(|s| s.to_string()).ok_or(MrgError::UnparseableCompletion)
}
