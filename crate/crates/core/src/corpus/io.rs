use super::{CorpusError, DialogueContext, O2mSample, PreferencePair, ResponseSet, Utterance, O2M_TURNS};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

/// One JSONL line of the corpus format. Field order is the write order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct O2mRecord {
    pub id: String,
    pub context: Vec<Utterance>,
    #[serde(default)]
    pub responses: Vec<Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tags: Option<Vec<String>>,
}

impl From<&O2mSample> for O2mRecord {
    fn from(sample: &O2mSample) -> Self {
        Self {
            id: sample.context.id.clone(),
            context: sample.context.utterances().to_vec(),
            responses: sample.responses.slots().to_vec(),
            source_tags: sample.source_tags.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Required slot count. When `None`, the first record fixes it.
    pub expected_n: Option<usize>,
    /// Allowed context lengths; `None` accepts any non-empty context.
    pub turn_bounds: Option<RangeInclusive<usize>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { expected_n: None, turn_bounds: Some(O2M_TURNS) }
    }
}

impl LoadOptions {
    pub fn with_n(n: usize) -> Self {
        Self { expected_n: Some(n), ..Self::default() }
    }

    pub fn any_length() -> Self {
        Self { expected_n: None, turn_bounds: None }
    }
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

fn check_context(
    line: usize,
    record: &O2mRecord,
    bounds: &Option<RangeInclusive<usize>>,
) -> Result<DialogueContext, CorpusError> {
    let turns = record.context.len();
    if let Some(bounds) = bounds {
        if !bounds.contains(&turns) {
            return Err(CorpusError::Schema {
                line,
                message: format!(
                    "context has {turns} turns; records require {} to {} turns",
                    bounds.start(),
                    bounds.end()
                ),
            });
        }
    }
    DialogueContext::new(record.id.clone(), record.context.clone())
        .map_err(|e| CorpusError::Schema { line, message: e.to_string() })
}

/// Parses corpus JSONL text, validating every record.
pub fn parse_corpus(text: &str, opts: &LoadOptions) -> Result<Vec<O2mSample>, CorpusError> {
    let mut expected_n = opts.expected_n;
    let mut samples = Vec::new();
    for (line, raw) in lines(text) {
        let record: O2mRecord = serde_json::from_str(raw)
            .map_err(|e| CorpusError::Parse { line, message: e.to_string() })?;
        let context = check_context(line, &record, &opts.turn_bounds)?;
        let n = *expected_n.get_or_insert(record.responses.len());
        if record.responses.len() != n {
            return Err(CorpusError::Schema {
                line,
                message: format!("record has {} response slots, expected n = {n}", record.responses.len()),
            });
        }
        let responses = ResponseSet::new(record.responses)
            .map_err(|e| CorpusError::Schema { line, message: e.to_string() })?;
        let sample = O2mSample::new(context, responses, record.source_tags)
            .map_err(|e| CorpusError::Schema { line, message: e.to_string() })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_corpus(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Vec<O2mSample>, CorpusError> {
    parse_corpus(&read_to_string(path.as_ref())?, opts)
}

/// Parses context-only JSONL (`{id, context}`; any `responses` are ignored).
pub fn parse_contexts(text: &str, turn_bounds: Option<RangeInclusive<usize>>) -> Result<Vec<DialogueContext>, CorpusError> {
    lines(text)
        .map(|(line, raw)| {
            let record: O2mRecord = serde_json::from_str(raw)
                .map_err(|e| CorpusError::Parse { line, message: e.to_string() })?;
            check_context(line, &record, &turn_bounds)
        })
        .collect()
}

pub fn load_contexts(
    path: impl AsRef<Path>,
    turn_bounds: Option<RangeInclusive<usize>>,
) -> Result<Vec<DialogueContext>, CorpusError> {
    parse_contexts(&read_to_string(path.as_ref())?, turn_bounds)
}

fn line_of<T: Serialize>(value: &T) -> String {
    // Serializing plain structs of strings cannot fail.
    serde_json::to_string(value).expect("record serialization")
}

pub fn write_corpus<W: Write>(mut out: W, samples: &[O2mSample]) -> std::io::Result<()> {
    for sample in samples {
        writeln!(out, "{}", line_of(&O2mRecord::from(sample)))?;
    }
    Ok(())
}

pub fn write_contexts<W: Write>(mut out: W, contexts: &[DialogueContext]) -> std::io::Result<()> {
    for ctx in contexts {
        let record = O2mRecord {
            id: ctx.id.clone(),
            context: ctx.utterances().to_vec(),
            responses: Vec::new(),
            source_tags: None,
        };
        writeln!(out, "{}", line_of(&record))?;
    }
    Ok(())
}

pub fn parse_preferences(text: &str) -> Result<Vec<PreferencePair>, CorpusError> {
    lines(text)
        .map(|(line, raw)| {
            let pair: PreferencePair = serde_json::from_str(raw)
                .map_err(|e| CorpusError::Parse { line, message: e.to_string() })?;
            if pair.chosen == pair.rejected {
                return Err(CorpusError::Schema { line, message: "chosen and rejected are identical".into() });
            }
            if pair.chosen.trim().is_empty() || pair.rejected.trim().is_empty() {
                return Err(CorpusError::Schema { line, message: "blank response text".into() });
            }
            Ok(pair)
        })
        .collect()
}

pub fn load_preferences(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>, CorpusError> {
    parse_preferences(&read_to_string(path.as_ref())?)
}

pub fn write_preferences<W: Write>(mut out: W, pairs: &[PreferencePair]) -> std::io::Result<()> {
    for pair in pairs {
        writeln!(out, "{}", line_of(pair))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"s1","context":[{"speaker":"A","text":"Hi"},{"speaker":"B","text":"Hello"},{"speaker":"A","text":"Lunch?"}],"responses":["Sure.","Not today.",null]}"#;

    #[test]
    fn parses_valid_record_with_missing_slot() {
        let samples = parse_corpus(GOOD, &LoadOptions::default()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].responses.n(), 3);
        assert_eq!(samples[0].responses.get(2), None);
    }

    #[test]
    fn two_turn_context_violates_turn_bound() {
        let rec = r#"{"id":"s1","context":[{"speaker":"A","text":"Hi"},{"speaker":"B","text":"Hello"}],"responses":["a","b"]}"#;
        let err = parse_corpus(rec, &LoadOptions::default()).unwrap_err();
        match err {
            CorpusError::Schema { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("3 to 6 turns"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slot_count_must_match_declared_n() {
        let rec = r#"{"id":"s1","context":[{"speaker":"A","text":"a"},{"speaker":"B","text":"b"},{"speaker":"A","text":"c"}],"responses":["1","2","3","4"]}"#;
        let err = parse_corpus(rec, &LoadOptions::with_n(5)).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { line: 1, .. }));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = format!("{GOOD}\n\n{{not json\n");
        let err = parse_corpus(&text, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 3, .. }));
    }

    #[test]
    fn inconsistent_n_across_records_is_rejected() {
        let second = GOOD.replace(",null]", "]").replace("\"s1\"", "\"s2\"");
        let text = format!("{GOOD}\n{second}\n");
        let err = parse_corpus(&text, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { line: 2, .. }));
    }

    #[test]
    fn written_records_keep_field_order() {
        let samples = parse_corpus(GOOD, &LoadOptions::default()).unwrap();
        let mut out = Vec::new();
        write_corpus(&mut out, &samples).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim_end(), GOOD);
    }

    #[test]
    fn preference_lines_round_trip() {
        let pair = PreferencePair {
            context_id: "c".into(),
            set_id: "c".into(),
            chosen: "yes".into(),
            rejected: "no".into(),
        };
        let mut out = Vec::new();
        write_preferences(&mut out, std::slice::from_ref(&pair)).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "{\"context_id\":\"c\",\"set_id\":\"c\",\"chosen\":\"yes\",\"rejected\":\"no\"}\n");
        assert_eq!(parse_preferences(&text).unwrap(), vec![pair]);
    }
}
