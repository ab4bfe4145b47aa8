//! The corpus record format: dialogue contexts paired with a fixed-size set
//! of candidate responses, plus preference pairs derived from labeled sets.

mod fixture;
mod io;
mod prefs;
mod stats;

pub use fixture::{generate_fixture, generate_fixture_with_quality, Fixture, FixtureOptions, QUALITY_CUES};
pub use io::{
    load_contexts, load_corpus, load_preferences, parse_contexts, parse_corpus, parse_preferences,
    write_contexts, write_corpus, write_preferences, LoadOptions, O2mRecord,
};
pub use prefs::{expand_preferences, PairLabel, PreferenceLabels};
pub use stats::{corpus_stats, CorpusStats, TokenScope};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::RangeInclusive;
use thiserror::Error;

/// Turn bounds of corpus contexts.
pub const O2M_TURNS: RangeInclusive<usize> = 3..=6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("labels do not cover the pair ({0}, {1})")]
    IncompleteLabels(usize, usize),
    #[error("contradictory labels: {0}")]
    ContradictoryLabels(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("slots {0} and {1} hold identical text; no preference can be expressed")]
    IdenticalResponses(usize, usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::A => f.write_str("A"),
            Speaker::B => f.write_str("B"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self { speaker, text: text.into() }
    }
}

/// An ordered dialogue history between two strictly alternating speakers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawContext")]
pub struct DialogueContext {
    pub id: String,
    utterances: Vec<Utterance>,
}

#[derive(Deserialize)]
struct RawContext {
    id: String,
    utterances: Vec<Utterance>,
}

impl TryFrom<RawContext> for DialogueContext {
    type Error = CorpusError;

    fn try_from(raw: RawContext) -> Result<Self, Self::Error> {
        DialogueContext::new(raw.id, raw.utterances)
    }
}

impl DialogueContext {
    /// Validates non-emptiness, alternation and non-blank texts.
    pub fn new(id: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let ctx = Self { id: id.into(), utterances };
        ctx.validate()?;
        Ok(ctx)
    }

    /// Builds a context from texts, alternating speakers starting with A.
    pub fn from_texts<S: AsRef<str>>(id: impl Into<String>, texts: &[S]) -> Result<Self, CorpusError> {
        let mut speaker = Speaker::A;
        let utterances = texts
            .iter()
            .map(|t| {
                let u = Utterance::new(speaker, t.as_ref());
                speaker = speaker.other();
                u
            })
            .collect();
        Self::new(id, utterances)
    }

    /// An empty context that grows turn by turn, as in a live session.
    pub fn empty(id: impl Into<String>) -> Self {
        Self { id: id.into(), utterances: Vec::new() }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.utterances.is_empty() {
            return Err(CorpusError::InvalidContext("context has no utterances".into()));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(CorpusError::InvalidContext(format!("utterance {i} is blank")));
            }
            if i > 0 && self.utterances[i - 1].speaker == u.speaker {
                return Err(CorpusError::InvalidContext(format!(
                    "speakers do not alternate at utterance {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Speaker of the next turn.
    pub fn next_speaker(&self) -> Speaker {
        self.utterances.last().map_or(Speaker::A, |u| u.speaker.other())
    }

    /// Appends a turn for the next speaker.
    pub fn push(&mut self, text: impl Into<String>) -> Result<(), CorpusError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::InvalidContext("cannot append a blank utterance".into()));
        }
        let speaker = self.next_speaker();
        self.utterances.push(Utterance { speaker, text });
        Ok(())
    }

    /// Replaces the text of the final turn, keeping its speaker.
    pub fn replace_last(&mut self, text: impl Into<String>) -> Result<(), CorpusError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::InvalidContext("cannot set a blank utterance".into()));
        }
        match self.utterances.last_mut() {
            Some(last) => {
                last.text = text;
                Ok(())
            }
            None => Err(CorpusError::InvalidContext("context has no utterances".into())),
        }
    }

    /// One utterance per line, speaker-prefixed (`A: ...`).
    pub fn format_history(&self) -> String {
        self.utterances
            .iter()
            .map(|u| format!("{}: {}", u.speaker, u.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Exactly `n` candidate slots, each holding a response or `None` when the
/// generator failed to produce one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Option<String>>", into = "Vec<Option<String>>")]
pub struct ResponseSet {
    slots: Vec<Option<String>>,
}

impl ResponseSet {
    pub fn new(slots: Vec<Option<String>>) -> Result<Self, CorpusError> {
        if slots.is_empty() {
            return Err(CorpusError::Precondition("a response set needs at least one slot".into()));
        }
        if let Some(i) = slots.iter().position(|s| s.as_deref().is_some_and(|t| t.trim().is_empty())) {
            return Err(CorpusError::Precondition(format!("slot {i} holds blank text")));
        }
        Ok(Self { slots })
    }

    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Result<Self, CorpusError> {
        Self::new(texts.iter().map(|t| Some(t.as_ref().to_string())).collect())
    }

    pub fn all_missing(n: usize) -> Result<Self, CorpusError> {
        Self::new(vec![None; n])
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Option<String>] {
        &self.slots
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.slots.get(index).and_then(|s| s.as_deref())
    }

    /// `(index, text)` for every non-missing slot, in slot order.
    pub fn present(&self) -> impl Iterator<Item = (usize, &str)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_deref().map(|t| (i, t)))
    }

    pub fn present_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// True when every slot is missing; such sets carry no usable response.
    pub fn is_degenerate(&self) -> bool {
        self.present_count() == 0
    }

    pub fn into_slots(self) -> Vec<Option<String>> {
        self.slots
    }
}

impl TryFrom<Vec<Option<String>>> for ResponseSet {
    type Error = CorpusError;

    fn try_from(slots: Vec<Option<String>>) -> Result<Self, Self::Error> {
        ResponseSet::new(slots)
    }
}

impl From<ResponseSet> for Vec<Option<String>> {
    fn from(set: ResponseSet) -> Self {
        set.slots
    }
}

/// A context paired with its candidate set, one corpus record.
#[derive(Debug, Clone, PartialEq)]
pub struct O2mSample {
    pub context: DialogueContext,
    pub responses: ResponseSet,
    /// Generator identity per slot.
    pub source_tags: Option<Vec<String>>,
}

impl O2mSample {
    pub fn new(
        context: DialogueContext,
        responses: ResponseSet,
        source_tags: Option<Vec<String>>,
    ) -> Result<Self, CorpusError> {
        if let Some(tags) = &source_tags {
            if tags.len() != responses.n() {
                return Err(CorpusError::Precondition(format!(
                    "source_tags has {} entries for {} slots",
                    tags.len(),
                    responses.n()
                )));
            }
        }
        Ok(Self { context, responses, source_tags })
    }

    pub fn id(&self) -> &str {
        &self.context.id
    }
}

/// One labeled comparison between two responses to the same context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context_id: String,
    pub set_id: String,
    pub chosen: String,
    pub rejected: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_rejects_non_alternating_speakers() {
        let err = DialogueContext::new(
            "c",
            vec![Utterance::new(Speaker::A, "hi"), Utterance::new(Speaker::A, "again")],
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::InvalidContext(_)));
    }

    #[test]
    fn context_push_alternates() {
        let mut ctx = DialogueContext::empty("s");
        ctx.push("hello").unwrap();
        ctx.push("hi there").unwrap();
        assert_eq!(ctx.utterances()[0].speaker, Speaker::A);
        assert_eq!(ctx.utterances()[1].speaker, Speaker::B);
        assert_eq!(ctx.format_history(), "A: hello\nB: hi there");
        ctx.replace_last("hey").unwrap();
        assert_eq!(ctx.utterances()[1].text, "hey");
    }

    #[test]
    fn response_set_reports_degenerate_when_all_missing() {
        let set = ResponseSet::all_missing(3).unwrap();
        assert!(set.is_degenerate());
        assert_eq!(set.n(), 3);
        assert!(ResponseSet::new(vec![]).is_err());
        assert!(ResponseSet::new(vec![Some("  ".into())]).is_err());
    }

    #[test]
    fn source_tags_length_must_match() {
        let ctx = DialogueContext::from_texts("c", &["a", "b", "c"]).unwrap();
        let set = ResponseSet::from_texts(&["x", "y"]).unwrap();
        assert!(O2mSample::new(ctx.clone(), set.clone(), Some(vec!["m1".into()])).is_err());
        assert!(O2mSample::new(ctx, set, Some(vec!["m1".into(), "m2".into()])).is_ok());
    }
}
