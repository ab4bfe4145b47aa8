//! Clients for the external model services the engine depends on: chat
//! completion, text embedding, NLI classification, boolean-QA coherence,
//! pairwise similarity and external preference scoring.
//!
//! Every role is a trait so that HTTP clients and the deterministic mocks in
//! [`mock`] are interchangeable.

pub mod config;
mod http;
pub mod mock;
mod retry;

pub use config::{BackendConfig, BackendsConfig, ConfigError, Provider};
pub use http::{HttpNli, HttpScorer, HttpSimilarity, OpenAiChat, OpenAiEmbed};
pub use retry::{InFlightLimiter, RetryPolicy};

use crate::corpus::DialogueContext;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Sampling temperature used for all generation unless overridden.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

/// The boolean question posed to the coherence judge.
pub const COHERENCE_QUESTION: &str = "Is this a coherent response given the dialogue history?";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend refused the request with status {status}: {body}")]
    Refusal { status: u16, body: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("malformed verdict: {0}")]
    MalformedVerdict(String),
    #[error("unexpected payload: {0}")]
    Payload(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl BackendError {
    /// Failures that mean the service itself is unavailable.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Transport { .. } | BackendError::Refusal { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), temperature: DEFAULT_TEMPERATURE, max_tokens: 256, stop: Vec::new() }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::Precondition("prompt text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::Precondition(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliVerdict {
    pub label: NliLabel,
    /// Probability mass on entailment.
    pub entail_score: f64,
}

impl NliVerdict {
    pub fn new(label: NliLabel, entail_score: f64) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&entail_score) {
            return Err(BackendError::MalformedVerdict(format!("entail_score {entail_score} outside [0, 1]")));
        }
        Ok(Self { label, entail_score })
    }

    pub fn is_entailment(&self) -> bool {
        self.label == NliLabel::Entailment
    }
}

pub trait ChatBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

pub trait NliBackend: Send + Sync {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, BackendError>;
}

/// Boolean coherence judgment: 1 for coherent, 0 otherwise.
pub trait CoherenceBackend: Send + Sync {
    fn coherence_qa(&self, context: &DialogueContext, response: &str) -> Result<u8, BackendError>;
}

/// Symmetric pairwise semantic similarity in [0, 1].
pub trait SimilarityBackend: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError>;
}

/// An externally served preference model.
pub trait ScoringBackend: Send + Sync {
    fn score(&self, context: &DialogueContext, response: &str) -> Result<f64, BackendError>;
}

fn require_text(what: &str, text: &str) -> Result<(), BackendError> {
    if text.trim().is_empty() {
        Err(BackendError::Precondition(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

/// Coherence judged by asking a chat model the boolean question.
pub struct ChatCoherence {
    chat: Arc<dyn ChatBackend>,
}

impl ChatCoherence {
    pub fn new(chat: Arc<dyn ChatBackend>) -> Self {
        Self { chat }
    }

    pub fn prompt(context: &DialogueContext, response: &str) -> String {
        format!(
            "Dialogue history:\n{}\n\nResponse: {}\n\nQuestion: {}\nAnswer Yes or No.",
            context.format_history(),
            response,
            COHERENCE_QUESTION
        )
    }
}

/// Maps a judge reply to 1/0 by its first word, ignoring case and punctuation.
pub fn parse_yes_no(reply: &str) -> Result<u8, BackendError> {
    let first = reply
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|w| !w.is_empty())
        .unwrap_or("")
        .to_lowercase();
    match first.as_str() {
        "yes" => Ok(1),
        "no" => Ok(0),
        _ => Err(BackendError::MalformedVerdict(format!("expected Yes or No, got {reply:?}"))),
    }
}

impl CoherenceBackend for ChatCoherence {
    fn coherence_qa(&self, context: &DialogueContext, response: &str) -> Result<u8, BackendError> {
        if context.is_empty() {
            return Err(BackendError::Precondition("coherence needs at least one utterance".into()));
        }
        require_text("response", response)?;
        let req = ChatRequest::new(Self::prompt(context, response)).with_max_tokens(8);
        parse_yes_no(&self.chat.chat_complete(&req)?)
    }
}

/// Default semantic similarity: embedding cosine mapped to [0, 1] as
/// `(1 + cos) / 2`. Embeddings are memoized per text.
pub struct EmbeddingCosine {
    embed: Arc<dyn EmbedBackend>,
    cache: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

impl EmbeddingCosine {
    pub fn new(embed: Arc<dyn EmbedBackend>) -> Self {
        Self { embed, cache: Mutex::new(HashMap::new()) }
    }

    fn vector(&self, text: &str) -> Result<Arc<Vec<f64>>, BackendError> {
        if let Some(v) = self.cache.lock().expect("embedding cache").get(text) {
            return Ok(v.clone());
        }
        let v = Arc::new(self.embed.embed(text)?);
        self.cache.lock().expect("embedding cache").insert(text.to_string(), v.clone());
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

impl SimilarityBackend for EmbeddingCosine {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        if va.len() != vb.len() {
            return Err(BackendError::DimensionMismatch { expected: va.len(), actual: vb.len() });
        }
        Ok((1.0 + cosine(&va, &vb)) / 2.0)
    }
}

/// Every backend role the pipeline needs.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub embed: Arc<dyn EmbedBackend>,
    pub nli: Arc<dyn NliBackend>,
    pub coherence: Arc<dyn CoherenceBackend>,
    pub similarity: Arc<dyn SimilarityBackend>,
    pub scorer: Option<Arc<dyn ScoringBackend>>,
}

impl Backends {
    /// Similarity defaults to embedding cosine over `embed`; coherence to a
    /// chat judge over `chat`.
    pub fn new(chat: Arc<dyn ChatBackend>, embed: Arc<dyn EmbedBackend>, nli: Arc<dyn NliBackend>) -> Self {
        Self {
            coherence: Arc::new(ChatCoherence::new(chat.clone())),
            similarity: Arc::new(EmbeddingCosine::new(embed.clone())),
            chat,
            embed,
            nli,
            scorer: None,
        }
    }

    pub fn with_coherence(mut self, coherence: Arc<dyn CoherenceBackend>) -> Self {
        self.coherence = coherence;
        self
    }

    pub fn with_similarity(mut self, similarity: Arc<dyn SimilarityBackend>) -> Self {
        self.similarity = similarity;
        self
    }

    pub fn with_scorer(mut self, scorer: Arc<dyn ScoringBackend>) -> Self {
        self.scorer = Some(scorer);
        self
    }
}
