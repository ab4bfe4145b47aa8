//! Deterministic in-process backends for tests, fixtures and offline runs.
//!
//! Each mock is a pure function of its script plus the input; the recording
//! in [`MockChat`] only observes calls.

use super::{
    BackendError, ChatBackend, ChatCoherence, ChatRequest, EmbedBackend, NliBackend, NliLabel, NliVerdict,
    ScoringBackend, COHERENCE_QUESTION,
};
use crate::corpus::DialogueContext;
use crate::text::{fnv1a, tokens};
use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

enum Reply {
    Fixed(String),
    Scripted { replies: HashMap<String, String>, fallback: Option<String> },
    Func(Box<ReplyFn>),
}

/// Chat mock with a canned, scripted or computed reply. Records every request.
pub struct MockChat {
    model: String,
    reply: Reply,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockChat {
    fn build(reply: Reply) -> Self {
        Self { model: "mock-chat".into(), reply, log: Mutex::new(Vec::new()) }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::build(Reply::Fixed(reply.into()))
    }

    /// Replies looked up by exact prompt text.
    pub fn scripted(replies: HashMap<String, String>, fallback: Option<String>) -> Self {
        Self::build(Reply::Scripted { replies, fallback })
    }

    pub fn from_fn(f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self::build(Reply::Func(Box::new(f)))
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("mock log").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log").len()
    }
}

impl ChatBackend for MockChat {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        req.validate()?;
        self.log.lock().expect("mock log").push(req.clone());
        let text = match &self.reply {
            Reply::Fixed(t) => t.clone(),
            Reply::Scripted { replies, fallback } => match replies.get(&req.prompt).or(fallback.as_ref()) {
                Some(t) => t.clone(),
                None => return Err(BackendError::Payload("no scripted reply for prompt".into())),
            },
            Reply::Func(f) => f(req)?,
        };
        if text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(text)
    }
}

const OPENERS: &[&str] = &[
    "That sounds like a fine plan for the {topic}",
    "I have been thinking about the {topic} a lot lately",
    "Tell me more about the {topic} when you get a chance",
    "I am not sure the {topic} is worth all the trouble",
    "We should talk about the {topic} over coffee tomorrow",
    "My sister went through the same thing with the {topic}",
    "It might help to set aside a whole afternoon for the {topic}",
    "I read a short article about the {topic} last week",
    "Let us keep the {topic} simple this time",
    "The {topic} reminds me of our trip last summer",
    "Maybe we can ask a friend for advice on the {topic}",
    "I feel a bit unsure about the {topic} right now",
    "Starting small with the {topic} could work well",
    "There is no rush to decide about the {topic} today",
    "A little planning would make the {topic} much easier",
    "I think the {topic} could turn out better than expected",
];

/// Chat mock that writes plausible, deterministic replies to the engine's own
/// prompt formats: numbered sets, single responses, chained responses that
/// avoid earlier ones, and Yes/No coherence judgments.
pub struct SyntheticChat {
    seed: u64,
    model: String,
}

impl SyntheticChat {
    pub fn new(seed: u64) -> Self {
        Self { seed, model: "synthetic-chat".into() }
    }

    fn hash(&self, parts: &[&[u8]]) -> u64 {
        let mut buf = self.seed.to_le_bytes().to_vec();
        for p in parts {
            buf.extend_from_slice(p);
            buf.push(0xff);
        }
        fnv1a(&buf)
    }

    fn sentence(&self, prompt: &str, topic: &str, k: usize, avoid: &HashSet<String>) -> String {
        let mut salt = 0u64;
        loop {
            let h = self.hash(&[prompt.as_bytes(), &(k as u64).to_le_bytes(), &salt.to_le_bytes()]);
            let opener = OPENERS[(h % OPENERS.len() as u64) as usize].replace("{topic}", topic);
            let mut text = String::new();
            let cues = (h >> 16) & 0b1111;
            if cues & 1 == 1 {
                text.push_str("Honestly, ");
                let mut chars = opener.chars();
                if let Some(c) = chars.next() {
                    text.extend(c.to_lowercase());
                }
                text.push_str(chars.as_str());
            } else {
                text.push_str(&opener);
            }
            if cues & 2 == 2 {
                text.push_str(" because it matters to both of us");
            }
            if cues & 4 == 4 {
                text.push_str(", and I would recommend it");
            }
            text.push('.');
            if cues & 8 == 8 {
                text.push_str(" Have you tried it yourself?");
            }
            if !avoid.contains(&text) || salt > 64 {
                return text;
            }
            salt += 1;
        }
    }
}

/// Text of the final block introduced by `header` and ended by a blank line.
fn block_after<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let start = prompt.rfind(header)? + header.len();
    let rest = &prompt[start..];
    Some(rest.split("\n\n").next().unwrap_or(rest).trim())
}

fn topic_of(history: &str) -> String {
    let last = history.lines().last().unwrap_or("");
    let text = last.split_once(": ").map_or(last, |(_, t)| t);
    let mut best = String::from("plan");
    for t in tokens(text) {
        if t.chars().all(char::is_alphabetic) && t.len() > best.len() {
            best = t;
        }
    }
    best
}

impl ChatBackend for SyntheticChat {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        req.validate()?;
        let prompt = req.prompt.as_str();
        let history = block_after(prompt, "Dialogue history:\n").unwrap_or("");

        if prompt.contains(COHERENCE_QUESTION) {
            let response = block_after(prompt, "Response: ").unwrap_or("");
            let hist: HashSet<String> = tokens(history).into_iter().filter(|t| t.len() > 3).collect();
            let shared = tokens(response).iter().any(|t| hist.contains(t));
            return Ok(if shared { "Yes".into() } else { "No".into() });
        }

        let topic = topic_of(history);
        let avoid: HashSet<String> = block_after(prompt, "Previous responses:\n")
            .map(|b| {
                b.lines()
                    .map(|l| l.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ' ').to_string())
                    .collect()
            })
            .unwrap_or_default();

        let count = prompt
            .split_whitespace()
            .collect::<Vec<_>>()
            .windows(2)
            .find(|w| w[0] == "exactly")
            .and_then(|w| w[1].parse::<usize>().ok());
        match count {
            Some(n) => {
                let explain = prompt.contains("Explanation:");
                let mut seen = avoid;
                let mut out = Vec::new();
                for k in 0..n {
                    let s = self.sentence(prompt, &topic, k, &seen);
                    seen.insert(s.clone());
                    out.push(format!("{}. {s}", k + 1));
                    if explain {
                        out.push(format!("Explanation: this one takes angle {} on the {topic}.", k + 1));
                    }
                }
                Ok(out.join("\n"))
            }
            None => Ok(self.sentence(prompt, &topic, 0, &avoid)),
        }
    }
}

/// Feature-hashing embedder. Marker tokens get dedicated trailing axes with a
/// fixed magnitude so that a scorer can pick them up.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    markers: Vec<String>,
    marker_weight: f64,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim, markers: Vec::new(), marker_weight: 3.0 }
    }

    /// Panics when the markers leave no hashed axes.
    pub fn with_markers<S: AsRef<str>>(mut self, markers: &[S], weight: f64) -> Self {
        assert!(markers.len() < self.dim, "embedding dimension too small for {} markers", markers.len());
        self.markers = markers.iter().map(|m| m.as_ref().to_lowercase()).collect();
        self.marker_weight = weight;
        self
    }
}

impl EmbedBackend for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::Precondition("cannot embed empty text".into()));
        }
        let hashed = self.dim - self.markers.len();
        let mut v = vec![0.0; self.dim];
        for tok in tokens(text) {
            if let Some(m) = self.markers.iter().position(|m| *m == tok) {
                v[hashed + m] = self.marker_weight;
                continue;
            }
            let h = fnv1a(tok.as_bytes());
            let sign = if (h >> 63) == 1 { -1.0 } else { 1.0 };
            v[(h % hashed as u64) as usize] += sign;
        }
        let norm = v[..hashed].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v[..hashed].iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// NLI mock keyed by `(premise, hypothesis)`. Identical texts always entail.
/// In strict mode unscripted pairs are malformed; otherwise they are neutral.
#[derive(Debug, Clone, Default)]
pub struct ScriptedNli {
    script: HashMap<(String, String), NliVerdict>,
    strict: bool,
}

impl ScriptedNli {
    pub fn new(strict: bool) -> Self {
        Self { script: HashMap::new(), strict }
    }

    pub fn with(mut self, premise: &str, hypothesis: &str, verdict: NliVerdict) -> Self {
        self.script.insert((premise.to_string(), hypothesis.to_string()), verdict);
        self
    }
}

impl NliBackend for ScriptedNli {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, BackendError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::Precondition("NLI needs non-empty premise and hypothesis".into()));
        }
        if premise == hypothesis {
            return Ok(NliVerdict { label: NliLabel::Entailment, entail_score: 1.0 });
        }
        match self.script.get(&(premise.to_string(), hypothesis.to_string())) {
            Some(v) => Ok(*v),
            None if self.strict => Err(BackendError::MalformedVerdict(format!("no scripted verdict for ({premise:?}, {hypothesis:?})"))),
            None => Ok(NliVerdict { label: NliLabel::Neutral, entail_score: 0.0 }),
        }
    }
}

/// Heuristic NLI: entailment when the token Jaccard overlap reaches `threshold`.
#[derive(Debug, Clone)]
pub struct OverlapNli {
    threshold: f64,
}

impl OverlapNli {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }
}

impl Default for OverlapNli {
    fn default() -> Self {
        Self::new(0.1)
    }
}

impl NliBackend for OverlapNli {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, BackendError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::Precondition("NLI needs non-empty premise and hypothesis".into()));
        }
        let overlap = crate::metrics::jaccard(premise, hypothesis);
        let label = if overlap >= self.threshold { NliLabel::Entailment } else { NliLabel::Neutral };
        Ok(NliVerdict { label, entail_score: overlap })
    }
}

/// Coherence judge backed by [`SyntheticChat`].
pub fn synthetic_coherence(seed: u64) -> ChatCoherence {
    ChatCoherence::new(Arc::new(SyntheticChat::new(seed)))
}

/// External-scorer mock computing a score from the response text.
pub struct FnScorer<F>(pub F);

impl<F> ScoringBackend for FnScorer<F>
where
    F: Fn(&str) -> f64 + Send + Sync,
{
    fn score(&self, _context: &DialogueContext, response: &str) -> Result<f64, BackendError> {
        Ok((self.0)(response))
    }
}
