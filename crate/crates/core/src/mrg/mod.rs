//! Multi-response generation: prompt construction per strategy, generation
//! against a chat backend, completion parsing and demonstration selection.
//!
//! FS, CoT and IT ask for the whole set in one call. PC chains `n` calls,
//! each told to differ from the responses accepted so far. MI makes `n`
//! independent single-response calls.

mod demos;
mod parse;
mod prompt;

pub use demos::{combined_similarity, rank_ascending, select_demonstrations};
pub use parse::{extract_responses, parse_response_set, parse_single, ParseWarning, ParsedSet};
pub use prompt::{
    build_pc_prompt, build_prompt, single_prompt, Demonstration, Template, COT_TEMPLATE, PC_STEP_TEMPLATE,
    SET_TEMPLATE, SINGLE_TEMPLATE,
};

use crate::backends::{BackendError, ChatBackend, ChatRequest, DEFAULT_TEMPERATURE};
use crate::corpus::{DialogueContext, ResponseSet};
use crate::metrics::MetricError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MrgError {
    #[error("strategy expects {expected} demonstration(s), got {got}")]
    ShotMismatch { expected: usize, got: usize },
    #[error("chaining step {step} needs the prior responses")]
    MissingPriorResponses { step: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("completion contains no response-like lines")]
    UnparseableCompletion,
    #[error("generation produced no usable response")]
    AllSlotsMissing,
    #[error("corpus has {have} sample(s), {need} requested")]
    InsufficientCorpus { have: usize, need: usize },
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Few-shot (or zero-shot) set prompt.
    Fs,
    /// Set prompt with a per-response explanation of how it differs.
    Cot,
    /// Prompt chaining.
    Pc,
    /// Multiple independent inferences.
    Mi,
    /// The zero-shot set prompt, meant for an instruction-tuned generator.
    It,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] =
        [StrategyKind::Fs, StrategyKind::Cot, StrategyKind::Pc, StrategyKind::Mi, StrategyKind::It];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Fs => "fs",
            StrategyKind::Cot => "cot",
            StrategyKind::Pc => "pc",
            StrategyKind::Mi => "mi",
            StrategyKind::It => "it",
        }
    }

    /// True for strategies that request the whole set in one call.
    pub fn is_single_inference(self) -> bool {
        matches!(self, StrategyKind::Fs | StrategyKind::Cot | StrategyKind::It)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = MrgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MrgError::InvalidStrategy(format!("unknown strategy {s:?} (fs, cot, pc, mi, it)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub n: usize,
    pub shots: usize,
}

impl Strategy {
    pub fn new(kind: StrategyKind, n: usize, shots: usize) -> Result<Self, MrgError> {
        if n == 0 {
            return Err(MrgError::InvalidStrategy("n must be positive".into()));
        }
        if kind.is_single_inference() && n < 2 {
            return Err(MrgError::InvalidStrategy(format!("{kind} generates a set and needs n >= 2")));
        }
        if shots > 0 && !matches!(kind, StrategyKind::Fs | StrategyKind::Cot) {
            return Err(MrgError::InvalidStrategy(format!("{kind} takes no demonstrations")));
        }
        Ok(Self { kind, n, shots })
    }

    /// Number of chat calls a run makes when every completion parses.
    pub fn expected_calls(&self) -> usize {
        if self.kind.is_single_inference() {
            1
        } else {
            self.n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub temperature: f64,
    pub set_max_tokens: u32,
    pub single_max_tokens: u32,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE, set_max_tokens: 512, single_max_tokens: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateUse {
    pub name: String,
    pub sha256: String,
}

impl From<Template> for TemplateUse {
    fn from(t: Template) -> Self {
        Self { name: t.name.to_string(), sha256: t.sha256() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub strategy: String,
    pub n: usize,
    pub shots: usize,
    pub model: String,
    pub temperature: f64,
    pub calls: usize,
    pub templates: Vec<TemplateUse>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl GenerationLog {
    fn new(strategy: &str, n: usize, shots: usize, chat: &dyn ChatBackend, opts: &GenOptions) -> Self {
        Self {
            strategy: strategy.to_string(),
            n,
            shots,
            model: chat.model_name().to_string(),
            temperature: opts.temperature,
            calls: 0,
            templates: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub set: ResponseSet,
    pub log: GenerationLog,
}

fn call(chat: &dyn ChatBackend, prompt: String, max_tokens: u32, opts: &GenOptions) -> Result<String, BackendError> {
    chat.chat_complete(&ChatRequest::new(prompt).with_temperature(opts.temperature).with_max_tokens(max_tokens))
}

/// A completion that yields no response, as opposed to a backend failure.
fn single_or_none(reply: Result<String, BackendError>) -> Result<Option<String>, MrgError> {
    match reply {
        Ok(raw) => match parse_single(&raw) {
            Ok(text) => Ok(Some(text)),
            Err(MrgError::UnparseableCompletion) => Ok(None),
            Err(e) => Err(e),
        },
        Err(BackendError::EmptyCompletion) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Generates one candidate set for `context`.
pub fn generate_mrg(
    strategy: &Strategy,
    context: &DialogueContext,
    demos: &[Demonstration],
    chat: &dyn ChatBackend,
    opts: &GenOptions,
) -> Result<Generation, MrgError> {
    let mut log = GenerationLog::new(strategy.kind.as_str(), strategy.n, strategy.shots, chat, opts);
    let slots = match strategy.kind {
        StrategyKind::Fs | StrategyKind::Cot | StrategyKind::It => {
            let prompt = build_prompt(strategy, context, demos)?;
            log.templates.push(prompt::template_for(strategy.kind, false).into());
            log.calls += 1;
            let raw = match call(chat, prompt, opts.set_max_tokens, opts) {
                Err(BackendError::EmptyCompletion) => return Err(MrgError::AllSlotsMissing),
                other => other?,
            };
            let parsed = match parse_response_set(&raw, strategy.n) {
                Err(MrgError::UnparseableCompletion) => return Err(MrgError::AllSlotsMissing),
                other => other?,
            };
            log.warnings.extend(parsed.warnings.iter().map(ToString::to_string));
            parsed.set.into_slots()
        }
        StrategyKind::Pc => {
            if !demos.is_empty() {
                return Err(MrgError::ShotMismatch { expected: 0, got: demos.len() });
            }
            log.templates = vec![SINGLE_TEMPLATE.into(), PC_STEP_TEMPLATE.into()];
            let mut accepted: Vec<String> = Vec::new();
            let mut slots = Vec::with_capacity(strategy.n);
            for step in 0..strategy.n {
                let effective = if accepted.is_empty() { 0 } else { step };
                let prompt = build_pc_prompt(context, effective, &accepted)?;
                let mut slot = None;
                for attempt in 0..2 {
                    log.calls += 1;
                    slot = single_or_none(call(chat, prompt.clone(), opts.single_max_tokens, opts))?;
                    if slot.is_some() {
                        break;
                    }
                    log.warnings.push(format!("step {step}: attempt {} produced no response", attempt + 1));
                }
                if let Some(text) = &slot {
                    accepted.push(text.clone());
                }
                slots.push(slot);
            }
            slots
        }
        StrategyKind::Mi => {
            if !demos.is_empty() {
                return Err(MrgError::ShotMismatch { expected: 0, got: demos.len() });
            }
            log.templates.push(SINGLE_TEMPLATE.into());
            let prompt = single_prompt(context)?;
            let replies: Vec<Result<String, BackendError>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..strategy.n)
                    .map(|_| s.spawn(|| call(chat, prompt.clone(), opts.single_max_tokens, opts)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
            });
            log.calls += replies.len();
            let mut slots = Vec::with_capacity(strategy.n);
            for (i, reply) in replies.into_iter().enumerate() {
                let slot = single_or_none(reply)?;
                if slot.is_none() {
                    log.warnings.push(format!("call {i} produced no response"));
                }
                slots.push(slot);
            }
            slots
        }
    };
    if slots.iter().all(Option::is_none) {
        return Err(MrgError::AllSlotsMissing);
    }
    let set = ResponseSet::new(slots).map_err(|e| MrgError::Template(e.to_string()))?;
    Ok(Generation { set, log })
}

/// One direct response with the single-response prompt, as a 1-slot set.
pub fn generate_single(
    context: &DialogueContext,
    chat: &dyn ChatBackend,
    opts: &GenOptions,
) -> Result<Generation, MrgError> {
    let mut log = GenerationLog::new("base", 1, 0, chat, opts);
    log.templates.push(SINGLE_TEMPLATE.into());
    log.calls = 1;
    let text = single_or_none(call(chat, single_prompt(context)?, opts.single_max_tokens, opts))?
        .ok_or(MrgError::AllSlotsMissing)?;
    let set = ResponseSet::new(vec![Some(text)]).map_err(|e| MrgError::Template(e.to_string()))?;
    Ok(Generation { set, log })
}
