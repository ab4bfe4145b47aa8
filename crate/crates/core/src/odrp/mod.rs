//! Preference-based selection: a small scoring head over embedding features,
//! trained on chosen/rejected pairs, that picks the final response as the
//! argmax over a candidate set.

mod model;
mod train;

pub use model::{OdrpModel, Weights, DEFAULT_HIDDEN_WIDTH, FORMAT_VERSION};
pub use train::{
    batch_bce_grad, batch_loss, batch_loss_grad, build_batches, fine_tune_hard_negatives, lowest_margin_indices,
    margins, mine_hard_negatives, pair_loss, pairwise_accuracy, sigmoid, softplus, train, train_batches, AdamW,
    FeatureBatch, Objective, PairFeatures, TrainConfig, TrainOutcome, TrainingMeta,
};

use crate::backends::{BackendError, EmbedBackend};
use crate::corpus::{DialogueContext, ResponseSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Fraction of pairs kept by hard-negative mining unless configured.
pub const DEFAULT_MINING_FRACTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdrpError {
    #[error("no training pairs")]
    EmptyDataset,
    #[error("loss became non-finite on set {set_id} in epoch {epoch}")]
    NonFiniteLoss { set_id: String, epoch: usize },
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("every slot is missing")]
    AllSlotsMissing,
    #[error("no dialogue context with id {0:?}")]
    UnknownContext(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported model format_version {found:?}, expected {expected}")]
    FormatVersion { found: Option<u64>, expected: u32 },
    #[error("invalid model file: {0}")]
    Serde(String),
    #[error("model file I/O: {0}")]
    Io(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Context and response embeddings.
    #[default]
    Context,
    /// The context embedding is replaced by zeros.
    ResponseOnly,
}

/// `[e_ctx, e_resp, e_ctx ⊙ e_resp, |e_ctx − e_resp|]`.
pub fn combine(e_ctx: &[f64], e_resp: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(4 * e_resp.len());
    f.extend_from_slice(e_ctx);
    f.extend_from_slice(e_resp);
    f.extend(e_ctx.iter().zip(e_resp).map(|(a, b)| a * b));
    f.extend(e_ctx.iter().zip(e_resp).map(|(a, b)| (a - b).abs()));
    f
}

pub fn featurize(
    context: &DialogueContext,
    response: &str,
    embed: &dyn EmbedBackend,
    mode: FeatureMode,
) -> Result<Vec<f64>, OdrpError> {
    if response.trim().is_empty() {
        return Err(BackendError::Precondition("response is empty".into()).into());
    }
    let dim = embed.dim();
    let e_resp = embed.embed(response)?;
    let e_ctx = match mode {
        FeatureMode::Context => embed.embed(&context.format_history())?,
        FeatureMode::ResponseOnly => vec![0.0; dim],
    };
    for v in [&e_ctx, &e_resp] {
        if v.len() != dim {
            return Err(OdrpError::DimensionMismatch { expected: dim, actual: v.len() });
        }
    }
    Ok(combine(&e_ctx, &e_resp))
}

pub fn score_response(
    model: &OdrpModel,
    context: &DialogueContext,
    response: &str,
    embed: &dyn EmbedBackend,
) -> Result<f64, OdrpError> {
    if embed.dim() != model.embedding_dim {
        return Err(OdrpError::DimensionMismatch { expected: model.embedding_dim, actual: embed.dim() });
    }
    model.score(&featurize(context, response, embed, model.feature_mode)?)
}

fn score_text(
    model: &OdrpModel,
    contexts: &HashMap<String, DialogueContext>,
    context_id: &str,
    text: &str,
    embed: &dyn EmbedBackend,
) -> Result<f64, OdrpError> {
    match model.feature_mode {
        FeatureMode::Context => {
            let ctx = contexts.get(context_id).ok_or_else(|| OdrpError::UnknownContext(context_id.to_string()))?;
            score_response(model, ctx, text, embed)
        }
        FeatureMode::ResponseOnly => score_response(model, &DialogueContext::empty(context_id), text, embed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub text: String,
    /// Per-slot scores; `None` for missing slots.
    pub scores: Vec<Option<f64>>,
}

/// Argmax over the present slots; the lowest index wins ties.
pub fn argmax_present(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| *s > b) {
                best = Some((i, *s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Selects from precomputed scores.
pub fn select_by_scores(set: &ResponseSet, scores: Vec<Option<f64>>) -> Result<Selection, OdrpError> {
    let masked: Vec<Option<f64>> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| if set.get(i).is_some() { *s } else { None })
        .collect();
    let index = argmax_present(&masked).ok_or(OdrpError::AllSlotsMissing)?;
    Ok(Selection { index, text: set.get(index).expect("present slot").to_string(), scores: masked })
}

/// Scores every present slot with `model` and returns the argmax.
pub fn select_response(
    set: &ResponseSet,
    context: &DialogueContext,
    model: &OdrpModel,
    embed: &dyn EmbedBackend,
) -> Result<Selection, OdrpError> {
    if set.is_degenerate() {
        return Err(OdrpError::AllSlotsMissing);
    }
    let scores: Vec<Option<f64>> = set
        .slots()
        .par_iter()
        .map(|slot| slot.as_deref().map(|t| score_response(model, context, t, embed)).transpose())
        .collect::<Result<_, _>>()?;
    select_by_scores(set, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum Baseline {
    Rand { seed: u64 },
    First,
}

/// `rand` draws uniformly among present slots; `first` takes the lowest
/// present index.
pub fn baseline_select(set: &ResponseSet, method: Baseline) -> Result<(usize, String), OdrpError> {
    let present: Vec<(usize, &str)> = set.present().collect();
    if present.is_empty() {
        return Err(OdrpError::AllSlotsMissing);
    }
    let (i, t) = match method {
        Baseline::First => present[0],
        Baseline::Rand { seed } => present[ChaCha8Rng::seed_from_u64(seed).random_range(0..present.len())],
    };
    Ok((i, t.to_string()))
}
