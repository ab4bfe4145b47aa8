use super::model::{OdrpModel, Weights};
use super::{FeatureMode, OdrpError};
use crate::backends::EmbedBackend;
use crate::corpus::{DialogueContext, PreferencePair};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−ln σ(s_chosen − s_rejected)`.
pub fn pair_loss(s_chosen: f64, s_rejected: f64) -> f64 {
    softplus(s_rejected - s_chosen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
}

/// All pairs of one response set, with their source pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub set_id: String,
    pub pairs: Vec<PairFeatures>,
    pub source: Vec<PreferencePair>,
}

/// Mean pair loss over a batch.
pub fn batch_loss(w: &Weights, pairs: &[PairFeatures]) -> f64 {
    let total: f64 = pairs.iter().map(|p| pair_loss(w.score(&p.chosen), w.score(&p.rejected))).sum();
    total / pairs.len() as f64
}

/// Mean pair loss and its gradient in the flat parameter layout.
pub fn batch_loss_grad(w: &Weights, pairs: &[PairFeatures]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; w.param_count()];
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let margin = w.score(&p.chosen) - w.score(&p.rejected);
        total += softplus(-margin);
        // d/dm softplus(−m) = −σ(−m)
        let coef = -sigmoid(-margin) * scale;
        w.score_with_grad(&p.chosen, coef, &mut grad);
        w.score_with_grad(&p.rejected, -coef, &mut grad);
    }
    (total * scale, grad)
}

/// Mean binary cross-entropy on logits, chosen responses labelled 1 and
/// rejected ones 0, with its gradient.
pub fn batch_bce_grad(w: &Weights, pairs: &[PairFeatures]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; w.param_count()];
    let scale = 1.0 / (2 * pairs.len()) as f64;
    let mut total = 0.0;
    for p in pairs {
        for (f, y) in [(&p.chosen, 1.0), (&p.rejected, 0.0)] {
            let s = w.score(f);
            total += softplus(s) - y * s;
            w.score_with_grad(f, (sigmoid(s) - y) * scale, &mut grad);
        }
    }
    (total * scale, grad)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(params: usize, lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            theta[i] -= self.lr * (update + self.weight_decay * theta[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Pairwise log-sigmoid margin loss.
    #[default]
    Pairwise,
    /// Per-response binary cross-entropy (the `cls` baseline).
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub hidden_width: usize,
    pub feature_mode: FeatureMode,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            learning_rate: 2e-4,
            seed: 0,
            weight_decay: 0.01,
            hidden_width: super::DEFAULT_HIDDEN_WIDTH,
            feature_mode: FeatureMode::Context,
            objective: Objective::Pairwise,
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning on mined pairs.
    pub fn hard_negative() -> Self {
        Self { epochs: 4, ..Self::default() }
    }

    fn validate(&self) -> Result<(), OdrpError> {
        if self.epochs == 0 {
            return Err(OdrpError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OdrpError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(OdrpError::InvalidConfig("weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hard_negative: bool,
    pub weight_decay: f64,
    pub objective: Objective,
    pub sets: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: OdrpModel,
    /// Mean batch loss per epoch, measured before each step.
    pub epoch_losses: Vec<f64>,
}

/// Featurizes pairs and groups them into one batch per set, ordered by
/// set id with pairs in input order. Embeddings are computed once per text.
pub fn build_batches(
    pairs: &[PreferencePair],
    contexts: &HashMap<String, DialogueContext>,
    embed: &dyn EmbedBackend,
    mode: FeatureMode,
) -> Result<Vec<FeatureBatch>, OdrpError> {
    if pairs.is_empty() {
        return Err(OdrpError::EmptyDataset);
    }
    let mut ctx_cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut resp_cache: HashMap<&str, Vec<f64>> = HashMap::new();
    let dim = embed.dim();
    let checked = |v: Vec<f64>| {
        if v.len() != dim {
            return Err(OdrpError::DimensionMismatch { expected: dim, actual: v.len() });
        }
        Ok(v)
    };
    let mut groups: BTreeMap<&str, FeatureBatch> = BTreeMap::new();
    for pair in pairs {
        if !ctx_cache.contains_key(pair.context_id.as_str()) {
            let e = match mode {
                FeatureMode::ResponseOnly => vec![0.0; dim],
                FeatureMode::Context => {
                    let ctx = contexts
                        .get(&pair.context_id)
                        .ok_or_else(|| OdrpError::UnknownContext(pair.context_id.clone()))?;
                    checked(embed.embed(&ctx.format_history())?)?
                }
            };
            ctx_cache.insert(&pair.context_id, e);
        }
        for text in [&pair.chosen, &pair.rejected] {
            if !resp_cache.contains_key(text.as_str()) {
                resp_cache.insert(text, checked(embed.embed(text)?)?);
            }
        }
        let e_ctx = &ctx_cache[pair.context_id.as_str()];
        let features = PairFeatures {
            chosen: super::combine(e_ctx, &resp_cache[pair.chosen.as_str()]),
            rejected: super::combine(e_ctx, &resp_cache[pair.rejected.as_str()]),
        };
        let batch = groups.entry(&pair.set_id).or_insert_with(|| FeatureBatch {
            set_id: pair.set_id.clone(),
            pairs: Vec::new(),
            source: Vec::new(),
        });
        batch.pairs.push(features);
        batch.source.push(pair.clone());
    }
    Ok(groups.into_values().collect())
}

/// One optimizer step per batch, batches in the given order, for
/// `cfg.epochs` epochs starting from `init`.
pub fn train_batches(
    init: OdrpModel,
    batches: &[FeatureBatch],
    cfg: &TrainConfig,
    hard_negative: bool,
) -> Result<TrainOutcome, OdrpError> {
    cfg.validate()?;
    if batches.is_empty() || batches.iter().any(|b| b.pairs.is_empty()) {
        return Err(OdrpError::EmptyDataset);
    }
    for b in batches {
        for p in &b.pairs {
            for f in [&p.chosen, &p.rejected] {
                if f.len() != init.feature_dim() {
                    return Err(OdrpError::DimensionMismatch { expected: init.feature_dim(), actual: f.len() });
                }
            }
        }
    }
    let mut model = init;
    let mut theta = model.weights.to_flat();
    let mut opt = AdamW::new(theta.len(), cfg.learning_rate, cfg.weight_decay);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for batch in batches {
            let (loss, grad) = match cfg.objective {
                Objective::Pairwise => batch_loss_grad(&model.weights, &batch.pairs),
                Objective::Bce => batch_bce_grad(&model.weights, &batch.pairs),
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(OdrpError::NonFiniteLoss { set_id: batch.set_id.clone(), epoch: epoch + 1 });
            }
            sum += loss;
            opt.step(&mut theta, &grad);
            model.weights.set_flat(&theta);
        }
        epoch_losses.push(sum / batches.len() as f64);
    }
    model.training_meta = Some(TrainingMeta {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        hard_negative,
        weight_decay: cfg.weight_decay,
        objective: cfg.objective,
        sets: batches.len(),
        pairs: batches.iter().map(|b| b.pairs.len()).sum(),
    });
    Ok(TrainOutcome { model, epoch_losses })
}

/// Trains a fresh model on preference pairs.
pub fn train(
    pairs: &[PreferencePair],
    contexts: &HashMap<String, DialogueContext>,
    cfg: &TrainConfig,
    embed: &dyn EmbedBackend,
) -> Result<TrainOutcome, OdrpError> {
    cfg.validate()?;
    let batches = build_batches(pairs, contexts, embed, cfg.feature_mode)?;
    let init = OdrpModel::init(embed.dim(), cfg.hidden_width, cfg.feature_mode, cfg.seed)?;
    train_batches(init, &batches, cfg, false)
}

/// Indices of the `⌈fraction · N⌉` smallest margins (stable on ties),
/// returned in ascending index order.
pub fn lowest_margin_indices(margins: &[f64], fraction: f64) -> Result<Vec<usize>, OdrpError> {
    if margins.is_empty() {
        return Err(OdrpError::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(OdrpError::InvalidConfig(format!("fraction {fraction} is outside (0, 1]")));
    }
    // 1e-9 absorbs products such as 0.3 * 10 = 3.0000000000000004
    let keep = ((fraction * margins.len() as f64 - 1e-9).ceil() as usize).clamp(1, margins.len());
    let mut order: Vec<usize> = (0..margins.len()).collect();
    order.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Margins `score(chosen) − score(rejected)` of every pair, in batch order.
pub fn margins(model: &OdrpModel, batches: &[FeatureBatch]) -> Vec<f64> {
    batches
        .iter()
        .flat_map(|b| b.pairs.iter().map(|p| model.weights.score(&p.chosen) - model.weights.score(&p.rejected)))
        .collect()
}

/// The pairs the base model handles worst: the lowest-margin `fraction`,
/// in input order.
pub fn mine_hard_negatives(
    base: &OdrpModel,
    pairs: &[PreferencePair],
    contexts: &HashMap<String, DialogueContext>,
    fraction: f64,
    embed: &dyn EmbedBackend,
) -> Result<Vec<PreferencePair>, OdrpError> {
    if pairs.is_empty() {
        return Err(OdrpError::EmptyDataset);
    }
    let mut margins_in_order = Vec::with_capacity(pairs.len());
    for p in pairs {
        let sc = super::score_text(base, contexts, &p.context_id, &p.chosen, embed)?;
        let sr = super::score_text(base, contexts, &p.context_id, &p.rejected, embed)?;
        margins_in_order.push(sc - sr);
    }
    Ok(lowest_margin_indices(&margins_in_order, fraction)?.into_iter().map(|i| pairs[i].clone()).collect())
}

/// Mines the hardest pairs with `base` and continues training from it.
pub fn fine_tune_hard_negatives(
    base: &OdrpModel,
    pairs: &[PreferencePair],
    contexts: &HashMap<String, DialogueContext>,
    fraction: f64,
    cfg: &TrainConfig,
    embed: &dyn EmbedBackend,
) -> Result<TrainOutcome, OdrpError> {
    cfg.validate()?;
    let batches = build_batches(pairs, contexts, embed, base.feature_mode)?;
    let all = margins(base, &batches);
    let keep = lowest_margin_indices(&all, fraction)?;
    let mut offset = 0;
    let mut mined = Vec::new();
    for b in &batches {
        let take: Vec<usize> = keep.iter().filter(|&&i| i >= offset && i < offset + b.pairs.len()).map(|i| i - offset).collect();
        offset += b.pairs.len();
        if !take.is_empty() {
            mined.push(FeatureBatch {
                set_id: b.set_id.clone(),
                pairs: take.iter().map(|&i| b.pairs[i].clone()).collect(),
                source: take.iter().map(|&i| b.source[i].clone()).collect(),
            });
        }
    }
    let mut init = base.clone();
    init.training_meta = None;
    train_batches(init, &mined, cfg, true)
}

/// Fraction of pairs whose chosen response outscores the rejected one.
pub fn pairwise_accuracy(model: &OdrpModel, batches: &[FeatureBatch]) -> f64 {
    let m = margins(model, batches);
    m.iter().filter(|x| **x > 0.0).count() as f64 / m.len().max(1) as f64
}
