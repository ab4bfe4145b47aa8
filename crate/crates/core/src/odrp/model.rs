use super::{FeatureMode, OdrpError, TrainingMeta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN_WIDTH: usize = 64;

/// `score(f) = w2 · tanh(W1 f + b1) + b2`, with `W1` stored row-major as
/// `hidden_width` rows of `4 · embedding_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Weights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self { w1: vec![0.0; input * hidden], b1: vec![0.0; hidden], w2: vec![0.0; hidden], b2: 0.0 }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn input(&self) -> usize {
        if self.b1.is_empty() {
            0
        } else {
            self.w1.len() / self.b1.len()
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    fn hidden_activations(&self, f: &[f64]) -> Vec<f64> {
        let d = f.len();
        self.w1
            .chunks_exact(d)
            .zip(&self.b1)
            .map(|(row, b)| (row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + b).tanh())
            .collect()
    }

    pub fn score(&self, f: &[f64]) -> f64 {
        let a = self.hidden_activations(f);
        a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2
    }

    /// Score and `coef · ∂score/∂θ` accumulated into `grad` (flat layout).
    pub fn score_with_grad(&self, f: &[f64], coef: f64, grad: &mut [f64]) -> f64 {
        let a = self.hidden_activations(f);
        let s = a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2;
        if coef == 0.0 {
            return s;
        }
        let (d, h) = (f.len(), self.hidden());
        let (gw1, rest) = grad.split_at_mut(d * h);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h);
        for k in 0..h {
            gw2[k] += coef * a[k];
            let dz = coef * self.w2[k] * (1.0 - a[k] * a[k]);
            gb1[k] += dz;
            for (g, x) in gw1[k * d..(k + 1) * d].iter_mut().zip(f) {
                *g += dz * x;
            }
        }
        gb2[0] += coef;
        s
    }
}

/// The trained preference scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdrpModel {
    pub format_version: u32,
    pub embedding_dim: usize,
    pub hidden_width: usize,
    pub feature_mode: FeatureMode,
    pub weights: Weights,
    #[serde(default)]
    pub training_meta: Option<TrainingMeta>,
}

impl OdrpModel {
    pub fn feature_dim(&self) -> usize {
        4 * self.embedding_dim
    }

    /// Uniform initialisation in `±1/√fan_in` per layer.
    pub fn init(embedding_dim: usize, hidden_width: usize, feature_mode: FeatureMode, seed: u64) -> Result<Self, OdrpError> {
        if embedding_dim == 0 || hidden_width == 0 {
            return Err(OdrpError::InvalidConfig("embedding_dim and hidden_width must be positive".into()));
        }
        let input = 4 * embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let w1 = draw(input * hidden_width, input);
        let b1 = draw(hidden_width, input);
        let w2 = draw(hidden_width, hidden_width);
        let b2 = draw(1, hidden_width)[0];
        Ok(Self {
            format_version: FORMAT_VERSION,
            embedding_dim,
            hidden_width,
            feature_mode,
            weights: Weights { w1, b1, w2, b2 },
            training_meta: None,
        })
    }

    pub fn zeros(embedding_dim: usize, hidden_width: usize, feature_mode: FeatureMode) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            embedding_dim,
            hidden_width,
            feature_mode,
            weights: Weights::zeros(4 * embedding_dim, hidden_width),
            training_meta: None,
        }
    }

    pub fn score(&self, f: &[f64]) -> Result<f64, OdrpError> {
        if f.len() != self.feature_dim() {
            return Err(OdrpError::DimensionMismatch { expected: self.feature_dim(), actual: f.len() });
        }
        Ok(self.weights.score(f))
    }

    fn validate(&self) -> Result<(), OdrpError> {
        let w = &self.weights;
        let ok = w.b1.len() == self.hidden_width
            && w.w2.len() == self.hidden_width
            && w.w1.len() == self.hidden_width * self.feature_dim();
        if !ok {
            return Err(OdrpError::Serde("weight shapes do not match embedding_dim and hidden_width".into()));
        }
        if !w.to_flat().iter().all(|x| x.is_finite()) {
            return Err(OdrpError::Serde("weights contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, OdrpError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| OdrpError::Serde(e.to_string()))?;
        let found = value.get("format_version").and_then(serde_json::Value::as_u64);
        if found != Some(u64::from(FORMAT_VERSION)) {
            return Err(OdrpError::FormatVersion { found, expected: FORMAT_VERSION });
        }
        let model: OdrpModel = serde_json::from_value(value).map_err(|e| OdrpError::Serde(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OdrpError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| OdrpError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OdrpError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OdrpError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
