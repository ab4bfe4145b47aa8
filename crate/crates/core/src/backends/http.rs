//! HTTP clients. Chat and embeddings speak the OpenAI-compatible wire shape;
//! NLI, similarity and scoring use small JSON endpoints:
//!
//! - `POST {base}/nli` `{model, premise, hypothesis}` → `{label, entail_score}`
//! - `POST {base}/similarity` `{model, a, b}` → `{score}`
//! - `POST {base}/score` `{model, context: [{speaker, text}], response}` → `{score}`

use super::config::BackendConfig;
use super::retry::{InFlightLimiter, Outcome, RetryPolicy};
use super::{
    BackendError, ChatBackend, ChatRequest, EmbedBackend, NliBackend, NliLabel, NliVerdict, ScoringBackend,
    SimilarityBackend,
};
use crate::corpus::DialogueContext;
use serde_json::{json, Value};
use std::fmt;
use std::time::Duration;

struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
}

impl fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpTransport")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpTransport {
    fn new(cfg: &BackendConfig, base_url: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: cfg.model_name.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
            retry: cfg.retry_policy(),
            limiter: InFlightLimiter::new(cfg.max_in_flight),
        }
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        let _permit = self.limiter.acquire();
        self.retry.run(std::thread::sleep, || {
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = match req.send_json(body) {
                Ok(r) => r,
                Err(e) => return Outcome::Transient(BackendError::Transport { attempts: 1, message: e.to_string() }),
            };
            let status = resp.status().as_u16();
            if (200..300).contains(&status) {
                return match resp.body_mut().read_json::<Value>() {
                    Ok(v) => Outcome::Done(v),
                    Err(e) => Outcome::Fatal(BackendError::Payload(e.to_string())),
                };
            }
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            let err = BackendError::Refusal { status, body: text };
            if status == 429 || status >= 500 {
                Outcome::Transient(err)
            } else {
                Outcome::Fatal(err)
            }
        })
    }
}

fn base_url(cfg: &BackendConfig) -> Result<String, BackendError> {
    cfg.base_url
        .clone()
        .ok_or_else(|| BackendError::Precondition(format!("no base_url configured for model {:?}", cfg.model_name)))
}

#[derive(Debug)]
pub struct OpenAiChat {
    http: HttpTransport,
}

impl OpenAiChat {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self { http: HttpTransport::new(cfg, &base_url(cfg)?) })
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.http.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if !req.stop.is_empty() {
            body["stop"] = json!(req.stop);
        }
        body
    }
}

impl ChatBackend for OpenAiChat {
    fn model_name(&self) -> &str {
        &self.http.model
    }

    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        req.validate()?;
        let resp = self.http.post_json("chat/completions", &self.body(req))?;
        let choice = &resp["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .ok_or_else(|| BackendError::Payload("completion has no choices[0].message.content".into()))?;
        if text.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(text.to_string())
    }
}

#[derive(Debug)]
pub struct OpenAiEmbed {
    http: HttpTransport,
    dim: usize,
}

impl OpenAiEmbed {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let dim = cfg
            .dim
            .ok_or_else(|| BackendError::Precondition("embedding backends need a configured dim".into()))?;
        Ok(Self { http: HttpTransport::new(cfg, &base_url(cfg)?), dim })
    }
}

impl EmbedBackend for OpenAiEmbed {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::Precondition("cannot embed empty text".into()));
        }
        let resp = self.http.post_json("embeddings", &json!({"model": self.http.model, "input": text}))?;
        let values = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| BackendError::Payload("response has no data[0].embedding".into()))?;
        let v: Vec<f64> = values
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| BackendError::Payload("non-numeric embedding entry".into())))
            .collect::<Result<_, _>>()?;
        if v.len() != self.dim {
            return Err(BackendError::DimensionMismatch { expected: self.dim, actual: v.len() });
        }
        Ok(v)
    }
}

#[derive(Debug)]
pub struct HttpNli {
    http: HttpTransport,
}

impl HttpNli {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self { http: HttpTransport::new(cfg, &base_url(cfg)?) })
    }
}

impl NliBackend for HttpNli {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, BackendError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::Precondition("NLI needs non-empty premise and hypothesis".into()));
        }
        let resp = self
            .http
            .post_json("nli", &json!({"model": self.http.model, "premise": premise, "hypothesis": hypothesis}))?;
        let label: NliLabel = serde_json::from_value(resp["label"].clone())
            .map_err(|_| BackendError::MalformedVerdict(format!("unknown label {}", resp["label"])))?;
        let score = resp["entail_score"]
            .as_f64()
            .ok_or_else(|| BackendError::MalformedVerdict("missing entail_score".into()))?;
        NliVerdict::new(label, score)
    }
}

#[derive(Debug)]
pub struct HttpSimilarity {
    http: HttpTransport,
}

impl HttpSimilarity {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self { http: HttpTransport::new(cfg, &base_url(cfg)?) })
    }
}

impl SimilarityBackend for HttpSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        let resp = self.http.post_json("similarity", &json!({"model": self.http.model, "a": a, "b": b}))?;
        resp["score"].as_f64().ok_or_else(|| BackendError::Payload("missing score".into()))
    }
}

#[derive(Debug)]
pub struct HttpScorer {
    http: HttpTransport,
}

impl HttpScorer {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self { http: HttpTransport::new(cfg, &base_url(cfg)?) })
    }
}

impl ScoringBackend for HttpScorer {
    fn score(&self, context: &DialogueContext, response: &str) -> Result<f64, BackendError> {
        let body = json!({"model": self.http.model, "context": context.utterances(), "response": response});
        let resp = self.http.post_json("score", &body)?;
        resp["score"]
            .as_f64()
            .filter(|s| s.is_finite())
            .ok_or_else(|| BackendError::Payload("missing or non-finite score".into()))
    }
}
