//! Clients for the external roles of the curation loop: the expert
//! translator, the student model (translation and log-probabilities), the
//! quality scorer and the trainer.
//!
//! Every role is a trait. [`HttpClient`] speaks the JSON-over-POST protocol
//! in [`protocol`]; [`mock`] holds deterministic in-process implementations.
//! Input validation and response range checks live in the provided trait
//! methods so every backend gets them.

mod http;
pub mod mock;
pub mod protocol;
mod retry;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use http::{HttpClient, HttpResponse, Transport, TransportFailure, UreqTransport};
pub use retry::{Backoff, RecordingSleeper, Sleeper, ThreadSleeper};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport error from {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("{endpoint} rejected the request with HTTP {status}: {body}")]
    Rejected {
        endpoint: String,
        status: u16,
        body: String,
    },
}

impl ClientError {
    /// True for failures attributable to the remote endpoint.
    pub fn is_endpoint_failure(&self) -> bool {
        !matches!(self, ClientError::Precondition(_))
    }
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

fn default_backoff_base_ms() -> u64 {
    1000
}
fn default_backoff_factor() -> f64 {
    2.0
}
fn default_backoff_max_ms() -> u64 {
    60_000
}
fn default_timeout() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    #[serde(skip)]
    pub auth_token: Option<String>,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    /// Seed for backoff jitter; unset means seeded from the OS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_seed: Option<u64>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_concurrency: default_concurrency(),
            auth_token_env: None,
            auth_token: None,
            backoff_base_ms: default_backoff_base_ms(),
            backoff_factor: default_backoff_factor(),
            backoff_max_ms: default_backoff_max_ms(),
            jitter_seed: None,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.base_url.trim().is_empty() {
            return Err("base_url is empty".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("{}: timeout_secs must be > 0", self.base_url));
        }
        if self.max_concurrency == 0 {
            return Err(format!("{}: max_concurrency must be >= 1", self.base_url));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if !(self.backoff_factor >= 1.0) {
            return Err(format!("{}: backoff_factor must be >= 1", self.base_url));
        }
        Ok(())
    }

    /// Reads the bearer token from `auth_token_env`, if configured.
    pub fn resolve_auth_from_env(&mut self) -> std::result::Result<(), String> {
        if let Some(var) = &self.auth_token_env {
            let token =
                std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?;
            self.auth_token = Some(token);
        }
        Ok(())
    }
}

/// Language pair of a translation request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub src_lang: String,
    pub tgt_lang: String,
}

impl Direction {
    pub fn new(src: &str, tgt: &str) -> Self {
        Self {
            src_lang: src.into(),
            tgt_lang: tgt.into(),
        }
    }

    pub fn reversed(&self) -> Self {
        Self {
            src_lang: self.tgt_lang.clone(),
            tgt_lang: self.src_lang.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Student,
    Reference,
}

/// Reference-free quality-estimation metrics are recognised by name.
pub fn metric_requires_reference(metric_name: &str) -> bool {
    let m = metric_name.to_ascii_lowercase();
    !(m.contains("kiwi") || m.contains("qe"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScoreRequest {
    pub source: String,
    pub hypothesis: String,
    pub reference: Option<String>,
    pub metric_name: String,
}

impl QualityScoreRequest {
    pub fn validate(&self) -> ClientResult<()> {
        if self.metric_name.is_empty() {
            return Err(ClientError::Precondition("metric_name is empty".into()));
        }
        match (
            metric_requires_reference(&self.metric_name),
            self.reference.is_some(),
        ) {
            (true, false) => Err(ClientError::Precondition(format!(
                "metric {} needs a reference",
                self.metric_name
            ))),
            (false, true) => Err(ClientError::Precondition(format!(
                "metric {} is reference-free; drop the reference",
                self.metric_name
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Done { model_endpoint: String },
    Failed { reason: String },
}

pub trait Translator: Send + Sync {
    /// Identifies the backend in error messages.
    fn endpoint(&self) -> String;

    fn send_translate(&self, text: &str, direction: &Direction) -> ClientResult<String>;

    fn translate(&self, text: &str, direction: &Direction) -> ClientResult<String> {
        if text.trim().is_empty() {
            return Err(ClientError::Precondition(
                "text to translate is empty".into(),
            ));
        }
        let out = self.send_translate(text, direction)?;
        if out.trim().is_empty() {
            return Err(ClientError::Protocol {
                endpoint: self.endpoint(),
                message: "empty translation".into(),
            });
        }
        Ok(out)
    }

    /// Same contract as [`Translator::translate`]; `direction` is already
    /// target-to-source.
    fn back_translate(&self, text: &str, direction: &Direction) -> ClientResult<String> {
        self.translate(text, direction)
    }
}

pub trait QualityScorer: Send + Sync {
    fn endpoint(&self) -> String;

    fn send_score(&self, req: &QualityScoreRequest) -> ClientResult<f64>;

    /// Validates the request and rejects (never clamps) scores outside [0, 1].
    fn score_quality(&self, req: &QualityScoreRequest) -> ClientResult<f64> {
        req.validate()?;
        let score = self.send_score(req)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(ClientError::Protocol {
                endpoint: self.endpoint(),
                message: format!("score {score} outside [0, 1]"),
            });
        }
        Ok(score)
    }
}

pub trait LogProbScorer: Send + Sync {
    fn endpoint(&self) -> String;

    fn send_logprob(&self, prompt: &str, completion: &str, role: ModelRole) -> ClientResult<f64>;

    /// Sum of completion-token log-probabilities given the prompt.
    fn sequence_logprob(
        &self,
        prompt: &str,
        completion: &str,
        role: ModelRole,
    ) -> ClientResult<f64> {
        if completion.is_empty() {
            return Err(ClientError::Precondition("completion is empty".into()));
        }
        let lp = self.send_logprob(prompt, completion, role)?;
        if !lp.is_finite() || lp > 0.0 {
            return Err(ClientError::Protocol {
                endpoint: self.endpoint(),
                message: format!("log-probability {lp} is not a finite value <= 0"),
            });
        }
        Ok(lp)
    }
}

pub type Hyperparams = BTreeMap<String, serde_json::Value>;

pub trait Trainer: Send + Sync {
    fn endpoint(&self) -> String;

    fn send_train(&self, dataset_path: &str, hyperparams: &Hyperparams) -> ClientResult<String>;

    fn poll(&self, job_id: &str) -> ClientResult<JobStatus>;

    fn trigger_training(
        &self,
        dataset_path: &Path,
        hyperparams: &Hyperparams,
    ) -> ClientResult<String> {
        match std::fs::metadata(dataset_path) {
            Ok(m) if m.is_file() && m.len() > 0 => {}
            Ok(_) => {
                return Err(ClientError::Precondition(format!(
                    "dataset {} is empty",
                    dataset_path.display()
                )))
            }
            Err(e) => {
                return Err(ClientError::Precondition(format!(
                    "dataset {}: {e}",
                    dataset_path.display()
                )))
            }
        }
        self.send_train(&dataset_path.display().to_string(), hyperparams)
    }
}

/// Builds a student client for the model endpoint a finished training job
/// reports.
pub trait StudentConnector: Send + Sync {
    fn connect_student(&self, model_endpoint: &str) -> ClientResult<Arc<dyn Translator>>;
}

/// Connects new students over HTTP, reusing the original endpoint settings.
pub struct HttpStudentConnector {
    pub template: EndpointConfig,
}

impl StudentConnector for HttpStudentConnector {
    fn connect_student(&self, model_endpoint: &str) -> ClientResult<Arc<dyn Translator>> {
        let mut cfg = self.template.clone();
        cfg.base_url = model_endpoint.to_string();
        Ok(Arc::new(HttpClient::new(cfg)?))
    }
}
