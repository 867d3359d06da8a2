use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::clients::{EndpointConfig, Hyperparams};
use crate::dpo::DpoConfig;
use crate::filter::{FilterConfig, PromptTemplate};
use crate::metrics::TokenizationScheme;
use crate::{Error, Result};

pub const DEFAULT_QUALITY_METRIC: &str = "comet22";

fn default_metric() -> String {
    DEFAULT_QUALITY_METRIC.into()
}

fn default_max_iterations() -> usize {
    1
}

fn default_workers() -> usize {
    4
}

fn default_checkpoint_every() -> usize {
    64
}

fn default_poll_interval_ms() -> u64 {
    5_000
}

fn default_poll_timeout_secs() -> u64 {
    86_400
}

/// Trainer hyperparameters sent with every training job unless overridden.
pub fn default_hyperparams() -> Hyperparams {
    let pairs = [
        ("num_epochs", json!(1)),
        ("warmup_ratio", json!(0.03)),
        ("gradient_accumulation_steps", json!(4)),
        ("lora_rank", json!(32)),
        ("lora_alpha", json!(32)),
        ("lora_dropout", json!(0.05)),
        ("target_modules", json!("all-linear")),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Plain-text corpus to segment and translate.
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    /// Tab-separated `source<TAB>translation` file; bypasses the translator.
    #[serde(default)]
    pub parallel_path: Option<PathBuf>,
    pub source_lang: String,
    pub target_lang: String,
    #[serde(default)]
    pub translator: Option<EndpointConfig>,
    pub student: EndpointConfig,
    pub scorer: EndpointConfig,
    #[serde(default)]
    pub trainer: Option<EndpointConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Instruction wrapped around the expert translation; `{text}` marks
    /// where it goes.
    pub prompt_template: String,
    #[serde(default = "default_metric")]
    pub quality_metric: String,
    #[serde(default)]
    pub scheme: TokenizationScheme,
    pub dataset_dir: PathBuf,
    /// Defaults to `<dataset_dir>/checkpoint`.
    #[serde(default)]
    pub state_path: Option<PathBuf>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub dpo: DpoConfig,
    #[serde(default = "default_hyperparams")]
    pub hyperparams: Hyperparams,
    /// Sentences processed concurrently.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Sentences between checkpoint writes.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_poll_interval_ms")]
    pub poll_interval_ms: u64,
    #[serde(default = "default_poll_timeout_secs")]
    pub poll_timeout_secs: u64,
}

impl PipelineConfig {
    /// A config with defaults for everything optional.
    pub fn new(
        corpus_path: Option<PathBuf>,
        student: EndpointConfig,
        scorer: EndpointConfig,
        prompt_template: &str,
        dataset_dir: PathBuf,
    ) -> Self {
        Self {
            corpus_path,
            parallel_path: None,
            source_lang: "en".into(),
            target_lang: "de".into(),
            translator: None,
            student,
            scorer,
            trainer: None,
            filter: FilterConfig::default(),
            prompt_template: prompt_template.into(),
            quality_metric: default_metric(),
            scheme: TokenizationScheme::default(),
            dataset_dir,
            state_path: None,
            max_iterations: 1,
            dpo: DpoConfig::default(),
            hyperparams: default_hyperparams(),
            workers: default_workers(),
            checkpoint_every: default_checkpoint_every(),
            poll_interval_ms: default_poll_interval_ms(),
            poll_timeout_secs: default_poll_timeout_secs(),
        }
    }

    pub fn state_path(&self) -> PathBuf {
        self.state_path
            .clone()
            .unwrap_or_else(|| self.dataset_dir.join("checkpoint"))
    }

    /// Checks everything that can be checked without touching an endpoint.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::Validation(m));
        match (&self.corpus_path, &self.parallel_path) {
            (Some(_), Some(_)) => {
                return invalid("set only one of corpus_path and parallel_path".into())
            }
            (None, None) => {
                return invalid("one of corpus_path or parallel_path is required".into())
            }
            (Some(p), None) | (None, Some(p)) if !p.is_file() => {
                return invalid(format!("input file {} does not exist", p.display()))
            }
            _ => {}
        }
        if self.corpus_path.is_some() && self.translator.is_none() {
            return invalid("corpus_path needs a [translator] endpoint".into());
        }
        if self.source_lang.trim().is_empty() || self.target_lang.trim().is_empty() {
            return invalid("source_lang and target_lang must be set".into());
        }
        let endpoints = [
            ("translator", self.translator.as_ref()),
            ("student", Some(&self.student)),
            ("scorer", Some(&self.scorer)),
            ("trainer", self.trainer.as_ref()),
        ];
        for (name, ep) in endpoints {
            if let Some(ep) = ep {
                ep.validate()
                    .map_err(|e| Error::Validation(format!("[{name}] {e}")))?;
            }
        }
        if self.quality_metric.trim().is_empty() {
            return invalid("quality_metric must be set".into());
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be >= 1".into());
        }
        if self.workers == 0 || self.checkpoint_every == 0 {
            return invalid("workers and checkpoint_every must be >= 1".into());
        }
        self.filter.validate()?;
        self.dpo.validate()?;
        PromptTemplate::parse(&self.prompt_template)?;
        Ok(())
    }

    /// Hash of the settings that determine the output. Endpoint locations,
    /// retry policy and parallelism are left out so a run can be resumed
    /// against a restarted service.
    pub fn fingerprint(&self) -> String {
        let relevant = json!({
            "corpus_path": self.corpus_path,
            "parallel_path": self.parallel_path,
            "source_lang": self.source_lang,
            "target_lang": self.target_lang,
            "filter": self.filter,
            "prompt_template": self.prompt_template,
            "quality_metric": self.quality_metric,
            "scheme": self.scheme,
            "max_iterations": self.max_iterations,
            "dpo": self.dpo,
            "hyperparams": self.hyperparams,
        });
        let digest = Sha256::digest(relevant.to_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// Hyperparameters sent to the trainer; `beta` comes from the DPO config
    /// unless set explicitly.
    pub fn training_hyperparams(&self) -> Hyperparams {
        let mut h = self.hyperparams.clone();
        h.entry("beta".into()).or_insert(json!(self.dpo.beta));
        h
    }
}
