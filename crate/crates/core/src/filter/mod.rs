//! The two curation gates and preference-triplet construction.
//!
//! A back-translation that reproduces the source closely (high sentence
//! BLEU) shows no student error and is dropped. The survivors are scored by a
//! quality metric, and only those below the knee of the score distribution
//! become `(prompt, chosen = s, rejected = back-translation)` triplets.

mod knee;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{BackTranslationRecord, PreferenceTriplet, TripletMeta};
use crate::metrics::{sentence_bleu, tokenize, Smoothing, TokenizationScheme, BLEU_MAX_N};
use crate::{Error, Result};

pub use knee::{knee_point, KneeResult, KNEE_METHOD, MIN_KNEE_SCORES};

pub const PLACEHOLDER: &str = "{text}";
pub const DEFAULT_MIN_DATASET_SIZE: usize = 27_000;

/// BLEU threshold for the faithfulness gate. Serialized as a number in
/// [0, 1] or the string `"pass-all"`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRepr", into = "ThresholdRepr")]
pub enum BleuThreshold {
    #[default]
    PassAll,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<ThresholdRepr> for BleuThreshold {
    type Error = String;

    fn try_from(r: ThresholdRepr) -> std::result::Result<Self, String> {
        match r {
            ThresholdRepr::Number(v) if (0.0..=1.0).contains(&v) => Ok(BleuThreshold::Value(v)),
            ThresholdRepr::Number(v) => Err(format!("bleu_threshold {v} outside [0, 1]")),
            ThresholdRepr::Text(s) if s == "pass-all" => Ok(BleuThreshold::PassAll),
            ThresholdRepr::Text(s) => Err(format!(
                "bleu_threshold must be a number in [0, 1] or \"pass-all\", got {s:?}"
            )),
        }
    }
}

impl From<BleuThreshold> for ThresholdRepr {
    fn from(t: BleuThreshold) -> Self {
        match t {
            BleuThreshold::PassAll => ThresholdRepr::Text("pass-all".into()),
            BleuThreshold::Value(v) => ThresholdRepr::Number(v),
        }
    }
}

impl fmt::Display for BleuThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BleuThreshold::PassAll => f.write_str("pass-all"),
            BleuThreshold::Value(v) => write!(f, "{v}"),
        }
    }
}

fn default_min_dataset_size() -> usize {
    DEFAULT_MIN_DATASET_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub bleu_threshold: BleuThreshold,
    #[serde(default)]
    pub knee_override: Option<f64>,
    /// Training is only triggered once the dataset reaches this size.
    #[serde(default = "default_min_dataset_size")]
    pub min_dataset_size: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            bleu_threshold: BleuThreshold::PassAll,
            knee_override: None,
            min_dataset_size: DEFAULT_MIN_DATASET_SIZE,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_dataset_size == 0 {
            return Err(Error::Validation("min_dataset_size must be >= 1".into()));
        }
        if let Some(k) = self.knee_override {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::Validation(format!(
                    "knee_override {k} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    RetainForPreference,
    DiscardFaithful,
}

/// Scores the back-translation against the source with smoothed sentence
/// BLEU, stores the score on the record and decides whether to keep it.
pub fn bleu_gate(
    record: &mut BackTranslationRecord,
    config: &FilterConfig,
    scheme: TokenizationScheme,
) -> Result<GateDecision> {
    if record.source_text().is_empty() || record.back_translation.is_empty() {
        return Err(Error::InvalidInput(format!(
            "record {}: source and back-translation must be non-empty",
            record.id()
        )));
    }
    let hyp = tokenize(&record.back_translation, scheme);
    let reference = tokenize(record.source_text(), scheme);
    let score = sentence_bleu(&hyp, &reference, BLEU_MAX_N, Smoothing::AddOne)?;
    record.sentence_bleu = Some(score);
    Ok(match config.bleu_threshold {
        BleuThreshold::Value(t) if score > t => GateDecision::DiscardFaithful,
        _ => GateDecision::RetainForPreference,
    })
}

/// Keeps the records whose quality score is strictly below `knee`, in order.
pub fn comet_gate(
    records: Vec<BackTranslationRecord>,
    knee: f64,
) -> Result<Vec<BackTranslationRecord>> {
    if let Some(r) = records.iter().find(|r| r.quality_score.is_none()) {
        return Err(Error::Validation(format!(
            "record {} has no quality score",
            r.id()
        )));
    }
    Ok(records
        .into_iter()
        .filter(|r| r.quality_score.is_some_and(|q| q < knee))
        .collect())
}

/// A prompt template with exactly one `{text}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    prefix: String,
    suffix: String,
}

impl PromptTemplate {
    pub fn parse(template: &str) -> Result<Self> {
        match template.matches(PLACEHOLDER).count() {
            1 => {
                let (prefix, suffix) = template.split_once(PLACEHOLDER).unwrap_or_default();
                Ok(Self {
                    prefix: prefix.to_string(),
                    suffix: suffix.to_string(),
                })
            }
            n => Err(Error::Validation(format!(
                "prompt template must contain {PLACEHOLDER} exactly once, found {n} in {template:?}"
            ))),
        }
    }

    pub fn render(&self, text: &str) -> String {
        format!("{}{}{}", self.prefix, text, self.suffix)
    }
}

/// Output of [`build_triplets`].
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBuild {
    pub triplets: Vec<PreferenceTriplet>,
    /// Records dropped because the back-translation equals the source.
    pub skipped: usize,
}

pub fn build_triplets(records: &[BackTranslationRecord], template: &str) -> Result<TripletBuild> {
    let template = PromptTemplate::parse(template)?;
    let mut triplets = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        if r.back_translation == r.source_text() {
            skipped += 1;
            continue;
        }
        let triplet = PreferenceTriplet {
            prompt: template.render(&r.pair.expert_translation),
            chosen: r.source_text().to_string(),
            rejected: r.back_translation.clone(),
            meta: TripletMeta {
                id: r.id().to_string(),
                origin: Some(r.pair.source.origin.clone()),
                sentence_bleu: r.sentence_bleu,
                quality_score: r.quality_score,
                extra: Default::default(),
            },
        };
        triplet
            .validate()
            .map_err(|e| Error::Validation(format!("record {}: {e}", r.id())))?;
        triplets.push(triplet);
    }
    Ok(TripletBuild { triplets, skipped })
}
