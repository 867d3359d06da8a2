//! Domain types shared by every stage, plus corpus ingestion and the
//! preference-dataset file format.

mod dataset;
mod segment;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

pub(crate) use dataset::write_atomic;
pub use dataset::{read_dataset, read_parallel_corpus, write_dataset, DatasetManifest};
pub use segment::{segment_corpus, segment_corpus_labeled, ABBREVIATIONS};

/// NFC-normalizes `text`.
pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

/// Stable identifier: first 16 hex chars of SHA-256 over text and origin.
pub fn sentence_id(text: &str, origin: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update([0x1f]);
    hasher.update(origin.as_bytes());
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

/// A sentence `s` of the source-language corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSentence {
    pub id: String,
    pub text: String,
    pub origin: String,
}

impl SourceSentence {
    pub fn new(text: &str, origin: impl Into<String>) -> Result<Self> {
        let origin = origin.into();
        let text = normalize(text.trim());
        if text.is_empty() {
            return Err(Error::InvalidInput(format!(
                "empty source sentence at {origin}"
            )));
        }
        if text.contains(['\n', '\r']) {
            return Err(Error::InvalidInput(format!(
                "source sentence at {origin} contains a newline"
            )));
        }
        Ok(Self {
            id: sentence_id(&text, &origin),
            text,
            origin,
        })
    }
}

/// A source sentence together with its expert translation `T(s)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: SourceSentence,
    pub expert_translation: String,
}

impl ParallelPair {
    pub fn new(source: SourceSentence, expert_translation: &str) -> Result<Self> {
        let expert_translation = normalize(expert_translation.trim());
        if expert_translation.is_empty() {
            return Err(Error::InvalidInput(format!(
                "empty expert translation for {}",
                source.id
            )));
        }
        Ok(Self {
            source,
            expert_translation,
        })
    }
}

/// `(s, T(s), T̂(T(s)))` plus the scores attached by the two gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackTranslationRecord {
    pub pair: ParallelPair,
    pub back_translation: String,
    pub sentence_bleu: Option<f64>,
    pub quality_score: Option<f64>,
}

impl BackTranslationRecord {
    pub fn new(pair: ParallelPair, back_translation: &str) -> Self {
        Self {
            pair,
            back_translation: normalize(back_translation.trim()),
            sentence_bleu: None,
            quality_score: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.pair.source.id
    }

    pub fn source_text(&self) -> &str {
        &self.pair.source.text
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("sentence_bleu", self.sentence_bleu),
            ("quality_score", self.quality_score),
        ] {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Validation(format!(
                        "record {}: {name} {v} outside [0, 1]",
                        self.id()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Provenance attached to each triplet.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TripletMeta {
    /// Id of the originating source sentence.
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// One `(x, y_w, y_l)` preference example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceTriplet {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: TripletMeta,
}

impl PreferenceTriplet {
    /// Checks the invariants that can be verified from the triplet alone.
    ///
    /// When `meta.origin` is present, the id is recomputed from `chosen` and
    /// the origin, which ties `chosen` back to its source sentence.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.meta.id.is_empty() {
            return Err("missing meta.id".into());
        }
        if self.prompt.is_empty() || self.chosen.is_empty() || self.rejected.is_empty() {
            return Err("prompt, chosen and rejected must be non-empty".into());
        }
        if self.chosen == self.rejected {
            return Err("chosen equals rejected".into());
        }
        if let Some(origin) = &self.meta.origin {
            if sentence_id(&self.chosen, origin) != self.meta.id {
                return Err("meta.id does not match chosen text and origin".into());
            }
        }
        for v in [self.meta.sentence_bleu, self.meta.quality_score]
            .into_iter()
            .flatten()
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("score {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// The preference dataset `D`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreferenceDataset {
    pub triplets: Vec<PreferenceTriplet>,
    pub created_at: Option<chrono::DateTime<chrono::Utc>>,
    pub config_hash: Option<String>,
}

impl PreferenceDataset {
    pub fn new(triplets: Vec<PreferenceTriplet>, config_hash: impl Into<String>) -> Self {
        Self {
            triplets,
            created_at: Some(chrono::Utc::now()),
            config_hash: Some(config_hash.into()),
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.triplets {
            t.validate()
                .map_err(|e| Error::Validation(format!("triplet {}: {e}", t.meta.id)))?;
            if !seen.insert(t.meta.id.as_str()) {
                return Err(Error::Validation(format!(
                    "triplet {}: duplicate id",
                    t.meta.id
                )));
            }
        }
        Ok(())
    }
}
