//! Resumable loop state.
//!
//! File layout: a header line `btdpo-checkpoint v1 sha256=<hex>` followed by
//! the JSON payload; the hash covers the payload bytes. Writes go through a
//! temp file and a rename.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IterationReport;
use crate::data::{write_atomic, BackTranslationRecord};
use crate::{Error, Result};

const MAGIC: &str = "btdpo-checkpoint v1";

/// Result of processing one input sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub record: BackTranslationRecord,
    /// False when the BLEU gate discarded the record as faithful.
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub input_hash: String,
    /// 1-based iteration in progress.
    pub iteration: usize,
    /// Model endpoint of the current student, once training replaced it.
    pub student_endpoint: Option<String>,
    /// Finished sentences of the current iteration, by input index.
    pub outcomes: BTreeMap<usize, Outcome>,
    /// Report of an iteration whose training job is still being awaited.
    pub pending: Option<IterationReport>,
    pub reports: Vec<IterationReport>,
    pub finished: bool,
}

impl Checkpoint {
    pub fn new(config_hash: &str, input_hash: &str) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            input_hash: input_hash.to_string(),
            iteration: 1,
            student_endpoint: None,
            outcomes: BTreeMap::new(),
            pending: None,
            reports: Vec::new(),
            finished: false,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = serde_json::to_vec(self)
            .map_err(|e| Error::Internal(format!("serializing checkpoint: {e}")))?;
        let mut bytes =
            format!("{MAGIC} sha256={}\n", hex::encode(Sha256::digest(&payload))).into_bytes();
        bytes.extend_from_slice(&payload);
        write_atomic(path, &bytes)
    }

    /// Loads a checkpoint, refusing anything that does not verify.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let reset = |reason: String| Error::ResetRequired {
            path: path.to_path_buf(),
            reason,
        };
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| reset("missing header".into()))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| reset("bad header".into()))?;
        let expected = header
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.strip_prefix(" sha256="))
            .ok_or_else(|| reset(format!("unrecognised header {header:?}")))?;
        let payload = &bytes[split + 1..];
        if hex::encode(Sha256::digest(payload)) != expected {
            return Err(reset("checksum mismatch".into()));
        }
        serde_json::from_slice(payload).map_err(|e| reset(format!("unreadable payload: {e}")))
    }

    pub fn check_compatible(&self, path: &Path, config_hash: &str, input_hash: &str) -> Result<()> {
        let reason = if self.config_hash != config_hash {
            "configuration changed since the checkpoint was written"
        } else if self.input_hash != input_hash {
            "input corpus changed since the checkpoint was written"
        } else {
            return Ok(());
        };
        Err(Error::ResetRequired {
            path: path.to_path_buf(),
            reason: reason.into(),
        })
    }
}
