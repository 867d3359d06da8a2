//! JSONL preference-dataset files and parallel-corpus input.
//!
//! A dataset file holds one `{"prompt","chosen","rejected","meta"}` object per
//! LF-terminated line. Creation time and config hash go to a sidecar
//! `<file>.meta.json` so the record file is reproducible byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParallelPair, PreferenceDataset, PreferenceTriplet, SourceSentence};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub created_at: Option<chrono::DateTime<chrono::Utc>>,
    pub config_hash: Option<String>,
    pub n_triplets: usize,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dataset: &PreferenceDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut buf = Vec::new();
    for t in &dataset.triplets {
        serde_json::to_writer(&mut buf, t)
            .map_err(|e| Error::Internal(format!("serializing triplet {}: {e}", t.meta.id)))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;

    let manifest = DatasetManifest {
        created_at: dataset.created_at,
        config_hash: dataset.config_hash.clone(),
        n_triplets: dataset.len(),
    };
    let bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("serializing manifest: {e}")))?;
    write_atomic(&manifest_path(path), &bytes)
}

pub fn read_dataset(path: &Path) -> Result<PreferenceDataset> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triplets = Vec::new();
    for (idx, line) in content.split_terminator('\n').enumerate() {
        let triplet: PreferenceTriplet = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        triplets.push(triplet);
    }

    let mpath = manifest_path(path);
    let (created_at, config_hash) = match fs::read(&mpath) {
        Ok(bytes) => {
            let m: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
                path: mpath.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            (m.created_at, m.config_hash)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (None, None),
        Err(e) => return Err(Error::io(mpath, e)),
    };

    let dataset = PreferenceDataset {
        triplets,
        created_at,
        config_hash,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Reads a tab-separated `source<TAB>target` file, one pair per line.
/// Blank lines are skipped.
pub fn read_parallel_corpus(path: &Path) -> Result<Vec<ParallelPair>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    let mut pairs = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected source<TAB>target".into()))?;
        let origin = format!("{label}:{}:{}", idx + 1, pairs.len());
        let source = SourceSentence::new(src, origin).map_err(|e| parse_err(e.to_string()))?;
        let pair = ParallelPair::new(source, tgt).map_err(|e| parse_err(e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}
