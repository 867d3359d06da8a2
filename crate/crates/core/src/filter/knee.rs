//! Knee detection on a score distribution (Kneedle, ascending convention).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::{Error, Result};

pub const MIN_KNEE_SCORES: usize = 10;
pub const KNEE_METHOD: &str = "kneedle-ascending";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeResult {
    pub knee_value: f64,
    /// `(sorted score, normalized difference)` per sample.
    pub curve: Vec<(f64, f64)>,
    pub method: String,
}

impl KneeResult {
    pub fn knee_index(&self) -> usize {
        argmax_first(self.curve.iter().map(|&(_, d)| d))
    }

    /// Two-column TSV with a header line, suitable for plotting.
    pub fn curve_tsv(&self) -> String {
        let mut out = String::from("score\tdifference\n");
        for (s, d) in &self.curve {
            let _ = writeln!(out, "{s}\t{d}");
        }
        out
    }

    pub fn write_curve(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.curve_tsv().as_bytes())
    }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Sorts the scores, normalizes both axes to [0, 1] and returns the score at
/// the first maximum of `y_norm(i) - x(i)`.
pub fn knee_point(scores: &[f64]) -> Result<KneeResult> {
    if scores.len() < MIN_KNEE_SCORES {
        return Err(Error::Validation(format!(
            "knee detection needs at least {MIN_KNEE_SCORES} scores, got {}; set knee_override",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {bad}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return Err(Error::Validation(format!(
            "all {} scores equal {lo}; knee is undefined, set knee_override",
            sorted.len()
        )));
    }
    let last = (sorted.len() - 1) as f64;
    let curve: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, (s - lo) / (hi - lo) - i as f64 / last))
        .collect();
    let idx = argmax_first(curve.iter().map(|&(_, d)| d));
    Ok(KneeResult {
        knee_value: curve[idx].0,
        curve,
        method: KNEE_METHOD.to_string(),
    })
}
