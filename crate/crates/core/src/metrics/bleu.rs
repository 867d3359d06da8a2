//! BLEU with clipped n-gram precision and brevity penalty.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// `(0 + 1) / (total + 1)` for orders `n >= 2` with no matches.
    #[default]
    AddOne,
}

/// Sufficient statistics for BLEU; summing them over segments gives the
/// corpus-level statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn zero(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn from_pair<T: Eq + Hash>(hypothesis: &[T], reference: &[T], max_n: usize) -> Self {
        let mut stats = Self::zero(max_n);
        stats.hyp_len = hypothesis.len() as u64;
        stats.ref_len = reference.len() as u64;
        for n in 1..=max_n {
            let hyp = ngram_counts(hypothesis, n);
            let refs = ngram_counts(reference, n);
            stats.totals[n - 1] = hyp.values().sum();
            stats.matches[n - 1] = hyp
                .iter()
                .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// An order with no hypothesis n-grams contributes precision 1.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let max_n = self.totals.len();
        let mut log_sum = 0.0;
        for (idx, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let p = if t == 0 {
                1.0
            } else if m == 0 {
                match smoothing {
                    Smoothing::AddOne if idx >= 1 => 1.0 / (t as f64 + 1.0),
                    _ => return 0.0,
                }
            } else {
                m as f64 / t as f64
            };
            log_sum += p.ln();
        }
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
    }
}

/// Sentence-level BLEU. An empty hypothesis scores 0.
pub fn sentence_bleu<T: Eq + Hash>(
    hypothesis: &[T],
    reference: &[T],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::InvalidInput("BLEU max_n must be >= 1".into()));
    }
    Ok(BleuStats::from_pair(hypothesis, reference, max_n).score(smoothing))
}

/// Corpus BLEU: statistics summed over all pairs, no smoothing.
pub fn corpus_bleu<T, H, R>(pairs: impl IntoIterator<Item = (H, R)>, max_n: usize) -> Result<f64>
where
    T: Eq + Hash,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if max_n == 0 {
        return Err(Error::InvalidInput("BLEU max_n must be >= 1".into()));
    }
    let mut stats = BleuStats::zero(max_n);
    let mut n = 0usize;
    for (h, r) in pairs {
        stats.add(&BleuStats::from_pair(h.as_ref(), r.as_ref(), max_n));
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "corpus BLEU needs at least one pair".into(),
        ));
    }
    Ok(stats.score(Smoothing::None))
}
