//! chrF++: character n-gram F-score extended with word n-grams.

use std::collections::HashMap;
use std::hash::Hash;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChrfParams {
    pub char_n: usize,
    pub word_n: usize,
    pub beta: f64,
}

impl Default for ChrfParams {
    fn default() -> Self {
        Self {
            char_n: 6,
            word_n: 2,
            beta: 2.0,
        }
    }
}

/// Per-order `(hyp_total, ref_total, matches)`; character orders first,
/// then word orders. Summable across segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChrfStats {
    pub orders: Vec<[u64; 3]>,
    /// Non-whitespace characters seen on each side.
    pub hyp_chars: u64,
    pub ref_chars: u64,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn order_stats<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> [u64; 3] {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    [h.values().sum(), r.values().sum(), matches]
}

impl ChrfStats {
    pub fn from_pair(hypothesis: &str, reference: &str, params: &ChrfParams) -> Result<Self> {
        if params.char_n == 0 {
            return Err(Error::InvalidInput("chrF char_n must be >= 1".into()));
        }
        let hc: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
        let hw: Vec<&str> = hypothesis.split_whitespace().collect();
        let rw: Vec<&str> = reference.split_whitespace().collect();
        let mut orders = Vec::with_capacity(params.char_n + params.word_n);
        for n in 1..=params.char_n {
            orders.push(order_stats(&hc, &rc, n));
        }
        for n in 1..=params.word_n {
            orders.push(order_stats(&hw, &rw, n));
        }
        Ok(Self {
            orders,
            hyp_chars: hc.len() as u64,
            ref_chars: rc.len() as u64,
        })
    }

    pub fn add(&mut self, other: &ChrfStats) {
        for (a, b) in self.orders.iter_mut().zip(&other.orders) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        self.hyp_chars += other.hyp_chars;
        self.ref_chars += other.ref_chars;
    }

    /// Averages precision and recall over the orders where both sides have
    /// n-grams, then combines them into F-beta.
    pub fn score(&self, beta: f64) -> f64 {
        match (self.hyp_chars, self.ref_chars) {
            (0, 0) => return 1.0,
            (0, _) | (_, 0) => return 0.0,
            _ => {}
        }
        let (mut p_sum, mut r_sum, mut effective) = (0.0, 0.0, 0usize);
        for &[h, r, m] in &self.orders {
            if h > 0 && r > 0 {
                p_sum += m as f64 / h as f64;
                r_sum += m as f64 / r as f64;
                effective += 1;
            }
        }
        if effective == 0 {
            return 0.0;
        }
        let p = p_sum / effective as f64;
        let r = r_sum / effective as f64;
        let b2 = beta * beta;
        let denom = b2 * p + r;
        if denom == 0.0 {
            0.0
        } else {
            ((1.0 + b2) * p * r / denom).clamp(0.0, 1.0)
        }
    }
}

pub fn chrf_pp(hypothesis: &str, reference: &str) -> f64 {
    let params = ChrfParams::default();
    // default params are valid
    ChrfStats::from_pair(hypothesis, reference, &params)
        .map(|s| s.score(params.beta))
        .unwrap_or(0.0)
}

pub fn chrf_pp_with(hypothesis: &str, reference: &str, params: &ChrfParams) -> Result<f64> {
    Ok(ChrfStats::from_pair(hypothesis, reference, params)?.score(params.beta))
}
