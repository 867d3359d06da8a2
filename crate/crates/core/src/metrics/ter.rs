//! Translation edit rate with greedy block shifts.
//!
//! Each step tries every block shift (span of up to [`MAX_SHIFT_SIZE`]
//! tokens moved at most [`MAX_SHIFT_DISTANCE`] positions) and applies the one
//! that lowers the word-level edit distance the most. Ties go to the
//! smallest `(start, len, dest)`. Every shift costs one edit.

use std::collections::HashMap;
use std::hash::Hash;

use crate::{Error, Result};

pub const MAX_SHIFT_SIZE: usize = 10;
pub const MAX_SHIFT_DISTANCE: usize = 50;
pub const MAX_SHIFTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TerStats {
    pub edits: u64,
    pub shifts: u64,
    pub ref_len: u64,
}

impl TerStats {
    pub fn add(&mut self, other: &TerStats) {
        self.edits += other.edits;
        self.shifts += other.shifts;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            self.edits as f64 / self.ref_len as f64
        }
    }
}

/// Word-level Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

fn apply_shift(src: &[u32], start: usize, len: usize, dest: usize, out: &mut Vec<u32>) {
    out.clear();
    out.extend_from_slice(&src[..start]);
    out.extend_from_slice(&src[start + len..]);
    let span = &src[start..start + len];
    out.splice(dest..dest, span.iter().copied());
}

pub fn ter_stats<T: Eq + Hash>(hypothesis: &[T], reference: &[T]) -> TerStats {
    let mut vocab: HashMap<&T, u32> = HashMap::new();
    let mut intern = |t| {
        let next = vocab.len() as u32;
        *vocab.entry(t).or_insert(next)
    };
    let reference: Vec<u32> = reference.iter().map(&mut intern).collect();
    let mut current: Vec<u32> = hypothesis.iter().map(&mut intern).collect();

    let mut distance = levenshtein(&current, &reference);
    let mut shifts = 0;
    let mut candidate = Vec::with_capacity(current.len());
    let n = current.len();

    while shifts < MAX_SHIFTS && distance > 0 {
        let mut best: Option<(usize, (usize, usize, usize))> = None;
        for start in 0..n {
            for len in 1..=MAX_SHIFT_SIZE.min(n - start) {
                for dest in 0..=(n - len) {
                    if dest == start || dest.abs_diff(start) > MAX_SHIFT_DISTANCE {
                        continue;
                    }
                    apply_shift(&current, start, len, dest, &mut candidate);
                    let d = levenshtein(&candidate, &reference);
                    if d < distance && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, (start, len, dest)));
                    }
                }
            }
        }
        match best {
            Some((d, (start, len, dest))) => {
                apply_shift(&current.clone(), start, len, dest, &mut current);
                distance = d;
                shifts += 1;
            }
            None => break,
        }
    }

    TerStats {
        edits: (distance + shifts) as u64,
        shifts: shifts as u64,
        ref_len: reference.len() as u64,
    }
}

/// TER of one segment: `(edits + shifts) / |reference|`.
pub fn ter<T: Eq + Hash>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidInput(
            "TER needs a non-empty reference".into(),
        ));
    }
    Ok(ter_stats(hypothesis, reference).score())
}
