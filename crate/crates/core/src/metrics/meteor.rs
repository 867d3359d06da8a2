//! METEOR with exact and stem matching stages (no synonym tables).
//!
//! The alignment maximises exact matches, then stem matches among the
//! leftover tokens, and among those alignments uses the fewest chunks.
//! The chunk minimisation is an exact depth-first search bounded by
//! [`SEARCH_BUDGET`] nodes; past the budget the best alignment found so far
//! is used and [`MeteorAlignment::exhaustive`] is false.

use std::collections::HashMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

pub const SEARCH_BUDGET: usize = 500_000;

pub const ALPHA: f64 = 0.9;
pub const GAMMA: f64 = 0.5;
pub const PENALTY_EXPONENT: i32 = 3;

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// The fixed stemmer used by the second matching stage.
pub fn stem(token: &str) -> String {
    stemmer().stem(&token.to_lowercase()).into_owned()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeteorAlignment {
    pub exact_matches: usize,
    pub stem_matches: usize,
    pub chunks: usize,
    /// `pairs[i] = Some(j)` when hypothesis token `i` aligns to reference `j`.
    pub pairs: Vec<Option<usize>>,
    pub exhaustive: bool,
}

impl MeteorAlignment {
    pub fn matches(&self) -> usize {
        self.exact_matches + self.stem_matches
    }
}

struct Search<'a> {
    word: &'a [usize],
    stem: &'a [usize],
    ref_word: &'a [usize],
    exact_cand: Vec<Vec<usize>>,
    stem_cand: Vec<Vec<usize>>,
    // remaining hypothesis occurrences of each word at positions >= i
    hyp_suffix: Vec<HashMap<usize, usize>>,
    exact_left: Vec<usize>,
    stem_left: Vec<usize>,
    ref_free_word: Vec<usize>,
    used: Vec<bool>,
    current: Vec<Option<usize>>,
    best: Option<(usize, Vec<Option<usize>>)>,
    nodes: usize,
    exhausted_budget: bool,
}

impl Search<'_> {
    fn feasible(&self, i: usize) -> bool {
        // every word still owing exact matches needs enough hypothesis and
        // free reference occurrences left
        self.exact_left.iter().enumerate().all(|(w, &need)| {
            need == 0
                || (self.hyp_suffix[i].get(&w).copied().unwrap_or(0) >= need
                    && self.ref_free_word[w] >= need)
        })
    }

    fn run(&mut self, i: usize, chunks: usize, prev: Option<usize>) {
        if self.best.as_ref().is_some_and(|(b, _)| chunks >= *b) {
            return;
        }
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET && self.best.is_some() {
            self.exhausted_budget = true;
            return;
        }
        if i == self.word.len() {
            if self.exact_left.iter().all(|&x| x == 0) && self.stem_left.iter().all(|&x| x == 0) {
                self.best = Some((chunks, self.current.clone()));
            }
            return;
        }
        if !self.feasible(i) {
            return;
        }

        let chunk_cost = |j: usize| match prev {
            Some(p) if p + 1 == j => 0,
            _ => 1,
        };
        let order = |cands: &[usize]| {
            let mut v: Vec<usize> = cands.to_vec();
            v.sort_by_key(|&j| (chunk_cost(j), j));
            v
        };

        let w = self.word[i];
        if self.exact_left[w] > 0 {
            for j in order(&self.exact_cand[i]) {
                if self.used[j] {
                    continue;
                }
                self.take(i, j, true);
                self.run(i + 1, chunks + chunk_cost(j), Some(j));
                self.release(i, j, true);
            }
        }
        let s = self.stem[i];
        if self.stem_left[s] > 0 {
            for j in order(&self.stem_cand[i]) {
                if self.used[j] {
                    continue;
                }
                self.take(i, j, false);
                self.run(i + 1, chunks + chunk_cost(j), Some(j));
                self.release(i, j, false);
            }
        }
        self.run(i + 1, chunks, None);
    }

    fn take(&mut self, i: usize, j: usize, exact: bool) {
        self.used[j] = true;
        self.ref_free_word[self.ref_word[j]] -= 1;
        self.current[i] = Some(j);
        if exact {
            self.exact_left[self.word[i]] -= 1;
        } else {
            self.stem_left[self.stem[i]] -= 1;
        }
    }

    fn release(&mut self, i: usize, j: usize, exact: bool) {
        self.used[j] = false;
        self.ref_free_word[self.ref_word[j]] += 1;
        self.current[i] = None;
        if exact {
            self.exact_left[self.word[i]] += 1;
        } else {
            self.stem_left[self.stem[i]] += 1;
        }
    }
}

pub fn align<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> MeteorAlignment {
    let mut words: HashMap<String, usize> = HashMap::new();
    let mut stems: HashMap<String, usize> = HashMap::new();
    let mut word_stem: Vec<usize> = Vec::new();
    let mut intern = |t: &S| -> usize {
        let t = t.as_ref();
        let next = words.len();
        let id = *words.entry(t.to_string()).or_insert(next);
        if id == word_stem.len() {
            let sn = stems.len();
            word_stem.push(*stems.entry(stem(t)).or_insert(sn));
        }
        id
    };
    let hw: Vec<usize> = hypothesis.iter().map(&mut intern).collect();
    let rw: Vec<usize> = reference.iter().map(&mut intern).collect();
    let hs: Vec<usize> = hw.iter().map(|&w| word_stem[w]).collect();
    let n_words = word_stem.len();
    let n_stems = stems.len();

    let mut h_count = vec![0usize; n_words];
    let mut r_count = vec![0usize; n_words];
    hw.iter().for_each(|&w| h_count[w] += 1);
    rw.iter().for_each(|&w| r_count[w] += 1);

    let exact_left: Vec<usize> = (0..n_words).map(|w| h_count[w].min(r_count[w])).collect();
    let mut left_h = vec![0usize; n_stems];
    let mut left_r = vec![0usize; n_stems];
    for w in 0..n_words {
        left_h[word_stem[w]] += h_count[w] - exact_left[w];
        left_r[word_stem[w]] += r_count[w] - exact_left[w];
    }
    let stem_left: Vec<usize> = (0..n_stems).map(|s| left_h[s].min(left_r[s])).collect();
    let exact_total: usize = exact_left.iter().sum();
    let stem_total: usize = stem_left.iter().sum();

    let exact_cand = hw
        .iter()
        .map(|&w| (0..rw.len()).filter(|&j| rw[j] == w).collect())
        .collect();
    let stem_cand = hw
        .iter()
        .map(|&w| {
            (0..rw.len())
                .filter(|&j| rw[j] != w && word_stem[rw[j]] == word_stem[w])
                .collect()
        })
        .collect();
    let mut hyp_suffix = vec![HashMap::new(); hw.len() + 1];
    for i in (0..hw.len()).rev() {
        let mut m = hyp_suffix[i + 1].clone();
        *m.entry(hw[i]).or_insert(0) += 1;
        hyp_suffix[i] = m;
    }

    let mut search = Search {
        word: &hw,
        stem: &hs,
        ref_word: &rw,
        exact_cand,
        stem_cand,
        hyp_suffix,
        exact_left,
        stem_left,
        ref_free_word: r_count,
        used: vec![false; rw.len()],
        current: vec![None; hw.len()],
        best: None,
        nodes: 0,
        exhausted_budget: false,
    };
    search.run(0, 0, None);
    let (chunks, pairs) = search
        .best
        .unwrap_or_else(|| (0, vec![None; hypothesis.len()]));
    MeteorAlignment {
        exact_matches: exact_total,
        stem_matches: stem_total,
        chunks,
        pairs,
        exhaustive: !search.exhausted_budget,
    }
}

/// Scores a given match/chunk count.
pub fn meteor_from_counts(matches: usize, chunks: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if matches == 0 || hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / hyp_len as f64;
    let r = m / ref_len as f64;
    let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (chunks as f64 / m).powi(PENALTY_EXPONENT);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

pub fn meteor<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(hypothesis, reference);
    meteor_from_counts(a.matches(), a.chunks, hypothesis.len(), reference.len())
}
