//! Lexical and character-level MT metrics and corpus reports.

mod bleu;
mod chrf;
mod meteor;
mod ter;
mod tokenize;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clients::{QualityScoreRequest, QualityScorer};
use crate::{Error, Result};

pub use bleu::{corpus_bleu, sentence_bleu, BleuStats, Smoothing};
pub use chrf::{chrf_pp, chrf_pp_with, ChrfParams, ChrfStats};
pub use meteor::{align as meteor_align, meteor, meteor_from_counts, stem, MeteorAlignment};
pub use ter::{
    levenshtein, ter, ter_stats, TerStats, MAX_SHIFTS, MAX_SHIFT_DISTANCE, MAX_SHIFT_SIZE,
};
pub use tokenize::{tokenize, TokenMode, TokenizationScheme};

pub const BLEU_MAX_N: usize = 4;

/// One evaluation segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: String,
    pub hypothesis: String,
    pub reference: String,
}

/// Corpus metrics, laid out like a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub meteor: f64,
    pub ter: f64,
    pub chrf_pp: f64,
    #[serde(default)]
    pub external_scores: BTreeMap<String, f64>,
    pub n_segments: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Direction of a metric: whether larger values are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Better {
    Higher,
    Lower,
}

impl MetricReport {
    /// Rows in table order: BLEU, COMET22, COMET_KIWI22, METEOR, TER,
    /// chrF++, then any other external metric alphabetically.
    pub fn rows(&self) -> Vec<(String, f64, Better)> {
        let mut rows = vec![("BLEU".to_string(), self.bleu, Better::Higher)];
        let mut external = self.external_scores.clone();
        for key in ["comet22", "comet_kiwi22"] {
            if let Some(v) = external.remove(key) {
                rows.push((key.to_uppercase(), v, Better::Higher));
            }
        }
        rows.push(("METEOR".into(), self.meteor, Better::Higher));
        rows.push(("TER".into(), self.ter, Better::Lower));
        rows.push(("chrF++".into(), self.chrf_pp, Better::Higher));
        for (k, v) in external {
            rows.push((k.to_uppercase(), v, Better::Higher));
        }
        rows
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14} {:>8}\n", "Metric", "Score");
        for (name, value, better) in self.rows() {
            let arrow = match better {
                Better::Higher => "↑",
                Better::Lower => "↓",
            };
            out.push_str(&format!(
                "{:<14} {:>8.4}\n",
                format!("{name} {arrow}"),
                value
            ));
        }
        out
    }
}

/// Optional neural scorer: each named metric is requested per segment and
/// averaged.
pub struct ExternalScoring<'a> {
    pub scorer: &'a dyn QualityScorer,
    pub metrics: Vec<String>,
}

struct SegmentStats {
    bleu: BleuStats,
    chrf: ChrfStats,
    ter: TerStats,
    meteor: f64,
}

/// Order-independent mean: sorts before summing so any permutation of the
/// input gives the same bits.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn evaluate_corpus(
    segments: &[Segment],
    scheme: TokenizationScheme,
    external: Option<ExternalScoring<'_>>,
) -> Result<MetricReport> {
    if segments.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate an empty corpus".into(),
        ));
    }
    let chrf_params = ChrfParams::default();
    let per_segment: Vec<SegmentStats> = segments
        .par_iter()
        .enumerate()
        .map(|(i, seg)| {
            let hyp = tokenize(&seg.hypothesis, scheme);
            let reference = tokenize(&seg.reference, scheme);
            if reference.is_empty() {
                return Err(Error::InvalidInput(format!("segment {i}: empty reference")));
            }
            Ok(SegmentStats {
                bleu: BleuStats::from_pair(&hyp, &reference, BLEU_MAX_N),
                chrf: ChrfStats::from_pair(&seg.hypothesis, &seg.reference, &chrf_params)?,
                ter: ter_stats(&hyp, &reference),
                meteor: meteor(&hyp, &reference),
            })
        })
        .collect::<Result<_>>()?;

    let mut bleu = BleuStats::zero(BLEU_MAX_N);
    let mut chrf = per_segment[0].chrf.clone();
    let mut ter = TerStats::default();
    for (i, s) in per_segment.iter().enumerate() {
        bleu.add(&s.bleu);
        if i > 0 {
            chrf.add(&s.chrf);
        }
        ter.add(&s.ter);
    }

    let mut report = MetricReport {
        bleu: bleu.score(Smoothing::None),
        meteor: stable_mean(per_segment.iter().map(|s| s.meteor).collect()),
        ter: ter.score(),
        chrf_pp: chrf.score(chrf_params.beta),
        external_scores: BTreeMap::new(),
        n_segments: segments.len(),
        warnings: Vec::new(),
        notes: vec![
            "meteor: exact and stem matching only, no synonym/paraphrase tables".into(),
            format!(
                "tokenization: {:?}, lowercase={}",
                scheme.mode, scheme.lowercase
            ),
        ],
    };

    if let Some(ext) = external {
        for metric in &ext.metrics {
            match score_external(ext.scorer, metric, segments) {
                Ok(mean) => {
                    report.external_scores.insert(metric.clone(), mean);
                }
                Err(e) => {
                    tracing::warn!(metric = %metric, error = %e, "external scorer failed");
                    report.warnings.push(format!("{metric}: {e}"));
                }
            }
        }
    }
    Ok(report)
}

fn score_external(scorer: &dyn QualityScorer, metric: &str, segments: &[Segment]) -> Result<f64> {
    let needs_reference = crate::clients::metric_requires_reference(metric);
    let scores = segments
        .par_iter()
        .map(|seg| {
            let req = QualityScoreRequest {
                source: seg.source.clone(),
                hypothesis: seg.hypothesis.clone(),
                reference: needs_reference.then(|| seg.reference.clone()),
                metric_name: metric.to_string(),
            };
            scorer.score_quality(&req).map_err(Error::from)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(stable_mean(scores))
}
