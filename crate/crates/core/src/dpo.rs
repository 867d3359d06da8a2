//! The DPO objective over precomputed sequence log-probabilities.
//!
//! With `m = (lp_theta_w - lp_ref_w) - (lp_theta_l - lp_ref_l)` the loss is
//! `-log sigmoid(beta * m) = softplus(-beta * m)`.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.1;

/// Log-probabilities of the chosen (`w`) and rejected (`l`) completions under
/// the policy and the frozen reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogProbQuad {
    pub lp_theta_w: f64,
    pub lp_ref_w: f64,
    pub lp_theta_l: f64,
    pub lp_ref_l: f64,
    /// Token counts, only needed in length-normalized mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub len_w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub len_l: Option<u32>,
}

impl LogProbQuad {
    pub fn new(lp_theta_w: f64, lp_ref_w: f64, lp_theta_l: f64, lp_ref_l: f64) -> Self {
        Self {
            lp_theta_w,
            lp_ref_w,
            lp_theta_l,
            lp_ref_l,
            len_w: None,
            len_l: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lp_theta_w", self.lp_theta_w),
            ("lp_ref_w", self.lp_ref_w),
            ("lp_theta_l", self.lp_theta_l),
            ("lp_ref_l", self.lp_ref_l),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} is not finite: {v}")));
            }
            if v > 0.0 {
                return Err(Error::InvalidInput(format!("{name} is positive: {v}")));
            }
        }
        Ok(())
    }

    /// Policy and reference log-ratios of the chosen and rejected legs.
    fn log_ratios(&self, cfg: &DpoConfig) -> Result<(f64, f64)> {
        self.validate()?;
        let (w, l) = (
            self.lp_theta_w - self.lp_ref_w,
            self.lp_theta_l - self.lp_ref_l,
        );
        if !cfg.length_normalized {
            return Ok((w, l));
        }
        match (self.len_w, self.len_l) {
            (Some(lw), Some(ll)) if lw > 0 && ll > 0 => Ok((w / lw as f64, l / ll as f64)),
            _ => Err(Error::InvalidInput(
                "length-normalized mode needs positive len_w and len_l".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    /// Divide each log-ratio by its completion length. Off by default.
    #[serde(default)]
    pub length_normalized: bool,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            length_normalized: false,
        }
    }
}

impl DpoConfig {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn margin_with(q: &LogProbQuad, cfg: &DpoConfig) -> Result<f64> {
    let (w, l) = q.log_ratios(cfg)?;
    let m = w - l;
    if !m.is_finite() {
        return Err(Error::InvalidInput(format!(
            "reward margin is not finite: {m}"
        )));
    }
    Ok(m)
}

/// `(lp_theta_w - lp_ref_w) - (lp_theta_l - lp_ref_l)`.
pub fn reward_margin(q: &LogProbQuad) -> Result<f64> {
    margin_with(q, &DpoConfig::default())
}

pub fn dpo_loss(q: &LogProbQuad, cfg: &DpoConfig) -> Result<f64> {
    cfg.validate()?;
    let loss = softplus(-cfg.beta * margin_with(q, cfg)?);
    if !loss.is_finite() {
        return Err(Error::InvalidInput(format!("loss is not finite: {loss}")));
    }
    Ok(loss)
}

/// Gradient of the loss with respect to `(lp_theta_w, lp_theta_l)`. The
/// reference log-probabilities are constants. In length-normalized mode each
/// component is additionally divided by its leg length.
pub fn dpo_grad(q: &LogProbQuad, cfg: &DpoConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let m = margin_with(q, cfg)?;
    let g = cfg.beta * sigmoid(-cfg.beta * m);
    if cfg.length_normalized {
        // log_ratios already checked both lengths are present and positive.
        let (lw, ll) = (q.len_w.unwrap_or(1) as f64, q.len_l.unwrap_or(1) as f64);
        return Ok((-g / lw, g / ll));
    }
    Ok((-g, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoBatchStats {
    pub n: usize,
    pub mean_loss: f64,
    /// Mean of `beta * m`.
    pub mean_margin: f64,
    /// Fraction with `m > 0`; ties count one half.
    pub preference_accuracy: f64,
    pub mean_chosen_reward: f64,
    pub mean_rejected_reward: f64,
}

/// Neumaier-compensated sum.
#[derive(Default)]
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn mean(&self, n: usize) -> f64 {
        (self.sum + self.c) / n as f64
    }
}

pub fn batch_stats(quads: &[LogProbQuad], cfg: &DpoConfig) -> Result<DpoBatchStats> {
    if quads.is_empty() {
        return Err(Error::InvalidInput(
            "batch_stats needs at least one quad".into(),
        ));
    }
    cfg.validate()?;
    let (mut loss, mut margin, mut acc, mut chosen, mut rejected) = Default::default();
    let sums: [&mut KahanSum; 5] = [&mut loss, &mut margin, &mut acc, &mut chosen, &mut rejected];
    let [loss, margin, acc, chosen, rejected] = sums;
    for (i, q) in quads.iter().enumerate() {
        let ctx = |e: Error| Error::InvalidInput(format!("quad {i}: {e}"));
        let (w, l) = q.log_ratios(cfg).map_err(ctx)?;
        let m = margin_with(q, cfg).map_err(ctx)?;
        loss.add(dpo_loss(q, cfg).map_err(ctx)?);
        margin.add(cfg.beta * m);
        acc.add(match m.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        });
        chosen.add(cfg.beta * w);
        rejected.add(cfg.beta * l);
    }
    let n = quads.len();
    Ok(DpoBatchStats {
        n,
        mean_loss: loss.mean(n),
        mean_margin: margin.mean(n),
        preference_accuracy: acc.mean(n),
        mean_chosen_reward: chosen.mean(n),
        mean_rejected_reward: rejected.mean(n),
    })
}

/// One line of a quads file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadRecord {
    pub id: String,
    #[serde(flatten)]
    pub quad: LogProbQuad,
}

/// Reads a JSONL file of `{id, lp_theta_w, lp_ref_w, lp_theta_l, lp_ref_l}`
/// records. Blank lines are skipped.
pub fn read_quads(path: &Path) -> Result<Vec<QuadRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QuadRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.quad.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
