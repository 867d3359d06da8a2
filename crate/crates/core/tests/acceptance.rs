//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every numeric check compares the library against an oracle written
//! independently in this file.

// Oracles are deliberately naive index-loop code.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_stemmers::{Algorithm, Stemmer};

use btdpo_core::clients::mock::*;
use btdpo_core::data::{BackTranslationRecord, ParallelPair, SourceSentence};
use btdpo_core::dpo::{batch_stats, dpo_grad, dpo_loss, DpoConfig, LogProbQuad};
use btdpo_core::filter::{bleu_gate, comet_gate, knee_point, FilterConfig, GateDecision};
use btdpo_core::metrics::{
    chrf_pp, corpus_bleu, evaluate_corpus, levenshtein, meteor, ter, Segment, TokenizationScheme,
};
use btdpo_core::pipeline::{Pipeline, StartMode};

use common::*;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "DPO loss exactness",
            limit: Some(Duration::from_secs(1)),
            run: dpo_exactness,
        },
        Criterion {
            id: 2,
            name: "gradient vs finite differences",
            limit: Some(Duration::from_secs(5)),
            run: gradient_check,
        },
        Criterion {
            id: 3,
            name: "metric oracles",
            limit: Some(Duration::from_secs(30)),
            run: metric_oracles,
        },
        Criterion {
            id: 4,
            name: "TER bound",
            limit: None,
            run: ter_bound,
        },
        Criterion {
            id: 5,
            name: "knee detection",
            limit: Some(Duration::from_secs(5)),
            run: knee_detection,
        },
        Criterion {
            id: 6,
            name: "gate semantics",
            limit: None,
            run: gate_semantics,
        },
        Criterion {
            id: 7,
            name: "end-to-end mock pipeline",
            limit: Some(Duration::from_secs(10)),
            run: end_to_end,
        },
        Criterion {
            id: 8,
            name: "resumability",
            limit: None,
            run: resumability,
        },
        Criterion {
            id: 9,
            name: "loop behaviour",
            limit: None,
            run: loop_behaviour,
        },
    ];
    // keep expected panics from cluttering the report
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let result = match (result, c.limit) {
            (Ok(detail), Some(limit)) if elapsed > limit => {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            }
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!(
                "criterion {}: PASS  {} ({detail}; {elapsed:.2?})",
                c.id, c.name
            ),
            Err(why) => {
                failed += 1;
                println!(
                    "criterion {}: FAIL  {} ({why}; {elapsed:.2?})",
                    c.id, c.name
                );
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// 1 ------------------------------------------------------------------------

#[allow(clippy::approx_constant)]
const LN_2_DIGITS: f64 = 0.693_147_180_559_945_309_417_232_121_458;
// ln(1 + e^-0.3), evaluated with 60-digit decimal arithmetic.
const NEG_LOG_SIGMOID_0_3: f64 = 0.554_355_244_468_527_118_814_588_435_575;

fn quad_with_margin(m: f64) -> LogProbQuad {
    if m >= 0.0 {
        LogProbQuad::new(-2.0, -2.0 - m, -3.0, -3.0)
    } else {
        LogProbQuad::new(-2.0, -2.0, -3.0, -3.0 + m)
    }
}

fn dpo_exactness() -> Check {
    let zero = dpo_loss(&quad_with_margin(0.0), &DpoConfig::new(0.1)).map_err(|e| e.to_string())?;
    ensure!((zero - LN_2_DIGITS).abs() <= 1e-12, "loss at m=0 is {zero}");
    let three =
        dpo_loss(&quad_with_margin(3.0), &DpoConfig::new(0.1)).map_err(|e| e.to_string())?;
    ensure!(
        (three - NEG_LOG_SIGMOID_0_3).abs() <= 1e-12,
        "loss at m=3, beta=0.1 is {three}, want {NEG_LOG_SIGMOID_0_3}"
    );
    Ok(format!(
        "|err| {:.1e} and {:.1e}",
        (zero - LN_2_DIGITS).abs(),
        (three - NEG_LOG_SIGMOID_0_3).abs()
    ))
}

// 2 ------------------------------------------------------------------------

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &beta in &[0.05, 0.1, 0.5] {
        let cfg = DpoConfig::new(beta);
        for _ in 0..1000 {
            let mut lp = || rng.random_range(-40.0..-1e-3);
            let q = LogProbQuad::new(lp(), lp(), lp(), lp());
            let (gw, gl) = dpo_grad(&q, &cfg).map_err(|e| e.to_string())?;
            ensure!(gw == -gl, "gradient not antisymmetric: {gw} vs {gl}");
            let loss = |q: LogProbQuad| dpo_loss(&q, &cfg).unwrap();
            let fd_w = (loss(LogProbQuad {
                lp_theta_w: q.lp_theta_w + h,
                ..q
            }) - loss(LogProbQuad {
                lp_theta_w: q.lp_theta_w - h,
                ..q
            })) / (2.0 * h);
            let fd_l = (loss(LogProbQuad {
                lp_theta_l: q.lp_theta_l + h,
                ..q
            }) - loss(LogProbQuad {
                lp_theta_l: q.lp_theta_l - h,
                ..q
            })) / (2.0 * h);
            for (a, fd) in [(gw, fd_w), (gl, fd_l)] {
                let rel = (a - fd).abs() / a.abs().max(f64::MIN_POSITIVE);
                worst = worst.max(rel);
            }
        }
    }
    ensure!(worst < 1e-6, "max relative error {worst:.2e}");
    // batch statistics against an element-wise recomputation
    let cfg = DpoConfig::default();
    let quads: Vec<LogProbQuad> = (0..100)
        .map(|_| {
            let mut lp = || rng.random_range(-20.0..-1e-3);
            LogProbQuad::new(lp(), lp(), lp(), lp())
        })
        .collect();
    let stats = batch_stats(&quads, &cfg).map_err(|e| e.to_string())?;
    let mean_loss: f64 = quads
        .iter()
        .map(|q| {
            let m = (q.lp_theta_w - q.lp_ref_w) - (q.lp_theta_l - q.lp_ref_l);
            (1.0 + (-0.1 * m).exp()).ln()
        })
        .sum::<f64>()
        / 100.0;
    ensure!(
        (stats.mean_loss - mean_loss).abs() < 1e-12,
        "batch mean loss {}",
        stats.mean_loss
    );
    Ok(format!("3000 quads, max relative error {worst:.2e}"))
}

// 3 ------------------------------------------------------------------------

const VOCAB: [&str; 18] = [
    "the", "a", "cat", "cats", "walk", "walks", "walked", "run", "runs", "running", "house",
    "houses", "green", "quick", "quickly", "on", "mat", "mats",
];

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| VOCAB.choose(rng).unwrap().to_string())
        .collect()
}

fn perturb(rng: &mut ChaCha8Rng, tokens: &[String]) -> Vec<String> {
    let mut out = tokens.to_vec();
    for _ in 0..rng.random_range(1..=3) {
        match rng.random_range(0..4) {
            0 if out.len() > 1 => {
                let i = rng.random_range(0..out.len());
                out.remove(i);
            }
            1 if out.len() < 10 => {
                let i = rng.random_range(0..=out.len());
                out.insert(i, VOCAB.choose(rng).unwrap().to_string());
            }
            2 if out.len() > 1 => {
                let i = rng.random_range(0..out.len());
                let j = rng.random_range(0..out.len());
                out.swap(i, j);
            }
            _ => {
                let i = rng.random_range(0..out.len());
                out[i] = VOCAB.choose(rng).unwrap().to_string();
            }
        }
    }
    out
}

/// Clipped n-gram matches and hypothesis n-gram total, by linear scans.
fn naive_ngram_stats<T: PartialEq + Clone>(
    hyp: &[T],
    reference: &[T],
    n: usize,
) -> (u64, u64, u64) {
    let grams = |t: &[T]| -> Vec<Vec<T>> {
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    };
    let (hg, rg) = (grams(hyp), grams(reference));
    let mut seen: Vec<&Vec<T>> = Vec::new();
    let mut matches = 0;
    for g in &hg {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let in_h = hg.iter().filter(|x| *x == g).count() as u64;
        let in_r = rg.iter().filter(|x| *x == g).count() as u64;
        matches += in_h.min(in_r);
    }
    (matches, hg.len() as u64, rg.len() as u64)
}

fn oracle_corpus_bleu(pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    let (mut m, mut t) = ([0u64; 4], [0u64; 4]);
    let (mut hl, mut rl) = (0usize, 0usize);
    for (h, r) in pairs {
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            let (mm, tt, _) = naive_ngram_stats(h, r, n);
            m[n - 1] += mm;
            t[n - 1] += tt;
        }
    }
    if hl == 0 {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let p = if t[n] == 0 {
            1.0
        } else {
            m[n] as f64 / t[n] as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_p += p.ln() / 4.0;
    }
    let bp = if hl >= rl {
        1.0
    } else {
        (1.0 - rl as f64 / hl as f64).exp()
    };
    bp * log_p.exp()
}

fn oracle_chrf(pairs: &[(String, String)]) -> f64 {
    let mut stats = [(0u64, 0u64, 0u64); 8];
    let (mut hc_total, mut rc_total) = (0, 0);
    for (h, r) in pairs {
        let hc: Vec<char> = h.chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = r.chars().filter(|c| !c.is_whitespace()).collect();
        let hw: Vec<&str> = h.split_whitespace().collect();
        let rw: Vec<&str> = r.split_whitespace().collect();
        hc_total += hc.len();
        rc_total += rc.len();
        for n in 1..=6 {
            let (m, th, tr) = naive_ngram_stats(&hc, &rc, n);
            let s = &mut stats[n - 1];
            *s = (s.0 + m, s.1 + th, s.2 + tr);
        }
        for n in 1..=2 {
            let (m, th, tr) = naive_ngram_stats(&hw, &rw, n);
            let s = &mut stats[5 + n];
            *s = (s.0 + m, s.1 + th, s.2 + tr);
        }
    }
    if hc_total == 0 && rc_total == 0 {
        return 1.0;
    }
    if hc_total == 0 || rc_total == 0 {
        return 0.0;
    }
    let eff: Vec<_> = stats.iter().filter(|s| s.1 > 0 && s.2 > 0).collect();
    if eff.is_empty() {
        return 0.0;
    }
    let p = eff.iter().map(|s| s.0 as f64 / s.1 as f64).sum::<f64>() / eff.len() as f64;
    let r = eff.iter().map(|s| s.0 as f64 / s.2 as f64).sum::<f64>() / eff.len() as f64;
    if p + r == 0.0 {
        return 0.0;
    }
    5.0 * p * r / (4.0 * p + r)
}

fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 0..=a.len() {
        d[i][0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Returns (edits including shifts, reference length).
fn oracle_ter(hyp: &[String], reference: &[String]) -> (usize, usize) {
    let mut cur = hyp.to_vec();
    let mut dist = edit_distance(&cur, reference);
    let mut shifts = 0;
    let n = cur.len();
    while shifts < 50 && dist > 0 {
        let mut best: Option<(usize, Vec<String>)> = None;
        for start in 0..n {
            for len in 1..=10.min(n - start) {
                for dest in 0..=n - len {
                    if dest == start || dest.abs_diff(start) > 50 {
                        continue;
                    }
                    let mut moved = cur.clone();
                    let block: Vec<String> = moved.drain(start..start + len).collect();
                    for (k, tok) in block.into_iter().enumerate() {
                        moved.insert(dest + k, tok);
                    }
                    let d = edit_distance(&moved, reference);
                    if d < dist && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, moved));
                    }
                }
            }
        }
        match best {
            Some((d, moved)) => {
                cur = moved;
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    (dist + shifts, reference.len())
}

/// Enumerates every one-to-one alignment between tokens sharing a stem and
/// keeps the one with most exact matches, then most matches, then fewest
/// chunks.
fn oracle_meteor(hyp: &[String], reference: &[String]) -> f64 {
    let stemmer = Stemmer::create(Algorithm::English);
    let hs: Vec<String> = hyp
        .iter()
        .map(|t| stemmer.stem(&t.to_lowercase()).into_owned())
        .collect();
    let rs: Vec<String> = reference
        .iter()
        .map(|t| stemmer.stem(&t.to_lowercase()).into_owned())
        .collect();

    fn go(
        i: usize,
        hyp: &[String],
        reference: &[String],
        hs: &[String],
        rs: &[String],
        used: &mut Vec<bool>,
        align: &mut Vec<Option<usize>>,
        best: &mut (usize, usize, usize),
    ) {
        if i == hyp.len() {
            let exact = align
                .iter()
                .enumerate()
                .filter(|(k, a)| a.is_some_and(|j| hyp[*k] == reference[j]))
                .count();
            let total = align.iter().filter(|a| a.is_some()).count();
            let mut chunks = 0;
            for k in 0..align.len() {
                if let Some(j) = align[k] {
                    let continues = k > 0 && align[k - 1] == j.checked_sub(1);
                    if !(continues && j > 0) {
                        chunks += 1;
                    }
                }
            }
            let better = (exact, total) > (best.0, best.1)
                || ((exact, total) == (best.0, best.1) && chunks < best.2);
            if better {
                *best = (exact, total, chunks);
            }
            return;
        }
        align[i] = None;
        go(i + 1, hyp, reference, hs, rs, used, align, best);
        for j in 0..reference.len() {
            if !used[j] && hs[i] == rs[j] {
                used[j] = true;
                align[i] = Some(j);
                go(i + 1, hyp, reference, hs, rs, used, align, best);
                used[j] = false;
                align[i] = None;
            }
        }
    }

    let mut best = (0, 0, usize::MAX);
    go(
        0,
        hyp,
        reference,
        &hs,
        &rs,
        &mut vec![false; reference.len()],
        &mut vec![None; hyp.len()],
        &mut best,
    );
    let (_, m, chunks) = best;
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let p = m / hyp.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (9.0 * p + r);
    fmean * (1.0 - 0.5 * (chunks as f64 / m).powi(3))
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut track = |what: &str, got: f64, want: f64| -> Result<(), String> {
        let diff = (got - want).abs();
        worst = worst.max(diff);
        if diff > 1e-9 {
            return Err(format!("{what}: got {got}, oracle {want}"));
        }
        Ok(())
    };
    for corpus_idx in 0..20 {
        let n_segments = rng.random_range(1..=6);
        let mut pairs = Vec::new();
        for _ in 0..n_segments {
            let reference = random_tokens(&mut rng, 10);
            let hyp = if rng.random_bool(0.6) {
                perturb(&mut rng, &reference)
            } else {
                random_tokens(&mut rng, 10)
            };
            pairs.push((hyp, reference));
        }
        let texts: Vec<(String, String)> = pairs
            .iter()
            .map(|(h, r)| (h.join(" "), r.join(" ")))
            .collect();

        let bleu = corpus_bleu(pairs.iter().map(|(h, r)| (h, r)), 4).map_err(|e| e.to_string())?;
        track(
            &format!("corpus {corpus_idx} BLEU"),
            bleu,
            oracle_corpus_bleu(&pairs),
        )?;

        let segments: Vec<Segment> = texts
            .iter()
            .map(|(h, r)| Segment {
                source: String::new(),
                hypothesis: h.clone(),
                reference: r.clone(),
            })
            .collect();
        let report = evaluate_corpus(&segments, TokenizationScheme::WHITESPACE, None)
            .map_err(|e| e.to_string())?;
        track(
            &format!("corpus {corpus_idx} report BLEU"),
            report.bleu,
            oracle_corpus_bleu(&pairs),
        )?;
        track(
            &format!("corpus {corpus_idx} chrF++"),
            report.chrf_pp,
            oracle_chrf(&texts),
        )?;

        let (mut edits, mut ref_len, mut meteor_sum) = (0, 0, 0.0);
        for (k, ((h, r), (ht, rt))) in pairs.iter().zip(&texts).enumerate() {
            let tag = format!("corpus {corpus_idx} segment {k}");
            track(
                &format!("{tag} chrF++"),
                chrf_pp(ht, rt),
                oracle_chrf(&[(ht.clone(), rt.clone())]),
            )?;
            let (e, l) = oracle_ter(h, r);
            edits += e;
            ref_len += l;
            track(
                &format!("{tag} TER"),
                ter(h, r).map_err(|e| e.to_string())?,
                e as f64 / l as f64,
            )?;
            let m = oracle_meteor(h, r);
            meteor_sum += m;
            track(&format!("{tag} METEOR"), meteor(h, r), m)?;
        }
        track(
            &format!("corpus {corpus_idx} TER"),
            report.ter,
            edits as f64 / ref_len as f64,
        )?;
        track(
            &format!("corpus {corpus_idx} METEOR"),
            report.meteor,
            meteor_sum / pairs.len() as f64,
        )?;
    }

    let identity: Vec<Segment> = (0..5)
        .map(|_| {
            let t = random_tokens(&mut rng, 10).join(" ");
            Segment {
                source: String::new(),
                hypothesis: t.clone(),
                reference: t,
            }
        })
        .collect();
    let report = evaluate_corpus(&identity, TokenizationScheme::WHITESPACE, None)
        .map_err(|e| e.to_string())?;
    ensure!(
        report.bleu == 1.0 && report.chrf_pp == 1.0 && report.ter == 0.0,
        "identity corpus scored bleu {} chrf {} ter {}",
        report.bleu,
        report.chrf_pp,
        report.ter
    );
    Ok(format!(
        "20 corpora, max |diff| {worst:.1e}; identity corpus 1/1/0"
    ))
}

// 4 ------------------------------------------------------------------------

fn ter_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..200 {
        let reference = random_tokens(&mut rng, 12);
        let hyp = if k % 2 == 0 {
            perturb(&mut rng, &reference)
        } else {
            random_tokens(&mut rng, 12)
        };
        let t = ter(&hyp, &reference).map_err(|e| e.to_string())?;
        let bound = levenshtein(&hyp, &reference) as f64 / reference.len() as f64;
        ensure!(t <= bound, "pair {k}: ter {t} > levenshtein bound {bound}");
    }
    Ok("200 pairs".into())
}

// 5 ------------------------------------------------------------------------

fn gaussian_like(rng: &mut ChaCha8Rng, centre: f64, sd: f64) -> f64 {
    // Irwin-Hall with 4 terms has variance 1/3.
    let s: f64 = (0..4).map(|_| rng.random::<f64>()).sum::<f64>() - 2.0;
    (centre + s * sd * 3f64.sqrt()).clamp(0.0, 1.0)
}

fn oracle_knee(scores: &[f64]) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let mut best_i = 0;
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..s.len() {
        let d = (s[i] - lo) / (hi - lo) - i as f64 / (s.len() - 1) as f64;
        if d > best_d {
            best_d = d;
            best_i = i;
        }
    }
    s[best_i]
}

fn knee_detection() -> Check {
    let mut inside = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let low: Vec<f64> = (0..250)
            .map(|_| gaussian_like(&mut rng, 0.3, 0.04))
            .collect();
        let high: Vec<f64> = (0..250)
            .map(|_| gaussian_like(&mut rng, 0.9, 0.04))
            .collect();
        let scores: Vec<f64> = low.iter().chain(&high).copied().collect();
        let knee = knee_point(&scores).map_err(|e| e.to_string())?.knee_value;
        let want = oracle_knee(&scores);
        ensure!(
            knee == want,
            "seed {seed}: knee {knee} but brute-force argmax gives {want}"
        );
        let low_max = low.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if knee > low_max && knee < 0.9 {
            inside += 1;
        }
    }
    ensure!(
        inside >= 48,
        "knee between the clusters in only {inside}/50 seeds"
    );
    Ok(format!(
        "{inside}/50 seeds between clusters, 50/50 match brute force"
    ))
}

// 6 ------------------------------------------------------------------------

fn record(i: usize, source: &str, back: &str) -> BackTranslationRecord {
    let s = SourceSentence::new(source, format!("gate:{i}:0")).unwrap();
    BackTranslationRecord::new(ParallelPair::new(s, "translation").unwrap(), back)
}

fn gate_semantics() -> Check {
    let knee = 0.72330;
    let mut a = record(0, "first sentence", "first");
    a.quality_score = Some(0.70);
    let mut b = record(1, "second sentence", "second");
    b.quality_score = Some(0.75);
    let kept = comet_gate(vec![a.clone(), b], knee).map_err(|e| e.to_string())?;
    ensure!(kept == vec![a], "comet gate kept {} records", kept.len());

    let cfg = FilterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let s = random_tokens(&mut rng, 10).join(" ");
        let back = if i % 3 == 0 {
            s.clone()
        } else {
            random_tokens(&mut rng, 10).join(" ")
        };
        let mut r = record(i, &s, &back);
        let d =
            bleu_gate(&mut r, &cfg, TokenizationScheme::default()).map_err(|e| e.to_string())?;
        ensure!(
            d == GateDecision::RetainForPreference,
            "pass-all discarded record {i}"
        );
    }
    Ok("knee 0.72330 keeps only 0.70; pass-all retained 100/100".into())
}

// 7 ------------------------------------------------------------------------

fn corrupt_40(i: usize) -> bool {
    i % 5 < 2
}

fn curate_once(
    fx: &Fixture,
    out: &str,
) -> Result<(btdpo_core::pipeline::IterationReport, Vec<u8>), String> {
    let mut cfg = fx.config(Some(0.6), 10);
    cfg.dataset_dir = fx.dir.path().join(out);
    let svc = services(
        Arc::new(fx.expert()),
        Arc::new(fx.student("student", corrupt_40)),
        Arc::new(separating_scorer()),
        None,
        vec![],
    );
    let report = Pipeline::new(cfg, svc)
        .and_then(|p| p.without_training().run_iteration())
        .map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&report.dataset_path).map_err(|e| e.to_string())?;
    Ok((report, bytes))
}

fn end_to_end() -> Check {
    let fx = fixture(100);
    let (report, bytes) = curate_once(&fx, "run-a")?;
    ensure!(report.n_triplets == 40, "{} triplets", report.n_triplets);
    let dataset =
        btdpo_core::data::read_dataset(&report.dataset_path).map_err(|e| e.to_string())?;
    for t in &dataset.triplets {
        let i = fx
            .sources
            .iter()
            .position(|s| *s == t.chosen)
            .ok_or_else(|| format!("chosen {:?} is not a source sentence", t.chosen))?;
        ensure!(
            corrupt_40(i),
            "sentence {i} was not corrupted but became a triplet"
        );
        ensure!(
            t.prompt.contains(&fx.translations[i]),
            "prompt misses T(s) for sentence {i}"
        );
        let student = fx.student("check", corrupt_40);
        let back = btdpo_core::clients::Translator::translate(
            &student,
            &fx.translations[i],
            &btdpo_core::clients::Direction::new("de", "en"),
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            t.rejected == back,
            "rejected differs from the back-translation for {i}"
        );
    }
    let (_, again) = curate_once(&fx, "run-b")?;
    ensure!(again == bytes, "re-run produced a different dataset file");
    Ok("40 triplets, schema holds, re-run byte-identical".into())
}

// 8 ------------------------------------------------------------------------

fn resumability() -> Check {
    let fx = fixture(100);
    let mut cfg = fx.config(Some(0.6), 1000);
    cfg.checkpoint_every = 16;
    let svc = |expert: Arc<MockTranslator>| {
        services(
            expert,
            Arc::new(fx.student("student", corrupt_40)),
            Arc::new(separating_scorer()),
            None,
            vec![],
        )
    };

    let dying = Arc::new(fx.expert().with_faults(Faults {
        fail_after: Some(50),
        ..Default::default()
    }));
    let first = Pipeline::new(cfg.clone(), svc(dying)).map_err(|e| e.to_string())?;
    ensure!(
        first.run_loop(StartMode::Fresh).is_err(),
        "interrupted run did not fail"
    );

    let expert = Arc::new(fx.expert());
    let resumed = Pipeline::new(cfg.clone(), svc(expert.clone()))
        .and_then(|p| p.run_loop(StartMode::Resume))
        .map_err(|e| e.to_string())?;
    ensure!(
        expert.calls() == 50,
        "resume made {} translate calls",
        expert.calls()
    );
    let resumed_bytes = std::fs::read(&resumed[0].dataset_path).map_err(|e| e.to_string())?;

    let mut cold_cfg = cfg;
    cold_cfg.dataset_dir = fx.dir.path().join("cold");
    cold_cfg.state_path = None;
    let cold = Pipeline::new(cold_cfg, svc(Arc::new(fx.expert())))
        .and_then(|p| p.run_loop(StartMode::Fresh))
        .map_err(|e| e.to_string())?;
    let cold_bytes = std::fs::read(&cold[0].dataset_path).map_err(|e| e.to_string())?;
    ensure!(
        cold_bytes == resumed_bytes,
        "resumed dataset differs from uninterrupted run"
    );
    Ok("50 further translate calls, dataset identical".into())
}

// 9 ------------------------------------------------------------------------

fn loop_behaviour() -> Check {
    let fx = fixture(100);
    let mut cfg = fx.config(Some(0.6), 10);
    cfg.max_iterations = 10;
    let trainer = Arc::new(MockTrainer::new(MockTrainerSpec {
        model_endpoints: vec!["mock://stage-2".into(), "mock://stage-3".into()],
        ..Default::default()
    }));
    let svc = services(
        Arc::new(fx.expert()),
        Arc::new(fx.student("stage-1", corrupt_40)),
        Arc::new(separating_scorer()),
        Some(trainer),
        vec![
            (
                "mock://stage-2".into(),
                Arc::new(fx.student("stage-2", |i| i % 5 == 0)),
            ),
            (
                "mock://stage-3".into(),
                Arc::new(fx.student("stage-3", |_| false)),
            ),
        ],
    );
    let reports = Pipeline::new(cfg, svc)
        .and_then(|p| p.run_loop(StartMode::Fresh))
        .map_err(|e| e.to_string())?;
    let counts: Vec<usize> = reports.iter().map(|r| r.n_triplets).collect();
    ensure!(counts.len() >= 2, "only {} iterations ran", counts.len());
    ensure!(
        counts[1] * 2 == counts[0],
        "iteration counts {counts:?} do not halve"
    );
    ensure!(
        counts.last() == Some(&0) && counts[..counts.len() - 1].iter().all(|&c| c > 0),
        "loop did not stop at the first zero-triplet iteration: {counts:?}"
    );
    Ok(format!("triplets per iteration {counts:?}"))
}
