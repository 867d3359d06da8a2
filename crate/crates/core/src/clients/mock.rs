//! Deterministic in-process service backends.
//!
//! Each mock is built from a serde-friendly spec so the same behaviour can be
//! served over HTTP by the mock server. Every mock counts calls and tracks the
//! peak number of concurrent calls.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::*;

#[derive(Debug, Default)]
pub struct CallStats {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

pub struct CallGuard<'a>(&'a CallStats);

impl CallStats {
    /// Registers a call; returns its 0-based index and a guard that marks
    /// the call finished on drop.
    pub fn enter(&self) -> (usize, CallGuard<'_>) {
        let idx = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        (idx, CallGuard(self))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for CallGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Failure injection shared by all mocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Faults {
    /// The first `fail_first` calls fail with a transient error.
    #[serde(default)]
    pub fail_first: usize,
    /// Calls with index >= `fail_after` fail (the backend "dies").
    #[serde(default)]
    pub fail_after: Option<usize>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl Faults {
    fn check(&self, idx: usize, endpoint: &str) -> ClientResult<()> {
        if self.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.latency_ms));
        }
        let dead = self.fail_after.is_some_and(|n| idx >= n);
        if idx < self.fail_first || dead {
            return Err(ClientError::Transport {
                endpoint: endpoint.to_string(),
                message: format!("injected failure on call {idx}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Drops the last whitespace-separated word (a lone word becomes `[unk]`).
    #[default]
    DropLastWord,
    /// Replaces the output with a fixed string.
    Replace(String),
}

impl Corruption {
    pub fn apply(&self, text: &str) -> String {
        match self {
            Corruption::DropLastWord => {
                let words: Vec<&str> = text.split_whitespace().collect();
                if words.len() <= 1 {
                    "[unk]".to_string()
                } else {
                    words[..words.len() - 1].join(" ")
                }
            }
            Corruption::Replace(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Unknown inputs are rejected (HTTP 404 over the wire).
    #[default]
    Reject,
    /// Unknown inputs are returned unchanged.
    Echo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockTranslatorSpec {
    #[serde(default)]
    pub table: BTreeMap<String, String>,
    /// Inputs whose output gets `corruption` applied.
    #[serde(default)]
    pub corrupt: BTreeSet<String>,
    #[serde(default)]
    pub corruption: Corruption,
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default)]
    pub faults: Faults,
}

pub struct MockTranslator {
    pub name: String,
    pub spec: MockTranslatorSpec,
    pub stats: CallStats,
}

impl MockTranslator {
    pub fn new(name: impl Into<String>, spec: MockTranslatorSpec) -> Self {
        Self {
            name: name.into(),
            spec,
            stats: CallStats::default(),
        }
    }

    pub fn from_table<K: Into<String>, V: Into<String>>(
        name: impl Into<String>,
        table: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        Self::new(
            name,
            MockTranslatorSpec {
                table: table
                    .into_iter()
                    .map(|(k, v)| (k.into(), v.into()))
                    .collect(),
                ..Default::default()
            },
        )
    }

    pub fn with_corrupt<S: Into<String>>(mut self, inputs: impl IntoIterator<Item = S>) -> Self {
        self.spec.corrupt = inputs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_faults(mut self, faults: Faults) -> Self {
        self.spec.faults = faults;
        self
    }

    pub fn calls(&self) -> usize {
        self.stats.calls()
    }
}

impl Translator for MockTranslator {
    fn endpoint(&self) -> String {
        format!("mock://{}", self.name)
    }

    fn send_translate(&self, text: &str, _direction: &Direction) -> ClientResult<String> {
        let (idx, _guard) = self.stats.enter();
        self.spec.faults.check(idx, &self.endpoint())?;
        let out = match (self.spec.table.get(text), &self.spec.fallback) {
            (Some(t), _) => t.clone(),
            (None, Fallback::Echo) => text.to_string(),
            (None, Fallback::Reject) => {
                return Err(ClientError::Rejected {
                    endpoint: self.endpoint(),
                    status: 404,
                    body: format!("no translation for {text:?}"),
                })
            }
        };
        if self.spec.corrupt.contains(text) {
            Ok(self.spec.corruption.apply(&out))
        } else {
            Ok(out)
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    /// `matched` when the hypothesis equals the reference (or the source
    /// when there is no reference), else `mismatched`.
    ExactMatch {
        matched: f64,
        mismatched: f64,
    },
    /// `min(len) / max(len)` of hypothesis and reference-or-source, in chars.
    #[default]
    LengthRatio,
    /// Looks the hypothesis up; `default` otherwise.
    Table {
        scores: BTreeMap<String, f64>,
        default: f64,
    },
    Constant(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScorerSpec {
    #[serde(default)]
    pub rule: ScoreRule,
    #[serde(default)]
    pub faults: Faults,
}

pub struct MockScorer {
    pub spec: MockScorerSpec,
    pub stats: CallStats,
}

impl MockScorer {
    pub fn new(rule: ScoreRule) -> Self {
        Self::from_spec(MockScorerSpec {
            rule,
            faults: Faults::default(),
        })
    }

    pub fn from_spec(spec: MockScorerSpec) -> Self {
        Self {
            spec,
            stats: CallStats::default(),
        }
    }
}

impl QualityScorer for MockScorer {
    fn endpoint(&self) -> String {
        "mock://scorer".into()
    }

    fn send_score(&self, req: &QualityScoreRequest) -> ClientResult<f64> {
        let (idx, _guard) = self.stats.enter();
        self.spec.faults.check(idx, &self.endpoint())?;
        let against = req.reference.as_deref().unwrap_or(&req.source);
        Ok(match &self.spec.rule {
            ScoreRule::ExactMatch {
                matched,
                mismatched,
            } => {
                if req.hypothesis == against {
                    *matched
                } else {
                    *mismatched
                }
            }
            ScoreRule::LengthRatio => {
                let (h, r) = (req.hypothesis.chars().count(), against.chars().count());
                if h.max(r) == 0 {
                    1.0
                } else {
                    h.min(r) as f64 / h.max(r) as f64
                }
            }
            ScoreRule::Table { scores, default } => {
                scores.get(&req.hypothesis).copied().unwrap_or(*default)
            }
            ScoreRule::Constant(v) => *v,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockLogProbSpec {
    /// Log-probability per whitespace token under the student.
    pub student_per_token: f64,
    pub reference_per_token: f64,
}

impl Default for MockLogProbSpec {
    fn default() -> Self {
        Self {
            student_per_token: -0.5,
            reference_per_token: -0.5,
        }
    }
}

pub struct MockLogProb {
    pub spec: MockLogProbSpec,
    pub stats: CallStats,
}

impl MockLogProb {
    pub fn new(spec: MockLogProbSpec) -> Self {
        Self {
            spec,
            stats: CallStats::default(),
        }
    }
}

impl LogProbScorer for MockLogProb {
    fn endpoint(&self) -> String {
        "mock://logprob".into()
    }

    fn send_logprob(&self, _prompt: &str, completion: &str, role: ModelRole) -> ClientResult<f64> {
        let _call = self.stats.enter();
        let per_token = match role {
            ModelRole::Student => self.spec.student_per_token,
            ModelRole::Reference => self.spec.reference_per_token,
        };
        Ok(per_token * completion.split_whitespace().count() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockTrainerSpec {
    /// Model endpoint reported by the n-th finished job; the last entry is
    /// reused once the list runs out.
    #[serde(default)]
    pub model_endpoints: Vec<String>,
    /// Polls answered with `pending` before a job reports its outcome.
    #[serde(default = "one")]
    pub polls_before_done: usize,
    #[serde(default)]
    pub fail_reason: Option<String>,
}

fn one() -> usize {
    1
}

impl Default for MockTrainerSpec {
    fn default() -> Self {
        Self {
            model_endpoints: vec!["mock://student-trained".into()],
            polls_before_done: 1,
            fail_reason: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub job_id: String,
    pub dataset_path: String,
    pub hyperparams: Hyperparams,
}

struct Job {
    polls: usize,
    outcome: JobStatus,
}

pub struct MockTrainer {
    pub spec: MockTrainerSpec,
    jobs: Mutex<BTreeMap<String, Job>>,
    submissions: Mutex<Vec<Submission>>,
}

impl MockTrainer {
    pub fn new(spec: MockTrainerSpec) -> Self {
        Self {
            spec,
            jobs: Mutex::new(BTreeMap::new()),
            submissions: Mutex::new(Vec::new()),
        }
    }

    pub fn submissions(&self) -> Vec<Submission> {
        self.submissions.lock().unwrap().clone()
    }
}

impl Trainer for MockTrainer {
    fn endpoint(&self) -> String {
        "mock://trainer".into()
    }

    fn send_train(&self, dataset_path: &str, hyperparams: &Hyperparams) -> ClientResult<String> {
        let mut subs = self.submissions.lock().unwrap();
        let n = subs.len();
        let job_id = format!("job-{}", n + 1);
        let outcome = match &self.spec.fail_reason {
            Some(reason) => JobStatus::Failed {
                reason: reason.clone(),
            },
            None => {
                let eps = &self.spec.model_endpoints;
                let model_endpoint = eps
                    .get(n)
                    .or(eps.last())
                    .cloned()
                    .unwrap_or_else(|| "mock://student-trained".into());
                JobStatus::Done { model_endpoint }
            }
        };
        self.jobs
            .lock()
            .unwrap()
            .insert(job_id.clone(), Job { polls: 0, outcome });
        subs.push(Submission {
            job_id: job_id.clone(),
            dataset_path: dataset_path.to_string(),
            hyperparams: hyperparams.clone(),
        });
        Ok(job_id)
    }

    fn poll(&self, job_id: &str) -> ClientResult<JobStatus> {
        let mut jobs = self.jobs.lock().unwrap();
        let job = jobs.get_mut(job_id).ok_or_else(|| ClientError::Rejected {
            endpoint: self.endpoint(),
            status: 404,
            body: format!("unknown job {job_id}"),
        })?;
        job.polls += 1;
        if job.polls <= self.spec.polls_before_done {
            Ok(JobStatus::Pending)
        } else {
            Ok(job.outcome.clone())
        }
    }
}

/// Maps model endpoints to pre-built students.
#[derive(Default)]
pub struct MockStudentConnector {
    pub students: BTreeMap<String, Arc<dyn Translator>>,
}

impl StudentConnector for MockStudentConnector {
    fn connect_student(&self, model_endpoint: &str) -> ClientResult<Arc<dyn Translator>> {
        self.students
            .get(model_endpoint)
            .cloned()
            .ok_or_else(|| ClientError::Transport {
                endpoint: model_endpoint.to_string(),
                message: "no mock student registered".into(),
            })
    }
}
