//! The iterative curation loop.
//!
//! One iteration: segment (or read pre-translated pairs), translate with the
//! expert, back-translate with the student, apply the BLEU gate, score the
//! survivors, cut at the knee, build triplets, write the dataset and, once it
//! is large enough, hand it to the trainer. The next iteration starts from an
//! empty buffer with the newly trained student.

mod checkpoint;
mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::clients::{
    metric_requires_reference, Direction, HttpClient, HttpStudentConnector, JobStatus,
    QualityScoreRequest, QualityScorer, Sleeper, StudentConnector, ThreadSleeper, Trainer,
    Translator,
};
use crate::data::{
    read_parallel_corpus, segment_corpus_labeled, write_atomic, write_dataset,
    BackTranslationRecord, ParallelPair, PreferenceDataset, SourceSentence,
};
use crate::filter::{bleu_gate, build_triplets, comet_gate, knee_point, GateDecision};
use crate::{Error, Result};

pub use checkpoint::{Checkpoint, Outcome};
pub use config::{default_hyperparams, PipelineConfig, DEFAULT_QUALITY_METRIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KneeSource {
    Computed,
    Override,
    /// No records reached the quality gate.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeInfo {
    pub value: Option<f64>,
    pub source: KneeSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainingOutcome {
    Skipped {
        reason: String,
    },
    Submitted {
        job_id: String,
        model_endpoint: Option<String>,
    },
    Failed {
        job_id: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub n_sentences: usize,
    pub n_bleu_discarded: usize,
    pub n_scored: usize,
    pub n_below_knee: usize,
    /// Below-knee records dropped because the back-translation equals the source.
    pub n_identical_skipped: usize,
    pub knee: KneeInfo,
    pub n_triplets: usize,
    pub dataset_path: PathBuf,
    pub training: TrainingOutcome,
    pub wall_time_secs: f64,
}

impl IterationReport {
    pub fn trained(&self) -> bool {
        matches!(self.training, TrainingOutcome::Submitted { .. })
    }
}

/// The service handles a pipeline talks to.
pub struct Services {
    /// Required unless the input is a parallel corpus.
    pub translator: Option<Arc<dyn Translator>>,
    pub student: Arc<dyn Translator>,
    pub scorer: Arc<dyn QualityScorer>,
    pub trainer: Option<Arc<dyn Trainer>>,
    /// Builds the student for a freshly trained model endpoint.
    pub connector: Arc<dyn StudentConnector>,
    /// Used between training-status polls.
    pub sleeper: Arc<dyn Sleeper>,
}

impl Services {
    /// HTTP clients for every endpoint in the config, with bearer tokens
    /// resolved from the environment.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let client = |name: &str, ep: &crate::clients::EndpointConfig| -> Result<HttpClient> {
            let mut ep = ep.clone();
            ep.resolve_auth_from_env()
                .map_err(|e| Error::Validation(format!("[{name}] {e}")))?;
            Ok(HttpClient::new(ep)?)
        };
        let translator = match &cfg.translator {
            Some(ep) => Some(Arc::new(client("translator", ep)?) as Arc<dyn Translator>),
            None => None,
        };
        let trainer = match &cfg.trainer {
            Some(ep) => Some(Arc::new(client("trainer", ep)?) as Arc<dyn Trainer>),
            None => None,
        };
        let mut student_template = cfg.student.clone();
        student_template
            .resolve_auth_from_env()
            .map_err(|e| Error::Validation(format!("[student] {e}")))?;
        Ok(Self {
            translator,
            student: Arc::new(client("student", &cfg.student)?),
            scorer: Arc::new(client("scorer", &cfg.scorer)?),
            trainer,
            connector: Arc::new(HttpStudentConnector {
                template: student_template,
            }),
            sleeper: Arc::new(ThreadSleeper),
        })
    }
}

/// How to treat an existing checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Ignore and overwrite any checkpoint.
    Fresh,
    /// Continue from the checkpoint if there is one.
    Resume,
}

enum WorkItem {
    Source(SourceSentence),
    Pair(ParallelPair),
}

impl WorkItem {
    fn id(&self) -> &str {
        match self {
            WorkItem::Source(s) => &s.id,
            WorkItem::Pair(p) => &p.source.id,
        }
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    services: Services,
    /// Whether a large enough dataset is handed to the trainer.
    train: bool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, services: Services) -> Result<Self> {
        cfg.validate()?;
        if cfg.parallel_path.is_none() && services.translator.is_none() {
            return Err(Error::Validation("corpus input needs a translator".into()));
        }
        Ok(Self {
            cfg,
            services,
            train: true,
        })
    }

    /// Never trigger training (single-pass curation).
    pub fn without_training(mut self) -> Self {
        self.train = false;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn load_inputs(&self) -> Result<(Vec<WorkItem>, String)> {
        let (path, items) = match (&self.cfg.parallel_path, &self.cfg.corpus_path) {
            (Some(p), _) => {
                let pairs = read_parallel_corpus(p)?;
                (p, pairs.into_iter().map(WorkItem::Pair).collect::<Vec<_>>())
            }
            (None, Some(p)) => {
                let raw = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let label = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "corpus".into());
                let sentences = segment_corpus_labeled(&raw, &label);
                (p, sentences.into_iter().map(WorkItem::Source).collect())
            }
            (None, None) => return Err(Error::Validation("no input configured".into())),
        };
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let hash = hex::encode(Sha256::digest(&bytes))[..16].to_string();
        Ok((items, hash))
    }

    fn direction(&self) -> Direction {
        Direction::new(&self.cfg.source_lang, &self.cfg.target_lang)
    }

    fn process(&self, item: &WorkItem, student: &dyn Translator) -> Result<Outcome> {
        let direction = self.direction();
        let pair = match item {
            WorkItem::Pair(p) => p.clone(),
            WorkItem::Source(s) => {
                let translator = self
                    .services
                    .translator
                    .as_ref()
                    .ok_or_else(|| Error::Validation("no translator configured".into()))?;
                let t = translator.translate(&s.text, &direction)?;
                ParallelPair::new(s.clone(), &t)?
            }
        };
        let back = student.back_translate(&pair.expert_translation, &direction.reversed())?;
        let mut record = BackTranslationRecord::new(pair, &back);
        let decision = bleu_gate(&mut record, &self.cfg.filter, self.cfg.scheme)?;
        let retained = decision == GateDecision::RetainForPreference;
        if retained {
            let metric = &self.cfg.quality_metric;
            let req = QualityScoreRequest {
                source: record.pair.expert_translation.clone(),
                hypothesis: record.back_translation.clone(),
                reference: metric_requires_reference(metric)
                    .then(|| record.source_text().to_string()),
                metric_name: metric.clone(),
            };
            record.quality_score = Some(self.services.scorer.score_quality(&req)?);
        }
        Ok(Outcome { record, retained })
    }

    /// Processes every sentence missing from the checkpoint, saving after
    /// each chunk. On failure the successful part of the chunk is kept.
    fn collect(
        &self,
        state: &mut Checkpoint,
        items: &[WorkItem],
        student: &dyn Translator,
        pool: &rayon::ThreadPool,
        state_path: &Path,
    ) -> Result<()> {
        let todo: Vec<usize> = (0..items.len())
            .filter(|i| !state.outcomes.contains_key(i))
            .collect();
        if todo.len() < items.len() {
            info!(
                done = items.len() - todo.len(),
                remaining = todo.len(),
                "resuming iteration"
            );
        }
        for chunk in todo.chunks(self.cfg.checkpoint_every) {
            let results: Vec<(usize, Result<Outcome>)> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&i| (i, self.process(&items[i], student)))
                    .collect()
            });
            let mut first_err = None;
            for (i, r) in results {
                match r {
                    Ok(o) => {
                        state.outcomes.insert(i, o);
                    }
                    Err(e) => {
                        warn!(sentence = items[i].id(), error = %e, "sentence failed");
                        first_err.get_or_insert(e);
                    }
                }
            }
            state.save(state_path)?;
            if let Some(e) = first_err {
                return Err(e);
            }
            info!(done = state.outcomes.len(), total = items.len(), "progress");
        }
        Ok(())
    }

    fn iteration_dir(&self, iteration: usize) -> PathBuf {
        self.cfg.dataset_dir.join(format!("iter-{iteration:03}"))
    }

    /// Gates the collected outcomes, writes the dataset and submits training
    /// when the dataset is large enough.
    fn assemble(&self, state: &Checkpoint, n_sentences: usize) -> Result<IterationReport> {
        let dir = self.iteration_dir(state.iteration);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let scored: Vec<BackTranslationRecord> = state
            .outcomes
            .values()
            .filter(|o| o.retained)
            .map(|o| o.record.clone())
            .collect();
        let n_bleu_discarded = state.outcomes.len() - scored.len();

        let knee = match self.cfg.filter.knee_override {
            Some(k) => KneeInfo {
                value: Some(k),
                source: KneeSource::Override,
            },
            None if scored.is_empty() => KneeInfo {
                value: None,
                source: KneeSource::Unavailable,
            },
            None => {
                let scores: Vec<f64> = scored.iter().filter_map(|r| r.quality_score).collect();
                let k = knee_point(&scores)?;
                k.write_curve(&dir.join("knee_curve.tsv"))?;
                KneeInfo {
                    value: Some(k.knee_value),
                    source: KneeSource::Computed,
                }
            }
        };
        let below = match knee.value {
            Some(k) => comet_gate(scored.clone(), k)?,
            None => Vec::new(),
        };
        let built = build_triplets(&below, &self.cfg.prompt_template)?;
        let n_triplets = built.triplets.len();

        let dataset_path = dir.join("dataset.jsonl");
        let dataset = PreferenceDataset::new(built.triplets, self.cfg.fingerprint());
        write_dataset(&dataset, &dataset_path)?;

        let min = self.cfg.filter.min_dataset_size;
        let training = match &self.services.trainer {
            _ if !self.train => TrainingOutcome::Skipped {
                reason: "training disabled".into(),
            },
            _ if n_triplets < min => TrainingOutcome::Skipped {
                reason: format!("{n_triplets} triplets, below min_dataset_size {min}"),
            },
            None => TrainingOutcome::Skipped {
                reason: "no trainer configured".into(),
            },
            Some(trainer) => {
                let job_id =
                    trainer.trigger_training(&dataset_path, &self.cfg.training_hyperparams())?;
                info!(%job_id, "training submitted");
                TrainingOutcome::Submitted {
                    job_id,
                    model_endpoint: None,
                }
            }
        };

        Ok(IterationReport {
            iteration: state.iteration,
            n_sentences,
            n_bleu_discarded,
            n_scored: scored.len(),
            n_below_knee: below.len(),
            n_identical_skipped: built.skipped,
            knee,
            n_triplets,
            dataset_path,
            training,
            wall_time_secs: 0.0,
        })
    }

    fn await_job(&self, job_id: &str) -> Result<JobStatus> {
        let trainer = self.services.trainer.as_ref().ok_or_else(|| {
            Error::Validation("pending training job but no trainer configured".into())
        })?;
        let interval = Duration::from_millis(self.cfg.poll_interval_ms);
        let max_polls = (self.cfg.poll_timeout_secs * 1000)
            .checked_div(self.cfg.poll_interval_ms)
            .map_or(u64::MAX, |n| n.max(1));
        for _ in 0..max_polls {
            match trainer.poll(job_id)? {
                JobStatus::Pending | JobStatus::Running => self.services.sleeper.sleep(interval),
                done => return Ok(done),
            }
        }
        Err(Error::Internal(format!(
            "training job {job_id} did not finish within {}s",
            self.cfg.poll_timeout_secs
        )))
    }

    fn open_state(
        &self,
        mode: StartMode,
        config_hash: &str,
        input_hash: &str,
    ) -> Result<Checkpoint> {
        let path = self.cfg.state_path();
        if mode == StartMode::Resume && path.exists() {
            let state = Checkpoint::load(&path)?;
            state.check_compatible(&path, config_hash, input_hash)?;
            info!(path = %path.display(), iteration = state.iteration, "resuming from checkpoint");
            return Ok(state);
        }
        Ok(Checkpoint::new(config_hash, input_hash))
    }

    /// Runs iterations until `max_iterations`, a zero-triplet iteration, or
    /// an iteration that did not train a new student.
    pub fn run_loop(&self, mode: StartMode) -> Result<Vec<IterationReport>> {
        self.run(mode, self.cfg.max_iterations)
    }

    /// Exactly one iteration from a fresh state.
    pub fn run_iteration(&self) -> Result<IterationReport> {
        let mut reports = self.run(StartMode::Fresh, 1)?;
        reports
            .pop()
            .ok_or_else(|| Error::Internal("loop produced no report".into()))
    }

    fn run(&self, mode: StartMode, max_iterations: usize) -> Result<Vec<IterationReport>> {
        let (items, input_hash) = self.load_inputs()?;
        let config_hash = self.cfg.fingerprint();
        let state_path = self.cfg.state_path();
        std::fs::create_dir_all(&self.cfg.dataset_dir)
            .map_err(|e| Error::io(&self.cfg.dataset_dir, e))?;
        let mut state = self.open_state(mode, &config_hash, &input_hash)?;
        state.save(&state_path)?;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::Internal(format!("building worker pool: {e}")))?;
        let mut student = match &state.student_endpoint {
            Some(ep) => self.services.connector.connect_student(ep)?,
            None => self.services.student.clone(),
        };

        while !state.finished {
            let started = Instant::now();
            let mut report = match state.pending.clone() {
                Some(r) => r,
                None => {
                    self.collect(&mut state, &items, &*student, &pool, &state_path)?;
                    let r = self.assemble(&state, items.len())?;
                    state.pending = Some(r.clone());
                    state.save(&state_path)?;
                    r
                }
            };

            let mut failure = None;
            if let TrainingOutcome::Submitted { job_id, .. } = &report.training {
                let job_id = job_id.clone();
                match self.await_job(&job_id)? {
                    JobStatus::Done { model_endpoint } => {
                        student = self.services.connector.connect_student(&model_endpoint)?;
                        state.student_endpoint = Some(model_endpoint.clone());
                        report.training = TrainingOutcome::Submitted {
                            job_id,
                            model_endpoint: Some(model_endpoint),
                        };
                    }
                    JobStatus::Failed { reason } => {
                        failure = Some(Error::Internal(format!(
                            "training job {job_id} failed: {reason}"
                        )));
                        report.training = TrainingOutcome::Failed { job_id, reason };
                    }
                    JobStatus::Pending | JobStatus::Running => {
                        unreachable!("await_job returns final states")
                    }
                }
            }
            report.wall_time_secs = started.elapsed().as_secs_f64();
            let report_path = self.iteration_dir(report.iteration).join("report.json");
            let json = serde_json::to_vec_pretty(&report)
                .map_err(|e| Error::Internal(format!("serializing report: {e}")))?;
            write_atomic(&report_path, &json)?;
            info!(
                iteration = report.iteration,
                triplets = report.n_triplets,
                discarded = report.n_bleu_discarded,
                below_knee = report.n_below_knee,
                "iteration finished"
            );

            let stop = failure.is_some()
                || report.n_triplets == 0
                || !report.trained()
                || state.iteration >= max_iterations;
            state.reports.push(report);
            state.pending = None;
            state.outcomes.clear();
            state.iteration += 1;
            state.finished = stop;
            state.save(&state_path)?;
            if let Some(e) = failure {
                return Err(e);
            }
        }
        Ok(state.reports)
    }
}
