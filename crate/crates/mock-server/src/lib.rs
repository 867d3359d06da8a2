//! HTTP mock of the four services, speaking the `btdpo-core` wire protocol.
//!
//! | Route                      | Backend                              |
//! |----------------------------|--------------------------------------|
//! | `POST /translate`          | expert translator                    |
//! | `POST /stage/{n}/translate`| student stage `n` (1-based)          |
//! | `POST /stage/{n}/logprob`  | log-probabilities for stage `n`      |
//! | `POST /logprob`            | same as stage 1                      |
//! | `POST /score`              | quality scorer                       |
//! | `POST /train`              | trainer; the n-th job yields stage `n + 1` |
//! | `POST /train/{id}`         | job status                           |
//! | `GET /stats`               | call counters                        |
//!
//! Backend errors map to status codes: injected transport failures to 503,
//! rejections to their own status, precondition failures to 400.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use btdpo_core::clients::mock::{
    MockLogProb, MockLogProbSpec, MockScorer, MockScorerSpec, MockTranslator, MockTranslatorSpec,
};
use btdpo_core::clients::protocol::*;
use btdpo_core::clients::{
    ClientError, Direction, JobStatus, LogProbScorer, QualityScoreRequest, QualityScorer,
    Translator,
};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerBehaviour {
    /// Polls answered with `pending` before a job finishes.
    #[serde(default)]
    pub polls_before_done: usize,
    #[serde(default)]
    pub fail_reason: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    #[serde(default)]
    pub expert: MockTranslatorSpec,
    /// Student stages; stage 1 is the initial student.
    #[serde(default)]
    pub students: Vec<MockTranslatorSpec>,
    #[serde(default)]
    pub scorer: MockScorerSpec,
    #[serde(default)]
    pub logprob: MockLogProbSpec,
    #[serde(default)]
    pub trainer: TrainerBehaviour,
    /// When set, every request must carry `Authorization: Bearer <token>`.
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteStats {
    pub calls: usize,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub routes: BTreeMap<String, RouteStats>,
    /// Requests whose request id had been seen before (retries).
    pub repeated_request_ids: usize,
    pub train_jobs: usize,
    pub rejected_auth: usize,
}

struct Job {
    polls: usize,
    outcome: JobStatus,
}

struct Shared {
    seen: HashMap<String, usize>,
    train_by_request: HashMap<String, String>,
    jobs: BTreeMap<String, Job>,
    rejected_auth: usize,
}

pub struct AppState {
    expert: MockTranslator,
    students: Vec<MockTranslator>,
    scorer: MockScorer,
    logprob: MockLogProb,
    trainer: TrainerBehaviour,
    token: Option<String>,
    base_url: Mutex<String>,
    shared: Mutex<Shared>,
}

impl AppState {
    pub fn new(spec: ServerSpec) -> Self {
        let students = if spec.students.is_empty() {
            vec![MockTranslatorSpec::default()]
        } else {
            spec.students
        };
        Self {
            expert: MockTranslator::new("expert", spec.expert),
            students: students
                .into_iter()
                .enumerate()
                .map(|(i, s)| MockTranslator::new(format!("stage-{}", i + 1), s))
                .collect(),
            scorer: MockScorer::from_spec(spec.scorer),
            logprob: MockLogProb::new(spec.logprob),
            trainer: spec.trainer,
            token: spec.token,
            base_url: Mutex::new(String::new()),
            shared: Mutex::new(Shared {
                seen: HashMap::new(),
                train_by_request: HashMap::new(),
                jobs: BTreeMap::new(),
                rejected_auth: 0,
            }),
        }
    }

    pub fn stats(&self) -> Stats {
        let mut routes = BTreeMap::new();
        let mut put = |name: String, s: &btdpo_core::clients::mock::CallStats| {
            routes.insert(
                name,
                RouteStats {
                    calls: s.calls(),
                    max_in_flight: s.max_in_flight(),
                },
            );
        };
        put("translate".into(), &self.expert.stats);
        for (i, s) in self.students.iter().enumerate() {
            put(format!("stage/{}/translate", i + 1), &s.stats);
        }
        put("score".into(), &self.scorer.stats);
        put("logprob".into(), &self.logprob.stats);
        let shared = self.shared.lock().unwrap();
        Stats {
            routes,
            repeated_request_ids: shared.seen.values().map(|&n| n - 1).sum(),
            train_jobs: shared.jobs.len(),
            rejected_auth: shared.rejected_auth,
        }
    }

    fn student(&self, stage: usize) -> Result<&MockTranslator, ApiError> {
        stage
            .checked_sub(1)
            .and_then(|i| self.students.get(i))
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no student stage {stage}")))
    }

    /// Checks auth and records the request id.
    fn admit(&self, headers: &HeaderMap, request_id: &str) -> Result<(), ApiError> {
        let mut shared = self.shared.lock().unwrap();
        if let Some(token) = &self.token {
            let expected = format!("Bearer {token}");
            let ok = headers
                .get("authorization")
                .and_then(|v| v.to_str().ok())
                .is_some_and(|v| v == expected);
            if !ok {
                shared.rejected_auth += 1;
                return Err(ApiError(
                    StatusCode::UNAUTHORIZED,
                    "missing or wrong bearer token".into(),
                ));
            }
        }
        *shared.seen.entry(request_id.to_string()).or_insert(0) += 1;
        Ok(())
    }
}

pub struct ApiError(StatusCode, String);

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        let status = match &e {
            ClientError::Transport { .. } => StatusCode::SERVICE_UNAVAILABLE,
            ClientError::Rejected { status, .. } => {
                StatusCode::from_u16(*status).unwrap_or(StatusCode::BAD_REQUEST)
            }
            ClientError::Precondition(_) => StatusCode::BAD_REQUEST,
            ClientError::Protocol { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs a blocking backend call off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn translate_with(
    m: &MockTranslator,
    req: &TranslateRequest,
) -> Result<TranslateResponse, ApiError> {
    let direction = Direction::new(&req.src_lang, &req.tgt_lang);
    Ok(TranslateResponse {
        translation: m.send_translate(&req.text, &direction)?,
    })
}

async fn expert_translate(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(req): Json<TranslateRequest>,
) -> ApiResult<TranslateResponse> {
    app.admit(&headers, &req.request_id)?;
    blocking(move || translate_with(&app.expert, &req))
        .await
        .map(Json)
}

async fn student_translate(
    State(app): State<Arc<AppState>>,
    Path(stage): Path<usize>,
    headers: HeaderMap,
    Json(req): Json<TranslateRequest>,
) -> ApiResult<TranslateResponse> {
    app.admit(&headers, &req.request_id)?;
    app.student(stage)?;
    blocking(move || translate_with(app.student(stage)?, &req))
        .await
        .map(Json)
}

async fn score(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(req): Json<ScoreRequest>,
) -> ApiResult<ScoreResponse> {
    app.admit(&headers, &req.request_id)?;
    blocking(move || {
        let q = QualityScoreRequest {
            source: req.source,
            hypothesis: req.hypothesis,
            reference: req.reference,
            metric_name: req.metric_name,
        };
        q.validate()?;
        Ok(ScoreResponse {
            score: app.scorer.send_score(&q)?,
        })
    })
    .await
    .map(Json)
}

async fn logprob_for(
    app: Arc<AppState>,
    stage: usize,
    headers: HeaderMap,
    req: LogProbRequest,
) -> ApiResult<LogProbResponse> {
    app.admit(&headers, &req.request_id)?;
    app.student(stage)?;
    let logprob = app
        .logprob
        .send_logprob(&req.prompt, &req.completion, req.model_role)?;
    Ok(Json(LogProbResponse { logprob }))
}

async fn logprob(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(req): Json<LogProbRequest>,
) -> ApiResult<LogProbResponse> {
    logprob_for(app, 1, headers, req).await
}

async fn stage_logprob(
    State(app): State<Arc<AppState>>,
    Path(stage): Path<usize>,
    headers: HeaderMap,
    Json(req): Json<LogProbRequest>,
) -> ApiResult<LogProbResponse> {
    logprob_for(app, stage, headers, req).await
}

async fn train(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(req): Json<TrainRequest>,
) -> ApiResult<TrainResponse> {
    app.admit(&headers, &req.request_id)?;
    let base = app.base_url.lock().unwrap().clone();
    let mut shared = app.shared.lock().unwrap();
    // a retried submission returns the original job instead of starting another
    if let Some(job_id) = shared.train_by_request.get(&req.request_id) {
        return Ok(Json(TrainResponse {
            job_id: job_id.clone(),
        }));
    }
    let n = shared.jobs.len() + 1;
    let job_id = format!("job-{n}");
    let outcome = match &app.trainer.fail_reason {
        Some(reason) => JobStatus::Failed {
            reason: reason.clone(),
        },
        None => JobStatus::Done {
            model_endpoint: format!("{base}/stage/{}", (n + 1).min(app.students.len())),
        },
    };
    shared
        .jobs
        .insert(job_id.clone(), Job { polls: 0, outcome });
    shared
        .train_by_request
        .insert(req.request_id.clone(), job_id.clone());
    tracing::info!(%job_id, dataset = %req.dataset_path, "training job accepted");
    Ok(Json(TrainResponse { job_id }))
}

async fn poll(
    State(app): State<Arc<AppState>>,
    Path(job_id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<PollRequest>,
) -> ApiResult<JobStatus> {
    app.admit(&headers, &req.request_id)?;
    let mut shared = app.shared.lock().unwrap();
    let job = shared
        .jobs
        .get_mut(&job_id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown job {job_id}")))?;
    job.polls += 1;
    if job.polls <= app.trainer.polls_before_done {
        return Ok(Json(JobStatus::Pending));
    }
    Ok(Json(job.outcome.clone()))
}

async fn stats(State(app): State<Arc<AppState>>) -> Json<Stats> {
    Json(app.stats())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route(ROUTE_TRANSLATE, post(expert_translate))
        .route("/stage/{stage}/translate", post(student_translate))
        .route("/stage/{stage}/logprob", post(stage_logprob))
        .route(ROUTE_LOGPROB, post(logprob))
        .route(ROUTE_SCORE, post(score))
        .route(ROUTE_TRAIN, post(train))
        .route("/train/{job_id}", post(poll))
        .route("/stats", get(stats))
        .with_state(state)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    spec: ServerSpec,
    addr: SocketAddr,
    ready: impl FnOnce(SocketAddr, Arc<AppState>),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let state = Arc::new(AppState::new(spec));
    *state.base_url.lock().unwrap() = format!("http://{local}");
    ready(local, state.clone());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on a background thread, for tests. Stops on drop.
pub struct RunningServer {
    pub base_url: String,
    state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    pub fn start(spec: ServerSpec) -> std::io::Result<Self> {
        let (ready_tx, ready_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
            {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                    return;
                }
            };
            let addr: SocketAddr = ([127, 0, 0, 1], 0).into();
            let tx = ready_tx.clone();
            let result = rt.block_on(serve(
                spec,
                addr,
                move |local, state| {
                    let _ = tx.send(Ok((local, state)));
                },
                async {
                    let _ = stop_rx.await;
                },
            ));
            if let Err(e) = result {
                let _ = ready_tx.send(Err(e));
            }
        });
        let (local, state) = ready_rx
            .recv()
            .map_err(|_| std::io::Error::other("mock server thread exited"))??;
        Ok(Self {
            base_url: format!("http://{local}"),
            state,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        })
    }

    pub fn stage_url(&self, stage: usize) -> String {
        format!("{}/stage/{stage}", self.base_url)
    }

    pub fn stats(&self) -> Stats {
        self.state.stats()
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
