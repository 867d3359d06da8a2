use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::*;
use super::retry::{Backoff, Sleeper, ThreadSleeper};
use super::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportFailure {
    pub message: String,
}

/// Posts a JSON body and returns the raw status and body. Non-2xx statuses
/// are responses, not failures.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        headers: &[(&str, String)],
    ) -> std::result::Result<HttpResponse, TransportFailure>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        headers: &[(&str, String)],
    ) -> std::result::Result<HttpResponse, TransportFailure> {
        let mut req = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(*k, v.as_str());
        }
        let mut resp = req.send(body).map_err(|e| TransportFailure {
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportFailure {
                message: format!("reading body: {e}"),
            })?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore capping in-flight requests.
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max,
            in_flight: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.cv.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.cv.notify_one();
    }
}

/// JSON-over-HTTP client for one endpoint; implements every service role.
pub struct HttpClient {
    config: EndpointConfig,
    transport: Box<dyn Transport>,
    sleeper: Box<dyn Sleeper>,
    backoff: Backoff,
    limiter: Limiter,
    next_id: AtomicU64,
    id_prefix: String,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl HttpClient {
    pub fn new(config: EndpointConfig) -> ClientResult<Self> {
        let timeout = Duration::from_secs_f64(config.timeout_secs.max(1e-3));
        Self::with_transport(
            config,
            Box::new(UreqTransport::new(timeout)),
            Box::new(ThreadSleeper),
        )
    }

    pub fn with_transport(
        config: EndpointConfig,
        transport: Box<dyn Transport>,
        sleeper: Box<dyn Sleeper>,
    ) -> ClientResult<Self> {
        config.validate().map_err(ClientError::Precondition)?;
        let backoff = Backoff::new(
            Duration::from_millis(config.backoff_base_ms),
            config.backoff_factor,
            Duration::from_millis(config.backoff_max_ms),
            config.jitter_seed,
        );
        Ok(Self {
            limiter: Limiter::new(config.max_concurrency),
            transport,
            sleeper,
            backoff,
            next_id: AtomicU64::new(1),
            id_prefix: format!("{:08x}", rand::random::<u32>()),
            config,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn next_request_id(&self) -> String {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        format!("{}-{n}", self.id_prefix)
    }

    fn url(&self, route: &str) -> String {
        format!("{}{route}", self.config.base_url.trim_end_matches('/'))
    }

    fn protocol_err(&self, message: String) -> ClientError {
        ClientError::Protocol {
            endpoint: self.config.base_url.clone(),
            message,
        }
    }

    fn attempt<Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &str,
        headers: &[(&str, String)],
    ) -> ClientResult<Attempt<Resp>> {
        let _permit = self.limiter.acquire();
        match self.transport.post_json(url, body, headers) {
            Err(f) => Ok(Attempt::Retry(f.message)),
            Ok(r) if (200..300).contains(&r.status) => serde_json::from_str(&r.body)
                .map(Attempt::Done)
                .map_err(|e| self.protocol_err(format!("malformed response from {url}: {e}"))),
            Ok(r) if r.status >= 500 || r.status == 429 => {
                Ok(Attempt::Retry(format!("HTTP {}", r.status)))
            }
            Ok(r) => Err(ClientError::Rejected {
                endpoint: self.config.base_url.clone(),
                status: r.status,
                body: r.body,
            }),
        }
    }

    /// Sends one logical request, retrying transient failures with the same
    /// request id.
    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: &str,
        make: impl FnOnce(String) -> Req,
    ) -> ClientResult<Resp> {
        let request_id = self.next_request_id();
        let mut headers = vec![(REQUEST_ID_HEADER, request_id.clone())];
        if let Some(token) = &self.config.auth_token {
            headers.push(("Authorization", format!("Bearer {token}")));
        }
        let body = serde_json::to_string(&make(request_id))
            .map_err(|e| ClientError::Precondition(format!("serializing request: {e}")))?;
        let url = self.url(route);

        let mut attempt = 0;
        loop {
            match self.attempt(&url, &body, &headers)? {
                Attempt::Done(resp) => return Ok(resp),
                Attempt::Retry(reason) if attempt < self.config.max_retries => {
                    tracing::debug!(%url, attempt, %reason, "retrying");
                    self.sleeper.sleep(self.backoff.delay(attempt));
                    attempt += 1;
                }
                Attempt::Retry(reason) => {
                    return Err(ClientError::Transport {
                        endpoint: self.config.base_url.clone(),
                        message: format!("{url} failed after {} attempt(s): {reason}", attempt + 1),
                    })
                }
            }
        }
    }
}

impl Translator for HttpClient {
    fn endpoint(&self) -> String {
        self.config.base_url.clone()
    }

    fn send_translate(&self, text: &str, direction: &Direction) -> ClientResult<String> {
        let resp: TranslateResponse =
            self.call(ROUTE_TRANSLATE, |request_id| TranslateRequest {
                request_id,
                text: text.to_string(),
                src_lang: direction.src_lang.clone(),
                tgt_lang: direction.tgt_lang.clone(),
            })?;
        Ok(resp.translation)
    }
}

impl QualityScorer for HttpClient {
    fn endpoint(&self) -> String {
        self.config.base_url.clone()
    }

    fn send_score(&self, req: &QualityScoreRequest) -> ClientResult<f64> {
        let resp: ScoreResponse = self.call(ROUTE_SCORE, |request_id| ScoreRequest {
            request_id,
            source: req.source.clone(),
            hypothesis: req.hypothesis.clone(),
            reference: req.reference.clone(),
            metric_name: req.metric_name.clone(),
        })?;
        Ok(resp.score)
    }
}

impl LogProbScorer for HttpClient {
    fn endpoint(&self) -> String {
        self.config.base_url.clone()
    }

    fn send_logprob(&self, prompt: &str, completion: &str, role: ModelRole) -> ClientResult<f64> {
        let resp: LogProbResponse = self.call(ROUTE_LOGPROB, |request_id| LogProbRequest {
            request_id,
            prompt: prompt.to_string(),
            completion: completion.to_string(),
            model_role: role,
        })?;
        Ok(resp.logprob)
    }
}

impl Trainer for HttpClient {
    fn endpoint(&self) -> String {
        self.config.base_url.clone()
    }

    fn send_train(&self, dataset_path: &str, hyperparams: &Hyperparams) -> ClientResult<String> {
        let resp: TrainResponse = self.call(ROUTE_TRAIN, |request_id| TrainRequest {
            request_id,
            dataset_path: dataset_path.to_string(),
            hyperparams: hyperparams.clone(),
        })?;
        Ok(resp.job_id)
    }

    fn poll(&self, job_id: &str) -> ClientResult<JobStatus> {
        if job_id.is_empty() || job_id.contains('/') {
            return Err(ClientError::Precondition(format!(
                "invalid job id {job_id:?}"
            )));
        }
        self.call(&format!("{ROUTE_TRAIN}/{job_id}"), |request_id| {
            PollRequest { request_id }
        })
    }
}
