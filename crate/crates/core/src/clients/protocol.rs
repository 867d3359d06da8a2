//! Request and response bodies of the service protocol.
//!
//! | Route              | Request              | Response            |
//! |--------------------|----------------------|---------------------|
//! | `POST /translate`  | [`TranslateRequest`] | [`TranslateResponse`] |
//! | `POST /score`      | [`ScoreRequest`]     | [`ScoreResponse`]   |
//! | `POST /logprob`    | [`LogProbRequest`]   | [`LogProbResponse`] |
//! | `POST /train`      | [`TrainRequest`]     | [`TrainResponse`]   |
//! | `POST /train/{id}` | [`PollRequest`]      | [`super::JobStatus`] |
//!
//! All bodies are JSON objects. `request_id` is generated by the client and
//! reused verbatim across retries of the same call. It is also sent as the
//! `X-Request-Id` header.

use serde::{Deserialize, Serialize};

use super::{Hyperparams, ModelRole};

pub const ROUTE_TRANSLATE: &str = "/translate";
pub const ROUTE_SCORE: &str = "/score";
pub const ROUTE_LOGPROB: &str = "/logprob";
pub const ROUTE_TRAIN: &str = "/train";
pub const REQUEST_ID_HEADER: &str = "X-Request-Id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateRequest {
    pub request_id: String,
    pub text: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub translation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub request_id: String,
    pub source: String,
    pub hypothesis: String,
    pub reference: Option<String>,
    pub metric_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogProbRequest {
    pub request_id: String,
    pub prompt: String,
    pub completion: String,
    pub model_role: ModelRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbResponse {
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub request_id: String,
    pub dataset_path: String,
    pub hyperparams: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollRequest {
    pub request_id: String,
}
