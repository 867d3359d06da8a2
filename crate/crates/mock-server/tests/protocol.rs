use std::sync::Arc;

use btdpo_core::clients::mock::{Faults, MockTranslatorSpec, ScoreRule};
use btdpo_core::clients::{
    ClientError, Direction, EndpointConfig, HttpClient, HttpStudentConnector, JobStatus,
    LogProbScorer, ModelRole, QualityScoreRequest, QualityScorer, StudentConnector, Trainer,
    Translator,
};
use btdpo_mock_server::{RunningServer, ServerSpec};

fn table(pairs: &[(&str, &str)]) -> MockTranslatorSpec {
    MockTranslatorSpec {
        table: pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
        ..Default::default()
    }
}

fn endpoint(url: &str) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(url);
    cfg.backoff_base_ms = 1;
    cfg.jitter_seed = Some(7);
    cfg
}

fn de() -> Direction {
    Direction::new("en", "de")
}

#[test]
fn retries_transient_failures_with_the_same_request_id() {
    let mut expert = table(&[("A cat.", "Eine Katze.")]);
    expert.faults = Faults {
        fail_first: 2,
        ..Default::default()
    };
    let server = RunningServer::start(ServerSpec {
        expert,
        ..Default::default()
    })
    .unwrap();
    let client = HttpClient::new(endpoint(&server.base_url)).unwrap();
    assert_eq!(client.translate("A cat.", &de()).unwrap(), "Eine Katze.");
    let stats = server.stats();
    assert_eq!(stats.routes["translate"].calls, 3);
    assert_eq!(stats.repeated_request_ids, 2);
}

#[test]
fn gives_up_after_max_retries() {
    let mut expert = table(&[("A cat.", "Eine Katze.")]);
    expert.faults = Faults {
        fail_first: 10,
        ..Default::default()
    };
    let server = RunningServer::start(ServerSpec {
        expert,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = endpoint(&server.base_url);
    cfg.max_retries = 2;
    let err = HttpClient::new(cfg)
        .unwrap()
        .translate("A cat.", &de())
        .unwrap_err();
    match err {
        ClientError::Transport { endpoint, .. } => assert_eq!(endpoint, server.base_url),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.stats().routes["translate"].calls, 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = RunningServer::start(ServerSpec {
        expert: table(&[("A cat.", "Eine Katze.")]),
        ..Default::default()
    })
    .unwrap();
    let client = HttpClient::new(endpoint(&server.base_url)).unwrap();
    let err = client.translate("A dog.", &de()).unwrap_err();
    assert!(matches!(err, ClientError::Rejected { status: 404, .. }));
    assert_eq!(server.stats().routes["translate"].calls, 1);
}

#[test]
fn concurrency_cap_is_respected() {
    let mut expert = MockTranslatorSpec {
        fallback: btdpo_core::clients::mock::Fallback::Echo,
        ..Default::default()
    };
    expert.faults.latency_ms = 40;
    let server = RunningServer::start(ServerSpec {
        expert,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = endpoint(&server.base_url);
    cfg.max_concurrency = 2;
    let client = Arc::new(HttpClient::new(cfg).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let c = client.clone();
            std::thread::spawn(move || c.translate(&format!("text {i}"), &de()).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let s = &server.stats().routes["translate"];
    assert_eq!(s.calls, 8);
    assert_eq!(s.max_in_flight, 2);
}

#[test]
fn timeout_names_the_endpoint() {
    let mut expert = table(&[("A cat.", "Eine Katze.")]);
    expert.faults.latency_ms = 1500;
    let server = RunningServer::start(ServerSpec {
        expert,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = endpoint(&server.base_url);
    cfg.timeout_secs = 0.2;
    cfg.max_retries = 0;
    let err = HttpClient::new(cfg)
        .unwrap()
        .translate("A cat.", &de())
        .unwrap_err();
    match err {
        ClientError::Transport { endpoint, .. } => assert_eq!(endpoint, server.base_url),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bearer_token_is_sent() {
    let server = RunningServer::start(ServerSpec {
        expert: table(&[("A cat.", "Eine Katze.")]),
        token: Some("s3cret".into()),
        ..Default::default()
    })
    .unwrap();
    let anonymous = HttpClient::new(endpoint(&server.base_url)).unwrap();
    assert!(matches!(
        anonymous.translate("A cat.", &de()),
        Err(ClientError::Rejected { status: 401, .. })
    ));
    let mut cfg = endpoint(&server.base_url);
    cfg.auth_token = Some("s3cret".into());
    let client = HttpClient::new(cfg).unwrap();
    assert_eq!(client.translate("A cat.", &de()).unwrap(), "Eine Katze.");
    assert_eq!(server.stats().rejected_auth, 1);
}

#[test]
fn scorer_and_logprob_over_http() {
    let mut spec = ServerSpec::default();
    spec.scorer.rule = ScoreRule::LengthRatio;
    let server = RunningServer::start(spec).unwrap();
    let client = HttpClient::new(endpoint(&server.base_url)).unwrap();
    let req = QualityScoreRequest {
        source: "Eine Katze.".into(),
        hypothesis: "ab".into(),
        reference: Some("abcd".into()),
        metric_name: "comet22".into(),
    };
    assert_eq!(client.score_quality(&req).unwrap(), 0.5);
    assert_eq!(
        client
            .sequence_logprob("p", "a b c", ModelRole::Reference)
            .unwrap(),
        -1.5
    );
}

#[test]
fn out_of_range_score_is_a_protocol_error() {
    let mut spec = ServerSpec::default();
    spec.scorer.rule = ScoreRule::Constant(1.2);
    let server = RunningServer::start(spec).unwrap();
    let client = HttpClient::new(endpoint(&server.base_url)).unwrap();
    let req = QualityScoreRequest {
        source: "s".into(),
        hypothesis: "h".into(),
        reference: None,
        metric_name: "comet_kiwi22".into(),
    };
    assert!(matches!(
        client.score_quality(&req),
        Err(ClientError::Protocol { .. })
    ));
}

#[test]
fn training_lifecycle_and_student_swap() {
    let spec = ServerSpec {
        students: vec![
            table(&[("Eine Katze.", "A feline.")]),
            table(&[("Eine Katze.", "A cat.")]),
        ],
        trainer: btdpo_mock_server::TrainerBehaviour {
            polls_before_done: 1,
            fail_reason: None,
        },
        ..Default::default()
    };
    let server = RunningServer::start(spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("d.jsonl");
    std::fs::write(&dataset, "{}\n").unwrap();

    let student_cfg = endpoint(&server.stage_url(1));
    let student = HttpClient::new(student_cfg.clone()).unwrap();
    let back = de().reversed();
    assert_eq!(
        student.back_translate("Eine Katze.", &back).unwrap(),
        "A feline."
    );

    let trainer = HttpClient::new(endpoint(&server.base_url)).unwrap();
    let job = trainer
        .trigger_training(&dataset, &Default::default())
        .unwrap();
    assert_eq!(trainer.poll(&job).unwrap(), JobStatus::Pending);
    let JobStatus::Done { model_endpoint } = trainer.poll(&job).unwrap() else {
        panic!("job did not finish");
    };
    assert_eq!(model_endpoint, server.stage_url(2));

    let connector = HttpStudentConnector {
        template: student_cfg,
    };
    let improved = connector.connect_student(&model_endpoint).unwrap();
    assert_eq!(
        improved.back_translate("Eine Katze.", &back).unwrap(),
        "A cat."
    );
    assert_eq!(server.stats().train_jobs, 1);
}

#[test]
fn failed_job_reason_is_verbatim() {
    let spec = ServerSpec {
        trainer: btdpo_mock_server::TrainerBehaviour {
            polls_before_done: 0,
            fail_reason: Some("CUDA out of memory".into()),
        },
        ..Default::default()
    };
    let server = RunningServer::start(spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("d.jsonl");
    std::fs::write(&dataset, "{}\n").unwrap();
    let trainer = HttpClient::new(endpoint(&server.base_url)).unwrap();
    let job = trainer
        .trigger_training(&dataset, &Default::default())
        .unwrap();
    assert_eq!(
        trainer.poll(&job).unwrap(),
        JobStatus::Failed {
            reason: "CUDA out of memory".into()
        }
    );
}
