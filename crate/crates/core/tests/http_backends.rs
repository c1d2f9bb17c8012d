mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use bt_classifier::backends::http::{HttpEncoder, HttpTeacher, RetryPolicy};
use bt_classifier::backends::mock::{ArtifactStore, MockEncoder, MockEncoderConfig, MockTeacher, MockTeacherConfig};
use bt_classifier::backends::wire::{EncodeResponse, PredictResponse};
use bt_classifier::backends::{Encoder, EncoderMeta, EncoderRequest, FeatureExtractor, LayerMode, Position, TeacherBackend};
use bt_classifier::harness::{Ablation, Backends, Pipeline, TaskData};
use bt_classifier::prompt::default_task;
use bt_classifier::Error;

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff: Duration::from_millis(5),
    }
}

fn meta() -> EncoderMeta {
    EncoderMeta {
        d: 4,
        num_layers: 4,
        model_id: "flaky".into(),
    }
}

/// Encoder that answers `/encode` with `status` for the first `failures` calls.
fn flaky_encoder(failures: usize, status: StatusCode) -> (String, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let state = (calls.clone(), failures, status);
    type S = (Arc<AtomicUsize>, usize, StatusCode);
    async fn encode(State((calls, failures, status)): State<S>) -> Result<Json<EncodeResponse>, StatusCode> {
        if calls.fetch_add(1, Ordering::SeqCst) < failures {
            return Err(status);
        }
        Ok(Json(EncodeResponse {
            d: 4,
            layers: vec![vec![1.0, 2.0, 3.0, 4.0]; 4],
            model_id: "flaky".into(),
        }))
    }
    async fn meta_handler() -> Json<EncoderMeta> {
        Json(meta())
    }
    let router = Router::new()
        .route("/meta", get(meta_handler))
        .route("/encode", post(encode))
        .with_state(state);
    (common::spawn(router), calls)
}

fn mask_request() -> EncoderRequest {
    EncoderRequest::new("great movie . It was [MASK] .", Position::Mask, LayerMode::Last4).unwrap()
}

#[test]
fn http_encoder_matches_in_process_encoder_bit_for_bit() {
    let spec = default_task("sst-2").unwrap();
    let examples = vec![bt_classifier::corpus::LabeledExample::single("a fine film", "positive")];
    let local = MockEncoder::planted(MockEncoderConfig::default(), &spec, &examples).unwrap();
    let served = Arc::new(MockEncoder::planted(MockEncoderConfig::default(), &spec, &examples).unwrap());
    let url = common::spawn(common::encoder_router(served));
    let remote = HttpEncoder::new(&url).unwrap();

    assert_eq!(remote.meta().unwrap(), local.meta().unwrap());
    for (text, position, mode) in [
        ("a fine film . It was [MASK] .", Position::Mask, LayerMode::Last4),
        ("unseen text . It was [MASK] .", Position::Cls, LayerMode::Last1),
    ] {
        let req = EncoderRequest::new(text, position, mode).unwrap();
        assert_eq!(remote.encode(&req).unwrap(), local.encode(&req).unwrap());
    }
}

#[test]
fn server_errors_are_retried_until_success() {
    let (url, calls) = flaky_encoder(2, StatusCode::SERVICE_UNAVAILABLE);
    let enc = HttpEncoder::with_policy(&url, Duration::from_secs(5), fast_retry()).unwrap();
    let states = enc.encode(&mask_request()).unwrap();
    assert_eq!(states.vectors.len(), 4);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_stop_after_the_attempt_budget() {
    let (url, calls) = flaky_encoder(usize::MAX, StatusCode::INTERNAL_SERVER_ERROR);
    let enc = HttpEncoder::with_policy(&url, Duration::from_secs(5), fast_retry()).unwrap();
    let err = enc.encode(&mask_request()).unwrap_err();
    assert!(err.is_retryable(), "{err}");
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, calls) = flaky_encoder(usize::MAX, StatusCode::UNPROCESSABLE_ENTITY);
    let enc = HttpEncoder::with_policy(&url, Duration::from_secs(5), fast_retry()).unwrap();
    assert!(matches!(enc.encode(&mask_request()), Err(Error::Request(_))));
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_is_a_retryable_backend_error() {
    let enc = HttpEncoder::with_policy("http://127.0.0.1:9", Duration::from_secs(2), fast_retry()).unwrap();
    let err = enc.meta().unwrap_err();
    assert!(matches!(err, Error::Backend { retryable: true, .. }), "{err}");
}

#[test]
fn wrong_dimension_from_the_server_is_a_contract_error() {
    async fn meta_handler() -> Json<EncoderMeta> {
        Json(EncoderMeta {
            d: 8,
            num_layers: 4,
            model_id: "liar".into(),
        })
    }
    async fn encode() -> Json<EncodeResponse> {
        Json(EncodeResponse {
            d: 8,
            layers: vec![vec![0.0; 3]; 4],
            model_id: "liar".into(),
        })
    }
    let url = common::spawn(Router::new().route("/meta", get(meta_handler)).route("/encode", post(encode)));
    let enc = HttpEncoder::new(&url).unwrap();
    let extractor = FeatureExtractor::new(&enc, None, 2).unwrap();
    let err = extractor
        .extract_one("x . It was [MASK] .", Position::Mask, LayerMode::Last4)
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn malformed_predict_shape_is_a_contract_error() {
    async fn predict() -> Json<PredictResponse> {
        Json(PredictResponse { logits: vec![vec![0.0]] })
    }
    let url = common::spawn(Router::new().route("/predict", post(predict)));
    let teacher = HttpTeacher::new(&url).unwrap();
    let err = teacher
        .predict(&["a".into(), "b".into()], &["bad".into(), "great".into()])
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn training_calls_are_not_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    async fn train(State(calls): State<Arc<AtomicUsize>>) -> StatusCode {
        calls.fetch_add(1, Ordering::SeqCst);
        StatusCode::SERVICE_UNAVAILABLE
    }
    let url = common::spawn(Router::new().route("/train_batch", post(train)).with_state(calls.clone()));
    let mut teacher = HttpTeacher::with_policy(&url, Duration::from_secs(5), fast_retry()).unwrap();
    assert!(teacher.train_batch(&["a".into()], &["great".into()], 1e-5, true).is_err());
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn http_teacher_round_trips_through_the_protocol() {
    let spec = default_task("sst-2").unwrap();
    let cfg = MockTeacherConfig::for_task(&spec, &MockTeacherConfig::default());
    let served = Arc::new(Mutex::new(MockTeacher::new(cfg.clone(), ArtifactStore::default()).unwrap()));
    let url = common::spawn(common::teacher_router(served.clone()));
    let mut remote = HttpTeacher::new(&url).unwrap();
    let mut local = MockTeacher::new(cfg, ArtifactStore::default()).unwrap();

    let texts: Vec<String> = vec!["a splendid film".into(), "an awful film".into()];
    let gold: Vec<String> = vec!["great".into(), "bad".into()];
    let words = spec.label_words();
    let before = remote.save().unwrap();
    for apply in [false, true] {
        let a = remote.train_batch(&texts, &gold, 1e-5, apply).unwrap();
        let b = local.train_batch(&texts, &gold, 1e-5, apply).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(remote.predict(&texts, &words).unwrap(), local.predict(&texts, &words).unwrap());
    assert_eq!(served.lock().unwrap().update_count(), 1);

    remote.load(&before).unwrap();
    let reset = MockTeacher::new(MockTeacherConfig::for_task(&spec, &MockTeacherConfig::default()), ArtifactStore::default()).unwrap();
    assert_eq!(remote.predict(&texts, &words).unwrap(), reset.predict(&texts, &words).unwrap());
    assert!(matches!(remote.load("no-such-artifact"), Err(Error::Request(_))));
}

#[test]
fn pipeline_over_http_reproduces_the_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::toy_config(dir.path(), "sst-2", 120, 40);
    cfg.seeds = vec![5];
    cfg.pool_cap = Some(150);
    cfg.teacher.max_steps = 100;
    cfg.ablation = Ablation::Full;
    let local = Pipeline::new(cfg.clone()).unwrap();
    let local_result = local.run_single(5).unwrap();

    let spec = default_task("sst-2").unwrap();
    let mock = cfg.mock.clone().unwrap();
    let data = TaskData::load(&cfg, &spec).unwrap();
    let known: Vec<_> = data.train.iter().chain(&data.test).cloned().collect();
    let encoder = Arc::new(MockEncoder::planted(mock.encoder.clone(), &spec, &known).unwrap());
    let teacher_cfg = MockTeacherConfig::for_task(&spec, &mock.teacher);
    let teacher = Arc::new(Mutex::new(MockTeacher::new(teacher_cfg, ArtifactStore::default()).unwrap()));
    let encoder_url = common::spawn(common::encoder_router(encoder));
    let teacher_url = common::spawn(common::teacher_router(teacher));

    let mut remote_cfg = cfg.clone();
    remote_cfg.mock = None;
    remote_cfg.runs_dir = dir.path().join("remote-runs");
    remote_cfg.endpoints.encoder_url = Some(encoder_url);
    remote_cfg.endpoints.teacher_url = Some(teacher_url);
    let backends = Backends::from_config(&remote_cfg, &spec, &data).unwrap();
    let remote = Pipeline::with_parts(remote_cfg, spec, data, backends).unwrap();
    let remote_result = remote.run_single(5).unwrap();

    assert_eq!(remote_result.accuracy, local_result.accuracy);
    assert_eq!(remote_result.augmented, local_result.augmented);
    assert_eq!(remote_result.teacher_dev_accuracy, local_result.teacher_dev_accuracy);
    for artifact in ["split.jsonl", "aug.jsonl", "history.json", "mlp.model"] {
        let read = |p: &Pipeline| std::fs::read(p.run_dir(5).join(artifact)).unwrap();
        assert_eq!(read(&local), read(&remote), "{artifact}");
    }
}
