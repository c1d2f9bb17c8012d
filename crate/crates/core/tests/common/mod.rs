#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use bt_classifier::backends::mock::{MockEncoder, MockTeacher};
use bt_classifier::backends::wire::{
    ArtifactRef, EncodeRequest, EncodeResponse, PredictRequest, PredictResponse, TrainBatchRequest, TrainBatchResponse,
};
use bt_classifier::backends::{Encoder, EncoderRequest, TeacherBackend};
use bt_classifier::corpus::write_dataset;
use bt_classifier::harness::{DataConfig, MockSettings, RunConfig};
use bt_classifier::prompt::default_task;
use bt_classifier::synthetic::{generate, SyntheticConfig};

/// Writes a synthetic corpus under `dir` and returns a mock-mode config
/// pointing at it.
pub fn toy_config(dir: &Path, task: &str, per_class: usize, test_per_class: usize) -> RunConfig {
    let spec = default_task(task).unwrap();
    let cfg = SyntheticConfig {
        per_class,
        ..SyntheticConfig::default()
    };
    let train = generate(&spec, &cfg, "train").unwrap();
    let test = generate(
        &spec,
        &SyntheticConfig {
            per_class: test_per_class,
            ..cfg
        },
        "test",
    )
    .unwrap();
    let data = DataConfig {
        train: dir.join("train.jsonl"),
        test: dir.join("test.jsonl"),
        unlabeled: None,
    };
    write_dataset(&data.train, &train).unwrap();
    write_dataset(&data.test, &test).unwrap();
    RunConfig {
        task: task.into(),
        data,
        mock: Some(MockSettings::default()),
        runs_dir: dir.join("runs"),
        ..RunConfig::default()
    }
}

/// Serves `router` on an ephemeral port from a dedicated runtime thread.
pub fn spawn(router: Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

type HttpResult<T> = Result<Json<T>, (StatusCode, String)>;

fn bad_request(e: bt_classifier::Error) -> (StatusCode, String) {
    (StatusCode::BAD_REQUEST, e.to_string())
}

pub fn encoder_router(encoder: Arc<MockEncoder>) -> Router {
    async fn meta(State(enc): State<Arc<MockEncoder>>) -> HttpResult<bt_classifier::backends::EncoderMeta> {
        enc.meta().map(Json).map_err(bad_request)
    }
    async fn encode(State(enc): State<Arc<MockEncoder>>, Json(req): Json<EncodeRequest>) -> HttpResult<EncodeResponse> {
        let request = EncoderRequest::new(req.text, req.position, req.layer_mode).map_err(bad_request)?;
        enc.encode(&request).map(|s| Json(s.into())).map_err(bad_request)
    }
    Router::new()
        .route("/meta", get(meta))
        .route("/encode", post(encode))
        .with_state(encoder)
}

pub type SharedTeacher = Arc<Mutex<MockTeacher>>;

pub fn teacher_router(teacher: SharedTeacher) -> Router {
    async fn train(State(t): State<SharedTeacher>, Json(req): Json<TrainBatchRequest>) -> HttpResult<TrainBatchResponse> {
        let loss = t
            .lock()
            .unwrap()
            .train_batch(&req.texts, &req.gold_words, req.lr, req.apply)
            .map_err(bad_request)?;
        Ok(Json(TrainBatchResponse { loss }))
    }
    async fn predict(State(t): State<SharedTeacher>, Json(req): Json<PredictRequest>) -> HttpResult<PredictResponse> {
        let logits = t
            .lock()
            .unwrap()
            .predict(&req.texts, &req.candidate_words)
            .map_err(bad_request)?;
        Ok(Json(PredictResponse { logits }))
    }
    async fn save(State(t): State<SharedTeacher>) -> HttpResult<ArtifactRef> {
        let artifact_id = t.lock().unwrap().save().map_err(bad_request)?;
        Ok(Json(ArtifactRef { artifact_id }))
    }
    async fn load(State(t): State<SharedTeacher>, Json(req): Json<ArtifactRef>) -> HttpResult<serde_json::Value> {
        t.lock().unwrap().load(&req.artifact_id).map_err(bad_request)?;
        Ok(Json(serde_json::json!({})))
    }
    Router::new()
        .route("/train_batch", post(train))
        .route("/predict", post(predict))
        .route("/save", post(save))
        .route("/load", post(load))
        .with_state(teacher)
}
