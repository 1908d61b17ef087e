#![allow(dead_code)]

use std::sync::Arc;

use cropwise::service::{serve_on, AppState, ServiceConfig};
use cropwise_core::data::fixture_dataset;
use cropwise_core::models::{train_model, Hyperparameters, ModelArtifact, ModelKind};

/// The papaya reading used throughout the examples.
pub const PAPAYA: [f64; 7] = [44.0, 60.0, 55.0, 34.28046, 90.555618, 6.825371, 98.540474];
pub const PAPAYA_TEXT: &str = "44,60,55,34.28046,90.555618,6.825371,98.540474";

/// Artifact of `kind` trained on the bundled fixture, with the fixture as background.
pub fn fixture_artifact(kind: ModelKind) -> Vec<u8> {
    let data = fixture_dataset();
    let model = train_model(kind, &Hyperparameters::best(kind), &data, 42).unwrap();
    ModelArtifact::new(&model, data.samples).to_bytes()
}

/// Starts the service on an ephemeral port and returns its base URL.
pub async fn spawn_service(artifact: &[u8], config: ServiceConfig) -> String {
    let state = Arc::new(AppState::from_artifact_bytes(artifact, None, &config).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        serve_on(listener, state, &config).await.unwrap();
    });
    format!("http://{addr}")
}

pub fn test_config() -> ServiceConfig {
    let mut config = ServiceConfig::new("unused.json");
    config.max_concurrency = 2;
    config
}
