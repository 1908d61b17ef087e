//! JSON-over-HTTP service around one trained model.
//!
//! Endpoints (all JSON):
//!
//! | route                  | purpose                                     |
//! |------------------------|---------------------------------------------|
//! | `POST /v1/predict`     | crop and 22-class probabilities             |
//! | `POST /v1/explain`     | attribution or LIME rules for one method    |
//! | `POST /v1/counterfactual` | validated counterfactual set             |
//! | `GET /v1/model`        | metadata and a global importance snapshot   |
//! | `GET /v1/health`       | liveness                                    |
//!
//! Malformed bodies get `400` with one entry per offending field; an
//! unknown target class gets `422`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cropwise_core::data::{load_dataset_path, Sample, N_FEATURES};
use cropwise_core::explain::{
    gain_importance, permutation_importance, Attribution, CounterfactualConfig, CounterfactualStatus,
    ExplainError,
};
use cropwise_core::models::{ModelArtifact, TrainedModel, FORMAT_VERSION};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use crate::request::{
    features_field, optional_u64, reject_unknown, resolve_target, ExplainMethod, FieldError,
    TargetLookup, DEFAULT_SEED,
};
use crate::runner::{self, ExplainRequest, DEFAULT_COALITIONS, DEFAULT_REPEATS};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot load model artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("cannot load background rows: {0}")]
    Background(String),
    #[error("invalid service configuration: {0}")]
    Config(String),
}

/// Counterfactual search settings used when a request leaves them out.
#[derive(Debug, Clone, Copy)]
pub struct CounterfactualDefaults {
    pub count: usize,
    pub population: usize,
    pub generations: usize,
}

impl Default for CounterfactualDefaults {
    fn default() -> Self {
        Self {
            count: 3,
            population: 200,
            generations: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub model_path: PathBuf,
    /// CSV of background rows; the artifact's embedded rows are used otherwise.
    pub background_path: Option<PathBuf>,
    pub body_limit: usize,
    pub max_concurrency: usize,
    /// Allowed CORS origins; `*` allows any.
    pub cors_origins: Vec<String>,
    pub static_dir: Option<PathBuf>,
    pub counterfactual: CounterfactualDefaults,
}

impl ServiceConfig {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            model_path: model_path.into(),
            background_path: None,
            body_limit: 64 * 1024,
            max_concurrency: std::thread::available_parallelism().map_or(2, |n| n.get()),
            cors_origins: vec!["*".to_string()],
            static_dir: None,
            counterfactual: CounterfactualDefaults::default(),
        }
    }
}

/// Everything a request handler reads; never mutated after startup.
pub struct AppState {
    pub model: TrainedModel,
    pub background: Vec<Sample>,
    pub artifact_sha256: String,
    pub importance: Attribution,
    pub counterfactual: CounterfactualDefaults,
    limiter: Semaphore,
}

impl AppState {
    pub fn from_artifact_bytes(
        bytes: &[u8],
        background: Option<Vec<Sample>>,
        config: &ServiceConfig,
    ) -> Result<Self, ServiceError> {
        let artifact = ModelArtifact::from_bytes(bytes).map_err(|e| ServiceError::Artifact {
            path: config.model_path.clone(),
            message: e.to_string(),
        })?;
        let background = background.unwrap_or_else(|| artifact.background.clone());
        if background.is_empty() {
            return Err(ServiceError::Background(
                "the artifact embeds no background rows and none were given".into(),
            ));
        }
        let model = artifact.into_model();
        let importance = match gain_importance(&model) {
            Ok(a) => a,
            Err(_) => {
                let mut data = cropwise_core::data::Dataset::from_samples(background.clone());
                data.classes = model.classes.clone();
                permutation_importance(&model, &data, DEFAULT_REPEATS, DEFAULT_SEED)
                    .map_err(|e| ServiceError::Background(e.to_string()))?
            }
        };
        if config.max_concurrency == 0 {
            return Err(ServiceError::Config("max concurrency must be at least 1".into()));
        }
        Ok(Self {
            model,
            background,
            artifact_sha256: hex_digest(bytes),
            importance,
            counterfactual: config.counterfactual,
            limiter: Semaphore::new(config.max_concurrency),
        })
    }

    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let bytes = std::fs::read(&config.model_path).map_err(|source| ServiceError::Io {
            path: config.model_path.clone(),
            source,
        })?;
        let background = match &config.background_path {
            Some(path) => {
                let schema = cropwise_core::data::FeatureSchema::crop();
                let data = load_dataset_path(path, &schema).map_err(|e| ServiceError::Background(e.to_string()))?;
                Some(data.samples)
            }
            None => None,
        };
        Self::from_artifact_bytes(&bytes, background, config)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn bad_request(fields: Vec<FieldError>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: "invalid request".into(),
            fields,
        }
    }

    fn unprocessable(message: impl Into<String>, fields: Vec<FieldError>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
            fields,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
            fields: Vec::new(),
        }
    }
}

impl From<ExplainError> for ApiError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Config(_) => Self::bad_request(vec![FieldError::new("request", e.to_string())]),
            ExplainError::Model(_) => Self::bad_request(vec![FieldError::new("features", e.to_string())]),
            _ => Self::unprocessable(e.to_string(), Vec::new()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "fields": self.fields });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn parse_body(bytes: &[u8]) -> Result<Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(bytes) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ApiError::bad_request(vec![FieldError::new("body", "must be a JSON object")])),
        Err(e) => Err(ApiError::bad_request(vec![FieldError::new(
            "body",
            format!("malformed JSON: {e}"),
        )])),
    }
}

fn target_field(
    body: &Map<String, Value>,
    state: &AppState,
    required: bool,
    errors: &mut Vec<FieldError>,
) -> Result<Option<usize>, ApiError> {
    match body.get("target_class") {
        None | Some(Value::Null) => {
            if required {
                errors.push(FieldError::new("target_class", "is required"));
            }
            Ok(None)
        }
        Some(v) => match resolve_target(v, "target_class", &state.model.classes) {
            TargetLookup::Found(k) => Ok(Some(k)),
            TargetLookup::Invalid(e) => {
                errors.push(e);
                Ok(None)
            }
            TargetLookup::Unknown(name) => Err(ApiError::unprocessable(
                format!("unknown target class `{name}`"),
                vec![FieldError::new("target_class", format!("`{name}` is not one of the model's classes"))],
            )),
        },
    }
}

/// Runs CPU-heavy work on the blocking pool, at most `max_concurrency` at a time.
async fn heavy<T: Send + 'static>(
    state: &Arc<AppState>,
    work: impl FnOnce(&AppState) -> T + Send + 'static,
) -> Result<T, ApiError> {
    let _permit = state
        .limiter
        .acquire()
        .await
        .map_err(|_| ApiError::internal("service is shutting down"))?;
    let shared = Arc::clone(state);
    tokio::task::spawn_blocking(move || work(&shared))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body = parse_body(&body)?;
    let mut errors = Vec::new();
    reject_unknown(&body, &["features"], &mut errors);
    let x = features_field(&body, &state.model);
    let x = match x {
        Ok(x) if errors.is_empty() => x,
        Ok(_) => return Err(ApiError::bad_request(errors)),
        Err(mut e) => {
            errors.append(&mut e);
            return Err(ApiError::bad_request(errors));
        }
    };
    let response = runner::predict(&state.model, &x, &state.artifact_sha256)
        .map_err(|e| ApiError::bad_request(vec![FieldError::new("features", e.to_string())]))?;
    Ok(Json(response).into_response())
}

async fn explain(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body = parse_body(&body)?;
    let mut errors = Vec::new();
    reject_unknown(
        &body,
        &["features", "method", "target_class", "seed", "coalitions", "perturbations", "repeats"],
        &mut errors,
    );
    let method = match body.get("method").map(|m| m.as_str().map(str::parse::<ExplainMethod>)) {
        None => {
            errors.push(FieldError::new("method", "is required"));
            None
        }
        Some(None) => {
            errors.push(FieldError::new("method", "must be a string"));
            None
        }
        Some(Some(Err(e))) => {
            errors.push(FieldError::new("method", e));
            None
        }
        Some(Some(Ok(ExplainMethod::Counterfactual))) => {
            errors.push(FieldError::new("method", "use POST /v1/counterfactual"));
            None
        }
        Some(Some(Ok(m))) => Some(m),
    };
    let global = matches!(method, Some(ExplainMethod::Gain | ExplainMethod::Permutation));
    let features = if global && !body.contains_key("features") {
        Some([0.0; N_FEATURES])
    } else {
        match features_field(&body, &state.model) {
            Ok(x) => Some(x),
            Err(mut e) => {
                errors.append(&mut e);
                None
            }
        }
    };
    let seed = optional_u64(&body, "seed", 0..=u64::MAX, &mut errors).unwrap_or(DEFAULT_SEED);
    let coalitions = optional_u64(&body, "coalitions", 16..=100_000, &mut errors).unwrap_or(DEFAULT_COALITIONS as u64);
    let perturbations = optional_u64(&body, "perturbations", 50..=100_000, &mut errors).unwrap_or(5000);
    let repeats = optional_u64(&body, "repeats", 1..=100, &mut errors).unwrap_or(DEFAULT_REPEATS as u64);
    let target = target_field(&body, &state, false, &mut errors)?;
    let (Some(method), Some(features), true) = (method, features, errors.is_empty()) else {
        return Err(ApiError::bad_request(errors));
    };
    let predicted = state.model.try_predict(&features).unwrap_or(0);
    let target = target.unwrap_or(predicted);
    let request = ExplainRequest {
        method,
        features,
        target,
        seed,
        coalitions: coalitions as usize,
        perturbations: perturbations as usize,
        repeats: repeats as usize,
    };
    let output = heavy(&state, move |s| runner::explain(&s.model, &s.background, &request)).await??;
    let mut response = json!({
        "method": method.as_str(),
        "model_kind": state.model.kind().as_str(),
        "seed": seed,
        "feature_names": state.model.schema.names,
        "attribution": output.attribution,
    });
    if method.needs_target() {
        response["target_class"] = json!(state.model.classes[target]);
        response["target_index"] = json!(target);
        response["predicted"] = json!(state.model.classes[predicted]);
    }
    if let Some(lime) = output.lime {
        response["lime"] = serde_json::to_value(lime).map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(Json(response).into_response())
}

async fn counterfactual(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body = parse_body(&body)?;
    let mut errors = Vec::new();
    reject_unknown(
        &body,
        &["features", "target_class", "immutable", "count", "seed", "population", "generations"],
        &mut errors,
    );
    let features = match features_field(&body, &state.model) {
        Ok(x) => Some(x),
        Err(mut e) => {
            errors.append(&mut e);
            None
        }
    };
    let defaults = state.counterfactual;
    let mut config = CounterfactualConfig::new(0);
    config.seed = optional_u64(&body, "seed", 0..=u64::MAX, &mut errors).unwrap_or(DEFAULT_SEED);
    config.count = optional_u64(&body, "count", 1..=10, &mut errors).map_or(defaults.count, |v| v as usize);
    config.population =
        optional_u64(&body, "population", 2..=1000, &mut errors).map_or(defaults.population, |v| v as usize);
    config.generations =
        optional_u64(&body, "generations", 1..=2000, &mut errors).map_or(defaults.generations, |v| v as usize);
    match body.get("immutable") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            config.immutable.clear();
            for (i, item) in items.iter().enumerate() {
                match item.as_str().and_then(|n| state.model.schema.index_of(n)) {
                    Some(j) => config.immutable.push(j),
                    None => errors.push(FieldError::new(
                        format!("immutable[{i}]"),
                        format!("unknown feature (expected one of {})", state.model.schema.names.join(", ")),
                    )),
                }
            }
        }
        Some(_) => errors.push(FieldError::new("immutable", "must be an array of feature names")),
    }
    let target = target_field(&body, &state, true, &mut errors)?;
    let (Some(query), Some(target), true) = (features, target, errors.is_empty()) else {
        return Err(ApiError::bad_request(errors));
    };
    config.target = target;
    let seed = config.seed;
    let result = heavy(&state, move |s| runner::counterfactuals(&s.model, &query, &config)).await??;

    let names = &state.model.schema.names;
    let counterfactuals: Vec<Value> = result
        .counterfactuals
        .iter()
        .map(|c| {
            let changed: Vec<&str> = (0..N_FEATURES)
                .filter(|&j| c.deltas[j] != 0.0)
                .map(|j| names[j].as_str())
                .collect();
            json!({
                "features": c.candidate.features,
                "deltas": c.deltas,
                "changed": changed,
                "predicted": state.model.classes[c.predicted],
                "target_probability": c.target_probability,
                "distance": c.distance,
                "n_changed": c.n_changed,
                "verified": true,
            })
        })
        .collect();
    let status = match result.status {
        CounterfactualStatus::Found => "found",
        CounterfactualStatus::NotFound => "not_found",
        CounterfactualStatus::AlreadyTarget => "already_target",
    };
    Ok(Json(json!({
        "status": status,
        "model_kind": state.model.kind().as_str(),
        "target_class": state.model.classes[target],
        "target_index": target,
        "seed": seed,
        "feature_names": names,
        "query": query,
        "counterfactuals": counterfactuals,
    }))
    .into_response())
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<Value> {
    let m = &state.model;
    Json(json!({
        "kind": m.kind().as_str(),
        "classes": m.classes,
        "feature_names": m.schema.names,
        "feature_units": m.schema.units,
        "hyperparameters": m.hyperparameters,
        "n_train": m.n_train,
        "seed": m.seed,
        "created_at": m.created_at,
        "format_version": FORMAT_VERSION,
        "artifact_sha256": state.artifact_sha256,
        "background_rows": state.background.len(),
        "feature_stats": m.stats,
        "importance": state.importance,
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "model_kind": state.model.kind().as_str() }))
}

pub fn router(state: Arc<AppState>, config: &ServiceConfig) -> Result<Router, ServiceError> {
    let origins = if config.cors_origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let parsed = config
            .cors_origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::Config(format!("bad CORS origin `{o}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(parsed)
    };
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let mut router = Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/explain", post(explain))
        .route("/v1/counterfactual", post(counterfactual))
        .route("/v1/model", get(model_info))
        .route("/v1/health", get(health))
        .with_state(state);
    if let Some(dir) = &config.static_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    Ok(router
        .layer(DefaultBodyLimit::max(config.body_limit))
        .layer(cors)
        .layer(TraceLayer::new_for_http()))
}

/// Serves on an already bound listener until the future is dropped or
/// the process receives Ctrl-C.
pub async fn serve_on(listener: TcpListener, state: Arc<AppState>, config: &ServiceConfig) -> Result<(), ServiceError> {
    let app = router(state, config)?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServiceError::Io {
            path: PathBuf::from("<listener>"),
            source,
        })
}
