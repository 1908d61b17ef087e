//! Command-line front end: `train`, `evaluate`, `predict`, `explain`, `serve`.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cropwise_core::data::{
    load_dataset_path, stratified_split, stratified_subset, DataError, Dataset, FeatureSchema, Features, Sample,
};
use cropwise_core::evaluation::{evaluate, EvaluationError};
use cropwise_core::explain::{counterfactual_delta_report, CounterfactualConfig, CounterfactualStatus, ExplainError};
use cropwise_core::models::{
    default_grid, grid_search, train_model, Hyperparameters, ModelArtifact, ModelError, ModelKind, TrainedModel,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::request::{feature_by_name, parse_sample, target_by_name, ExplainMethod, DEFAULT_SEED};
use crate::runner::{self, ExplainRequest, DEFAULT_COALITIONS, DEFAULT_REPEATS};
use crate::service::{self, hex_digest, AppState, CounterfactualDefaults, ServiceConfig, ServiceError};

const BAR_HALF_WIDTH: usize = 24;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: DataError },
    #[error(transparent)]
    Split(DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for missing inputs and bad invocations, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingFile(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cropwise", version, about = "Explainable crop recommendation from soil and weather readings")]
pub struct Cli {
    /// Log filter, e.g. `info` or `cropwise=debug`.
    #[arg(long, global = true, env = "CROPWISE_LOG", default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier, report held-out metrics and write an artifact.
    Train(TrainArgs),
    /// Score an artifact on a labeled CSV.
    Evaluate(EvaluateArgs),
    /// Recommend a crop for one reading.
    Predict(PredictArgs),
    /// Explain a prediction or the model as a whole.
    Explain(ExplainArgs),
    /// Run the HTTP JSON service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: ModelError| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub kind: ModelKind,
    /// JSON object overriding the shipped parameters, e.g. `{"max_depth": 12}`.
    #[arg(long, conflicts_with = "grid")]
    pub params: Option<String>,
    /// Grid-search with cross-validation. Without a value the built-in grid
    /// is used; otherwise a JSON file holding an array of parameter objects.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    /// Where to write the model artifact.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training rows embedded in the artifact as the explanation background.
    #[arg(long, default_value_t = 100)]
    pub background_size: usize,
    /// Also write the held-out report as JSON.
    #[arg(long)]
    pub report_json: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Score only the held-out part of the split made at training time.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// A reading given inline or as a row of a CSV file.
#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Seven comma-separated values: N,P,K,temperature,humidity,ph,rainfall.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "row")]
    pub sample: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Zero-based data row of `--data`.
    #[arg(long, requires = "data")]
    pub row: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: SampleArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub method: ExplainMethod,
    #[command(flatten)]
    pub input: SampleArgs,
    /// Crop to explain or to reach; defaults to the predicted crop.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long, default_value_t = DEFAULT_COALITIONS)]
    pub coalitions: usize,
    #[arg(long, default_value_t = 5000)]
    pub perturbations: usize,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    /// Comma-separated features held fixed, or `none`; defaults to temperature,ph.
    #[arg(long)]
    pub immutable: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub population: usize,
    #[arg(long, default_value_t = 300)]
    pub generations: usize,
    /// Labeled CSV replacing the artifact's background rows.
    #[arg(long)]
    pub background: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CROPWISE_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CROPWISE_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[arg(long, default_value_t = 64 * 1024)]
    pub body_limit: usize,
    /// Concurrent explanation jobs; defaults to the number of CPUs.
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    /// Allowed CORS origin (repeatable); `*` allows any.
    #[arg(long = "cors-origin", default_value = "*")]
    pub cors_origins: Vec<String>,
    /// Directory of static files served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub cf_count: usize,
    #[arg(long, default_value_t = 200)]
    pub cf_population: usize,
    #[arg(long, default_value_t = 300)]
    pub cf_generations: usize,
}

pub fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_logging(&cli.log_level);
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Train(args) => train(&args, &mut out),
        Command::Evaluate(args) => evaluate_cmd(&args, &mut out),
        Command::Predict(args) => predict(&args, &mut out),
        Command::Explain(args) => explain(&args, &mut out),
        Command::Serve(args) => serve(args),
    }
}

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingFile(path.to_path_buf()))
    }
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    load_dataset_path(existing(path)?, &FeatureSchema::crop()).map_err(|source| CliError::Data {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(existing(path)?).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: &mut impl Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|source| CliError::Write {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn emit_json(out: &mut impl Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    emit(out, &text)
}

struct LoadedModel {
    artifact: ModelArtifact,
    model: TrainedModel,
    sha256: String,
}

fn load_artifact(path: &Path) -> Result<LoadedModel, CliError> {
    let bytes = read_file(path)?;
    let artifact = ModelArtifact::from_bytes(&bytes)?;
    Ok(LoadedModel {
        model: artifact.clone().into_model(),
        artifact,
        sha256: hex_digest(&bytes),
    })
}

/// Overlays a JSON object on the shipped parameters of `kind`.
pub fn resolve_params(kind: ModelKind, overrides: Option<&str>) -> Result<Hyperparameters, CliError> {
    let base = Hyperparameters::best(kind);
    let Some(text) = overrides else {
        return Ok(base);
    };
    let overrides: Value =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("--params is not valid JSON: {e}")))?;
    let Value::Object(overrides) = overrides else {
        return Err(CliError::Usage("--params must be a JSON object".into()));
    };
    let mut merged = serde_json::to_value(&base).expect("parameters serialize");
    let fields = merged.as_object_mut().expect("parameters are an object");
    for (key, value) in overrides {
        if key == "kind" {
            continue;
        }
        if !fields.contains_key(&key) && !(kind == ModelKind::Svm && key == "gamma") {
            return Err(CliError::Usage(format!("--params: `{key}` is not a {kind} parameter")));
        }
        fields.insert(key, value);
    }
    let params: Hyperparameters =
        serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("--params: {e}")))?;
    params.validate()?;
    Ok(params)
}

fn grid_candidates(kind: ModelKind, source: &str) -> Result<Vec<Hyperparameters>, CliError> {
    if source.is_empty() {
        return Ok(default_grid(kind));
    }
    let bytes = read_file(Path::new(source))?;
    let items: Vec<Value> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("grid file {source} must hold a JSON array: {e}")))?;
    items
        .into_iter()
        .map(|item| resolve_params(kind, Some(&item.to_string())))
        .collect()
}

fn train(args: &TrainArgs, out: &mut impl Write) -> Result<(), CliError> {
    let data = load_data(&args.data)?;
    let (train_set, test_set) = stratified_split(&data, args.test_fraction, args.seed).map_err(CliError::Split)?;
    let mut search = None;
    let params = match &args.grid {
        Some(source) => {
            let grid = grid_candidates(args.kind, source)?;
            let result = grid_search(args.kind, &grid, &train_set, args.folds, args.seed)?;
            let best = result.best.clone();
            search = Some(result);
            best
        }
        None => resolve_params(args.kind, args.params.as_deref())?,
    };
    let mut model = train_model(args.kind, &params, &train_set, args.seed)?;
    model.created_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let report = evaluate(&model, &test_set)?;
    let background = stratified_subset(&train_set, args.background_size, args.seed).map_err(CliError::Split)?;

    if let Some(path) = &args.out {
        write_file(path, &ModelArtifact::new(&model, background.samples).to_bytes())?;
    }
    if let Some(path) = &args.report_json {
        write_file(path, report.to_json().as_bytes())?;
    }
    match args.format {
        Format::Json => emit_json(
            out,
            &json!({
                "kind": args.kind.as_str(),
                "hyperparameters": params,
                "seed": args.seed,
                "n_train": train_set.len(),
                "n_test": test_set.len(),
                "grid": search.as_ref().map(|s| json!({
                    "folds": s.folds,
                    "candidates": s.candidates.len(),
                    "best_cv_accuracy": s.best_accuracy,
                })),
                "report": report,
                "artifact": args.out,
            }),
        ),
        Format::Text => {
            let mut text = format!(
                "model: {} (seed {}, {} train / {} test rows)\n",
                args.kind,
                args.seed,
                train_set.len(),
                test_set.len()
            );
            if let Some(s) = &search {
                text.push_str(&format!(
                    "grid search: {} candidates, {}-fold CV accuracy {:.4}\n",
                    s.candidates.len(),
                    s.folds,
                    s.best_accuracy
                ));
            }
            text.push_str(&format!(
                "parameters: {}\n\n",
                serde_json::to_string(&params).expect("parameters serialize")
            ));
            text.push_str(&report.to_string());
            if let Some(path) = &args.out {
                text.push_str(&format!("\nartifact written to {}\n", path.display()));
            }
            emit(out, &text)
        }
    }
}

fn evaluate_cmd(args: &EvaluateArgs, out: &mut impl Write) -> Result<(), CliError> {
    let loaded = load_artifact(&args.model)?;
    let mut data = load_data(&args.data)?;
    if let Some(fraction) = args.test_fraction {
        data = stratified_split(&data, fraction, loaded.model.seed).map_err(CliError::Split)?.1;
    }
    let report = evaluate(&loaded.model, &data)?;
    match args.format {
        Format::Json => emit(out, &(report.to_json() + "\n")),
        Format::Text => emit(
            out,
            &format!(
                "model: {} ({} rows)\n\n{report}",
                loaded.model.kind(),
                data.len()
            ),
        ),
    }
}

fn read_input(input: &SampleArgs, model: &TrainedModel) -> Result<Features, CliError> {
    let x = match (&input.sample, &input.data, input.row) {
        (Some(text), _, _) => parse_sample(text).map_err(|e| CliError::Usage(format!("--sample: {e}")))?,
        (None, Some(path), Some(row)) => {
            let data = load_data(path)?;
            data.samples
                .get(row)
                .map(|s| s.features)
                .ok_or_else(|| CliError::Usage(format!("--row {row} is past the {} data rows", data.len())))?
        }
        _ => return Err(CliError::Usage("give --sample or --data with --row".into())),
    };
    model.check_input(&x)?;
    Ok(x)
}

fn predict(args: &PredictArgs, out: &mut impl Write) -> Result<(), CliError> {
    let loaded = load_artifact(&args.model)?;
    let x = read_input(&args.input, &loaded.model)?;
    let prediction = runner::predict(&loaded.model, &x, &loaded.sha256)?;
    match args.format {
        Format::Json => emit_json(out, &prediction),
        Format::Text => {
            let mut ranked: Vec<_> = prediction.probabilities.iter().collect();
            ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability));
            let mut text = format!("recommended crop: {}\n", prediction.predicted);
            for p in ranked.iter().take(5) {
                text.push_str(&format!("  {:<12} {:.4}\n", p.class, p.probability));
            }
            emit(out, &text)
        }
    }
}

fn parse_immutable(list: Option<&str>, schema: &FeatureSchema) -> Result<Option<Vec<usize>>, CliError> {
    let Some(list) = list else {
        return Ok(None);
    };
    if list.trim().eq_ignore_ascii_case("none") || list.trim().is_empty() {
        return Ok(Some(Vec::new()));
    }
    list.split(',')
        .map(|name| feature_by_name(name.trim(), schema).map_err(|e| CliError::Usage(format!("--immutable: {e}"))))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn explain(args: &ExplainArgs, out: &mut impl Write) -> Result<(), CliError> {
    let loaded = load_artifact(&args.model)?;
    let model = &loaded.model;
    let global = matches!(args.method, ExplainMethod::Gain | ExplainMethod::Permutation);
    let x = if global && args.input.sample.is_none() && args.input.row.is_none() {
        None
    } else {
        Some(read_input(&args.input, model)?)
    };
    let predicted = match &x {
        Some(x) => Some(model.try_predict(x)?),
        None => None,
    };
    let target = match &args.target {
        Some(name) => Some(target_by_name(name, &model.classes).map_err(CliError::Usage)?),
        None => None,
    };
    let schema = &model.schema;

    if args.method == ExplainMethod::Counterfactual {
        let x = x.expect("counterfactual needs a sample");
        let target = target.ok_or_else(|| CliError::Usage("counterfactual search needs --target".into()))?;
        let mut config = CounterfactualConfig::new(target);
        if let Some(immutable) = parse_immutable(args.immutable.as_deref(), schema)? {
            config.immutable = immutable;
        }
        config.count = args.count;
        config.population = args.population;
        config.generations = args.generations;
        config.seed = args.seed;
        let result = runner::counterfactuals(model, &x, &config)?;
        return match args.format {
            Format::Json => emit_json(out, &result),
            Format::Text => {
                let status = match result.status {
                    CounterfactualStatus::Found => "found",
                    CounterfactualStatus::NotFound => "not found",
                    CounterfactualStatus::AlreadyTarget => "already the target crop",
                };
                let mut text = format!(
                    "query predicted as {}; target {}: {status} (seed {})\n",
                    model.classes[predicted.unwrap_or(0)],
                    model.classes[target],
                    result.seed
                );
                for (i, c) in result.counterfactuals.iter().enumerate() {
                    text.push_str(&format!(
                        "  {}: p({}) = {:.4}, distance {:.4}, {} feature(s) changed\n",
                        i + 1,
                        model.classes[target],
                        c.target_probability,
                        c.distance,
                        c.n_changed
                    ));
                }
                let candidates: Vec<Features> = result.counterfactuals.iter().map(|c| c.candidate.features).collect();
                text.push('\n');
                text.push_str(&counterfactual_delta_report(&x, &candidates).render(schema, BAR_HALF_WIDTH));
                emit(out, &text)
            }
        };
    }

    let background: Vec<Sample> = match (&args.background, args.method, &args.input.data) {
        (Some(path), _, _) => load_data(path)?.samples,
        (None, ExplainMethod::Permutation, Some(path)) => load_data(path)?.samples,
        _ => loaded.artifact.background.clone(),
    };
    if args.method.needs_target() && background.is_empty() && !matches!(args.method, ExplainMethod::Path | ExplainMethod::Lime) {
        return Err(CliError::Usage(
            "the artifact has no background rows; pass --background with a CSV".into(),
        ));
    }
    let request = ExplainRequest {
        method: args.method,
        features: x.unwrap_or([0.0; cropwise_core::data::N_FEATURES]),
        target: target.or(predicted).unwrap_or(0),
        seed: args.seed,
        coalitions: args.coalitions,
        perturbations: args.perturbations,
        repeats: args.repeats,
    };
    let output = runner::explain(model, &background, &request)?;
    match args.format {
        Format::Json => emit_json(out, &output),
        Format::Text => {
            let a = &output.attribution;
            let mut text = format!("{} ({} space", args.method, serde_json::to_string(&a.space).expect("space serializes").trim_matches('"'));
            if let Some(t) = a.target {
                text.push_str(&format!(", target {}", model.classes[t]));
            }
            text.push_str(")\n");
            if let (Some(b), Some(o)) = (a.baseline, a.output) {
                text.push_str(&format!("baseline {b:.6}  output {o:.6}\n"));
            }
            if let Some(note) = &a.metadata.note {
                text.push_str(&format!("note: {note}\n"));
            }
            text.push('\n');
            text.push_str(&a.render_bars(schema, BAR_HALF_WIDTH));
            if let Some(lime) = &output.lime {
                text.push_str("\nrules:\n");
                for r in &lime.rules {
                    text.push_str(&format!("  {:<40} {:+.6}\n", r.condition, r.weight));
                }
                match lime.fidelity {
                    Some(f) => text.push_str(&format!("fidelity (weighted R^2) {f:.4}\n")),
                    None => text.push_str("fidelity undefined: the model output is constant nearby\n"),
                }
            }
            emit(out, &text)
        }
    }
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    existing(&args.model)?;
    let mut config = ServiceConfig::new(&args.model);
    config.addr = args.addr;
    config.background_path = args.background;
    config.body_limit = args.body_limit;
    if let Some(n) = args.max_concurrency {
        config.max_concurrency = n;
    }
    config.cors_origins = args.cors_origins;
    config.static_dir = args.static_dir;
    config.counterfactual = CounterfactualDefaults {
        count: args.cf_count,
        population: args.cf_population,
        generations: args.cf_generations,
    };
    // Load before starting the runtime so a bad artifact fails without binding.
    let state = Arc::new(AppState::load(&config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Write {
            path: PathBuf::from("<runtime>"),
            source,
        })?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(config.addr)
            .await
            .map_err(|source| ServiceError::Io {
                path: PathBuf::from(config.addr.to_string()),
                source,
            })?;
        let bound = listener.local_addr().map_err(|source| ServiceError::Io {
            path: PathBuf::from(config.addr.to_string()),
            source,
        })?;
        tracing::info!(addr = %bound, kind = state.model.kind().as_str(), sha256 = %state.artifact_sha256, "listening");
        eprintln!("listening on http://{bound}");
        service::serve_on(listener, state, &config).await
    })?;
    Ok(())
}
