//! HTTP service for the iterated annotation loop.
//!
//! State lives in a data directory: the base `kb.json`, the encounter log,
//! an optional trained checkpoint and the append-only `annotations.jsonl`
//! event log, which is the source of truth for every judgment made through
//! the service. On start the event log is replayed over the base KB.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::code::{Code, RelationKind};
use crate::encounters::{
    candidate_list, Candidate, EncounterStore, FeatureSet, ImportanceIndex, ImportanceOptions,
    IngestOptions, Vocabulary, DEFAULT_SPECIALTY_VOCAB_SIZE,
};
use crate::error::{Error, Result};
use crate::eval::agreement;
use crate::kb::{
    append_audit_event, read_audit_log, split_random, AnnotationEvent, KnowledgeBase, Label,
    Problem, DEFAULT_FRACTIONS,
};
use crate::model::{
    initialize, model_targets, train, Checkpoint, InitConfig, ModelScorer, TrainConfig,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const ROUND1_TOP_N: usize = 50;
pub const ROUND2_TOP_N: usize = 20;

/// Instructions shown to annotators next to every candidate.
pub const GUIDELINE: &str = "Mark 1 if a clinician managing this problem would want this item \
surfaced in the problem's section of the record; mark 0 otherwise.";

pub const KB_FILE: &str = "kb.json";
pub const ENCOUNTERS_FILE: &str = "encounters.jsonl";
pub const FEATURES_FILE: &str = "features.json";
pub const MODEL_FILE: &str = "model.json";
pub const EVENT_LOG_FILE: &str = "annotations.jsonl";
pub const SNAPSHOT_FILE: &str = "kb.snapshot.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Write a KB snapshot after this many new events (0 disables).
    pub snapshot_every: usize,
    pub train: TrainConfig,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            snapshot_every: 25,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum JobStatus {
    Idle,
    Running { generation: u64 },
    Done { generation: u64 },
    Failed { generation: u64, error: String },
}

/// Round-1 candidates: encounter-log importance over the vocabulary.
pub fn round1_candidates(
    index: &ImportanceIndex,
    vocab: &Vocabulary,
    problem: &Problem,
    kind: RelationKind,
    top_n: usize,
) -> Vec<Candidate> {
    candidate_list(
        index,
        problem,
        kind,
        vocab.codes(kind),
        top_n,
        &Default::default(),
    )
}

/// Round-2 candidates: model scores over the model's targets, skipping
/// pairs already in the KB.
pub fn round2_candidates(
    scorer: &ModelScorer<'_>,
    kb: &KnowledgeBase,
    problem: &Problem,
    kind: RelationKind,
    top_n: usize,
) -> Vec<Candidate> {
    candidate_list(
        scorer,
        problem,
        kind,
        scorer.params.targets_of(kind),
        top_n,
        &kb.annotated_keys(),
    )
}

struct Model {
    checkpoint: Checkpoint,
    generation: u64,
}

pub struct AppState {
    config: ServiceConfig,
    base_kb: KnowledgeBase,
    kb: RwLock<Arc<KnowledgeBase>>,
    /// Held for the whole validate-append-publish sequence of a write.
    writer: Mutex<Vec<AnnotationEvent>>,
    store: EncounterStore,
    vocab: Vocabulary,
    importance: ImportanceIndex,
    features: FeatureSet,
    model: RwLock<Option<Arc<Model>>>,
    job: Mutex<JobStatus>,
}

fn read_optional<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

impl AppState {
    /// Load artifacts from the data directory and replay the event log.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>> {
        let dir = &config.data_dir;
        let base_kb = KnowledgeBase::load(dir.join(KB_FILE))?;
        let store = EncounterStore::ingest(dir.join(ENCOUNTERS_FILE), IngestOptions::default())?;
        let vocab = store.build_vocabulary(1);
        let importance = ImportanceIndex::new(&store, ImportanceOptions::default());
        let features = match read_optional(&dir.join(FEATURES_FILE), |p| FeatureSet::load(p))? {
            Some(f) => f,
            None => {
                let problems: Vec<&Problem> = base_kb.problems().collect();
                FeatureSet::build(&store, &problems, DEFAULT_SPECIALTY_VOCAB_SIZE)
            }
        };
        let model =
            read_optional(&dir.join(MODEL_FILE), |p| Checkpoint::load(p))?.map(|checkpoint| {
                Arc::new(Model {
                    checkpoint,
                    generation: 0,
                })
            });
        let events = read_audit_log(dir.join(EVENT_LOG_FILE))?;
        let kb = base_kb.replay(&events, None)?;
        Ok(Arc::new(AppState {
            config,
            base_kb,
            kb: RwLock::new(Arc::new(kb)),
            writer: Mutex::new(events),
            store,
            vocab,
            importance,
            features,
            model: RwLock::new(model),
            job: Mutex::new(JobStatus::Idle),
        }))
    }

    pub fn kb(&self) -> Arc<KnowledgeBase> {
        self.kb.read().expect("kb lock").clone()
    }

    fn model(&self) -> Option<Arc<Model>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn job_status(&self) -> JobStatus {
        self.job.lock().expect("job lock").clone()
    }

    /// Validate, append to the log, then publish. Writers are serialized so
    /// log order equals application order.
    pub fn record(&self, event: AnnotationEvent) -> Result<Arc<KnowledgeBase>> {
        let mut events = self.writer.lock().expect("writer lock");
        let next = Arc::new(self.kb().add_annotation(&event, None)?);
        append_audit_event(self.config.data_dir.join(EVENT_LOG_FILE), &event)?;
        events.push(event);
        *self.kb.write().expect("kb lock") = next.clone();
        if self.config.snapshot_every > 0 && events.len().is_multiple_of(self.config.snapshot_every) {
            let path = self.config.data_dir.join(SNAPSHOT_FILE);
            if let Err(e) = write_atomic(&path, &next.to_canonical_json()) {
                log::warn!("snapshot failed: {e}");
            }
        }
        Ok(next)
    }

    pub fn events(&self) -> Vec<AnnotationEvent> {
        self.writer.lock().expect("writer lock").clone()
    }

    /// Replay the on-disk log over the base KB, as a restart would.
    pub fn replayed_kb(&self) -> Result<KnowledgeBase> {
        let events = read_audit_log(self.config.data_dir.join(EVENT_LOG_FILE))?;
        self.base_kb.replay(&events, None)
    }

    /// Train a fresh model on the current KB and swap it in.
    fn retrain(&self, generation: u64) -> Result<()> {
        let kb = self.kb();
        let cfg = &self.config.train;
        let split = split_random(&kb, DEFAULT_FRACTIONS, cfg.seed)?;
        let targets = model_targets(&kb, &self.vocab);
        let init = InitConfig {
            seed: cfg.seed,
            ..InitConfig::default()
        };
        let (params, _) = initialize(
            &kb,
            &targets,
            None,
            None,
            &self.store.occurrence_counts(),
            self.features.specialty_dim(),
            &init,
        )?;
        let (params, history) = train(&kb, &split, params, Some(&self.features), cfg)?;
        let checkpoint = Checkpoint::new(params, cfg.clone(), history, Some(split));
        write_atomic(
            &self.config.data_dir.join(MODEL_FILE),
            &checkpoint.to_json(),
        )?;
        *self.model.write().expect("model lock") = Some(Arc::new(Model {
            checkpoint,
            generation,
        }));
        Ok(())
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.0,
            Json(json!({"schema_version": SCHEMA_VERSION, "error": self.1})),
        )
            .into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownProblem(_) => StatusCode::NOT_FOUND,
            Error::EmptyIntersection => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io { .. } | Error::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(e.status(), e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

type ApiResult = std::result::Result<Json<Value>, ApiError>;

fn ok(mut body: Value) -> ApiResult {
    body["schema_version"] = json!(SCHEMA_VERSION);
    Ok(Json(body))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/problems", get(list_problems))
        .route("/problems/{id}/candidates", get(candidates))
        .route("/annotations", post(post_annotation).get(list_annotations))
        .route("/agreement", get(get_agreement))
        .route("/retrain", post(post_retrain))
        .route("/status", get(status))
        .route("/kb", get(get_kb))
        .with_state(state)
}

async fn list_problems(State(state): State<Arc<AppState>>) -> ApiResult {
    let kb = state.kb();
    let problems: Vec<&Problem> = kb.problems().collect();
    ok(json!({"guideline": GUIDELINE, "problems": problems}))
}

#[derive(Deserialize)]
struct CandidateQuery {
    kind: Option<RelationKind>,
    round: Option<u32>,
    top_n: Option<usize>,
}

#[derive(Serialize)]
struct QueueItem {
    code: Code,
    label: String,
    score: f64,
}

async fn candidates(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    q: Result<Query<CandidateQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = q?;
    let kb = state.kb();
    let problem = kb
        .problem(&id)
        .ok_or_else(|| Error::UnknownProblem(id.clone()))?;
    let round = q.round.unwrap_or(1);
    let kinds: Vec<RelationKind> = q.kind.map_or(RelationKind::ALL.to_vec(), |k| vec![k]);
    let model = state.model();
    let mut out: BTreeMap<RelationKind, Vec<QueueItem>> = BTreeMap::new();
    for kind in kinds {
        let list = match round {
            1 => round1_candidates(
                &state.importance,
                &state.vocab,
                problem,
                kind,
                q.top_n.unwrap_or(ROUND1_TOP_N),
            ),
            2 => {
                let Some(m) = &model else {
                    return Err(ApiError(
                        StatusCode::CONFLICT,
                        "no trained model is loaded".into(),
                    ));
                };
                let features = m.checkpoint.config.use_features.then_some(&state.features);
                let scorer = ModelScorer {
                    params: &m.checkpoint.params,
                    features,
                };
                round2_candidates(&scorer, &kb, problem, kind, q.top_n.unwrap_or(ROUND2_TOP_N))
            }
            r => {
                return Err(ApiError(
                    StatusCode::BAD_REQUEST,
                    format!("unsupported round {r}"),
                ))
            }
        };
        out.insert(
            kind,
            list.into_iter()
                .map(|c| QueueItem {
                    label: c.code.token(),
                    code: c.code,
                    score: c.score,
                })
                .collect(),
        );
    }
    ok(json!({"problem": problem, "round": round, "guideline": GUIDELINE, "candidates": out}))
}

#[derive(Deserialize)]
struct AnnotationBody {
    #[serde(default)]
    annotator: Option<String>,
    problem: String,
    relation: RelationKind,
    target: Code,
    label: Label,
    #[serde(default)]
    round: Option<u32>,
    #[serde(default)]
    timestamp: Option<String>,
}

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

async fn post_annotation(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<AnnotationBody>, JsonRejection>,
) -> std::result::Result<(StatusCode, Json<Value>), ApiError> {
    let Json(body) = body?;
    let annotator = body
        .annotator
        .or_else(|| {
            headers
                .get(ANNOTATOR_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
        })
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "annotator id is required".into()))?;
    let event = AnnotationEvent {
        annotator,
        problem: body.problem,
        relation: body.relation,
        target: body.target,
        label: body.label,
        round: body.round.unwrap_or(1),
        timestamp: body
            .timestamp
            .unwrap_or_else(|| chrono::Utc::now().to_rfc3339()),
    };
    let st = state.clone();
    let ev = event.clone();
    let kb = tokio::task::spawn_blocking(move || st.record(ev))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let body = ok(json!({"event": event, "triplets": kb.triplets().len()}))?;
    Ok((StatusCode::CREATED, body))
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

async fn list_annotations(
    State(state): State<Arc<AppState>>,
    q: Result<Query<AnnotatorQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = q?;
    let events: Vec<AnnotationEvent> = state
        .events()
        .into_iter()
        .filter(|e| q.annotator.as_ref().is_none_or(|a| &e.annotator == a))
        .collect();
    ok(json!({"events": events}))
}

#[derive(Deserialize)]
struct AgreementQuery {
    a: String,
    b: String,
}

async fn get_agreement(
    State(state): State<Arc<AppState>>,
    q: Result<Query<AgreementQuery>, QueryRejection>,
) -> ApiResult {
    let Query(q) = q?;
    let events = state.events();
    let by = |who: &str| {
        events
            .iter()
            .filter(|e| e.annotator == who)
            .cloned()
            .collect::<Vec<_>>()
    };
    let report = agreement(&by(&q.a), &by(&q.b))?;
    ok(json!({"a": q.a, "b": q.b, "agreement": report}))
}

async fn post_retrain(
    State(state): State<Arc<AppState>>,
) -> std::result::Result<(StatusCode, Json<Value>), ApiError> {
    let generation = {
        let mut job = state.job.lock().expect("job lock");
        if let JobStatus::Running { .. } = *job {
            return Err(ApiError(
                StatusCode::CONFLICT,
                "a training run is already in progress".into(),
            ));
        }
        let generation = match &*job {
            JobStatus::Idle => 1,
            JobStatus::Done { generation }
            | JobStatus::Failed { generation, .. }
            | JobStatus::Running { generation } => generation + 1,
        };
        *job = JobStatus::Running { generation };
        generation
    };
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let result = st.retrain(generation);
        let mut job = st.job.lock().expect("job lock");
        *job = match result {
            Ok(()) => JobStatus::Done { generation },
            Err(e) => {
                log::warn!("retraining failed: {e}");
                JobStatus::Failed {
                    generation,
                    error: e.to_string(),
                }
            }
        };
    });
    let body = ok(json!({"job": JobStatus::Running { generation }}))?;
    Ok((StatusCode::ACCEPTED, body))
}

async fn status(State(state): State<Arc<AppState>>) -> ApiResult {
    let kb = state.kb();
    let model = state.model().map(|m| {
        json!({
            "generation": m.generation,
            "best_epoch": m.checkpoint.history.best_epoch,
            "use_features": m.checkpoint.config.use_features,
        })
    });
    ok(json!({
        "problems": kb.problem_ids().len(),
        "triplets": kb.triplets().len(),
        "events": state.events().len(),
        "model": model,
        "job": state.job_status(),
        "guideline": GUIDELINE,
    }))
}

async fn get_kb(State(state): State<Arc<AppState>>) -> ApiResult {
    let kb: Value = serde_json::from_str(&state.kb().to_canonical_json()).map_err(Error::from)?;
    ok(json!({"kb": kb}))
}

/// Bind and serve until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<()> {
    let state = tokio::task::spawn_blocking(move || AppState::open(config))
        .await
        .map_err(|e| Error::Config(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}
