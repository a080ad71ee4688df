//! HTTP service: search and classification over an immutable model and index
//! snapshot, plus judgment capture for expert review.
//!
//! Several models can be served side by side under opaque tags so that
//! reviewers can judge detections without knowing which model produced them.
//! The first configured model answers requests that name no tag.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use p2c::assessor::{AcceptanceRates, AssessError, Embedder, EmbeddingIndex, JudgmentRecord, Tally, Verdict};
use p2c::corpus::io::read_jsonl;
use p2c::corpus::{CodeSnippet, Facet, Vocabulary};
use p2c::encoder::Model;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{JudgmentStore, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict(_) => ServiceError::Conflict(e.to_string()),
            StoreError::Invalid(_) => ServiceError::BadRequest(e.to_string()),
            StoreError::Corrupt { .. } | StoreError::Io(_) => ServiceError::Internal(e.to_string()),
        }
    }
}

impl From<AssessError> for ServiceError {
    fn from(e: AssessError) -> Self {
        match e {
            AssessError::StaleIndex { .. } | AssessError::VocabMismatch { .. } => ServiceError::Conflict(e.to_string()),
            _ => ServiceError::BadRequest(e.to_string()),
        }
    }
}

/// One model to serve together with the index built from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    /// Opaque tag; defaults to a prefix of the model hash.
    pub tag: Option<String>,
    pub model: PathBuf,
    pub index: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub models: Vec<ModelSpec>,
    pub vocab: PathBuf,
    /// Snippet JSONL the indexes were built from; supplies code bodies.
    pub snippets: PathBuf,
    pub judgments: PathBuf,
    /// Relevance threshold used by `/classify` unless the request sets one.
    pub alpha: f64,
}

pub struct ServedModel {
    pub tag: String,
    pub embedder: Embedder<f64>,
    pub index: EmbeddingIndex<f64>,
}

/// Immutable snapshot of the served models plus the judgment store.
pub struct ServiceState {
    models: Vec<ServedModel>,
    snippets: HashMap<String, String>,
    alpha: f64,
    store: Mutex<JudgmentStore>,
}

impl ServiceState {
    /// Loads every artifact and checks that each index was built by its model.
    /// A mismatch is reported as [`ServiceError::Conflict`].
    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        if config.models.is_empty() {
            return Err(ServiceError::BadRequest("no model configured".into()));
        }
        let vocab_text = std::fs::read_to_string(&config.vocab)
            .map_err(|e| ServiceError::BadRequest(format!("{}: {e}", config.vocab.display())))?;
        let vocab = Vocabulary::from_json(&vocab_text).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let snippets: Vec<CodeSnippet> = read_jsonl(&config.snippets).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let mut models = Vec::new();
        for spec in &config.models {
            let model = Model::<f64>::load(&spec.model)
                .map_err(|e| ServiceError::BadRequest(format!("{}: {e}", spec.model.display())))?;
            let index = EmbeddingIndex::<f64>::load(&spec.index)
                .map_err(|e| ServiceError::BadRequest(format!("{}: {e}", spec.index.display())))?;
            let embedder = Embedder::new(model, vocab.clone())?;
            index.check_model(embedder.model_hash())?;
            let tag = spec.tag.clone().unwrap_or_else(|| embedder.model_hash()[..12].to_string());
            models.push(ServedModel { tag, embedder, index });
        }
        let store = JudgmentStore::open(&config.judgments)?;
        Self::new(models, snippets, config.alpha, store)
    }

    pub fn new(models: Vec<ServedModel>, snippets: Vec<CodeSnippet>, alpha: f64, store: JudgmentStore) -> Result<Self, ServiceError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ServiceError::BadRequest(format!("alpha must be positive, got {alpha}")));
        }
        let mut tags = std::collections::HashSet::new();
        for m in &models {
            if !tags.insert(m.tag.as_str()) {
                return Err(ServiceError::BadRequest(format!("duplicate model tag {}", m.tag)));
            }
            m.index.check_model(m.embedder.model_hash())?;
        }
        let snippets: HashMap<String, String> = snippets.into_iter().map(|s| (s.id, s.code)).collect();
        for m in &models {
            if let Some(missing) = m.index.ids().iter().find(|id| !snippets.contains_key(*id)) {
                return Err(ServiceError::BadRequest(format!("index of {} references unknown snippet {missing}", m.tag)));
            }
        }
        Ok(Self { models, snippets, alpha, store: Mutex::new(store) })
    }

    pub fn models(&self) -> &[ServedModel] {
        &self.models
    }

    fn model(&self, tag: Option<&str>) -> Result<&ServedModel, ServiceError> {
        match tag {
            None => Ok(&self.models[0]),
            Some(t) => self.models.iter().find(|m| m.tag == t).ok_or_else(|| ServiceError::NotFound(format!("unknown model_tag {t}"))),
        }
    }

    fn store(&self) -> std::sync::MutexGuard<'_, JudgmentStore> {
        self.store.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

pub type SharedState = Arc<ServiceState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/search", post(search))
        .route("/classify", post(classify))
        .route("/judgments", post(judgments))
        .route("/metrics/acceptance", get(acceptance))
        .route("/snippets/{id}", get(snippet))
        .with_state(state)
}

/// Parses a JSON body, reporting every decoding problem as 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_tag: String,
    pub model_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_hash: String,
    pub models: Vec<ModelInfo>,
}

async fn health(State(state): State<SharedState>) -> Json<HealthResponse> {
    let models: Vec<ModelInfo> = state
        .models
        .iter()
        .map(|m| ModelInfo { model_tag: m.tag.clone(), model_hash: m.embedder.model_hash().to_string() })
        .collect();
    Json(HealthResponse { status: "ok".into(), model_hash: models[0].model_hash.clone(), models })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub policy_text: String,
    pub facet: Facet,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchHit {
    pub snippet_id: String,
    pub code: String,
    pub distance: f64,
    pub rank: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchResponse {
    pub results: Vec<SearchHit>,
    pub model_hash: String,
    pub model_tag: String,
}

async fn search(State(state): State<SharedState>, body: Bytes) -> Result<Json<SearchResponse>, ServiceError> {
    let req: SearchRequest = parse(&body)?;
    if req.policy_text.trim().is_empty() {
        return Err(ServiceError::BadRequest("policy_text is empty".into()));
    }
    let served = state.model(req.model_tag.as_deref())?;
    let hits = served.index.search(&served.embedder, &req.policy_text, req.facet, req.k)?;
    let results = hits
        .into_iter()
        .map(|h| SearchHit { code: state.snippets[&h.snippet_id].clone(), snippet_id: h.snippet_id, distance: h.distance, rank: h.rank })
        .collect();
    Ok(Json(SearchResponse { results, model_hash: served.embedder.model_hash().to_string(), model_tag: served.tag.clone() }))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub policy_text: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
}

async fn classify(State(state): State<SharedState>, body: Bytes) -> Result<Json<Verdict>, ServiceError> {
    let req: ClassifyRequest = parse(&body)?;
    if req.policy_text.trim().is_empty() || req.code.trim().is_empty() {
        return Err(ServiceError::BadRequest("policy_text and code must be non-empty".into()));
    }
    let served = state.model(req.model_tag.as_deref())?;
    Ok(Json(served.embedder.classify(&req.policy_text, &req.code, req.alpha.unwrap_or(state.alpha))?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgmentResponse {
    pub id: String,
}

async fn judgments(State(state): State<SharedState>, body: Bytes) -> Result<Json<JudgmentResponse>, ServiceError> {
    let record: JudgmentRecord = parse(&body)?;
    if !state.snippets.contains_key(&record.snippet_id) {
        return Err(ServiceError::NotFound(format!("unknown snippet {}", record.snippet_id)));
    }
    let id = record.id.clone();
    let writer = Arc::clone(&state);
    tokio::task::spawn_blocking(move || writer.store().append(record))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(JudgmentResponse { id }))
}

#[derive(Debug, Deserialize)]
pub struct AcceptanceQuery {
    pub model_tag: Option<String>,
}

/// Percentages are `null` for a facet, or overall, with no judgments.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AcceptanceResponse {
    pub model_tag: Option<String>,
    pub compliant: Option<f64>,
    pub noncompliant: Option<f64>,
    pub overall: Option<f64>,
    pub compliant_counts: Tally,
    pub noncompliant_counts: Tally,
}

impl AcceptanceResponse {
    fn new(model_tag: Option<String>, rates: Option<AcceptanceRates>) -> Self {
        match rates {
            Some(r) => Self {
                model_tag,
                compliant: r.compliant,
                noncompliant: r.noncompliant,
                overall: Some(r.overall),
                compliant_counts: r.compliant_counts,
                noncompliant_counts: r.noncompliant_counts,
            },
            None => Self {
                model_tag,
                compliant: None,
                noncompliant: None,
                overall: None,
                compliant_counts: Tally::default(),
                noncompliant_counts: Tally::default(),
            },
        }
    }
}

async fn acceptance(State(state): State<SharedState>, Query(q): Query<AcceptanceQuery>) -> Json<AcceptanceResponse> {
    let tag = q.model_tag.filter(|t| !t.is_empty());
    let rates = state.store().acceptance(tag.as_deref());
    Json(AcceptanceResponse::new(tag, rates))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnippetResponse {
    pub id: String,
    pub code: String,
}

async fn snippet(State(state): State<SharedState>, Path(id): Path<String>) -> Result<Json<SnippetResponse>, ServiceError> {
    let code = state.snippets.get(&id).ok_or_else(|| ServiceError::NotFound(format!("unknown snippet {id}")))?;
    Ok(Json(SnippetResponse { id, code: code.clone() }))
}

/// Binds `0.0.0.0:port` and serves until interrupted.
pub async fn serve(state: ServiceState, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
