//! HTTP JSON API over the relevance-feedback engine.
//!
//! One corpus is loaded at a time together with whatever dissimilarity
//! tables were precomputed next to it. Sessions are stored as JSON records
//! in a directory so they survive a restart; each session has its own lock
//! and a feedback post that finds it held is answered with 409.

mod error;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use hsrf_core::cube::{render_rgb, Corpus};
use hsrf_core::dspace::{offline_prototypes, PrototypeSet, SvmParams};
use hsrf_core::rf::{Classifier, Criterion, PrototypePolicy, Relevance, RfSession, SessionConfig};
use hsrf_core::{DissimKind, DissimTable, PatchId};

pub use error::ApiError;
pub use store::{SessionRecord, SessionStore};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Where session records are kept.
    pub session_dir: PathBuf,
    /// Bands shown as red, green and blue; spread over the spectrum when
    /// unset.
    pub thumbnail_bands: Option<[usize; 3]>,
    /// Clusters used for offline prototypes.
    pub n_clusters: usize,
    /// Ranking entries returned with every retrieval.
    pub ranking_head: usize,
}

impl ServerConfig {
    pub fn new(session_dir: impl Into<PathBuf>) -> Self {
        Self { session_dir: session_dir.into(), thumbnail_bands: None, n_clusters: 10, ranking_head: 24 }
    }
}

/// A corpus with its precomputed tables and offline prototypes.
pub struct LoadedCorpus {
    pub path: PathBuf,
    pub corpus: Corpus,
    pub tables: BTreeMap<DissimKind, Arc<DissimTable>>,
    pub offline: BTreeMap<DissimKind, PrototypeSet>,
}

impl LoadedCorpus {
    /// Reads a corpus directory and every `distmat_<kind>.csv` inside it.
    pub fn load(path: &Path, n_clusters: usize) -> Result<Self, ApiError> {
        if !path.is_dir() {
            return Err(ApiError::NotFound(format!("corpus directory {} does not exist", path.display())));
        }
        let corpus = Corpus::load_dir(path).map_err(|e| ApiError::BadRequest(format!("cannot load corpus: {e}")))?;
        let mut tables = BTreeMap::new();
        let mut offline = BTreeMap::new();
        for kind in DissimKind::ALL {
            if !path.join(DissimTable::file_name(kind)).exists() {
                continue;
            }
            let table = DissimTable::load(path, kind).map_err(|e| ApiError::BadRequest(format!("cannot load {kind} table: {e}")))?;
            if table.len() != corpus.len() {
                return Err(ApiError::BadRequest(format!(
                    "{kind} table has {} patches, the corpus {}",
                    table.len(),
                    corpus.len()
                )));
            }
            let protos = offline_prototypes(&table, n_clusters.min(table.len()))
                .map_err(|e| ApiError::BadRequest(format!("offline prototypes for {kind}: {e}")))?;
            offline.insert(kind, protos);
            tables.insert(kind, Arc::new(table));
        }
        Ok(Self { path: path.to_path_buf(), corpus, tables, offline })
    }

    pub fn summary(&self) -> CorpusSummary {
        let (lines, samples) = self.corpus.patch_shape();
        CorpusSummary {
            path: self.path.display().to_string(),
            n: self.corpus.len(),
            bands: self.corpus.bands(),
            patch_lines: lines,
            patch_samples: samples,
            categories: self.corpus.labels.as_ref().map_or(0, |l| l.category_ids().len()),
            kinds: self.tables.keys().copied().collect(),
        }
    }
}

pub struct AppState {
    config: ServerConfig,
    corpus: RwLock<Option<Arc<LoadedCorpus>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionRecord>>>>,
    store: SessionStore,
    next_id: AtomicU64,
}

impl AppState {
    /// Opens the session directory and restores every stored session.
    pub fn new(config: ServerConfig) -> Result<Self, ApiError> {
        let store = SessionStore::open(&config.session_dir)?;
        let records = store.load_all()?;
        let next = records.iter().filter_map(|r| store::sequence(&r.id)).max().map_or(1, |s| s + 1);
        let sessions = records.into_iter().map(|r| (r.id.clone(), Arc::new(Mutex::new(r)))).collect();
        Ok(Self {
            config,
            corpus: RwLock::new(None),
            sessions: RwLock::new(sessions),
            store,
            next_id: AtomicU64::new(next),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    /// Installs `loaded` as the current corpus, replacing any previous one.
    pub fn set_corpus(&self, loaded: LoadedCorpus) {
        *self.corpus.write().expect("corpus lock") = Some(Arc::new(loaded));
    }

    pub fn corpus(&self) -> Result<Arc<LoadedCorpus>, ApiError> {
        self.corpus
            .read()
            .expect("corpus lock")
            .clone()
            .ok_or_else(|| ApiError::Conflict("no corpus loaded".into()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionRecord>>, ApiError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    fn thumbnail_bands(&self, bands: usize) -> [usize; 3] {
        self.config.thumbnail_bands.unwrap_or([bands * 3 / 4, bands / 2, bands / 4])
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/corpus", get(corpus_summary))
        .route("/corpus/load", post(load_corpus))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/feedback", post(feedback))
        .route("/session/{id}/stop", post(stop_session))
        .route("/session/{id}/ranking", get(ranking))
        .route("/patch/{id}/thumbnail", get(thumbnail))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: &str, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub path: String,
    pub n: usize,
    pub bands: usize,
    pub patch_lines: usize,
    pub patch_samples: usize,
    pub categories: usize,
    pub kinds: Vec<DissimKind>,
}

#[derive(Debug, Deserialize)]
pub struct LoadRequest {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub query_id: PatchId,
    pub kind: Option<DissimKind>,
    /// `knn`, `svm` or `random`.
    pub classifier: Option<String>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub prototype_policy: Option<PrototypePolicy>,
    pub criterion: Option<Criterion>,
    /// Defaults to the criterion's default scope.
    pub scope: Option<usize>,
    pub t_max: Option<usize>,
}

impl CreateSession {
    fn to_config(&self) -> Result<SessionConfig, ApiError> {
        let defaults = SessionConfig::default();
        let criterion = self.criterion.unwrap_or(defaults.criterion);
        let classifier = match self.classifier.as_deref().unwrap_or("knn") {
            "knn" => Classifier::Knn { k: self.k.unwrap_or(7) },
            "svm" => Classifier::Svm(SvmParams::default()),
            "random" => Classifier::Random { seed: self.seed.unwrap_or(0) },
            other => return Err(ApiError::BadRequest(format!("unknown classifier `{other}` (expected knn, svm or random)"))),
        };
        if matches!(classifier, Classifier::Knn { k: 0 }) {
            return Err(ApiError::BadRequest("k must be >= 1".into()));
        }
        Ok(SessionConfig {
            kind: self.kind.unwrap_or(defaults.kind),
            classifier,
            policy: self.prototype_policy.unwrap_or(defaults.policy),
            criterion,
            scope: self.scope.unwrap_or(criterion.default_scope()),
            t_max: self.t_max.unwrap_or(defaults.t_max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchLabel {
    pub id: PatchId,
    pub relevance: Relevance,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Feedback {
    pub labels: Vec<PatchLabel>,
    /// Iteration the labels were made for; a mismatch is rejected as stale.
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPatch {
    pub id: PatchId,
    pub thumbnail: String,
}

/// `score` is the dissimilarity to the query at iteration 0 (ascending) and
/// the classifier score afterwards (descending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPatch {
    pub id: PatchId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub query_id: PatchId,
    pub config: SessionConfig,
    pub iteration: usize,
    pub retrieved: Vec<RetrievedPatch>,
    pub ranking_head: Vec<RankedPatch>,
    pub stopped: bool,
    pub relevant: usize,
    pub non_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingView {
    pub session_id: String,
    pub iteration: usize,
    pub ranking: Vec<RankedPatch>,
}

#[derive(Debug, Deserialize)]
pub struct RankingQuery {
    pub limit: Option<usize>,
}

fn ranked(session: &RfSession, limit: usize) -> Vec<RankedPatch> {
    session.ranking().head(limit).map(|(id, score)| RankedPatch { id, score }).collect()
}

fn view(record: &SessionRecord, head: usize) -> SessionView {
    let s = &record.session;
    let (relevant, non_relevant) = s.counts();
    SessionView {
        session_id: record.id.clone(),
        query_id: s.query(),
        config: s.config().clone(),
        iteration: s.iteration(),
        retrieved: s
            .retrieved()
            .iter()
            .map(|&id| RetrievedPatch { id, thumbnail: format!("/patch/{id}/thumbnail") })
            .collect(),
        ranking_head: ranked(s, head),
        stopped: s.is_stopped(),
        relevant,
        non_relevant,
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn corpus_summary(State(state): State<Arc<AppState>>) -> Result<Json<CorpusSummary>, ApiError> {
    Ok(Json(state.corpus()?.summary()))
}

async fn load_corpus(State(state): State<Arc<AppState>>, Json(req): Json<LoadRequest>) -> Result<Json<CorpusSummary>, ApiError> {
    let clusters = state.config.n_clusters;
    let loaded = blocking(move || LoadedCorpus::load(&req.path, clusters)).await?;
    let summary = loaded.summary();
    tracing::info!(path = %summary.path, n = summary.n, "corpus loaded");
    state.set_corpus(loaded);
    Ok(Json(summary))
}

async fn create_session(State(state): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> Result<Json<SessionView>, ApiError> {
    let corpus = state.corpus()?;
    let config = req.to_config()?;
    let table = corpus
        .tables
        .get(&config.kind)
        .cloned()
        .ok_or_else(|| ApiError::Conflict(format!("no {} table was precomputed for this corpus", config.kind)))?;
    let offline = corpus.offline.get(&config.kind).cloned();
    let query = req.query_id;
    let session = blocking(move || RfSession::start(&table, query, config, offline).map_err(ApiError::from_rf)).await?;
    let seq = state.next_id.fetch_add(1, Ordering::SeqCst);
    let record = SessionRecord::new(store::session_id(seq), corpus.path.clone(), session);
    state.store.save(&record)?;
    let out = view(&record, state.config.ranking_head);
    state.sessions.write().expect("session map").insert(record.id.clone(), Arc::new(Mutex::new(record)));
    Ok(Json(out))
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let entry = state.session(&id)?;
    let record = entry.lock().await;
    Ok(Json(view(&record, state.config.ranking_head)))
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<Feedback>,
) -> Result<Json<SessionView>, ApiError> {
    let entry = state.session(&id)?;
    let mut record = entry
        .try_lock_owned()
        .map_err(|_| ApiError::Conflict(format!("session {id} is processing other feedback")))?;
    if let Some(it) = req.iteration {
        if it != record.session.iteration() {
            return Err(ApiError::Conflict(format!(
                "labels are for iteration {it}, the session is at iteration {}",
                record.session.iteration()
            )));
        }
    }
    let corpus = state.corpus()?;
    if corpus.path != record.corpus {
        return Err(ApiError::Conflict(format!("session {id} belongs to corpus {}", record.corpus.display())));
    }
    if let Some(bad) = req.labels.iter().find(|l| corpus.corpus.patch(l.id).is_none()) {
        return Err(ApiError::BadRequest(format!("patch {} is not in the corpus", bad.id)));
    }
    let table = corpus
        .tables
        .get(&record.session.config().kind)
        .cloned()
        .ok_or_else(|| ApiError::Conflict("the session's table is no longer loaded".into()))?;
    let labels: Vec<(PatchId, Relevance)> = req.labels.iter().map(|l| (l.id, l.relevance)).collect();
    let mut next = record.session.clone();
    let next = blocking(move || {
        next.iterate(&table, &labels).map_err(ApiError::from_rf)?;
        Ok(next)
    })
    .await?;
    let mut updated = record.clone();
    updated.session = next;
    state.store.save(&updated)?;
    *record = updated;
    Ok(Json(view(&record, state.config.ranking_head)))
}

async fn stop_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let entry = state.session(&id)?;
    let mut record = entry
        .try_lock_owned()
        .map_err(|_| ApiError::Conflict(format!("session {id} is processing other feedback")))?;
    if !record.session.is_stopped() {
        let mut updated = record.clone();
        updated.session.stop();
        state.store.save(&updated)?;
        *record = updated;
    }
    Ok(Json(view(&record, state.config.ranking_head)))
}

async fn ranking(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RankingQuery>,
) -> Result<Json<RankingView>, ApiError> {
    let entry = state.session(&id)?;
    let record = entry.lock().await;
    let s = &record.session;
    Ok(Json(RankingView {
        session_id: record.id.clone(),
        iteration: s.iteration(),
        ranking: ranked(s, q.limit.unwrap_or(s.ranking().len())),
    }))
}

async fn thumbnail(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<PatchId>) -> Result<impl IntoResponse, ApiError> {
    let corpus = state.corpus()?;
    let bands = state.thumbnail_bands(corpus.corpus.bands());
    let png = blocking(move || {
        let patch = corpus.corpus.patch(id).ok_or_else(|| ApiError::NotFound(format!("unknown patch {id}")))?;
        let thumb = render_rgb(patch, bands).map_err(|e| ApiError::BadRequest(e.to_string()))?;
        thumb.to_png().map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}
