//! HTTP front end: `GET /health` and `POST /ask` over a loaded index.

mod cells;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{Any, CorsLayer};
use trag_core::corpus::load_qa;
use trag_core::dense::{
    DenseError, EmbeddingProvider, LocalProvider, RemoteProvider, RemoteProviderConfig, SearchMode,
};
use trag_core::rag::{
    self, Answered, Bm25Retriever, DenseRetriever, Generator, RagConfig, RagError, RemoteGenerator,
    RemoteGeneratorConfig, Retriever, ToyGenerator, DEFAULT_SMOOTHING,
};
use trag_core::store::{IndexDir, ProviderSpec, StoreError};
use trag_core::TableDoc;

pub use cells::{locate_cells, DEFAULT_CELL_THRESHOLD};

pub const DEFAULT_K: usize = 4;
pub const MAX_K: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskAnswer {
    pub text: String,
    pub score: f64,
    pub table_id: String,
    /// `[row, col, weight]`, rows counted from the first data row.
    pub cells: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answers: Vec<AskAnswer>,
    pub tables: Vec<TableDoc>,
}

#[derive(Debug, Error)]
pub enum AskError {
    #[error("{0}")]
    BadRequest(String),
    #[error("indexes are not loaded")]
    NotReady,
    #[error("internal error")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

static ERROR_SEQ: AtomicU64 = AtomicU64::new(0);

fn opaque_id() -> String {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    let seq = ERROR_SEQ.fetch_add(1, Ordering::Relaxed);
    format!(
        "{:016x}",
        trag_core::tokenize::fnv1a64(&(nanos ^ seq.rotate_left(32)).to_le_bytes())
    )
}

impl IntoResponse for AskError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            Self::BadRequest(m) => (StatusCode::BAD_REQUEST, ErrorBody { error: m, id: None }),
            Self::NotReady => (
                StatusCode::SERVICE_UNAVAILABLE,
                ErrorBody {
                    error: "indexes are not loaded".into(),
                    id: None,
                },
            ),
            Self::Internal(detail) => {
                let id = opaque_id();
                tracing::error!(error_id = %id, %detail, "request failed");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    ErrorBody {
                        error: "internal error".into(),
                        id: Some(id),
                    },
                )
            }
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieverKind {
    Bm25,
    Dense,
}

/// Everything needed to answer, loaded once and never mutated.
pub struct Snapshot {
    pub index: IndexDir,
    pub generator: Box<dyn Generator + Send + Sync>,
    pub retriever: RetrieverKind,
    pub rag: RagConfig,
    pub cell_threshold: f64,
}

impl Snapshot {
    fn dense_provider(&self) -> Result<Box<dyn EmbeddingProvider>, AskError> {
        let spec = self.index.meta.dense.as_ref().ok_or(AskError::NotReady)?;
        provider_for(&spec.provider).map_err(|e| AskError::Internal(e.to_string()))
    }

    fn run(&self, question: &str, k: usize) -> Result<Answered, AskError> {
        let mut config = self.rag;
        config.decode.beam_width = k;
        let internal = |e: RagError| AskError::Internal(e.to_string());
        let outcome = match self.retriever {
            RetrieverKind::Bm25 => {
                let index = self.index.bm25.as_ref().ok_or(AskError::NotReady)?;
                let r = Bm25Retriever { index };
                self.answer_with(question, &r, &config)
            }
            RetrieverKind::Dense => {
                let index = self.index.dense.as_ref().ok_or(AskError::NotReady)?;
                let provider = self.dense_provider()?;
                let r = DenseRetriever {
                    index,
                    provider: provider.as_ref(),
                    mode: SearchMode::Ann,
                };
                self.answer_with(question, &r, &config)
            }
        };
        match outcome {
            Ok(a) => Ok(a),
            Err(RagError::NoCandidates) => Ok(Answered {
                candidates: Vec::new(),
                priors: Vec::new(),
                answers: Vec::new(),
            }),
            Err(e) => Err(internal(e)),
        }
    }

    fn answer_with(&self, question: &str, retriever: &dyn Retriever, config: &RagConfig) -> Result<Answered, RagError> {
        rag::answer(
            question,
            &self.index.segments,
            retriever,
            self.generator.as_ref(),
            config,
        )
    }

    /// Answers one validated request.
    pub fn ask(&self, question: &str, k: usize) -> Result<AskResponse, AskError> {
        let answered = self.run(question, k)?;
        Ok(build_response(&answered, &self.index, self.cell_threshold))
    }
}

/// The query encoder matching the one a dense index was built with.
pub fn provider_for(spec: &ProviderSpec) -> Result<Box<dyn EmbeddingProvider>, DenseError> {
    Ok(match spec {
        ProviderSpec::Local { dim } => Box::new(LocalProvider::new(*dim)?),
        ProviderSpec::Remote { base_url, dim } => {
            Box::new(RemoteProvider::new(RemoteProviderConfig::new(base_url.clone(), *dim))?)
        }
    })
}

/// Softmax of the answers' log probabilities. Scores that would underflow
/// are clamped to the smallest positive value so every score stays > 0.
pub fn answer_scores(log_probs: &[f64]) -> Vec<f64> {
    let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / log_probs.len().max(1) as f64; log_probs.len()];
    }
    let total: f64 = log_probs.iter().map(|lp| (lp - max).exp()).sum();
    log_probs
        .iter()
        .map(|lp| ((lp - max).exp() / total).max(f64::MIN_POSITIVE))
        .collect()
}

fn build_response(answered: &Answered, index: &IndexDir, threshold: f64) -> AskResponse {
    let scores = answer_scores(&answered.answers.iter().map(|a| a.log_prob).collect::<Vec<_>>());
    let mut tables: Vec<TableDoc> = Vec::new();
    let mut answers = Vec::with_capacity(scores.len());
    for (a, score) in answered.answers.iter().zip(scores) {
        let Some(table) = index.corpus.get(&a.provenance_table_id) else {
            continue;
        };
        if !tables.iter().any(|t| t.id() == table.id()) {
            tables.push(table.clone());
        }
        answers.push(AskAnswer {
            text: a.text.clone(),
            score,
            table_id: a.provenance_table_id.clone(),
            cells: locate_cells(&a.text, table, threshold),
        });
    }
    // decode order is already by log_prob; the sort only makes the contract explicit
    answers.sort_by(|a, b| b.score.total_cmp(&a.score));
    AskResponse { answers, tables }
}

pub fn validate(req: &AskRequest) -> Result<(String, usize), AskError> {
    let question = req.question.trim();
    if question.is_empty() {
        return Err(AskError::BadRequest("question must not be empty".into()));
    }
    let k = req.k.unwrap_or(DEFAULT_K);
    if k == 0 || k > MAX_K {
        return Err(AskError::BadRequest(format!("k must be in 1..={MAX_K}")));
    }
    Ok((question.to_owned(), k))
}

#[derive(Clone)]
pub struct AppState {
    snapshot: Option<Arc<Snapshot>>,
}

impl AppState {
    pub fn ready(snapshot: Snapshot) -> Self {
        Self {
            snapshot: Some(Arc::new(snapshot)),
        }
    }

    pub fn not_ready() -> Self {
        Self { snapshot: None }
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    indexes_loaded: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        indexes_loaded: state.snapshot.is_some(),
    })
}

async fn ask(
    State(state): State<AppState>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> Result<Json<AskResponse>, AskError> {
    let Json(req) = body.map_err(|e| AskError::BadRequest(e.body_text()))?;
    let (question, k) = validate(&req)?;
    let snapshot = state.snapshot.clone().ok_or(AskError::NotReady)?;
    let resp = tokio::task::spawn_blocking(move || snapshot.ask(&question, k))
        .await
        .map_err(|e| AskError::Internal(e.to_string()))??;
    Ok(Json(resp))
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    let cors = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => cors.allow_origin(origin),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/health", get(health))
        .route("/ask", post(ask))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    /// Memorized QA pairs for the toy generator.
    Toy {
        memory: Option<PathBuf>,
    },
    Remote {
        base_url: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub index_dir: PathBuf,
    pub generator: GeneratorSpec,
    pub retriever: RetrieverKind,
    pub cors_origin: Option<String>,
    pub rag: RagConfig,
    pub cell_threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            index_dir: PathBuf::from("idx"),
            generator: GeneratorSpec::Toy { memory: None },
            retriever: RetrieverKind::Bm25,
            cors_origin: None,
            rag: RagConfig::default(),
            cell_threshold: DEFAULT_CELL_THRESHOLD,
        }
    }
}

impl ServiceConfig {
    /// Reads `TRAG_ADDR`, `TRAG_INDEX_DIR`, `TRAG_GENERATOR` (`toy` or
    /// `remote`), `TRAG_GENERATOR_URL`, `TRAG_TOY_MEMORY`, `TRAG_RETRIEVER`
    /// (`bm25` or `dense`), `TRAG_N_DOCS` and `TRAG_CORS_ORIGIN` through
    /// `lookup`, starting from the defaults.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = Self::default();
        if let Some(a) = lookup("TRAG_ADDR") {
            c.addr = a.parse().map_err(|e| format!("TRAG_ADDR {a:?}: {e}"))?;
        }
        if let Some(d) = lookup("TRAG_INDEX_DIR") {
            c.index_dir = d.into();
        }
        c.generator = match lookup("TRAG_GENERATOR").as_deref() {
            None | Some("toy") => GeneratorSpec::Toy {
                memory: lookup("TRAG_TOY_MEMORY").map(PathBuf::from),
            },
            Some("remote") => GeneratorSpec::Remote {
                base_url: lookup("TRAG_GENERATOR_URL").ok_or("TRAG_GENERATOR=remote needs TRAG_GENERATOR_URL")?,
            },
            Some(other) => return Err(format!("TRAG_GENERATOR {other:?}: expected toy or remote")),
        };
        c.retriever = match lookup("TRAG_RETRIEVER").as_deref() {
            None | Some("bm25") => RetrieverKind::Bm25,
            Some("dense") => RetrieverKind::Dense,
            Some(other) => return Err(format!("TRAG_RETRIEVER {other:?}: expected bm25 or dense")),
        };
        if let Some(n) = lookup("TRAG_N_DOCS") {
            c.rag.n_docs = n.parse().map_err(|e| format!("TRAG_N_DOCS {n:?}: {e}"))?;
        }
        c.cors_origin = lookup("TRAG_CORS_ORIGIN");
        Ok(c)
    }

    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("generator: {0}")]
    Generator(String),
}

pub fn load_generator(spec: &GeneratorSpec) -> Result<Box<dyn Generator + Send + Sync>, LoadError> {
    let err = |e: &dyn std::fmt::Display| LoadError::Generator(e.to_string());
    Ok(match spec {
        GeneratorSpec::Toy { memory: None } => Box::new(ToyGenerator::new(DEFAULT_SMOOTHING)),
        GeneratorSpec::Toy { memory: Some(path) } => {
            let examples = load_qa(path).map_err(|e| err(&e))?;
            Box::new(ToyGenerator::from_examples(&examples, DEFAULT_SMOOTHING).map_err(|e| err(&e))?)
        }
        GeneratorSpec::Remote { base_url } => {
            Box::new(RemoteGenerator::connect(&RemoteGeneratorConfig::new(base_url.clone())).map_err(|e| err(&e))?)
        }
    })
}

pub fn load_snapshot(config: &ServiceConfig) -> Result<Snapshot, LoadError> {
    let index = IndexDir::load(&config.index_dir)?;
    let generator = load_generator(&config.generator)?;
    Ok(Snapshot {
        index,
        generator,
        retriever: config.retriever,
        rag: config.rag,
        cell_threshold: config.cell_threshold,
    })
}

/// Binds and serves until ctrl-c. A snapshot that fails to load is logged
/// and the server answers `/ask` with 503.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let state = match load_snapshot(&config) {
        Ok(s) => AppState::ready(s),
        Err(e) => {
            tracing::error!(error = %e, "serving without indexes");
            AppState::not_ready()
        }
    };
    let app = router(state, config.cors_origin.as_deref());
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
