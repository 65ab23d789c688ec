//! HTTP API over the encoder, decoder, generator and editing sessions.
//!
//! Bodies are the on-disk text formats (motion files, code files, code
//! table) wrapped in a small JSON envelope where metadata is needed. Every
//! route lives under `/v1`.

mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use posecodec::codebook::{default_codebook, Codebook};
use posecodec::decoder::MotionDecoder;
use posecodec::editor::{EditError, EditOptions, EditSession, EditTrace, EditorBackend};
use posecodec::encoder::{encode_motion, format_codes, parse_codes, CodeSequence};
use posecodec::generator::{CodeLayout, GeneratorNet, Keywords, SamplingPolicy};
use posecodec::motion::{format_motion, parse_motion, MotionSequence};
use serde::{Deserialize, Serialize};

pub use store::{SessionLock, SessionStore, StoreError};

/// Downsampling rate used when a request does not name one.
pub const DEFAULT_DOWNSAMPLE: usize = 4;

pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Decoder checkpoints keyed by the id clients use to select them.
    pub decoders: Vec<(String, PathBuf)>,
    pub generator: Option<PathBuf>,
    pub backend: Arc<dyn EditorBackend>,
}

/// Shared, immutable model snapshots plus the session store.
pub struct AppState {
    pub codebook: &'static Codebook,
    pub store: SessionStore,
    pub decoders: BTreeMap<String, Arc<MotionDecoder>>,
    pub generator: Option<Arc<GeneratorNet>>,
    pub backend: Arc<dyn EditorBackend>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("decoder checkpoint {id}: {message}")]
    Decoder { id: String, message: String },
    #[error("generator checkpoint: {0}")]
    Generator(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, StartupError> {
        let cb = default_codebook();
        let store = SessionStore::open(&config.data_dir, cb)?;
        let mut decoders = BTreeMap::new();
        for (id, path) in config.decoders {
            let d = MotionDecoder::load(&path, cb).map_err(|e| StartupError::Decoder { id: id.clone(), message: e.to_string() })?;
            decoders.insert(id, Arc::new(d));
        }
        let generator = match config.generator {
            Some(path) => {
                let g = GeneratorNet::load(&path).map_err(|e| StartupError::Generator(e.to_string()))?;
                if g.layout != CodeLayout::from_codebook(cb) {
                    return Err(StartupError::Generator("checkpoint layout does not match the codebook".into()));
                }
                Some(Arc::new(g))
            }
            None => None,
        };
        Ok(Self { codebook: cb, store, decoders, generator, backend: config.backend })
    }
}

/// JSON error body: `{"error": ..., "stage": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub stage: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        Self { status, message: message.to_string(), stage: None }
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl ToString) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message, stage: self.stage })).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Locked(_) | StoreError::AlreadyExists(_) => StatusCode::CONFLICT,
            StoreError::Corrupt { .. } | StoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e)
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e.stage() {
            Some(stage) => ApiError { status: StatusCode::BAD_GATEWAY, message: e.to_string(), stage: Some(stage.to_string()) },
            None => ApiError::bad_request(e),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/encode", post(encode))
        .route("/v1/decode", post(decode))
        .route("/v1/generate", post(generate))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/edit", post(edit_session))
        .route("/v1/codebook", get(codebook))
        .with_state(state)
}

/// Serve until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Build a runtime, bind `addr` and serve forever.
pub fn run_blocking(config: ServiceConfig, addr: SocketAddr) -> Result<(), StartupError> {
    let state = Arc::new(AppState::new(config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        serve(listener, state).await
    })?;
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct EncodeQuery {
    pub l: Option<usize>,
}

async fn encode(State(st): State<Arc<AppState>>, Query(q): Query<EncodeQuery>, body: String) -> Result<String, ApiError> {
    let motion = parse_motion(&body).map_err(ApiError::bad_request)?;
    let codes = encode_motion(&motion, st.codebook, q.l.unwrap_or(DEFAULT_DOWNSAMPLE)).map_err(ApiError::bad_request)?;
    Ok(format_codes(&codes))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodeRequest {
    /// Code file text.
    pub codes: String,
    pub checkpoint: Option<String>,
}

fn pick_decoder(st: &AppState, id: Option<&str>) -> Result<Arc<MotionDecoder>, ApiError> {
    match id {
        Some(id) => st.decoders.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("unknown decoder checkpoint `{id}`"))),
        None => st.decoders.values().next().cloned().ok_or_else(|| ApiError::not_found("no decoder checkpoint loaded")),
    }
}

fn decode_with(decoder: &MotionDecoder, codes: &CodeSequence, cb: &Codebook) -> Result<MotionSequence, ApiError> {
    decoder.decode(codes, cb).map_err(ApiError::bad_request)
}

async fn decode(State(st): State<Arc<AppState>>, Json(req): Json<DecodeRequest>) -> Result<String, ApiError> {
    let codes = parse_codes(&req.codes, st.codebook).map_err(ApiError::bad_request)?;
    let decoder = pick_decoder(&st, req.checkpoint.as_deref())?;
    let cb = st.codebook;
    blocking(move || decode_with(&decoder, &codes, cb).map(|m| format_motion(&m))).await
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Argmax,
    Sample,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub text: String,
    /// Eleven keywords in slot order.
    pub keywords: Option<Vec<String>>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub temperature: Option<f64>,
    /// Decoder checkpoint for the optional motion; the first loaded one by default.
    pub decoder: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub codes: String,
    pub motion: Option<String>,
}

fn generate_codes(st: &AppState, req: &GenerateRequest) -> Result<CodeSequence, ApiError> {
    let gen = st.generator.as_ref().ok_or_else(|| ApiError::not_found("no generator checkpoint loaded"))?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("empty text"));
    }
    let keywords = req.keywords.clone().map(Keywords::new).transpose().map_err(ApiError::bad_request)?;
    let cond = gen.condition(&req.text, keywords.as_ref());
    let policy = match req.mode {
        Mode::Argmax => SamplingPolicy::argmax(),
        Mode::Sample => SamplingPolicy::sample(req.temperature.unwrap_or(1.0), req.seed),
    };
    gen.generate(&cond, &policy).map_err(ApiError::bad_request)
}

async fn generate(State(st): State<Arc<AppState>>, Json(req): Json<GenerateRequest>) -> Result<Json<GenerateResponse>, ApiError> {
    let decoder = if st.decoders.is_empty() && req.decoder.is_none() { None } else { Some(pick_decoder(&st, req.decoder.as_deref())?) };
    blocking(move || {
        let codes = generate_codes(&st, &req)?;
        let motion = decoder.map(|d| decode_with(&d, &codes, st.codebook)).transpose()?;
        Ok(Json(GenerateResponse { codes: format_codes(&codes), motion: motion.map(|m| format_motion(&m)) }))
    })
    .await
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    /// Motion file text; encoded to start the session.
    pub motion: Option<String>,
    /// Text to generate from when no motion is given.
    pub text: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub codes: String,
}

async fn create_session(State(st): State<Arc<AppState>>, Json(req): Json<CreateSessionRequest>) -> Result<Json<CreateSessionResponse>, ApiError> {
    blocking(move || {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let (codes, motion, description) = match (&req.motion, &req.text) {
            (Some(text), _) => {
                let m = parse_motion(text).map_err(ApiError::bad_request)?;
                let codes = encode_motion(&m, st.codebook, DEFAULT_DOWNSAMPLE).map_err(ApiError::bad_request)?;
                (codes, Some(m), req.description.clone().or(req.text.clone()).unwrap_or_default())
            }
            (None, Some(text)) => {
                let g = GenerateRequest { text: text.clone(), keywords: None, mode: req.mode, seed: req.seed, temperature: None, decoder: None };
                (generate_codes(&st, &g)?, None, req.description.clone().unwrap_or_else(|| text.clone()))
            }
            (None, None) => return Err(ApiError::bad_request("either `motion` or `text` is required")),
        };
        let session = EditSession::new(id.clone(), description, codes, motion);
        st.store.create(&session)?;
        Ok(Json(CreateSessionResponse { session_id: id, codes: format_codes(session.current()) }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditBody {
    pub instruction: String,
    /// Inclusive `[s, e]`; skips the frame-selection prompts.
    pub range: Option<(usize, usize)>,
    #[serde(default)]
    pub strict: bool,
    pub decoder: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub codes: String,
    pub trace: EditTrace,
    pub motion: Option<String>,
}

async fn edit_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<EditBody>,
) -> Result<Json<EditResponse>, ApiError> {
    if body.instruction.trim().is_empty() {
        return Err(ApiError::bad_request("empty instruction"));
    }
    let decoder = if st.decoders.is_empty() && body.decoder.is_none() { None } else { Some(pick_decoder(&st, body.decoder.as_deref())?) };
    let lock = st.store.try_lock(&id)?;
    blocking(move || {
        let _lock = lock;
        let mut session = st.store.load(&id)?;
        if let Some((s, e)) = body.range {
            let len = session.current().len();
            if s > e || e >= len {
                return Err(ApiError::bad_request(format!("range {s}..={e} invalid for {len} steps")));
            }
        }
        let entry = session.apply(&body.instruction, body.range, st.backend.as_ref(), st.codebook, EditOptions { strict: body.strict })?;
        let codes = entry.codes.clone();
        let trace = entry.trace.clone().unwrap_or_default();
        st.store.commit(&session)?;
        let motion = decoder.map(|d| decode_with(&d, &codes, st.codebook)).transpose()?;
        Ok(Json(EditResponse { codes: format_codes(&codes), trace, motion: motion.map(|m| format_motion(&m)) }))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistoryView {
    pub instruction: Option<String>,
    pub range: Option<(usize, usize)>,
    pub codes: String,
    pub trace: Option<EditTrace>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub description: String,
    pub source_motion: Option<String>,
    pub history: Vec<HistoryView>,
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    blocking(move || {
        let s = st.store.load(&id)?;
        Ok(Json(SessionView {
            session_id: s.session_id,
            description: s.description,
            source_motion: s.source_motion.as_ref().map(format_motion),
            history: s
                .history
                .into_iter()
                .map(|h| HistoryView { instruction: h.instruction, range: h.range, codes: format_codes(&h.codes), trace: h.trace })
                .collect(),
        }))
    })
    .await
}

async fn codebook(State(st): State<Arc<AppState>>) -> String {
    st.codebook.dump()
}
