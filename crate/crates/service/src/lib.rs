//! HTTP API over mounted portraits.
//!
//! Portraits are immutable once mounted and shared read-only by all handlers.
//! A registry slot starts out `Loading` and flips to `Ready` after the file is
//! read and a canary query passes; `/healthz` reports 503 until every slot is
//! ready.
//!
//! Endpoints:
//! - `POST /v1/check` with `{"document": ..., "portrait": ..., "include_flags": ...}`
//! - `GET /v1/portraits`
//! - `GET /healthz`

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::{to_bytes, Body};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use dataportrait::ingest::insert_document;
use dataportrait::query::{check_document, classify_membership, DEFAULT_THRESHOLD};
use dataportrait::report::{CheckResponse, PortraitInfo};
use dataportrait::textnorm::{normalize, sliding_ngrams};
use dataportrait::{BloomFilter, FilterParams, SketchError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::CorsLayer;

pub const DEFAULT_MAX_DOC_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CheckRequest {
    pub document: String,
    #[serde(default)]
    pub portrait: Option<String>,
    #[serde(default)]
    pub include_flags: bool,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("portrait {name:?} ({path}): {source}")]
    Sketch {
        name: String,
        path: String,
        #[source]
        source: SketchError,
    },
    #[error("portrait {0:?} failed its self-check")]
    SelfCheck(String),
    #[error("duplicate portrait name {0:?}")]
    DuplicateName(String),
}

pub struct Mounted {
    pub name: String,
    pub filter: BloomFilter,
    pub info: PortraitInfo,
}

enum Slot {
    Loading,
    Ready(Arc<Mounted>),
}

/// Named portraits, in mount order.
pub struct Registry {
    names: Vec<String>,
    slots: RwLock<HashMap<String, Slot>>,
    max_doc_bytes: usize,
}

impl Registry {
    /// A registry whose portraits are all still loading.
    pub fn new(names: Vec<String>, max_doc_bytes: usize) -> Result<Self, LoadError> {
        let mut slots = HashMap::new();
        for n in &names {
            if slots.insert(n.clone(), Slot::Loading).is_some() {
                return Err(LoadError::DuplicateName(n.clone()));
            }
        }
        Ok(Registry { names, slots: RwLock::new(slots), max_doc_bytes })
    }

    /// A registry with every portrait already mounted.
    pub fn with_portraits(portraits: Vec<(String, BloomFilter)>, max_doc_bytes: usize) -> Result<Self, LoadError> {
        let reg = Registry::new(portraits.iter().map(|(n, _)| n.clone()).collect(), max_doc_bytes)?;
        for (name, filter) in portraits {
            reg.mount(&name, filter)?;
        }
        Ok(reg)
    }

    pub fn max_doc_bytes(&self) -> usize {
        self.max_doc_bytes
    }

    /// Runs the canary self-check and publishes the portrait.
    pub fn mount(&self, name: &str, filter: BloomFilter) -> Result<(), LoadError> {
        if !self_check(&filter) {
            return Err(LoadError::SelfCheck(name.to_string()));
        }
        let info = PortraitInfo::describe(name, &filter);
        let mounted = Arc::new(Mounted { name: name.to_string(), filter, info });
        self.slots.write().unwrap().insert(name.to_string(), Slot::Ready(mounted));
        Ok(())
    }

    /// Reads `path` and mounts it under `name`. Blocking.
    pub fn load(&self, name: &str, path: &PathBuf) -> Result<(), LoadError> {
        let filter = BloomFilter::load(path).map_err(|source| LoadError::Sketch {
            name: name.to_string(),
            path: path.display().to_string(),
            source,
        })?;
        self.mount(name, filter)
    }

    pub fn all_ready(&self) -> bool {
        let slots = self.slots.read().unwrap();
        slots.values().all(|s| matches!(s, Slot::Ready(_)))
    }

    pub fn infos(&self) -> Vec<PortraitInfo> {
        let slots = self.slots.read().unwrap();
        self.names
            .iter()
            .filter_map(|n| match slots.get(n) {
                Some(Slot::Ready(m)) => Some(m.info.clone()),
                _ => None,
            })
            .collect()
    }

    fn resolve(&self, name: Option<&str>) -> Result<Arc<Mounted>, ApiError> {
        let slots = self.slots.read().unwrap();
        let name = match name {
            Some(n) => n,
            None => match self.names.as_slice() {
                [only] => only.as_str(),
                [] => return Err(ApiError::NotFound("no portraits are mounted".into())),
                _ => {
                    return Err(ApiError::BadRequest(format!(
                        "several portraits are mounted, choose one of {:?}",
                        self.names
                    )))
                }
            },
        };
        match slots.get(name) {
            Some(Slot::Ready(m)) => Ok(m.clone()),
            Some(Slot::Loading) => Err(ApiError::Unavailable(format!("portrait {name:?} is still loading"))),
            None => Err(ApiError::NotFound(format!("unknown portrait {name:?}"))),
        }
    }
}

/// Builds the canary document for a geometry: long enough to chain several tiles.
fn canary_document(width: usize) -> String {
    let alphabet: Vec<char> = "portrait canary 0123456789 ABCDEFGHIJKLMNOPQRSTUVWXYZ".chars().collect();
    (0..width * 24).map(|i| alphabet[(i * 7 + i / alphabet.len()) % alphabet.len()]).collect()
}

/// Query-path self-check.
///
/// A scratch filter with the same hashing geometry receives the canary and must
/// classify it as a member; against the mounted portrait the report's flags must
/// agree with direct lookups. The mounted portrait is never written.
pub fn self_check(filter: &BloomFilter) -> bool {
    let p = filter.params();
    let scratch_params = match FilterParams::new(1 << 16, p.k_hashes, p.ngram_width, p.stride, p.seed) {
        Ok(params) => params,
        Err(_) => return false,
    };
    let mut scratch = match BloomFilter::new(scratch_params) {
        Ok(f) => f,
        Err(_) => return false,
    };
    let canary = canary_document(p.ngram_width);
    insert_document(&mut scratch, &canary);
    let scratch_report = check_document(&scratch, &canary);
    if p.stride == p.ngram_width && !classify_membership(&scratch_report, DEFAULT_THRESHOLD) {
        return false;
    }
    if scratch_report.longest_count() == 0 {
        return false;
    }

    let report = check_document(filter, &canary);
    let nt = normalize(&canary);
    report.flags.len() == sliding_ngrams(&nt, p.ngram_width).count()
        && sliding_ngrams(&nt, p.ngram_width)
            .zip(&report.flags)
            .all(|(g, &flag)| filter.contains(g.text.as_bytes()) == flag)
}

#[derive(Debug)]
enum ApiError {
    BadRequest(String),
    NotFound(String),
    Unavailable(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match &self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
        };
        json_response(status, serde_json::to_string(&ErrorBody { error: msg }).unwrap())
    }
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// Runs one check exactly as the CLI does.
pub fn run_check(mounted: &Mounted, document: &str, include_flags: bool) -> CheckResponse {
    let started = Instant::now();
    let report = check_document(&mounted.filter, document);
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    CheckResponse::from_report(&mounted.name, &report, include_flags, elapsed_ms)
}

async fn check(State(reg): State<Arc<Registry>>, body: Body) -> Result<Response, ApiError> {
    // JSON escaping can expand a byte to six
    let limit = reg.max_doc_bytes.saturating_mul(6).saturating_add(64 << 10);
    let bytes = to_bytes(body, limit)
        .await
        .map_err(|e| ApiError::BadRequest(format!("could not read request body: {e}")))?;
    let req: CheckRequest =
        serde_json::from_slice(&bytes).map_err(|e| ApiError::BadRequest(format!("malformed request: {e}")))?;
    if req.document.len() > reg.max_doc_bytes {
        return Err(ApiError::BadRequest(format!(
            "document is {} bytes, the limit is {}",
            req.document.len(),
            reg.max_doc_bytes
        )));
    }
    let mounted = reg.resolve(req.portrait.as_deref())?;
    let resp = tokio::task::spawn_blocking(move || run_check(&mounted, &req.document, req.include_flags))
        .await
        .expect("check task panicked");
    Ok(json_response(StatusCode::OK, resp.to_json()))
}

async fn portraits(State(reg): State<Arc<Registry>>) -> Response {
    json_response(StatusCode::OK, serde_json::to_string(&reg.infos()).unwrap())
}

async fn healthz(State(reg): State<Arc<Registry>>) -> Response {
    if reg.all_ready() {
        json_response(StatusCode::OK, r#"{"status":"ok"}"#.to_string())
    } else {
        json_response(StatusCode::SERVICE_UNAVAILABLE, r#"{"status":"loading"}"#.to_string())
    }
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/v1/check", post(check))
        .route("/v1/portraits", get(portraits))
        .route("/healthz", get(healthz))
        .layer(CorsLayer::permissive())
        .with_state(registry)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve<F>(listener: tokio::net::TcpListener, registry: Arc<Registry>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    tracing::info!(addr = ?listener.local_addr().ok(), "serving portraits");
    axum::serve(listener, router(registry)).with_graceful_shutdown(shutdown).await
}
