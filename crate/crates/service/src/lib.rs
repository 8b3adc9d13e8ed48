//! REST front end for generation.
//!
//! | method | path           | body / query          | response                 |
//! |--------|----------------|-----------------------|--------------------------|
//! | POST   | `/generate`    | [`GenerateRequest`]   | [`GenerateResponse`]     |
//! | GET    | `/models`      |                       | list of [`ModelInfo`]    |
//! | GET    | `/ingredients` | `?q=prefix`           | list of names            |
//! | GET    | `/health`      |                       | [`Health`]               |
//!
//! Every error is `{"error": {"code", "message", "field"?}}`. The JSON Schema
//! for all bodies is `schema/api.json`.

pub mod api;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderMap, HeaderValue, Method};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use recipegen::generator::generate;
use recipegen::nn::Checkpoint;
use recipegen::{Error, Result};
use serde::Deserialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use api::{ApiError, GenerateRequest, GenerateResponse, Health, ModelInfo};

/// Model ids for checkpoint paths: file stems, suffixed `-2`, `-3`, … on
/// collision.
pub fn model_ids(paths: &[PathBuf]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::with_capacity(paths.len());
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let mut id = stem.to_owned();
        let mut n = 1;
        while ids.contains(&id) {
            n += 1;
            id = format!("{stem}-{n}");
        }
        ids.push(id);
    }
    ids
}

pub struct LoadedModel {
    pub id: String,
    pub checkpoint: Arc<Checkpoint>,
}

/// Shared, read-only service state.
pub struct AppState {
    models: Vec<LoadedModel>,
    index: Option<Vec<String>>,
    started: Instant,
}

impl AppState {
    /// Model ids must be unique; the first model is the default.
    pub fn new(models: Vec<LoadedModel>, index: Option<Vec<String>>) -> Result<Self> {
        for (i, m) in models.iter().enumerate() {
            if models[..i].iter().any(|o| o.id == m.id) {
                return Err(Error::Config(format!("duplicate model id {:?}", m.id)));
            }
            m.checkpoint.check_compatible()?;
        }
        Ok(AppState {
            models,
            index,
            started: Instant::now(),
        })
    }

    /// Loads checkpoints (ids from [`model_ids`]) and an optional
    /// ingredient index file.
    pub fn load(ckpts: &[PathBuf], index: Option<&Path>) -> Result<Self> {
        let models = model_ids(ckpts)
            .into_iter()
            .zip(ckpts)
            .map(|(id, path)| {
                Ok(LoadedModel {
                    id,
                    checkpoint: Arc::new(Checkpoint::load(path)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let index = index.map(recipegen::corpus::read_ingredient_index).transpose()?;
        AppState::new(models, index)
    }

    pub fn models(&self) -> &[LoadedModel] {
        &self.models
    }

    fn pick(&self, id: Option<&str>) -> std::result::Result<&LoadedModel, ApiError> {
        match id {
            _ if self.models.is_empty() => Err(ApiError::no_models()),
            None => Ok(&self.models[0]),
            Some(id) => self
                .models
                .iter()
                .find(|m| m.id == id)
                .ok_or_else(|| ApiError::model_not_found(id)),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Origins allowed to make cross-origin requests; `*` allows any.
    pub allow_origins: Vec<String>,
}

type Shared = Arc<AppState>;

fn require_json(headers: &HeaderMap) -> std::result::Result<(), ApiError> {
    let ok = headers
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .is_some_and(|v| v.trim().eq_ignore_ascii_case("application/json"));
    if ok {
        Ok(())
    } else {
        Err(ApiError::media_type())
    }
}

async fn generate_handler(
    State(app): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> std::result::Result<Json<GenerateResponse>, ApiError> {
    require_json(&headers)?;
    let req = GenerateRequest::from_json(&body)?;
    req.validate()?;
    let model = app.pick(req.model.as_deref())?;
    let seed = req
        .seed
        .unwrap_or_else(|| rand::thread_rng().gen_range(0..=api::MAX_SERVER_SEED));
    let params = req.sampling(seed);
    let ckpt = Arc::clone(&model.checkpoint);
    let id = model.id.clone();
    let started = Instant::now();
    let generated = tokio::task::spawn_blocking(move || generate(&ckpt, &id, &req.ingredients, &params))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| match e {
            Error::Validation(m) => ApiError::invalid("ingredients", m),
            other => ApiError::internal(other.to_string()),
        })?;
    let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    Ok(Json(GenerateResponse::new(generated, elapsed_ms)))
}

async fn models_handler(State(app): State<Shared>) -> Json<Vec<ModelInfo>> {
    Json(
        app.models
            .iter()
            .map(|m| ModelInfo {
                id: m.id.clone(),
                kind: m.checkpoint.model.kind().to_string(),
                vocab_size: m.checkpoint.vocab.size(),
                context_len: m.checkpoint.model.config().context_len(),
            })
            .collect(),
    )
}

#[derive(Deserialize)]
struct IngredientQuery {
    q: Option<String>,
}

async fn ingredients_handler(
    State(app): State<Shared>,
    Query(query): Query<IngredientQuery>,
) -> std::result::Result<Json<Vec<String>>, ApiError> {
    let index = app.index.as_ref().ok_or_else(ApiError::no_index)?;
    let prefix = query.q.unwrap_or_default().trim().to_lowercase();
    Ok(Json(index.iter().filter(|n| n.starts_with(&prefix)).cloned().collect()))
}

async fn health_handler(State(app): State<Shared>) -> Json<Health> {
    let n = app.models.len();
    Json(Health {
        status: if n > 0 { "ok" } else { "degraded" }.into(),
        models_loaded: n,
        uptime_s: app.started.elapsed().as_secs_f64(),
    })
}

pub fn router(state: AppState, config: &ServiceConfig) -> Result<Router> {
    let mut router = Router::new()
        .route("/generate", post(generate_handler))
        .route("/models", get(models_handler))
        .route("/ingredients", get(ingredients_handler))
        .route("/health", get(health_handler))
        .fallback(|| async { ApiError::not_found() })
        .method_not_allowed_fallback(|| async { ApiError::method_not_allowed() })
        .with_state(Arc::new(state));
    if !config.allow_origins.is_empty() {
        let origin = if config.allow_origins.iter().any(|o| o == "*") {
            AllowOrigin::any()
        } else {
            let list = config
                .allow_origins
                .iter()
                .map(|o| HeaderValue::from_str(o).map_err(|_| Error::Config(format!("bad origin {o:?}"))))
                .collect::<Result<Vec<_>>>()?;
            AllowOrigin::list(list)
        };
        router = router.layer(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([CONTENT_TYPE]),
        );
    }
    Ok(router)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
