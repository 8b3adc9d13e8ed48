//! Wire types, request validation and the error body.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use recipegen::generator::{FinishReason, GeneratedRecipe, SamplingParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const MAX_INGREDIENTS: usize = 50;
pub const MAX_INGREDIENT_CHARS: usize = 100;
pub const MAX_TEMPERATURE: f64 = 10.0;
pub const MAX_TOP_K: usize = 1000;
pub const MAX_NEW_TOKENS: usize = 4096;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 512;
/// Server-chosen seeds stay below 2^53 so JavaScript clients can echo them
/// back without rounding.
pub const MAX_SERVER_SEED: u64 = (1 << 53) - 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub ingredients: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_new_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

const FIELDS: [&str; 6] = ["ingredients", "model", "temperature", "top_k", "max_new_tokens", "seed"];

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, name: &str) -> Result<Option<T>, ApiError> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => T::deserialize(v)
            .map(Some)
            .map_err(|e| ApiError::invalid(name, format!("{name}: {e}"))),
    }
}

impl GenerateRequest {
    /// Parses a body, naming the offending field where there is one.
    pub fn from_json(body: &[u8]) -> Result<Self, ApiError> {
        let value: Value = serde_json::from_slice(body)
            .map_err(|e| ApiError::malformed(format!("body is not valid JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(ApiError::malformed("body must be a JSON object"));
        };
        if let Some(k) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(ApiError::invalid(k, format!("unknown field {k:?}")));
        }
        let ingredients = field(&obj, "ingredients")?
            .ok_or_else(|| ApiError::invalid("ingredients", "ingredients is required"))?;
        Ok(GenerateRequest {
            ingredients,
            model: field(&obj, "model")?,
            temperature: field(&obj, "temperature")?,
            top_k: field(&obj, "top_k")?,
            max_new_tokens: field(&obj, "max_new_tokens")?,
            seed: field(&obj, "seed")?,
        })
    }

    pub fn validate(&self) -> Result<(), ApiError> {
        let n = self.ingredients.len();
        if n == 0 || n > MAX_INGREDIENTS {
            return Err(ApiError::invalid(
                "ingredients",
                format!("expected 1 to {MAX_INGREDIENTS} ingredients, got {n}"),
            ));
        }
        for (i, ing) in self.ingredients.iter().enumerate() {
            let len = ing.trim().chars().count();
            if len == 0 || len > MAX_INGREDIENT_CHARS {
                return Err(ApiError::invalid(
                    format!("ingredients[{i}]"),
                    format!("each ingredient must be 1 to {MAX_INGREDIENT_CHARS} characters, got {len}"),
                ));
            }
        }
        if let Some(t) = self.temperature {
            if !(0.0..=MAX_TEMPERATURE).contains(&t) {
                return Err(ApiError::invalid(
                    "temperature",
                    format!("temperature must be within 0 and {MAX_TEMPERATURE}"),
                ));
            }
        }
        if let Some(k) = self.top_k {
            if k > MAX_TOP_K {
                return Err(ApiError::invalid("top_k", format!("top_k must be at most {MAX_TOP_K}")));
            }
        }
        if let Some(m) = self.max_new_tokens {
            if m == 0 || m > MAX_NEW_TOKENS {
                return Err(ApiError::invalid(
                    "max_new_tokens",
                    format!("max_new_tokens must be within 1 and {MAX_NEW_TOKENS}"),
                ));
            }
        }
        Ok(())
    }

    /// Sampling parameters with defaults filled in and `seed` as the seed.
    pub fn sampling(&self, seed: u64) -> SamplingParams {
        let d = SamplingParams::default();
        SamplingParams {
            temperature: self.temperature.unwrap_or(d.temperature),
            top_k: self.top_k.unwrap_or(d.top_k),
            max_new_tokens: self.max_new_tokens.unwrap_or(DEFAULT_MAX_NEW_TOKENS),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub title: String,
    pub ingredients: Vec<String>,
    pub instructions: Vec<String>,
    pub raw_text: String,
    pub malformed: bool,
    pub finish_reason: FinishReason,
    pub model: String,
    pub elapsed_ms: f64,
    pub seed_used: u64,
    pub tokens_generated: usize,
    pub temperature: f64,
    pub top_k: usize,
    pub max_new_tokens: usize,
}

impl GenerateResponse {
    pub fn new(g: GeneratedRecipe, elapsed_ms: f64) -> Self {
        GenerateResponse {
            title: g.recipe.title,
            ingredients: g.recipe.ingredients.iter().map(|l| l.display_text()).collect(),
            instructions: g.recipe.instructions,
            raw_text: g.raw_text,
            malformed: g.malformed,
            finish_reason: g.finish_reason,
            model: g.model,
            elapsed_ms,
            seed_used: g.params.seed,
            tokens_generated: g.tokens_generated,
            temperature: g.params.temperature,
            top_k: g.params.top_k,
            max_new_tokens: g.params.max_new_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub kind: String,
    pub vocab_size: usize,
    pub context_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models_loaded: usize,
    pub uptime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            field: Some(field.into()),
            ..Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
        }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_body", message)
    }

    pub fn media_type() -> Self {
        Self::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "unsupported_media_type",
            "content-type must be application/json",
        )
    }

    pub fn model_not_found(id: &str) -> Self {
        ApiError {
            field: Some("model".into()),
            ..Self::new(StatusCode::NOT_FOUND, "model_not_found", format!("no model with id {id:?}"))
        }
    }

    pub fn no_models() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", "no models are loaded")
    }

    pub fn no_index() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "index_unavailable",
            "no ingredient index is loaded",
        )
    }

    pub fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
    }

    pub fn method_not_allowed() -> Self {
        Self::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed here")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message)
    }

    pub fn body(&self) -> Value {
        let mut err = json!({ "code": self.code, "message": self.message });
        if let Some(f) = &self.field {
            err["field"] = json!(f);
        }
        json!({ "error": err })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}
