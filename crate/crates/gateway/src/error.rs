use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use agriswarm_core::coverage::PlanError;
use agriswarm_core::sim::scenario::json_pointer;
use agriswarm_core::sim::SimError;

/// Error returned by the HTTP API and printed by the CLI.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{message}")]
    Schema { pointer: String, message: String },
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("trace replay diverged at line {line}")]
    Diverged { line: usize },
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Machine-readable error body.
#[derive(Debug, Serialize, schemars::JsonSchema)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pointer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Schema { .. } => "schema",
            GatewayError::BadRequest(_) => "bad_request",
            GatewayError::NotFound(_) => "not_found",
            GatewayError::Conflict(_) => "conflict",
            GatewayError::Unprocessable(_) => "unprocessable",
            GatewayError::Diverged { .. } => "diverged",
            GatewayError::Internal(_) => "internal",
            GatewayError::Io(_) => "io",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            GatewayError::Schema { .. } | GatewayError::BadRequest(_) => StatusCode::BAD_REQUEST,
            GatewayError::NotFound(_) => StatusCode::NOT_FOUND,
            GatewayError::Conflict(_) => StatusCode::CONFLICT,
            GatewayError::Unprocessable(_) | GatewayError::Diverged { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            GatewayError::Internal(_) | GatewayError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code(),
            message: self.to_string(),
            pointer: match self {
                GatewayError::Schema { pointer, .. } => Some(pointer.clone()),
                _ => None,
            },
            line: match self {
                GatewayError::Diverged { line } => Some(*line),
                _ => None,
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!(self.body())
    }
}

impl From<SimError> for GatewayError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Schema { pointer, message } => GatewayError::Schema { pointer, message },
            SimError::InvalidScenario(m) => GatewayError::Unprocessable(m),
            SimError::Diverged { line } => GatewayError::Diverged { line },
            SimError::Truncated(m) => GatewayError::BadRequest(format!("trace truncated: {m}")),
            e @ SimError::MalformedTrace { .. } => GatewayError::BadRequest(e.to_string()),
            e @ (SimError::Field(_) | SimError::Plan(_) | SimError::Alloc(_)) => {
                GatewayError::Unprocessable(e.to_string())
            }
            SimError::NotRunning => GatewayError::Conflict("run is not in progress".into()),
            SimError::Io(e) => GatewayError::Io(e),
            e => GatewayError::Internal(e.to_string()),
        }
    }
}

impl From<PlanError> for GatewayError {
    fn from(e: PlanError) -> Self {
        GatewayError::Unprocessable(e.to_string())
    }
}

impl From<serde_path_to_error::Error<serde_json::Error>> for GatewayError {
    fn from(e: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let path = e.path().to_string();
        GatewayError::Schema {
            pointer: json_pointer(&path),
            message: e.inner().to_string(),
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (self.status(), Json(self.body())).into_response()
    }
}

/// Deserializes `value` as `T`, reporting the JSON pointer of the first bad field.
pub fn from_value<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, GatewayError> {
    Ok(serde_path_to_error::deserialize(value)?)
}

/// Parses a request body as JSON, reporting syntax errors as schema errors at the root.
pub fn parse_body(bytes: &[u8]) -> Result<serde_json::Value, GatewayError> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(serde_json::Value::Object(Default::default()));
    }
    serde_json::from_slice(bytes).map_err(|e| GatewayError::Schema {
        pointer: String::new(),
        message: e.to_string(),
    })
}
