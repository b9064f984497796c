use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use handmend_core::pipeline::{FieldError, PipelineError};

/// An error response: `{"error": {"class", "message", "fields"?}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub class: String,
    pub message: String,
    pub fields: Vec<FieldError>,
}

impl ApiError {
    pub fn new(status: StatusCode, class: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            class: class.into(),
            message: message.into(),
            fields: Vec::new(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }

    pub fn gone(id: &str) -> Self {
        Self::new(StatusCode::GONE, "SessionExpired", format!("session {id} has expired"))
    }

    pub fn busy(id: &str) -> Self {
        Self::new(StatusCode::LOCKED, "SessionBusy", format!("session {id} is running a step"))
    }

    pub fn invalid_params(fields: Vec<FieldError>) -> Self {
        let message = fields.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        Self {
            fields,
            ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidParams", message)
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::PredecessorNotDone { .. } => Self::new(StatusCode::CONFLICT, "PredecessorNotDone", e.to_string()),
            PipelineError::InvalidParams(fields) => Self::invalid_params(fields),
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "class": self.class, "message": self.message });
        if !self.fields.is_empty() {
            body["fields"] = json!(self.fields);
        }
        (self.status, Json(json!({ "error": body }))).into_response()
    }
}
