use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use surface_fixtures::io::IoError;
use surface_fixtures::FixtureError;

/// Error body: `{code, message, detail}`.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub detail: serde_json::Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                detail: serde_json::Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<IoError> for ApiError {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::InvalidSpec { location, .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_spec", e.to_string())
                .with_detail(serde_json::json!({ "location": location })),
            IoError::Io(_) | IoError::Open { .. } | IoError::Csv(_) => Self::internal(e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<FixtureError> for ApiError {
    fn from(e: FixtureError) -> Self {
        match &e {
            FixtureError::Solve(inner) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "solver_failure", e.to_string())
                    .with_detail(serde_json::json!({ "diagnostics": format!("{inner:?}") }))
            }
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_spec", e.to_string()),
        }
    }
}
