use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("missing or unknown user token")]
    Unauthenticated,
    #[error("job token rejected")]
    AuthFailed,
    #[error("not a member of project `{0}`")]
    Forbidden(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("a project named `{0}` already exists")]
    DuplicateName(String),
    #[error("{message}")]
    Validation { message: String, findings: Option<Value> },
    #[error("job was already launched")]
    AlreadyLaunched,
    #[error("job is in terminal status `{0}`")]
    JobTerminal(String),
    #[error("job has not been launched")]
    NotLaunched,
    #[error("cannot move job from `{from}` to `{to}`")]
    InvalidTransition { from: String, to: String },
    #[error("launch failed: {0}")]
    LaunchFailed(String),
    #[error("payload of {0} bytes exceeds the 256 KiB cap")]
    PayloadTooLarge(usize),
    #[error("{0}")]
    BadRequest(String),
    #[error("{code}: {message}")]
    Unprocessable { code: String, message: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Unauthenticated => "unauthenticated",
            ApiError::AuthFailed => "auth_failed",
            ApiError::Forbidden(_) => "forbidden",
            ApiError::NotFound(_) => "not_found",
            ApiError::DuplicateName(_) => "duplicate_name",
            ApiError::Validation { .. } => "validation_failed",
            ApiError::AlreadyLaunched => "already_launched",
            ApiError::JobTerminal(_) => "job_terminal",
            ApiError::NotLaunched => "not_launched",
            ApiError::InvalidTransition { .. } => "invalid_transition",
            ApiError::LaunchFailed(_) => "launch_failed",
            ApiError::PayloadTooLarge(_) => "payload_too_large",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Unprocessable { .. } => "unprocessable",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Unauthenticated | ApiError::AuthFailed => StatusCode::UNAUTHORIZED,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::DuplicateName(_)
            | ApiError::AlreadyLaunched
            | ApiError::JobTerminal(_)
            | ApiError::NotLaunched
            | ApiError::InvalidTransition { .. } => StatusCode::CONFLICT,
            ApiError::Validation { .. } | ApiError::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::LaunchFailed(_) => StatusCode::BAD_GATEWAY,
            ApiError::PayloadTooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn validation(message: impl Into<String>) -> ApiError {
        ApiError::Validation {
            message: message.into(),
            findings: None,
        }
    }

    pub fn unprocessable(code: impl Into<String>, err: impl ToString) -> ApiError {
        ApiError::Unprocessable {
            code: code.into(),
            message: err.to_string(),
        }
    }
}

impl From<rusqlite::Error> for ApiError {
    fn from(e: rusqlite::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        match &self {
            ApiError::Validation { findings: Some(f), .. } => body["findings"] = f.clone(),
            ApiError::Unprocessable { code, .. } => body["kind"] = json!(code),
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}
