use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("session {0} is closed")]
    Closed(String),

    #[error("session {0} is still live")]
    Live(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error(transparent)]
    Core(#[from] critstates::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) | ServiceError::Core(critstates::Error::InvalidInput(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Core(critstates::Error::UnknownEnv(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Closed(_) | ServiceError::Live(_) | ServiceError::Conflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Error body: `{"error": message}`.
impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
