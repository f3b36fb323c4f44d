use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use hsrf_core::rf::RfError;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    /// The request is well formed but collides with the current state.
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Stale or partial labels and stopped sessions are conflicts; bad
    /// query ids and scopes are client errors.
    pub fn from_rf(e: RfError) -> Self {
        match e {
            RfError::Stopped | RfError::LabelMismatch(_) => Self::Conflict(e.to_string()),
            RfError::UnknownPatch(_) | RfError::Scope { .. } | RfError::MissingPrototypes => Self::BadRequest(e.to_string()),
            RfError::KindMismatch { .. } | RfError::Dspace(_) => Self::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rf_errors_map_to_statuses() {
        let status = |e| ApiError::from_rf(e).status();
        assert_eq!(status(RfError::Stopped), StatusCode::CONFLICT);
        assert_eq!(status(RfError::LabelMismatch("x".into())), StatusCode::CONFLICT);
        assert_eq!(status(RfError::UnknownPatch(9)), StatusCode::BAD_REQUEST);
        assert_eq!(status(RfError::Scope { scope: 9, n: 3 }), StatusCode::BAD_REQUEST);
        assert_eq!(ApiError::NotFound("x".into()).status(), StatusCode::NOT_FOUND);
    }
}
