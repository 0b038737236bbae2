use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    /// Rejected input; `field` names the offending parameter when known.
    #[error("{message}")]
    BadRequest { field: Option<String>, message: String },

    #[error("{0}")]
    NotFound(String),

    #[error(transparent)]
    Inventory(#[from] canopy_inventory::Error),

    #[error(transparent)]
    Core(#[from] canopy_core::Error),

    #[error("{0}")]
    Internal(String),
}

impl AppError {
    pub fn invalid(message: impl Into<String>) -> Self {
        AppError::BadRequest {
            field: None,
            message: message.into(),
        }
    }

    pub fn field(field: &str, message: impl Into<String>) -> Self {
        AppError::BadRequest {
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        use canopy_inventory::Error as Inv;
        match self {
            AppError::BadRequest { .. } => StatusCode::BAD_REQUEST,
            AppError::NotFound(_) | AppError::Inventory(Inv::UnknownSnapshot(_)) => StatusCode::NOT_FOUND,
            AppError::Inventory(e) if !e.is_io() => StatusCode::BAD_REQUEST,
            AppError::Core(e) if !e.is_io() => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let field = match &self {
            AppError::BadRequest { field, .. } => field.clone(),
            AppError::Inventory(canopy_inventory::Error::UnknownSnapshot(_)) => Some("snapshot".into()),
            _ => None,
        };
        (self.status(), Json(json!({ "error": self.to_string(), "field": field }))).into_response()
    }
}
