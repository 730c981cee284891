use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use sieve_api::{ApiError, ErrorCode};
use sieve_core::classifier::ClassifyError;
use sieve_core::gateway::GatewayError;
use sieve_core::optimizer::OptimizeError;
use sieve_core::store::StoreError;

/// Error type of every service operation; renders as the API envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct AppError(pub ApiError);

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        AppError(ApiError::new(code, message))
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::PreconditionFailed, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn code(&self) -> ErrorCode {
        self.0.code
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::NotFound(_) => ErrorCode::NotFound,
            StoreError::Conflict(_) => ErrorCode::Conflict,
            StoreError::Invalid(_) => ErrorCode::Validation,
            StoreError::Sqlite(_) | StoreError::Encoding(_) => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

impl From<GatewayError> for AppError {
    fn from(e: GatewayError) -> Self {
        Self::new(ErrorCode::Upstream, e.to_string())
    }
}

impl From<ClassifyError> for AppError {
    fn from(e: ClassifyError) -> Self {
        let code = match &e {
            ClassifyError::Empty => ErrorCode::Validation,
            ClassifyError::Cache(_) => ErrorCode::Internal,
            _ => ErrorCode::Upstream,
        };
        Self::new(code, e.to_string())
    }
}

impl From<OptimizeError> for AppError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Invalid(m) => Self::validation(m),
            OptimizeError::Cancelled(m) => Self::conflict(m),
            OptimizeError::Classify(c) => c.into(),
            OptimizeError::Gateway(g) => g.into(),
        }
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}
