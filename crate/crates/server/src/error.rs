//! Uniform `{code, message, details}` error envelope.

use axum::extract::rejection::{BytesRejection, JsonRejection, QueryRejection, StringRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use persona_core::{Error, ErrorClass, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                details: Value::Null,
            },
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.body.details = details;
        self
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn training_in_progress(character_id: &str) -> Self {
        ApiError::new(
            StatusCode::CONFLICT,
            "training_in_progress",
            format!("a training run for `{character_id}` is already in progress"),
        )
    }

    fn rejection(status: StatusCode, text: String) -> Self {
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "payload_too_large"
        } else {
            "invalid_request"
        };
        ApiError::new(status, code, text)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match &e {
            Error::Store(StoreError::EpochNotFound {
                character_id,
                epoch,
                available,
            }) => {
                return ApiError::new(StatusCode::NOT_FOUND, "epoch_not_found", message).with_details(json!({
                    "character_id": character_id,
                    "epoch": epoch,
                    "available": available,
                }))
            }
            Error::Store(StoreError::UnknownCharacter(id)) => {
                return ApiError::new(StatusCode::NOT_FOUND, "unknown_character", message)
                    .with_details(json!({"character_id": id}))
            }
            Error::Store(StoreError::Locked { .. }) => {
                return ApiError::new(StatusCode::CONFLICT, "training_in_progress", message)
            }
            Error::ContextOverflow {
                persona_tokens,
                utterance_tokens,
                reserve_tokens,
                budget_tokens,
            } => {
                return ApiError::new(StatusCode::BAD_REQUEST, "context_overflow", message).with_details(json!({
                    "persona_tokens": persona_tokens,
                    "utterance_tokens": utterance_tokens,
                    "reserve_tokens": reserve_tokens,
                    "budget_tokens": budget_tokens,
                }))
            }
            _ => {}
        }
        let (status, code) = match e.class() {
            ErrorClass::Validation => (StatusCode::BAD_REQUEST, "validation_failed"),
            ErrorClass::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ErrorClass::Conflict => (StatusCode::CONFLICT, "conflict"),
            ErrorClass::Provider => (StatusCode::BAD_GATEWAY, "provider_error"),
            ErrorClass::Internal => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(code, %message, "request failed");
        }
        ApiError::new(status, code, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::rejection(r.status(), r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::rejection(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<StringRejection> for ApiError {
    fn from(r: StringRejection) -> Self {
        ApiError::rejection(r.status(), r.body_text())
    }
}

impl From<BytesRejection> for ApiError {
    fn from(r: BytesRejection) -> Self {
        ApiError::rejection(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
