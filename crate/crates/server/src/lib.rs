//! HTTP session service and CLI plumbing for the MI dialogue engine.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod http;
pub mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pipeline stage named in turn errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    StateUpdate,
    Strategy,
    Response,
    Baseline,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::StateUpdate => "state_update",
            Stage::Strategy => "strategy",
            Stage::Response => "response",
            Stage::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` has ended")]
    SessionEnded(String),
    #[error("utterance text must be non-empty")]
    EmptyUtterance,
    #[error("condition `{0}` cannot be used for live sessions")]
    InvalidCondition(String),
    #[error("no strategy pool is loaded; condition `ours` is unavailable")]
    PoolNotLoaded,
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("storage: {0}")]
    Storage(String),
}

impl ServiceError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::Config(_) => "config",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::SessionEnded(_) => "session_ended",
            ServiceError::EmptyUtterance => "empty_utterance",
            ServiceError::InvalidCondition(_) => "invalid_condition",
            ServiceError::PoolNotLoaded => "pool_not_loaded",
            ServiceError::Stage { .. } => "stage_error",
            ServiceError::Storage(_) => "storage",
        }
    }
}
