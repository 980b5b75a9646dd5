//! Domain types shared across the pipeline: frames, dialogue state,
//! strategies, and transcripts.

mod frame;
mod schema;
mod state;
mod strategy;
mod transcript;

pub use frame::{Frame, FrameType};
pub use schema::{AttributeSpec, SchemaRegistry};
pub use state::{normalize_content, resolve_ref, DialogueState, Resolved};
pub use strategy::{DialogueStrategy, FrameRef, Intent, RepairLog};
pub use transcript::{
    Condition, Speaker, StateSnapshot, StrategyTraceEntry, Transcript, Utterance,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("frame content must be non-empty")]
    EmptyContent,
    #[error("attribute `{attribute}` is not declared for {frame_type} frames")]
    UndeclaredAttribute {
        frame_type: FrameType,
        attribute: String,
    },
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("invalid schema registry: {0}")]
    InvalidRegistry(String),
    #[error("invalid dialogue state: {0}")]
    InvalidState(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("utterance text must be non-empty")]
    EmptyUtterance,
}
