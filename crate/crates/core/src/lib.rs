//! Schema-guided dialogue management for motivational interviewing (MI)
//! counselor agents.
//!
//! A session turn runs three stages over a pluggable chat gateway:
//! the multi-frame dialogue state is updated from recent history
//! ([`tracker`]), a dialogue strategy is decided from retrieved
//! counselor exemplars ([`decider`]), and the counselor response is
//! generated from that strategy ([`generator`]). [`baselines`] holds the
//! two comparison pipelines and [`analyzer`] computes MITI-based metrics
//! over annotated transcripts.

pub mod model;
pub mod embedding;
pub mod llm;
pub mod prompt;
pub mod tracker;
pub mod pool;
pub mod decider;
pub mod generator;
pub mod baselines;
pub mod analyzer;
