//! Shared fixtures: a deterministic rule-based stand-in for the LLM and
//! helpers to wire it into engines and pools.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use mi_dialogue::embedding::HashedNgramEmbedder;
use mi_dialogue::llm::{ChatProvider, ChatRequest, ChatResponse, Gateway, GatewayError, ScriptedProvider};
use mi_dialogue::model::SchemaRegistry;
use mi_dialogue::pool::{load_corpus, PoolBuilder, StrategyPool};
use mi_dialogue::tracker::StateTracker;

use mi_dialogue_server::config::ServiceConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Text of the last `Client: ` line in the request's final message.
pub fn last_client_line(req: &ChatRequest) -> Option<String> {
    let msg = req.messages.last()?;
    msg.content
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Client: "))
        .map(str::to_string)
}

fn strip_terminal(s: &str) -> &str {
    s.trim().trim_end_matches(['.', '!', '?'])
}

/// Answers every prompt kind the engine issues, keyed off the schema name
/// and the last client line.
pub fn rule_counselor(req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    let last = last_client_line(req).unwrap_or_else(|| "that".into());
    let body = strip_terminal(&last);
    let lower = body.to_lowercase();
    match req.output_schema.as_ref().map(|s| s.name.as_str()) {
        Some("DialogueState") => {
            let frame_type = if lower.contains("want") || lower.contains("hope") {
                "goal"
            } else if lower.contains("tried") || lower.contains("started") {
                "experience"
            } else if lower.contains(" will ") || lower.contains("plan") {
                "plan"
            } else {
                "problem"
            };
            Ok(ChatResponse::structured(json!({
                "frames": [{ "frame_type": frame_type, "content": body }]
            })))
        }
        Some("PseudoDialogueStrategy") => Ok(ChatResponse::structured(json!({
            "focuses": [{ "frame_type": "goal", "index": 1 }],
            "seek_frame_type": "problem",
            "seek_attribute": "harm_effect"
        }))),
        Some("DialogueStrategy") => {
            let intents = ["question", "reflection", "affirmation", "summarization", "other"];
            let intent = intents[body.len() % intents.len()];
            let (ft, attr) = if intent == "question" {
                ("experience", "effect")
            } else {
                ("none", "none")
            };
            Ok(ChatResponse::structured(json!({
                "intent": intent,
                "focuses": [{ "frame_type": "goal", "index": 1 }],
                "seek_frame_type": ft,
                "seek_attribute": attr
            })))
        }
        Some(other) => Err(GatewayError::InvalidRequest(format!("unexpected schema {other}"))),
        None => Ok(ChatResponse::text(format!(
            "So {lower} matters to you. Thank you for telling me. What would you like to change first?"
        ))),
    }
}

pub fn scripted() -> ScriptedProvider {
    ScriptedProvider::new(rule_counselor)
}

pub fn gateway(provider: impl ChatProvider + 'static) -> Gateway {
    Gateway::new(Arc::new(provider))
}

/// Builds a pool from the bundled sample corpus with `gateway`.
pub fn build_sample_pool(gateway: Gateway) -> (StrategyPool, mi_dialogue::pool::BuildReport) {
    let registry = SchemaRegistry::default();
    let embedder = HashedNgramEmbedder::default();
    let tracker = StateTracker::with_defaults(gateway.clone(), registry.clone()).expect("tracker");
    let corpus = load_corpus(&fixture("corpus_sample.jsonl")).expect("corpus");
    let builder = PoolBuilder::new(&tracker, gateway, &registry, &embedder);
    builder.build(&corpus).expect("pool build")
}

/// Config whose pool points at `pool` (which may not exist yet).
pub fn config_with_pool(pool: Option<PathBuf>) -> ServiceConfig {
    let mut cfg = ServiceConfig::default();
    cfg.paths.pool = pool;
    cfg
}
