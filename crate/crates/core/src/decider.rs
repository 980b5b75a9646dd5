//! Genuine strategy decision: retrieve the most similar pool samples and use
//! them as dynamic few-shot examples for the strategy prompt.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::debug;

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider};
use crate::llm::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::model::{DialogueState, DialogueStrategy, ModelError, RepairLog, SchemaRegistry, Speaker, Utterance};
use crate::pool::{retrieval_text, strategy_output_schema, SampleSource, StrategyPool, StrategySample};
use crate::prompt::{render_history, PromptTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum DeciderError {
    #[error("strategy pool is empty")]
    EmptyPool,
    #[error("retrieval size must be positive")]
    InvalidN,
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Llm(GatewayError),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

impl From<GatewayError> for DeciderError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::SchemaValidation { .. } => DeciderError::InvalidStrategy(e.to_string()),
            other => DeciderError::Llm(other),
        }
    }
}

impl From<ModelError> for DeciderError {
    fn from(e: ModelError) -> Self {
        DeciderError::InvalidStrategy(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeciderConfig {
    pub n: usize,
    pub history_window: usize,
    pub temperature: f64,
    /// Order few-shot examples most-similar-first; otherwise corpus order.
    pub most_similar_first: bool,
}

impl Default for DeciderConfig {
    fn default() -> Self {
        Self {
            n: 5,
            history_window: 5,
            temperature: 0.0,
            most_similar_first: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Retrieved<'a> {
    pub sample: &'a StrategySample,
    pub similarity: f64,
}

/// Top-`n` samples by cosine similarity, descending; equal scores are
/// ordered by `(dialogue_id, turn_index)` ascending.
pub fn retrieve<'a>(
    state: &DialogueState,
    history: &[Utterance],
    pool: &'a StrategyPool,
    n: usize,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<Retrieved<'a>>, DeciderError> {
    if pool.is_empty() {
        return Err(DeciderError::EmptyPool);
    }
    if n == 0 {
        return Err(DeciderError::InvalidN);
    }
    let query = embedder.embed(&retrieval_text(state, history))?;
    let mut scored = pool
        .samples
        .iter()
        .map(|s| {
            Ok(Retrieved {
                sample: s,
                similarity: cosine(&query, &s.embedding)?,
            })
        })
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    scored.sort_by(|a, b| rank_order(a, b));
    scored.truncate(n);
    Ok(scored)
}

fn rank_order(a: &Retrieved<'_>, b: &Retrieved<'_>) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.sample.source.cmp(&b.sample.source))
}

/// Everything a strategy decision produced, for tracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub strategy: DialogueStrategy,
    pub retrieved: Vec<RetrievedRef>,
    pub repair: RepairLog,
    pub request: ChatRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub source: SampleSource,
    pub similarity: f64,
}

const DEFAULT_TEMPLATE: &str = include_str!("../templates/strategy.toml");

pub fn default_template() -> PromptTemplate {
    PromptTemplate::from_toml_str("strategy", DEFAULT_TEMPLATE).expect("bundled template parses")
}

pub struct StrategyDecider {
    gateway: Gateway,
    registry: SchemaRegistry,
    template: PromptTemplate,
    config: DeciderConfig,
}

impl StrategyDecider {
    pub fn new(
        gateway: Gateway,
        registry: SchemaRegistry,
        template: PromptTemplate,
        config: DeciderConfig,
    ) -> Result<Self, DeciderError> {
        if config.n == 0 {
            return Err(DeciderError::InvalidN);
        }
        let template = template.require(&["examples", "history", "dialogue_state"])?;
        Ok(Self {
            gateway,
            registry,
            template,
            config,
        })
    }

    pub fn with_defaults(gateway: Gateway, registry: SchemaRegistry) -> Self {
        Self::new(gateway, registry, default_template(), DeciderConfig::default())
            .expect("default decider config is valid")
    }

    pub fn config(&self) -> &DeciderConfig {
        &self.config
    }

    pub fn build_request(
        &self,
        state: &DialogueState,
        history: &[Utterance],
        examples: &[Retrieved<'_>],
    ) -> Result<ChatRequest, DeciderError> {
        let mut ordered = examples.to_vec();
        if !self.config.most_similar_first {
            ordered.sort_by(|a, b| a.sample.source.cmp(&b.sample.source));
        }
        let examples_text = render_examples(&ordered);
        let schema_text = self.registry.describe();
        let history_text = render_history(history);
        let state_text = state.to_canonical_json();
        let vars = [
            ("schema", schema_text.as_str()),
            ("examples", examples_text.as_str()),
            ("history", history_text.as_str()),
            ("dialogue_state", state_text.as_str()),
        ];
        let req = ChatRequest::new(
            self.template.render_system(&vars),
            vec![ChatMessage::user(self.template.render_user(&vars))],
            self.config.temperature,
        )
        .map_err(DeciderError::Llm)?;
        Ok(req.with_schema(strategy_output_schema(true)))
    }

    pub fn decide_strategy(
        &self,
        state: &DialogueState,
        history: &[Utterance],
        pool: &StrategyPool,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Decision, DeciderError> {
        if pool.is_empty() {
            return Err(DeciderError::EmptyPool);
        }
        match history.last() {
            Some(u) if u.speaker == Speaker::Client => {}
            Some(_) => return Err(DeciderError::InvalidHistory("last utterance is not the client's".into())),
            None => return Err(DeciderError::InvalidHistory("empty history".into())),
        }
        let history = &history[history.len().saturating_sub(self.config.history_window)..];
        let retrieved = retrieve(state, history, pool, self.config.n, embedder)?;
        let request = self.build_request(state, history, &retrieved)?;
        let resp = self.gateway.complete(&request)?;
        let value = resp.structured.unwrap_or(Value::Null);
        let (strategy, repair) = DialogueStrategy::repair_from_value(&value, None, state, &self.registry)?;
        strategy.validate(state, &self.registry)?;
        if !repair.is_clean() {
            debug!(?repair, "repaired generated strategy");
        }
        Ok(Decision {
            strategy,
            retrieved: retrieved
                .iter()
                .map(|r| RetrievedRef {
                    source: r.sample.source.clone(),
                    similarity: r.similarity,
                })
                .collect(),
            repair,
            request,
        })
    }
}

fn render_examples(examples: &[Retrieved<'_>]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = r.sample;
            format!(
                "## Example {}\n<History>\n{}\n\n<Dialogue_State>\n{}\n\n<Dialogue_Strategy>\n{}",
                i + 1,
                render_history(&s.history),
                s.state.to_canonical_json(),
                serde_json::to_string(&s.strategy).expect("strategy serializes")
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}
