//! Wires the pipeline stages together from a [`ServiceConfig`] and runs one
//! counselor turn for any condition.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use mi_dialogue::baselines::{self, MiFewShot, MiGuide};
use mi_dialogue::decider::{self, Decision, StrategyDecider};
use mi_dialogue::embedding::{EmbeddingProvider, HashedNgramEmbedder, RemoteEmbedder};
use mi_dialogue::generator::{self, ResponseGenerator};
use mi_dialogue::llm::{ChatProvider, ChatRequest, Gateway, HttpChatProvider, RecordingProvider, ReplayProvider, ReplayStore};
use mi_dialogue::model::{Condition, DialogueState, DialogueStrategy, SchemaRegistry, Utterance};
use mi_dialogue::pool::StrategyPool;
use mi_dialogue::prompt::PromptTemplate;
use mi_dialogue::tracker::{self, StateTracker};

use crate::config::{EmbeddingConfig, LlmConfig, ServiceConfig};
use crate::{ServiceError, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdateTrace {
    pub request: ChatRequest,
    pub generated: DialogueState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTrace {
    pub request: ChatRequest,
    pub raw: String,
    pub truncated: bool,
}

/// Everything one turn sent to and received from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_update: Option<StateUpdateTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Decision>,
    pub response: ResponseTrace,
}

#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub counselor_text: String,
    pub state: DialogueState,
    pub strategy: Option<DialogueStrategy>,
    pub trace: TurnTrace,
}

pub struct Engine {
    pub registry: SchemaRegistry,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub pool: Option<Arc<StrategyPool>>,
    pub tracker: StateTracker,
    pub decider: StrategyDecider,
    pub generator: ResponseGenerator,
    pub mi_fs: MiFewShot,
    pub mi_guide: MiGuide,
}

pub fn build_gateway(cfg: &ServiceConfig) -> Result<Gateway, ServiceError> {
    let storage = |e: mi_dialogue::llm::GatewayError| ServiceError::Config(e.to_string());
    let provider: Arc<dyn ChatProvider> = match &cfg.llm {
        LlmConfig::Openai(http) => Arc::new(HttpChatProvider::new(http.clone())),
        LlmConfig::Replay { path } => Arc::new(ReplayProvider::open(path.clone()).map_err(storage)?),
        LlmConfig::Record { path, http } => Arc::new(RecordingProvider::new(
            HttpChatProvider::new(http.clone()),
            ReplayStore::open(path.clone()).map_err(storage)?,
        )),
    };
    let mut gateway = Gateway::new(provider);
    if let Some(n) = cfg.llm_max_retries {
        gateway = gateway.with_max_retries(n);
    }
    Ok(gateway)
}

pub fn build_embedder(cfg: &ServiceConfig) -> Arc<dyn EmbeddingProvider> {
    match &cfg.embedding {
        EmbeddingConfig::Hashed { dim } => Arc::new(HashedNgramEmbedder::with_dim(*dim)),
        EmbeddingConfig::Remote(r) => Arc::new(RemoteEmbedder::new(r.clone())),
    }
}

pub fn load_registry(cfg: &ServiceConfig) -> Result<SchemaRegistry, ServiceError> {
    match &cfg.paths.schema {
        Some(p) => SchemaRegistry::load(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display()))),
        None => Ok(SchemaRegistry::default()),
    }
}

fn template(cfg: &ServiceConfig, file: &str, default: fn() -> PromptTemplate) -> Result<PromptTemplate, ServiceError> {
    match cfg.paths.templates.as_deref().map(|d| d.join(file)).filter(|p| p.exists()) {
        Some(p) => PromptTemplate::load(&p).map_err(|e| ServiceError::Config(e.to_string())),
        None => Ok(default()),
    }
}

pub fn build_tracker(cfg: &ServiceConfig, gateway: Gateway, registry: SchemaRegistry) -> Result<StateTracker, ServiceError> {
    let examples = match &cfg.paths.tracker_examples {
        Some(p) => tracker::load_examples(p).map_err(|e| ServiceError::Config(e.to_string()))?,
        None => tracker::default_examples(),
    };
    StateTracker::new(
        gateway,
        registry,
        examples,
        template(cfg, "state_update.toml", tracker::default_template)?,
        cfg.tracker.clone(),
    )
    .map_err(|e| ServiceError::Config(e.to_string()))
}

impl Engine {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        Self::with_gateway(cfg, build_gateway(cfg)?)
    }

    /// Builds every stage over one shared gateway. Fails on any
    /// misconfiguration, including a configured pool that does not load.
    pub fn with_gateway(cfg: &ServiceConfig, gateway: Gateway) -> Result<Self, ServiceError> {
        let config_err = |e: &dyn std::fmt::Display| ServiceError::Config(e.to_string());
        let registry = load_registry(cfg)?;
        let embedder = build_embedder(cfg);
        let pool = match &cfg.paths.pool {
            Some(p) if p.exists() => Some(Arc::new(load_pool(p, &registry, embedder.as_ref())?)),
            Some(p) => {
                warn!(path = %p.display(), "pool file not found; condition `ours` is unavailable");
                None
            }
            None => None,
        };
        let tracker = build_tracker(cfg, gateway.clone(), registry.clone())?;
        let decider = StrategyDecider::new(
            gateway.clone(),
            registry.clone(),
            template(cfg, "strategy.toml", decider::default_template)?,
            cfg.decider.clone(),
        )
        .map_err(|e| config_err(&e))?;
        let generator = ResponseGenerator::new(
            gateway.clone(),
            registry.clone(),
            template(cfg, "response.toml", generator::default_template)?,
            cfg.generator.clone(),
        )
        .map_err(|e| config_err(&e))?;
        let samples = match &cfg.paths.mi_fs_samples {
            Some(p) => baselines::load_fs_samples(p).map_err(|e| config_err(&e))?,
            None => baselines::default_fs_samples(),
        };
        let mi_fs = MiFewShot::new(
            gateway.clone(),
            samples,
            template(cfg, "mi_fs.toml", baselines::default_fs_template)?,
            cfg.mi_fs.clone(),
        )
        .map_err(|e| config_err(&e))?;
        let mi_guide = MiGuide::new(
            gateway,
            template(cfg, "mi_guide.toml", baselines::default_guide_template)?,
            cfg.mi_guide.clone(),
        )
        .map_err(|e| config_err(&e))?;
        Ok(Self {
            registry,
            embedder,
            pool,
            tracker,
            decider,
            generator,
            mi_fs,
            mi_guide,
        })
    }

    /// Checks that a session of `condition` can run.
    pub fn check_condition(&self, condition: Condition) -> Result<(), ServiceError> {
        match condition {
            Condition::Ours if self.pool.is_none() => Err(ServiceError::PoolNotLoaded),
            Condition::Corpus => Err(ServiceError::InvalidCondition(condition.as_str().into())),
            _ => Ok(()),
        }
    }

    /// Runs one turn. `history` ends with the new client utterance. Nothing
    /// is mutated; the caller commits the outcome.
    pub fn respond(
        &self,
        condition: Condition,
        state: &DialogueState,
        history: &[Utterance],
    ) -> Result<TurnOutcome, ServiceError> {
        self.check_condition(condition)?;
        let stage = |stage: Stage| move |e: &dyn std::fmt::Display| ServiceError::Stage {
            stage,
            message: e.to_string(),
        };
        match condition {
            Condition::Ours => {
                let pool = self.pool.as_ref().ok_or(ServiceError::PoolNotLoaded)?;
                let update = self
                    .tracker
                    .update_state(history, state)
                    .map_err(|e| stage(Stage::StateUpdate)(&e))?;
                let decision = self
                    .decider
                    .decide_strategy(&update.state, history, pool, self.embedder.as_ref())
                    .map_err(|e| stage(Stage::Strategy)(&e))?;
                let generation = self
                    .generator
                    .generate(&decision.strategy, &update.state, history)
                    .map_err(|e| stage(Stage::Response)(&e))?;
                Ok(TurnOutcome {
                    counselor_text: generation.text,
                    strategy: Some(decision.strategy.clone()),
                    trace: TurnTrace {
                        condition,
                        state_update: Some(StateUpdateTrace {
                            request: update.request,
                            generated: update.generated,
                            dropped_attributes: update.dropped_attributes,
                        }),
                        strategy: Some(decision),
                        response: ResponseTrace {
                            request: generation.request,
                            raw: generation.raw,
                            truncated: generation.truncated,
                        },
                    },
                    state: update.state,
                })
            }
            Condition::MiFs | Condition::MiGuide => {
                let generation = if condition == Condition::MiFs {
                    self.mi_fs.respond(history)
                } else {
                    self.mi_guide.respond(history)
                }
                .map_err(|e| stage(Stage::Baseline)(&e))?;
                Ok(TurnOutcome {
                    counselor_text: generation.text,
                    state: state.clone(),
                    strategy: None,
                    trace: TurnTrace {
                        condition,
                        state_update: None,
                        strategy: None,
                        response: ResponseTrace {
                            request: generation.request,
                            raw: generation.raw,
                            truncated: generation.truncated,
                        },
                    },
                })
            }
            Condition::Corpus => Err(ServiceError::InvalidCondition(condition.as_str().into())),
        }
    }
}

fn load_pool(path: &Path, registry: &SchemaRegistry, embedder: &dyn EmbeddingProvider) -> Result<StrategyPool, ServiceError> {
    let pool = StrategyPool::load(path, registry, embedder)
        .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
    info!(samples = pool.len(), path = %path.display(), "strategy pool loaded");
    Ok(pool)
}
