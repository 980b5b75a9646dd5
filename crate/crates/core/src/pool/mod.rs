//! Pseudo-strategy pool: counselor exemplars mined from an annotated MI
//! corpus, each stored with its history, dialogue state, LLM-inferred
//! strategy and retrieval embedding.
//!
//! Pool files are versioned JSONL: a header record (format version and the
//! embedding-provider fingerprint) followed by one sample per line.

mod corpus;

pub use corpus::{load_corpus, CorpusDialogue, CorpusUtterance, IntentMapping};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::embedding::{Embedding, EmbeddingError, EmbeddingProvider};
use crate::llm::{
    ChatMessage, ChatRequest, FieldSchema, Gateway, GatewayError, ObjectSchema, OutputSchema,
    SchemaNode,
};
use crate::model::{
    DialogueState, DialogueStrategy, Intent, ModelError, SchemaRegistry, Speaker, Utterance,
};
use crate::prompt::{render_history, PromptTemplate, TemplateError};
use crate::tracker::StateTracker;

pub const POOL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pool i/o: {0}")]
    Io(String),
    #[error("corpus line {line}: {reason}")]
    CorpusFormat { line: usize, reason: String },
    #[error("pool format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("pool file has no header record")]
    MissingHeader,
    #[error("corrupt pool sample {index}: {reason}")]
    CorruptSample { index: usize, reason: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Llm(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleSource {
    pub dialogue_id: String,
    pub turn_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySample {
    pub source: SampleSource,
    /// Utterances preceding the counselor response (at most five).
    pub history: Vec<Utterance>,
    pub state: DialogueState,
    pub strategy: DialogueStrategy,
    pub counselor_response: String,
    pub embedding: Embedding,
}

impl StrategySample {
    pub fn retrieval_text(&self) -> String {
        retrieval_text(&self.state, &self.history)
    }
}

/// Text embedded for retrieval:
/// `### History\n<history lines>\n\n### Dialogue_State\n<state JSON>`.
pub fn retrieval_text(state: &DialogueState, history: &[Utterance]) -> String {
    format!(
        "### History\n{}\n\n### Dialogue_State\n{}",
        render_history(history),
        state.to_canonical_json()
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub version: u32,
    pub embedding_provider: String,
    pub dim: usize,
    pub sample_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum PoolLine {
    Header(PoolHeader),
    Sample(Box<StrategySample>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPool {
    pub header: PoolHeader,
    pub samples: Vec<StrategySample>,
}

impl StrategyPool {
    pub fn new(embedding_provider: String, dim: usize, samples: Vec<StrategySample>) -> Self {
        Self {
            header: PoolHeader {
                version: POOL_FORMAT_VERSION,
                embedding_provider,
                dim,
                sample_count: samples.len(),
            },
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), PoolError> {
        let io = |e: std::io::Error| PoolError::Io(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let mut header = self.header.clone();
        header.sample_count = self.samples.len();
        let line = serde_json::to_string(&PoolLine::Header(header)).expect("header serializes");
        writeln!(w, "{line}").map_err(io)?;
        for s in &self.samples {
            let line = serde_json::to_string(&PoolLine::Sample(Box::new(s.clone())))
                .expect("sample serializes");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Loads and validates a pool file. Samples are re-embedded when the
    /// file was built with a different embedding provider.
    pub fn load(
        path: &Path,
        registry: &SchemaRegistry,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self, PoolError> {
        let file = File::open(path).map_err(|e| PoolError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or(PoolError::MissingHeader)?
            .map_err(|e| PoolError::Io(e.to_string()))?;
        let mut header = match serde_json::from_str::<PoolLine>(&first) {
            Ok(PoolLine::Header(h)) => h,
            _ => return Err(PoolError::MissingHeader),
        };
        if header.version != POOL_FORMAT_VERSION {
            return Err(PoolError::VersionMismatch {
                found: header.version,
                expected: POOL_FORMAT_VERSION,
            });
        }

        let mut samples = Vec::with_capacity(header.sample_count);
        for (index, line) in lines.enumerate() {
            let line = line.map_err(|e| PoolError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| PoolError::CorruptSample { index, reason };
            let sample = match serde_json::from_str::<PoolLine>(&line) {
                Ok(PoolLine::Sample(s)) => *s,
                Ok(PoolLine::Header(_)) => return Err(corrupt("unexpected second header".into())),
                Err(e) => return Err(corrupt(e.to_string())),
            };
            registry
                .validate_state(&sample.state)
                .and_then(|_| sample.strategy.validate(&sample.state, registry))
                .map_err(|e| corrupt(e.to_string()))?;
            samples.push(sample);
        }
        if samples.len() != header.sample_count {
            return Err(PoolError::CorruptSample {
                index: samples.len(),
                reason: format!(
                    "header declares {} samples, file holds {}",
                    header.sample_count,
                    samples.len()
                ),
            });
        }

        if header.embedding_provider != embedder.fingerprint() {
            info!(
                from = %header.embedding_provider,
                to = %embedder.fingerprint(),
                "embedding provider changed; re-embedding pool"
            );
            for s in &mut samples {
                s.embedding = embedder.embed(&s.retrieval_text())?;
            }
            header.embedding_provider = embedder.fingerprint();
            header.dim = embedder.dim();
        } else if let Some((index, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.embedding.dim() != header.dim)
        {
            return Err(PoolError::CorruptSample {
                index,
                reason: format!("embedding dim {} != {}", s.embedding.dim(), header.dim),
            });
        }
        Ok(Self { header, samples })
    }
}

/// Structured-output schema for a strategy, with or without `intent`.
pub fn strategy_output_schema(with_intent: bool) -> OutputSchema {
    let focus = ObjectSchema {
        fields: vec![
            FieldSchema::required("frame_type", SchemaNode::String),
            FieldSchema::required("index", SchemaNode::Integer),
            FieldSchema::optional("frame_attribute", SchemaNode::String),
        ],
        additional: true,
    };
    let mut fields = Vec::new();
    if with_intent {
        fields.push(FieldSchema::required(
            "intent",
            SchemaNode::enumeration(Intent::ALL.iter().map(|i| i.as_str())),
        ));
    }
    fields.push(FieldSchema::required("focuses", SchemaNode::array(SchemaNode::Object(focus))));
    fields.push(FieldSchema::optional("seek_frame_type", SchemaNode::String));
    fields.push(FieldSchema::optional("seek_attribute", SchemaNode::String));
    let name = if with_intent {
        "DialogueStrategy"
    } else {
        "PseudoDialogueStrategy"
    };
    OutputSchema::new(name, ObjectSchema::new(fields))
}

/// Counts emitted by [`PoolBuilder::build`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub dialogues: usize,
    /// Counselor utterances with at least one preceding utterance.
    pub eligible: usize,
    pub dropped_unlabeled: usize,
    pub dropped_llm_error: usize,
    pub dropped_invalid: usize,
    pub repaired: usize,
    pub state_update_failures: usize,
    pub samples: usize,
    pub per_intent: BTreeMap<Intent, usize>,
}

impl BuildReport {
    pub fn drops(&self) -> usize {
        self.dropped_unlabeled + self.dropped_llm_error + self.dropped_invalid
    }

    /// Pool size equals eligible utterances minus drops.
    pub fn is_consistent(&self) -> bool {
        self.samples + self.drops() == self.eligible
            && self.per_intent.values().sum::<usize>() == self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolBuildConfig {
    pub history_window: usize,
    pub temperature: f64,
}

impl Default for PoolBuildConfig {
    fn default() -> Self {
        Self {
            history_window: 5,
            temperature: 0.0,
        }
    }
}

const DEFAULT_TEMPLATE: &str = include_str!("../../templates/pseudo_strategy.toml");

pub fn default_template() -> PromptTemplate {
    PromptTemplate::from_toml_str("pseudo_strategy", DEFAULT_TEMPLATE).expect("bundled template parses")
}

pub struct PoolBuilder<'a> {
    pub tracker: &'a StateTracker,
    pub gateway: Gateway,
    pub registry: &'a SchemaRegistry,
    pub embedder: &'a dyn EmbeddingProvider,
    pub template: PromptTemplate,
    pub mapping: IntentMapping,
    pub config: PoolBuildConfig,
}

impl<'a> PoolBuilder<'a> {
    pub fn new(
        tracker: &'a StateTracker,
        gateway: Gateway,
        registry: &'a SchemaRegistry,
        embedder: &'a dyn EmbeddingProvider,
    ) -> Self {
        Self {
            tracker,
            gateway,
            registry,
            embedder,
            template: default_template(),
            mapping: IntentMapping::default(),
            config: PoolBuildConfig::default(),
        }
    }

    pub fn pseudo_strategy_request(
        &self,
        history: &[Utterance],
        state: &DialogueState,
        response: &str,
    ) -> Result<ChatRequest, PoolError> {
        let template = self
            .template
            .clone()
            .require(&["history", "dialogue_state", "counselor_response"])?;
        let schema_text = self.registry.describe();
        let history_text = render_history(history);
        let state_text = state.to_canonical_json();
        let vars = [
            ("schema", schema_text.as_str()),
            ("history", history_text.as_str()),
            ("dialogue_state", state_text.as_str()),
            ("counselor_response", response),
        ];
        let req = ChatRequest::new(
            template.render_system(&vars),
            vec![ChatMessage::user(template.render_user(&vars))],
            self.config.temperature,
        )?;
        Ok(req.with_schema(strategy_output_schema(false)))
    }

    pub fn build(&self, corpus: &[CorpusDialogue]) -> Result<(StrategyPool, BuildReport), PoolError> {
        let mut report = BuildReport {
            dialogues: corpus.len(),
            ..BuildReport::default()
        };
        let mut samples = Vec::new();
        for dialogue in corpus {
            let utterances = dialogue.to_utterances();
            let mut state = DialogueState::new();
            for (i, u) in utterances.iter().enumerate() {
                match u.speaker {
                    Speaker::Client => match self.tracker.update_state(&utterances[..=i], &state) {
                        Ok(update) => state = update.state,
                        Err(e) => {
                            report.state_update_failures += 1;
                            warn!(dialogue = %dialogue.dialogue_id, turn = i, error = %e, "state update failed; keeping previous state");
                        }
                    },
                    Speaker::Counselor => {
                        if i == 0 {
                            continue;
                        }
                        report.eligible += 1;
                        let Some(label) = &dialogue.utterances[i].misc_label else {
                            report.dropped_unlabeled += 1;
                            continue;
                        };
                        let intent = self.mapping.map(label);
                        let history = &utterances[i.saturating_sub(self.config.history_window)..i];
                        match self.pseudo_strategy(history, &state, &u.text, intent) {
                            Ok((strategy, repaired)) => {
                                report.repaired += usize::from(repaired);
                                let embedding = self.embedder.embed(&retrieval_text(&state, history))?;
                                *report.per_intent.entry(intent).or_default() += 1;
                                samples.push(StrategySample {
                                    source: SampleSource {
                                        dialogue_id: dialogue.dialogue_id.clone(),
                                        turn_index: u.turn_index,
                                    },
                                    history: history.to_vec(),
                                    state: state.clone(),
                                    strategy,
                                    counselor_response: u.text.clone(),
                                    embedding,
                                });
                            }
                            Err(SampleError::Llm(e)) => {
                                report.dropped_llm_error += 1;
                                warn!(dialogue = %dialogue.dialogue_id, turn = i, error = %e, "pseudo strategy failed; sample skipped");
                            }
                            Err(SampleError::Invalid(e)) => {
                                report.dropped_invalid += 1;
                                warn!(dialogue = %dialogue.dialogue_id, turn = i, error = %e, "pseudo strategy invalid; sample dropped");
                            }
                        }
                    }
                }
            }
        }
        report.samples = samples.len();
        let pool = StrategyPool::new(self.embedder.fingerprint(), self.embedder.dim(), samples);
        Ok((pool, report))
    }

    fn pseudo_strategy(
        &self,
        history: &[Utterance],
        state: &DialogueState,
        response: &str,
        intent: Intent,
    ) -> Result<(DialogueStrategy, bool), SampleError> {
        let req = self
            .pseudo_strategy_request(history, state, response)
            .map_err(|e| SampleError::Llm(e.to_string()))?;
        let resp = self
            .gateway
            .complete(&req)
            .map_err(|e| SampleError::Llm(e.to_string()))?;
        let value = resp.structured.unwrap_or_default();
        let (strategy, log) = DialogueStrategy::repair_from_value(&value, Some(intent), state, self.registry)
            .map_err(SampleError::Invalid)?;
        Ok((strategy, !log.is_clean()))
    }
}

enum SampleError {
    Llm(String),
    Invalid(ModelError),
}
