//! Dialogue-state tracking: the LLM proposes an updated multi-frame state
//! from recent history, and the proposal is merged into the previous state
//! so frames are never lost or duplicated.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{debug, warn};

use crate::llm::{
    ChatMessage, ChatRequest, FieldSchema, Gateway, GatewayError, ObjectSchema, OutputSchema,
    SchemaNode,
};
use crate::model::{DialogueState, Frame, FrameType, ModelError, SchemaRegistry, Speaker, Utterance};
use crate::prompt::{render_history, PromptTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("state update needs a history ending with a client utterance: {0}")]
    InvalidHistory(String),
    #[error(transparent)]
    Llm(#[from] GatewayError),
    #[error("generated state is invalid: {0}")]
    InvalidOutput(#[from] ModelError),
    #[error("few-shot examples: {0}")]
    Examples(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Repairs an LLM-proposed state against the previous one.
///
/// Every previous frame is kept in place, matched frames take the union of
/// both attribute sets with generated values winning, and unmatched
/// generated frames are appended in generated order.
pub fn merge(previous: &DialogueState, generated: &DialogueState) -> DialogueState {
    let mut out = previous.clone();
    for f in generated.frames() {
        out.absorb(f.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleUtterance {
    pub speaker: Speaker,
    pub text: String,
}

/// Curated input/output pair shown to the LLM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerExample {
    pub current_ds: DialogueState,
    pub utterances: Vec<ExampleUtterance>,
    pub updated_ds: DialogueState,
}

const DEFAULT_EXAMPLES: &str = include_str!("../data/state_examples.json");
const DEFAULT_TEMPLATE: &str = include_str!("../templates/state_update.toml");
pub const EXPECTED_EXAMPLES: usize = 10;

pub fn default_examples() -> Vec<TrackerExample> {
    serde_json::from_str(DEFAULT_EXAMPLES).expect("bundled state examples parse")
}

pub fn load_examples(path: &Path) -> Result<Vec<TrackerExample>, TrackerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TrackerError::Examples(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| TrackerError::Examples(format!("{}: {e}", path.display())))
}

pub fn default_template() -> PromptTemplate {
    PromptTemplate::from_toml_str("state_update", DEFAULT_TEMPLATE).expect("bundled template parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub window: usize,
    pub temperature: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window: 6,
            temperature: 0.0,
        }
    }
}

/// Outcome of one state update, kept for traces.
#[derive(Debug, Clone)]
pub struct StateUpdate {
    pub state: DialogueState,
    pub generated: DialogueState,
    pub request: ChatRequest,
    pub dropped_attributes: Vec<String>,
}

pub struct StateTracker {
    gateway: Gateway,
    registry: SchemaRegistry,
    template: PromptTemplate,
    rendered_examples: String,
    schema: OutputSchema,
    config: TrackerConfig,
}

impl StateTracker {
    pub fn new(
        gateway: Gateway,
        registry: SchemaRegistry,
        examples: Vec<TrackerExample>,
        template: PromptTemplate,
        config: TrackerConfig,
    ) -> Result<Self, TrackerError> {
        let template = template.require(&["examples", "current_ds", "history"])?;
        if examples.is_empty() {
            return Err(TrackerError::Examples("no few-shot examples".into()));
        }
        if examples.len() != EXPECTED_EXAMPLES {
            warn!(count = examples.len(), "state tracker expects {EXPECTED_EXAMPLES} examples");
        }
        for (i, ex) in examples.iter().enumerate() {
            registry
                .validate_state(&ex.current_ds)
                .and_then(|_| registry.validate_state(&ex.updated_ds))
                .map_err(|e| TrackerError::Examples(format!("example {}: {e}", i + 1)))?;
        }
        Ok(Self {
            gateway,
            schema: state_output_schema(&registry),
            rendered_examples: render_examples(&examples),
            registry,
            template,
            config,
        })
    }

    pub fn with_defaults(gateway: Gateway, registry: SchemaRegistry) -> Result<Self, TrackerError> {
        Self::new(
            gateway,
            registry,
            default_examples(),
            default_template(),
            TrackerConfig::default(),
        )
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    pub fn build_request(&self, history: &[Utterance], current: &DialogueState) -> Result<ChatRequest, TrackerError> {
        let Some(last) = history.last() else {
            return Err(TrackerError::InvalidHistory("empty history".into()));
        };
        if last.speaker != Speaker::Client {
            return Err(TrackerError::InvalidHistory("last utterance is not the client's".into()));
        }
        let start = history.len().saturating_sub(self.config.window);
        let schema_text = self.registry.describe();
        let current_ds = current.to_canonical_json();
        let history_text = render_history(&history[start..]);
        let vars = [
            ("schema", schema_text.as_str()),
            ("examples", self.rendered_examples.as_str()),
            ("current_ds", current_ds.as_str()),
            ("history", history_text.as_str()),
        ];
        let req = ChatRequest::new(
            self.template.render_system(&vars),
            vec![ChatMessage::user(self.template.render_user(&vars))],
            self.config.temperature,
        )?;
        Ok(req.with_schema(self.schema.clone()))
    }

    /// One LLM update followed by the merge repair. On error the caller
    /// keeps its previous state.
    pub fn update_state(&self, history: &[Utterance], current: &DialogueState) -> Result<StateUpdate, TrackerError> {
        let request = self.build_request(history, current)?;
        let resp = self.gateway.complete(&request)?;
        let value = resp.structured.unwrap_or(Value::Null);
        let (generated, dropped_attributes) = state_from_llm_value(&value, &self.registry)?;
        if !dropped_attributes.is_empty() {
            debug!(?dropped_attributes, "dropped undeclared attributes from generated state");
        }
        let state = merge(current, &generated);
        Ok(StateUpdate {
            state,
            generated,
            request,
            dropped_attributes,
        })
    }
}

fn render_examples(examples: &[TrackerExample]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let lines = ex
                .utterances
                .iter()
                .map(|u| format!("{}: {}", u.speaker.label(), u.text))
                .collect::<Vec<_>>()
                .join("\n");
            format!(
                "## Example {}\n<Current_DS>\n{}\n\nUtterance\n{}\n\n<Updated_DS>\n{}",
                i + 1,
                ex.current_ds.to_canonical_json(),
                lines,
                ex.updated_ds.to_canonical_json()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Structured-output schema for a dialogue state under `registry`.
pub fn state_output_schema(registry: &SchemaRegistry) -> OutputSchema {
    let mut attrs: Vec<String> = Vec::new();
    for ft in FrameType::ALL {
        for a in registry.attributes(ft) {
            if a.name != "content" && !attrs.contains(&a.name) {
                attrs.push(a.name.clone());
            }
        }
    }
    let mut fields = vec![
        FieldSchema::required(
            "frame_type",
            SchemaNode::enumeration(FrameType::ALL.iter().map(|f| f.as_str())),
        ),
        FieldSchema::required("content", SchemaNode::String),
    ];
    fields.extend(attrs.iter().map(|a| FieldSchema::optional(a, SchemaNode::String)));
    let frame = ObjectSchema {
        fields,
        additional: true,
    };
    OutputSchema::new(
        "DialogueState",
        ObjectSchema::new(vec![FieldSchema::required(
            "frames",
            SchemaNode::array(SchemaNode::Object(frame)),
        )]),
    )
}

/// Reads a loosely typed state: nulls are skipped, scalars stringified,
/// undeclared attributes dropped (their names are returned).
pub fn state_from_llm_value(
    value: &Value,
    registry: &SchemaRegistry,
) -> Result<(DialogueState, Vec<String>), ModelError> {
    let frames = value
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::InvalidState("no `frames` array".into()))?;
    let mut dropped = Vec::new();
    let mut out = Vec::with_capacity(frames.len());
    for item in frames {
        let Some(obj) = item.as_object() else { continue };
        let frame_type: FrameType = match obj.get("frame_type").and_then(Value::as_str) {
            Some(s) => match s.parse() {
                Ok(ft) => ft,
                Err(_) => {
                    dropped.push(format!("frame_type={s}"));
                    continue;
                }
            },
            None => continue,
        };
        let content = obj.get("content").and_then(Value::as_str).unwrap_or_default();
        let Ok(mut frame) = Frame::new(frame_type, content) else {
            dropped.push(format!("{frame_type} frame with empty content"));
            continue;
        };
        for (k, v) in obj {
            if k == "frame_type" || k == "content" {
                continue;
            }
            let text = match v {
                Value::Null => continue,
                Value::String(s) if s.trim().is_empty() => continue,
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            frame.set_attribute(k.clone(), text);
        }
        dropped.extend(registry.strip_undeclared(&mut frame));
        out.push(frame);
    }
    Ok((DialogueState::from_frames(out), dropped))
}
