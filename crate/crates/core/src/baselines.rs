//! Comparison pipelines: MI few-shot (MI-FS) and the principle-based
//! prompt guide (MI-Guide). Both produce at most two sentences and share the
//! main pipeline's transcript format.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{finish, Generation, GeneratorError, MAX_SENTENCES};
use crate::llm::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::model::{Intent, Utterance};
use crate::prompt::{render_history, PromptTemplate, TemplateError};
use crate::tracker::ExampleUtterance;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("baseline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Llm(#[from] GatewayError),
    #[error("the model returned an empty response")]
    EmptyResponse,
}

impl From<GeneratorError> for BaselineError {
    fn from(e: GeneratorError) -> Self {
        match e {
            GeneratorError::Llm(e) => BaselineError::Llm(e),
            GeneratorError::Template(e) => BaselineError::Template(e),
            GeneratorError::EmptyResponse | GeneratorError::InvalidStrategy(_) => BaselineError::EmptyResponse,
        }
    }
}

/// One few-shot dialogue: a fixed-length history and the counselor's reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSample {
    pub intent: Intent,
    pub history: Vec<ExampleUtterance>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiFsConfig {
    pub sample_count: usize,
    pub history_len: usize,
    pub temperature: f64,
}

impl Default for MiFsConfig {
    fn default() -> Self {
        Self {
            sample_count: 5,
            history_len: 15,
            temperature: 1.0,
        }
    }
}

const DEFAULT_SAMPLES: &str = include_str!("../data/mi_fs_samples.json");
const MI_FS_TEMPLATE: &str = include_str!("../templates/mi_fs.toml");
const MI_GUIDE_TEMPLATE: &str = include_str!("../templates/mi_guide.toml");

pub fn default_fs_samples() -> Vec<FewShotSample> {
    serde_json::from_str(DEFAULT_SAMPLES).expect("bundled samples parse")
}

pub fn load_fs_samples(path: &Path) -> Result<Vec<FewShotSample>, BaselineError> {
    let text = std::fs::read_to_string(path).map_err(|e| BaselineError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BaselineError::Config(format!("{}: {e}", path.display())))
}

/// Checks count, history length and that the set covers question,
/// affirmation, reflection and summarization.
pub fn validate_fs_samples(samples: &[FewShotSample], config: &MiFsConfig) -> Result<(), BaselineError> {
    if samples.len() != config.sample_count {
        return Err(BaselineError::Config(format!(
            "expected {} few-shot samples, found {}",
            config.sample_count,
            samples.len()
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.history.len() != config.history_len {
            return Err(BaselineError::Config(format!(
                "sample {} has {} history utterances, expected {}",
                i + 1,
                s.history.len(),
                config.history_len
            )));
        }
        if s.response.trim().is_empty() || s.history.iter().any(|u| u.text.trim().is_empty()) {
            return Err(BaselineError::Config(format!("sample {} has empty text", i + 1)));
        }
    }
    let covered: BTreeSet<Intent> = samples.iter().map(|s| s.intent).collect();
    let missing: Vec<&str> = [
        Intent::Question,
        Intent::Affirmation,
        Intent::Reflection,
        Intent::Summarization,
    ]
    .iter()
    .filter(|i| !covered.contains(i))
    .map(|i| i.as_str())
    .collect();
    if !missing.is_empty() {
        return Err(BaselineError::Config(format!(
            "few-shot samples do not cover intents: {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

pub struct MiFewShot {
    gateway: Gateway,
    template: PromptTemplate,
    rendered_samples: String,
    config: MiFsConfig,
}

impl MiFewShot {
    pub fn new(
        gateway: Gateway,
        samples: Vec<FewShotSample>,
        template: PromptTemplate,
        config: MiFsConfig,
    ) -> Result<Self, BaselineError> {
        validate_fs_samples(&samples, &config)?;
        let template = template.require(&["samples", "history"])?;
        Ok(Self {
            gateway,
            template,
            rendered_samples: render_fs_samples(&samples),
            config,
        })
    }

    pub fn with_defaults(gateway: Gateway) -> Result<Self, BaselineError> {
        Self::new(gateway, default_fs_samples(), default_fs_template(), MiFsConfig::default())
    }

    pub fn build_request(&self, history: &[Utterance]) -> Result<ChatRequest, BaselineError> {
        let history = &history[history.len().saturating_sub(self.config.history_len)..];
        let history_text = render_history(history);
        let vars = [
            ("samples", self.rendered_samples.as_str()),
            ("history", history_text.as_str()),
        ];
        let req = ChatRequest::new(
            self.template.render_system(&vars),
            vec![ChatMessage::user(self.template.render_user(&vars))],
            self.config.temperature,
        )?;
        Ok(req.with_max_sentences(MAX_SENTENCES as u32))
    }

    pub fn respond(&self, history: &[Utterance]) -> Result<Generation, BaselineError> {
        let request = self.build_request(history)?;
        let raw = self.gateway.complete(&request)?.text.unwrap_or_default();
        Ok(finish(raw, request, MAX_SENTENCES)?)
    }
}

pub fn default_fs_template() -> PromptTemplate {
    PromptTemplate::from_toml_str("mi_fs", MI_FS_TEMPLATE).expect("bundled template parses")
}

fn render_fs_samples(samples: &[FewShotSample]) -> String {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let lines = s
                .history
                .iter()
                .map(|u| format!("{}: {}", u.speaker.label(), u.text))
                .collect::<Vec<_>>()
                .join("\n");
            format!(
                "## Sample {}\n<History>\n{}\n\n<Response>\nCounselor: {}",
                i + 1,
                lines,
                s.response
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiGuideConfig {
    pub topic: String,
    pub context_window: usize,
    pub temperature: f64,
}

impl Default for MiGuideConfig {
    fn default() -> Self {
        Self {
            topic: "dietary habits".into(),
            context_window: 60,
            temperature: 1.0,
        }
    }
}

pub fn default_guide_template() -> PromptTemplate {
    PromptTemplate::from_toml_str("mi_guide", MI_GUIDE_TEMPLATE).expect("bundled template parses")
}

pub struct MiGuide {
    gateway: Gateway,
    template: PromptTemplate,
    config: MiGuideConfig,
}

impl MiGuide {
    pub fn new(gateway: Gateway, template: PromptTemplate, config: MiGuideConfig) -> Result<Self, BaselineError> {
        let template = template.require(&["topic", "context"])?;
        Ok(Self {
            gateway,
            template,
            config,
        })
    }

    pub fn with_defaults(gateway: Gateway) -> Self {
        Self::new(gateway, default_guide_template(), MiGuideConfig::default()).expect("bundled template is complete")
    }

    pub fn build_request(&self, history: &[Utterance]) -> Result<ChatRequest, BaselineError> {
        let history = &history[history.len().saturating_sub(self.config.context_window)..];
        let context = render_history(history);
        let vars = [("topic", self.config.topic.as_str()), ("context", context.as_str())];
        let req = ChatRequest::new(
            self.template.render_system(&vars),
            vec![ChatMessage::user(self.template.render_user(&vars))],
            self.config.temperature,
        )?;
        Ok(req.with_max_sentences(MAX_SENTENCES as u32))
    }

    pub fn respond(&self, history: &[Utterance]) -> Result<Generation, BaselineError> {
        let request = self.build_request(history)?;
        let raw = self.gateway.complete(&request)?.text.unwrap_or_default();
        Ok(finish(raw, request, MAX_SENTENCES)?)
    }
}
