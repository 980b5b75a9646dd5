//! Counselor response generation from a dialogue strategy, with the
//! intent priority rules and the two-sentence limit.
//!
//! Rule A: reflection and summarization emphasize the focused frames; the
//! prompt inlines their content and omits any seek fields.
//! Rule B: question and other with a seek field get an eliciting-question
//! directive naming the sought attribute or frame type.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::llm::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::model::{
    resolve_ref, DialogueState, DialogueStrategy, FrameType, Intent, ModelError, Resolved, SchemaRegistry,
    Utterance,
};
use crate::prompt::{render_history, PromptTemplate, TemplateError};

pub const MAX_SENTENCES: usize = 2;

/// Behavioral anchor used by rule A.
pub const EMPHASIZE_DIRECTIVE: &str = "emphasize the information focused on the current dialogue state";

/// Leading words of every rule-B directive. No other prompt text contains it.
pub const SEEK_DIRECTIVE: &str = "Ask a question that elicits";

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Llm(#[from] GatewayError),
    #[error("the model returned an empty response")]
    EmptyResponse,
    #[error(transparent)]
    InvalidStrategy(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorityRule {
    Emphasize,
    Seek,
    Generic,
}

pub fn priority_rule(strategy: &DialogueStrategy) -> PriorityRule {
    match strategy.intent {
        Intent::Reflection | Intent::Summarization => PriorityRule::Emphasize,
        Intent::Question | Intent::Other if strategy.has_seek() => PriorityRule::Seek,
        _ => PriorityRule::Generic,
    }
}

/// Byte spans of the sentences in `text`, whitespace-trimmed.
///
/// A boundary is a run of `.`, `!`, `?` or their full-width forms followed by
/// whitespace or the end of text (full-width terminators need no space).
/// Closing quotes and brackets stay with their sentence. Runs of two or more
/// dots, or runs containing `…`, are ellipses and only end a sentence when the
/// run also contains `!` or `?`.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if !is_terminator(chars[i].1) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let run: Vec<char> = chars[i..j].iter().map(|&(_, c)| c).collect();
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let dots = run.iter().filter(|&&c| c == '.').count();
        let ellipsis = dots >= 2 || run.contains(&'…');
        let strong = run.iter().any(|&c| matches!(c, '!' | '?' | '！' | '？'));
        let full_width = run.iter().any(|&c| matches!(c, '。' | '！' | '？'));
        let at_gap = j == chars.len() || chars[j].1.is_whitespace();
        if (!ellipsis || strong) && (at_gap || full_width) {
            let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
            push_trimmed(text, start, end, &mut spans);
            start = end;
        }
        i = j;
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

fn push_trimmed(text: &str, start: usize, end: usize, spans: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？' | '…')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '」' | '』' | '）')
}

pub fn split_sentences(text: &str) -> Vec<String> {
    sentence_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_string())
        .collect()
}

/// Cuts `text` after its `max`-th sentence. Returns the kept text and
/// whether anything was cut.
pub fn truncate_sentences(text: &str, max: usize) -> (String, bool) {
    let spans = sentence_spans(text);
    match (spans.first(), spans.get(max.saturating_sub(1))) {
        (Some(&(first, _)), Some(&(_, end))) if spans.len() > max => (text[first..end].to_string(), true),
        _ => (text.trim().to_string(), false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub raw: String,
    pub truncated: bool,
    pub request: ChatRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub history_window: usize,
    pub temperature: f64,
    pub max_sentences: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            history_window: 6,
            temperature: 1.0,
            max_sentences: MAX_SENTENCES,
        }
    }
}

const DEFAULT_TEMPLATE: &str = include_str!("../templates/response.toml");

pub fn default_template() -> PromptTemplate {
    PromptTemplate::from_toml_str("response", DEFAULT_TEMPLATE).expect("bundled template parses")
}

pub struct ResponseGenerator {
    gateway: Gateway,
    registry: SchemaRegistry,
    template: PromptTemplate,
    config: GeneratorConfig,
}

impl ResponseGenerator {
    pub fn new(
        gateway: Gateway,
        registry: SchemaRegistry,
        template: PromptTemplate,
        config: GeneratorConfig,
    ) -> Result<Self, GeneratorError> {
        let template = template.require(&[
            "history",
            "dialogue_state",
            "intent",
            "focuses",
            "seek_frame_type",
            "seek_attribute",
            "instruction",
        ])?;
        Ok(Self {
            gateway,
            registry,
            template,
            config,
        })
    }

    pub fn with_defaults(gateway: Gateway, registry: SchemaRegistry) -> Self {
        Self::new(gateway, registry, default_template(), GeneratorConfig::default())
            .expect("bundled response template is complete")
    }

    pub fn build_request(
        &self,
        strategy: &DialogueStrategy,
        state: &DialogueState,
        history: &[Utterance],
    ) -> Result<ChatRequest, GeneratorError> {
        strategy.validate(state, &self.registry)?;
        let history = &history[history.len().saturating_sub(self.config.history_window)..];
        let rule = priority_rule(strategy);
        let instruction = self.instruction(strategy, rule);
        let focuses = render_focuses(strategy, state, rule == PriorityRule::Emphasize)?;
        let (seek_ft, seek_attr) = match rule {
            PriorityRule::Emphasize => (String::new(), String::new()),
            _ => (
                format!(
                    "\nseek_frame_type: {}",
                    strategy.seek_frame_type.map_or("none", |ft| ft.as_str())
                ),
                format!(
                    "\nseek_attribute: {}",
                    strategy.seek_attribute.as_deref().unwrap_or("none")
                ),
            ),
        };
        let history_text = render_history(history);
        let state_text = state.to_canonical_json();
        let vars = [
            ("history", history_text.as_str()),
            ("dialogue_state", state_text.as_str()),
            ("intent", strategy.intent.as_str()),
            ("focuses", focuses.as_str()),
            ("seek_frame_type", seek_ft.as_str()),
            ("seek_attribute", seek_attr.as_str()),
            ("instruction", instruction.as_str()),
        ];
        let req = ChatRequest::new(
            self.template.render_system(&vars),
            vec![ChatMessage::user(self.template.render_user(&vars))],
            self.config.temperature,
        )?;
        Ok(req.with_max_sentences(self.config.max_sentences as u32))
    }

    pub fn generate(
        &self,
        strategy: &DialogueStrategy,
        state: &DialogueState,
        history: &[Utterance],
    ) -> Result<Generation, GeneratorError> {
        let request = self.build_request(strategy, state, history)?;
        let raw = self.gateway.complete(&request)?.text.unwrap_or_default();
        finish(raw, request, self.config.max_sentences)
    }

    fn instruction(&self, strategy: &DialogueStrategy, rule: PriorityRule) -> String {
        match rule {
            PriorityRule::Emphasize => {
                let verb = if strategy.intent == Intent::Summarization {
                    "Summarize what the client has told you so far"
                } else {
                    "Reflect the client's last statement back to them"
                };
                format!(
                    "{verb} and {EMPHASIZE_DIRECTIVE}. Build the response from the focused frames listed below."
                )
            }
            PriorityRule::Seek => seek_directive(strategy, &self.registry),
            PriorityRule::Generic => generic_instruction(strategy.intent).to_string(),
        }
    }
}

/// Applies the sentence limit to a raw completion.
pub(crate) fn finish(raw: String, request: ChatRequest, max: usize) -> Result<Generation, GeneratorError> {
    let (text, truncated) = truncate_sentences(&raw, max);
    if text.is_empty() {
        return Err(GeneratorError::EmptyResponse);
    }
    if truncated {
        info!(kept = max, "response truncated to sentence limit");
    }
    Ok(Generation {
        text,
        raw,
        truncated,
        request,
    })
}

fn seek_directive(strategy: &DialogueStrategy, registry: &SchemaRegistry) -> String {
    let frame_type = strategy.seek_target_type();
    match (&strategy.seek_attribute, frame_type) {
        (Some(attr), Some(ft)) => {
            let desc = describe_attribute(registry, ft, attr);
            format!(
                "{SEEK_DIRECTIVE} the `{attr}` of the client's {ft}{desc}. Keep it open-ended and refer to what the client just said."
            )
        }
        (Some(attr), None) => {
            format!("{SEEK_DIRECTIVE} the `{attr}` the client has not yet talked about. Keep it open-ended.")
        }
        (None, Some(ft)) => format!(
            "{SEEK_DIRECTIVE} a new {ft} from the client ({}). Keep it open-ended.",
            frame_type_gloss(ft)
        ),
        (None, None) => generic_instruction(strategy.intent).to_string(),
    }
}

fn describe_attribute(registry: &SchemaRegistry, ft: FrameType, attr: &str) -> String {
    registry
        .attributes(ft)
        .iter()
        .find(|a| a.name == attr && !a.description.is_empty())
        .map(|a| format!(" ({})", a.description))
        .unwrap_or_default()
}

fn frame_type_gloss(ft: FrameType) -> &'static str {
    match ft {
        FrameType::Goal => "what they want to achieve",
        FrameType::Problem => "a difficulty or concern they have",
        FrameType::Experience => "something they have tried and how it went",
        FrameType::Plan => "a concrete step they could take",
    }
}

fn generic_instruction(intent: Intent) -> &'static str {
    match intent {
        Intent::Question => "Ask an open question that helps the client explore the focused topics further.",
        Intent::Affirmation => "Affirm the client's strengths, efforts or values related to the focused topics.",
        Intent::Reflection => "Reflect the client's last statement back to them.",
        Intent::Summarization => "Summarize what the client has told you so far.",
        Intent::Other => {
            "Respond in the spirit of MI, for example by offering information with permission or supporting the client's autonomy."
        }
    }
}

fn render_focuses(
    strategy: &DialogueStrategy,
    state: &DialogueState,
    inline: bool,
) -> Result<String, ModelError> {
    if strategy.focuses.is_empty() {
        return Ok("- none".into());
    }
    let mut lines = Vec::new();
    for r in &strategy.focuses {
        if !inline {
            lines.push(format!("- {r}"));
            continue;
        }
        let line = match resolve_ref(state, r)? {
            Resolved::Frame(f) => format!("- {r}: {}", serde_json::to_string(f).expect("frame serializes")),
            Resolved::Attribute { value, .. } => format!("- {r}: {value}"),
        };
        lines.push(line);
    }
    Ok(lines.join("\n"))
}
