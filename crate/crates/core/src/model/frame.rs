use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// The four frame schemas a dialogue topic can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    Goal,
    Problem,
    Experience,
    Plan,
}

impl FrameType {
    pub const ALL: [FrameType; 4] = [
        FrameType::Goal,
        FrameType::Problem,
        FrameType::Experience,
        FrameType::Plan,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FrameType::Goal => "goal",
            FrameType::Problem => "problem",
            FrameType::Experience => "experience",
            FrameType::Plan => "plan",
        }
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrameType {
    type Err = String;

    /// Case-insensitive; also accepts the long class-style names LLMs tend to
    /// echo back (`ProblemAndTroubleFrame`, `ImprovementPlanFrame`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.trim().to_lowercase();
        let key = lowered.trim_end_matches("frame").trim_end_matches('_');
        match key {
            "goal" | "goalandideal" | "goal_and_ideal" => Ok(FrameType::Goal),
            "problem" | "problemandtrouble" | "problem_and_trouble" => Ok(FrameType::Problem),
            "experience" => Ok(FrameType::Experience),
            "plan" | "improvementplan" | "improvement_plan" => Ok(FrameType::Plan),
            _ => Err(format!("unknown frame type `{s}`")),
        }
    }
}

/// Core attribute names that live outside `extra`.
pub(crate) const CONTENT: &str = "content";
pub(crate) const DETAIL: &str = "detail";
pub(crate) const FRAME_TYPE: &str = "frame_type";

/// One topic in the dialogue state.
///
/// Schema-specific attributes (`harm_effect`, `effect`, ...) are flattened
/// into the JSON object next to `frame_type`, `content` and `detail`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FrameRepr")]
pub struct Frame {
    pub frame_type: FrameType,
    content: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(flatten)]
    pub extra: IndexMap<String, String>,
}

#[derive(Deserialize)]
struct FrameRepr {
    frame_type: FrameType,
    content: String,
    #[serde(default)]
    detail: Option<String>,
    #[serde(flatten)]
    extra: IndexMap<String, String>,
}

impl TryFrom<FrameRepr> for Frame {
    type Error = ModelError;

    fn try_from(r: FrameRepr) -> Result<Self, Self::Error> {
        let mut frame = Frame::new(r.frame_type, r.content)?;
        frame.detail = r.detail;
        frame.extra = r.extra;
        Ok(frame)
    }
}

impl Frame {
    pub fn new(frame_type: FrameType, content: impl Into<String>) -> Result<Self, ModelError> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(ModelError::EmptyContent);
        }
        Ok(Self {
            frame_type,
            content,
            detail: None,
            extra: IndexMap::new(),
        })
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.set_attribute(name, value);
        self
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    /// Value of a named attribute; `content` and `detail` are addressable
    /// the same way as schema-specific attributes.
    pub fn attribute(&self, name: &str) -> Option<&str> {
        match name {
            CONTENT => Some(&self.content),
            DETAIL => self.detail.as_deref(),
            other => self.extra.get(other).map(String::as_str),
        }
    }

    /// Sets `detail` or an extra attribute. Setting `content` is ignored when
    /// the new value is blank.
    pub fn set_attribute(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        let value = value.into();
        match name.as_str() {
            CONTENT => {
                if !value.trim().is_empty() {
                    self.content = value;
                }
            }
            DETAIL => self.detail = Some(value),
            _ => {
                self.extra.insert(name, value);
            }
        }
    }

    /// Attribute names that currently carry a value, excluding `content`.
    pub fn set_attributes(&self) -> impl Iterator<Item = (&str, &str)> {
        self.detail
            .as_deref()
            .map(|d| (DETAIL, d))
            .into_iter()
            .chain(self.extra.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn identity_key(&self) -> (FrameType, String) {
        (self.frame_type, super::normalize_content(&self.content))
    }
}
