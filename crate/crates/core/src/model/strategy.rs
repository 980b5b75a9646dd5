use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DialogueState, FrameType, ModelError, SchemaRegistry};

/// Communicative intent of a counselor response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "String")]
pub enum Intent {
    Question,
    Affirmation,
    Reflection,
    Summarization,
    Other,
}

impl Intent {
    pub const ALL: [Intent; 5] = [
        Intent::Question,
        Intent::Affirmation,
        Intent::Reflection,
        Intent::Summarization,
        Intent::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Intent::Question => "question",
            Intent::Affirmation => "affirmation",
            Intent::Reflection => "reflection",
            Intent::Summarization => "summarization",
            Intent::Other => "other",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "question" => Ok(Intent::Question),
            "affirmation" | "affirm" => Ok(Intent::Affirmation),
            "reflection" => Ok(Intent::Reflection),
            "summarization" | "summary" => Ok(Intent::Summarization),
            "other" => Ok(Intent::Other),
            _ => Err(format!("unknown intent `{s}`")),
        }
    }
}

impl TryFrom<String> for Intent {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Reference to a frame, optionally narrowed to one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_type: FrameType,
    pub index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_attribute: Option<String>,
}

impl FrameRef {
    pub fn new(frame_type: FrameType, index: u32) -> Self {
        Self {
            frame_type,
            index,
            frame_attribute: None,
        }
    }

    pub fn with_attribute(mut self, attribute: impl Into<String>) -> Self {
        self.frame_attribute = Some(attribute.into());
        self
    }

    /// The frame exists and the attribute, if any, is declared for its type.
    pub fn check(&self, state: &DialogueState, registry: &SchemaRegistry) -> Result<(), ModelError> {
        if state.frame(self.frame_type, self.index).is_none() {
            return Err(ModelError::UnresolvedReference(format!(
                "no {} frame #{}",
                self.frame_type, self.index
            )));
        }
        if let Some(attr) = &self.frame_attribute {
            if !registry.is_declared(self.frame_type, attr) {
                return Err(ModelError::UndeclaredAttribute {
                    frame_type: self.frame_type,
                    attribute: attr.clone(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.frame_type, self.index)?;
        if let Some(a) = &self.frame_attribute {
            write!(f, ".{a}")?;
        }
        Ok(())
    }
}

/// Intent plus the frames to focus on and the information to elicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueStrategy {
    pub intent: Intent,
    #[serde(default)]
    pub focuses: Vec<FrameRef>,
    #[serde(default)]
    pub seek_frame_type: Option<FrameType>,
    #[serde(default)]
    pub seek_attribute: Option<String>,
}

/// What [`DialogueStrategy::repair_from_value`] had to change.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairLog {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_focuses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleared_seek_frame_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleared_seek_attribute: Option<String>,
}

impl RepairLog {
    pub fn is_clean(&self) -> bool {
        self.dropped_focuses.is_empty()
            && self.cleared_seek_frame_type.is_none()
            && self.cleared_seek_attribute.is_none()
    }
}

impl DialogueStrategy {
    pub fn new(intent: Intent) -> Self {
        Self {
            intent,
            focuses: Vec::new(),
            seek_frame_type: None,
            seek_attribute: None,
        }
    }

    pub fn with_focus(mut self, r: FrameRef) -> Self {
        self.focuses.push(r);
        self
    }

    pub fn seeking(mut self, frame_type: Option<FrameType>, attribute: Option<&str>) -> Self {
        self.seek_frame_type = frame_type;
        self.seek_attribute = attribute.map(str::to_string);
        self
    }

    pub fn has_seek(&self) -> bool {
        self.seek_frame_type.is_some() || self.seek_attribute.is_some()
    }

    /// Frame type the seek attribute is interpreted against.
    pub fn seek_target_type(&self) -> Option<FrameType> {
        self.seek_frame_type
            .or_else(|| self.focuses.first().map(|f| f.frame_type))
    }

    pub fn validate(&self, state: &DialogueState, registry: &SchemaRegistry) -> Result<(), ModelError> {
        for f in &self.focuses {
            f.check(state, registry)?;
        }
        if let Some(attr) = &self.seek_attribute {
            let target = self.seek_target_type().ok_or_else(|| {
                ModelError::InvalidStrategy(format!(
                    "seek_attribute `{attr}` without seek_frame_type or focuses"
                ))
            })?;
            if !registry.is_declared(target, attr) {
                return Err(ModelError::InvalidStrategy(format!(
                    "seek_attribute `{attr}` is not declared for {target}"
                )));
            }
        }
        Ok(())
    }

    /// Parses loosely structured LLM output and repairs reference-level
    /// problems: unresolvable focuses are dropped, an unknown
    /// `seek_frame_type` or undeclared `seek_attribute` is cleared.
    ///
    /// When `intent` is given it replaces whatever the value carries. A
    /// missing or unknown intent is not repairable.
    pub fn repair_from_value(
        value: &Value,
        intent: Option<Intent>,
        state: &DialogueState,
        registry: &SchemaRegistry,
    ) -> Result<(Self, RepairLog), ModelError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ModelError::InvalidStrategy("strategy is not an object".into()))?;
        let intent = match intent {
            Some(i) => i,
            None => match obj.get("intent") {
                Some(Value::String(s)) => s.parse().map_err(ModelError::InvalidStrategy)?,
                _ => return Err(ModelError::InvalidStrategy("missing intent".into())),
            },
        };

        let mut log = RepairLog::default();
        let mut focuses = Vec::new();
        if let Some(Value::Array(items)) = obj.get("focuses") {
            for item in items {
                match parse_focus(item) {
                    Some(r) if r.check(state, registry).is_ok() => {
                        if !focuses.contains(&r) {
                            focuses.push(r);
                        }
                    }
                    _ => log.dropped_focuses.push(item.to_string()),
                }
            }
        }

        let seek_frame_type = match optional_str(obj.get("seek_frame_type")) {
            None => None,
            Some(s) => match s.parse::<FrameType>() {
                Ok(ft) => Some(ft),
                Err(_) => {
                    log.cleared_seek_frame_type = Some(s.to_string());
                    None
                }
            },
        };

        let mut strategy = DialogueStrategy {
            intent,
            focuses,
            seek_frame_type,
            seek_attribute: optional_str(obj.get("seek_attribute")).map(str::to_string),
        };
        if let Some(attr) = strategy.seek_attribute.clone() {
            let ok = strategy
                .seek_target_type()
                .is_some_and(|t| registry.is_declared(t, &attr));
            if !ok {
                strategy.seek_attribute = None;
                log.cleared_seek_attribute = Some(attr);
            }
        }

        strategy
            .validate(state, registry)
            .map_err(|e| ModelError::InvalidStrategy(e.to_string()))?;
        Ok((strategy, log))
    }
}

fn optional_str(v: Option<&Value>) -> Option<&str> {
    match v {
        Some(Value::String(s)) => {
            let t = s.trim();
            if t.is_empty() || t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("null") {
                None
            } else {
                Some(t)
            }
        }
        _ => None,
    }
}

fn parse_focus(v: &Value) -> Option<FrameRef> {
    let obj = v.as_object()?;
    let frame_type = obj.get("frame_type")?.as_str()?.parse().ok()?;
    let index = match obj.get("index")? {
        Value::Number(n) => n.as_u64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    let index = u32::try_from(index).ok().filter(|i| *i > 0)?;
    let attribute = optional_str(obj.get("frame_attribute"))
        .or_else(|| optional_str(obj.get("frame_attributes")))
        .map(str::to_string);
    Some(FrameRef {
        frame_type,
        index,
        frame_attribute: attribute,
    })
}
