use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::frame::{CONTENT, DETAIL, FRAME_TYPE};
use super::{DialogueState, Frame, FrameType, ModelError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// Declared attributes per frame type.
///
/// Loaded from a TOML or JSON file keyed by frame type; every type must be
/// present and must declare `content`. A type only accepts `detail` when it
/// is declared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<FrameType, Vec<AttributeSpec>>")]
#[serde(into = "IndexMap<FrameType, Vec<AttributeSpec>>")]
pub struct SchemaRegistry {
    schemas: IndexMap<FrameType, Vec<AttributeSpec>>,
}

const DEFAULT_SCHEMA: &str = include_str!("../../data/schema.toml");

impl Default for SchemaRegistry {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMA).expect("bundled schema registry is valid")
    }
}

impl TryFrom<IndexMap<FrameType, Vec<AttributeSpec>>> for SchemaRegistry {
    type Error = ModelError;

    fn try_from(schemas: IndexMap<FrameType, Vec<AttributeSpec>>) -> Result<Self, Self::Error> {
        Self::new(schemas)
    }
}

impl From<SchemaRegistry> for IndexMap<FrameType, Vec<AttributeSpec>> {
    fn from(r: SchemaRegistry) -> Self {
        r.schemas
    }
}

impl SchemaRegistry {
    pub fn new(schemas: IndexMap<FrameType, Vec<AttributeSpec>>) -> Result<Self, ModelError> {
        for ft in FrameType::ALL {
            let attrs = schemas
                .get(&ft)
                .ok_or_else(|| ModelError::InvalidRegistry(format!("missing `{ft}` schema")))?;
            let mut seen = HashSet::new();
            for a in attrs {
                if a.name.trim().is_empty() || a.name == FRAME_TYPE {
                    return Err(ModelError::InvalidRegistry(format!(
                        "invalid attribute name `{}` in `{ft}`",
                        a.name
                    )));
                }
                if !seen.insert(a.name.as_str()) {
                    return Err(ModelError::InvalidRegistry(format!(
                        "duplicate attribute `{}` in `{ft}`",
                        a.name
                    )));
                }
            }
            if !seen.contains(CONTENT) {
                return Err(ModelError::InvalidRegistry(format!(
                    "`{ft}` must declare `content`"
                )));
            }
        }
        let mut schemas = schemas;
        schemas.sort_by(|a, _, b, _| a.cmp(b));
        Ok(Self { schemas })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        toml::from_str(s).map_err(|e| ModelError::InvalidRegistry(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::InvalidRegistry(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str(&text).map_err(|e| ModelError::InvalidRegistry(e.to_string()))
            }
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn attributes(&self, frame_type: FrameType) -> &[AttributeSpec] {
        self.schemas.get(&frame_type).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_declared(&self, frame_type: FrameType, attribute: &str) -> bool {
        self.attributes(frame_type).iter().any(|a| a.name == attribute)
    }

    /// Every attribute carried by the frame must be declared for its type.
    pub fn validate_frame(&self, frame: &Frame) -> Result<(), ModelError> {
        if frame.content().trim().is_empty() {
            return Err(ModelError::EmptyContent);
        }
        for (name, _) in frame.set_attributes() {
            if !self.is_declared(frame.frame_type, name) {
                return Err(ModelError::UndeclaredAttribute {
                    frame_type: frame.frame_type,
                    attribute: name.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn validate_state(&self, state: &DialogueState) -> Result<(), ModelError> {
        state.frames().iter().try_for_each(|f| self.validate_frame(f))
    }

    /// Drops attributes that are not declared for the frame's type and
    /// returns their names.
    pub fn strip_undeclared(&self, frame: &mut Frame) -> Vec<String> {
        let mut dropped = Vec::new();
        if frame.detail.is_some() && !self.is_declared(frame.frame_type, DETAIL) {
            frame.detail = None;
            dropped.push(DETAIL.to_string());
        }
        let ft = frame.frame_type;
        frame.extra.retain(|k, _| {
            let keep = k != CONTENT && k != DETAIL && self.is_declared(ft, k);
            if !keep {
                dropped.push(k.clone());
            }
            keep
        });
        dropped
    }

    /// One line per frame type listing its attributes, used in prompts.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (ft, attrs) in &self.schemas {
            out.push_str(&format!("- {ft}:"));
            for a in attrs {
                if a.description.is_empty() {
                    out.push_str(&format!(" {};", a.name));
                } else {
                    out.push_str(&format!(" {} ({});", a.name, a.description));
                }
            }
            out.push('\n');
        }
        out
    }
}
