//! Prompt templates with `{placeholder}` slots.
//!
//! Templates are TOML files with a `system` and a `user` string. Rendering is
//! a single pass over the template: substituted values are never rescanned,
//! so JSON or braces inside values pass through untouched. Unknown
//! placeholders are left as written.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::model::Utterance;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {0}: {1}")]
    Load(String, String),
    #[error("template `{name}` is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { name: String, placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub name: String,
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn from_toml_str(name: &str, s: &str) -> Result<Self, TemplateError> {
        let mut t: PromptTemplate =
            toml::from_str(s).map_err(|e| TemplateError::Load(name.to_string(), e.to_string()))?;
        if t.name.is_empty() {
            t.name = name.to_string();
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Load(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&path.display().to_string(), &text)
    }

    /// Fails when any of `placeholders` appears in neither part.
    pub fn require(self, placeholders: &[&str]) -> Result<Self, TemplateError> {
        for p in placeholders {
            let slot = format!("{{{p}}}");
            if !self.system.contains(&slot) && !self.user.contains(&slot) {
                return Err(TemplateError::MissingPlaceholder {
                    name: self.name.clone(),
                    placeholder: p.to_string(),
                });
            }
        }
        Ok(self)
    }

    pub fn render_system(&self, vars: &[(&str, &str)]) -> String {
        render(&self.system, vars)
    }

    pub fn render_user(&self, vars: &[(&str, &str)]) -> String {
        render(&self.user, vars)
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let hit = close.and_then(|c| {
            let key = &after[..c];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (c, *v))
        });
        match hit {
            Some((c, value)) => {
                out.push_str(value);
                rest = &after[c + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// One `Counselor: ...` / `Client: ...` line per utterance.
pub fn render_history(history: &[Utterance]) -> String {
    history
        .iter()
        .map(Utterance::render)
        .collect::<Vec<_>>()
        .join("\n")
}
