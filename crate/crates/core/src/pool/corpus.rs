use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PoolError;
use crate::model::{Intent, Speaker, Utterance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusUtterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misc_label: Option<String>,
}

/// One annotated counseling dialogue (a line of the corpus JSONL).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDialogue {
    pub dialogue_id: String,
    pub utterances: Vec<CorpusUtterance>,
}

impl CorpusDialogue {
    pub fn to_utterances(&self) -> Vec<Utterance> {
        self.utterances
            .iter()
            .enumerate()
            .map(|(i, u)| Utterance {
                speaker: u.speaker,
                text: u.text.clone(),
                turn_index: i as u32,
                timestamp: None,
            })
            .collect()
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusDialogue>, PoolError> {
    let file = std::fs::File::open(path).map_err(|e| PoolError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PoolError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: CorpusDialogue = serde_json::from_str(&line).map_err(|e| PoolError::CorpusFormat {
            line: n + 1,
            reason: e.to_string(),
        })?;
        if d.utterances.iter().any(|u| u.text.trim().is_empty()) {
            return Err(PoolError::CorpusFormat {
                line: n + 1,
                reason: format!("dialogue `{}` has an empty utterance", d.dialogue_id),
            });
        }
        if out.iter().any(|o: &CorpusDialogue| o.dialogue_id == d.dialogue_id) {
            return Err(PoolError::CorpusFormat {
                line: n + 1,
                reason: format!("duplicate dialogue id `{}`", d.dialogue_id),
            });
        }
        out.push(d);
    }
    Ok(out)
}

/// MISC label → intent table. Lookup is case-insensitive; labels not in the
/// table map to [`Intent::Other`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentMapping {
    pub labels: BTreeMap<String, Intent>,
}

impl Default for IntentMapping {
    fn default() -> Self {
        let mut labels = BTreeMap::new();
        for l in ["question", "open_question", "closed_question", "oq", "cq", "quo", "quc"] {
            labels.insert(l.to_string(), Intent::Question);
        }
        for l in [
            "reflection",
            "reflections",
            "simple_reflection",
            "complex_reflection",
            "sr",
            "cr",
            "res",
            "rec",
        ] {
            labels.insert(l.to_string(), Intent::Reflection);
        }
        for l in ["affirm", "affirmation", "af"] {
            labels.insert(l.to_string(), Intent::Affirmation);
        }
        for l in ["summarize", "summary", "summarization", "su"] {
            labels.insert(l.to_string(), Intent::Summarization);
        }
        Self { labels }
    }
}

impl IntentMapping {
    pub fn map(&self, label: &str) -> Intent {
        let key = label.trim().to_lowercase().replace([' ', '-'], "_");
        self.labels.get(&key).copied().unwrap_or(Intent::Other)
    }
}
