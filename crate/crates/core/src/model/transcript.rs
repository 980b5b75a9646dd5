use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DialogueState, DialogueStrategy, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Counselor,
    Client,
}

impl Speaker {
    /// Prefix used when rendering history lines.
    pub fn label(&self) -> &'static str {
        match self {
            Speaker::Counselor => "Counselor",
            Speaker::Client => "Client",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>, turn_index: u32) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        Ok(Self {
            speaker,
            text,
            turn_index,
            timestamp: None,
        })
    }

    pub fn client(text: impl Into<String>, turn_index: u32) -> Self {
        Self::new(Speaker::Client, text, turn_index).expect("non-empty client utterance")
    }

    pub fn counselor(text: impl Into<String>, turn_index: u32) -> Self {
        Self::new(Speaker::Counselor, text, turn_index).expect("non-empty counselor utterance")
    }

    /// `Counselor: ...` / `Client: ...`
    pub fn render(&self) -> String {
        format!("{}: {}", self.speaker.label(), self.text)
    }
}

/// Which pipeline produced a transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Ours,
    MiFs,
    MiGuide,
    Corpus,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Ours => "ours",
            Condition::MiFs => "mi_fs",
            Condition::MiGuide => "mi_guide",
            Condition::Corpus => "corpus",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "ours" => Ok(Condition::Ours),
            "mi_fs" => Ok(Condition::MiFs),
            "mi_guide" => Ok(Condition::MiGuide),
            "corpus" => Ok(Condition::Corpus),
            _ => Err(format!("unknown condition `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub turn_index: u32,
    pub state: DialogueState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyTraceEntry {
    pub turn_index: u32,
    pub strategy: DialogueStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub condition: Condition,
    #[serde(default)]
    pub utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_snapshots: Vec<StateSnapshot>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategy_trace: Vec<StrategyTraceEntry>,
}

impl Transcript {
    pub fn new(session_id: impl Into<String>, condition: Condition) -> Self {
        Self {
            session_id: session_id.into(),
            condition,
            utterances: Vec::new(),
            state_snapshots: Vec::new(),
            strategy_trace: Vec::new(),
        }
    }

    pub fn next_turn_index(&self) -> u32 {
        self.utterances.last().map_or(0, |u| u.turn_index + 1)
    }

    pub fn client_count(&self) -> usize {
        self.utterances
            .iter()
            .filter(|u| u.speaker == Speaker::Client)
            .count()
    }

    /// The last `n` utterances, oldest first.
    pub fn window(&self, n: usize) -> &[Utterance] {
        let start = self.utterances.len().saturating_sub(n);
        &self.utterances[start..]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut prev: Option<u32> = None;
        for u in &self.utterances {
            if u.text.trim().is_empty() {
                return Err(ModelError::EmptyUtterance);
            }
            if prev.is_some_and(|p| u.turn_index <= p) {
                return Err(ModelError::InvalidTranscript(format!(
                    "turn_index {} does not increase",
                    u.turn_index
                )));
            }
            prev = Some(u.turn_index);
        }
        let counselor_turns: HashSet<u32> = self
            .utterances
            .iter()
            .filter(|u| u.speaker == Speaker::Counselor)
            .map(|u| u.turn_index)
            .collect();
        let dangling = self
            .state_snapshots
            .iter()
            .map(|s| s.turn_index)
            .chain(self.strategy_trace.iter().map(|s| s.turn_index))
            .find(|t| !counselor_turns.contains(t));
        if let Some(t) = dangling {
            return Err(ModelError::InvalidTranscript(format!(
                "snapshot or trace entry at turn {t} has no counselor utterance"
            )));
        }
        Ok(())
    }
}
