use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::AnalyzerError;

pub const MITI_CODE_COUNT: usize = 11;
pub const QUESTION_CODE_COUNT: usize = 12;

/// MI process a question belongs to: evoking or planning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Ev,
    Pl,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Ev => "ev",
            Phase::Pl => "pl",
        }
    }
}

/// MITI behavior codes plus the not-applicable category, with the roles the
/// metrics need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitiCodebook {
    pub codes: Vec<String>,
    pub not_applicable: String,
    pub question: String,
    pub simple_reflection: String,
    pub complex_reflection: String,
    pub non_adherent: Vec<String>,
}

impl Default for MitiCodebook {
    fn default() -> Self {
        let codes = [
            "giving_information",
            "persuade",
            "persuade_with_permission",
            "question",
            "simple_reflection",
            "complex_reflection",
            "affirm",
            "seeking_collaboration",
            "emphasizing_autonomy",
            "confront",
            "not_applicable",
        ];
        Self {
            codes: codes.iter().map(|c| c.to_string()).collect(),
            not_applicable: "not_applicable".into(),
            question: "question".into(),
            simple_reflection: "simple_reflection".into(),
            complex_reflection: "complex_reflection".into(),
            non_adherent: vec!["persuade".into(), "confront".into()],
        }
    }
}

impl MitiCodebook {
    pub fn validate(&self) -> Result<(), AnalyzerError> {
        let set: BTreeSet<&str> = self.codes.iter().map(String::as_str).collect();
        if self.codes.len() != MITI_CODE_COUNT || set.len() != MITI_CODE_COUNT {
            return Err(AnalyzerError::Config(format!(
                "MITI codebook needs {MITI_CODE_COUNT} distinct codes, has {}",
                set.len()
            )));
        }
        let roles = [
            &self.not_applicable,
            &self.question,
            &self.simple_reflection,
            &self.complex_reflection,
        ];
        for code in roles.into_iter().chain(&self.non_adherent) {
            if !set.contains(code.as_str()) {
                return Err(AnalyzerError::Config(format!("MITI role code `{code}` is not in the codebook")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, code: &str) -> bool {
        self.codes.iter().any(|c| c == code)
    }

    pub fn is_non_adherent(&self, code: &str) -> bool {
        self.non_adherent.iter().any(|c| c == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCategory {
    pub name: String,
    #[serde(default)]
    pub phase: Option<Phase>,
    /// Whether the question elicits change talk.
    #[serde(default)]
    pub eliciting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCodebook {
    pub categories: Vec<QuestionCategory>,
}

impl Default for QuestionCodebook {
    fn default() -> Self {
        let c = |name: &str, phase: Option<Phase>, eliciting: bool| QuestionCategory {
            name: name.into(),
            phase,
            eliciting,
        };
        Self {
            categories: vec![
                c("ev", Some(Phase::Ev), false),
                c("pl", Some(Phase::Pl), false),
                c("desire", Some(Phase::Ev), true),
                c("ability", Some(Phase::Ev), true),
                c("reason", Some(Phase::Ev), true),
                c("need", Some(Phase::Ev), true),
                c("custom_ev", Some(Phase::Ev), true),
                c("commitment", Some(Phase::Pl), true),
                c("activation", Some(Phase::Pl), true),
                c("taking_steps", Some(Phase::Pl), true),
                c("custom_pl", Some(Phase::Pl), true),
                c("other_question", None, false),
            ],
        }
    }
}

impl QuestionCodebook {
    pub fn validate(&self) -> Result<(), AnalyzerError> {
        let set: BTreeSet<&str> = self.categories.iter().map(|c| c.name.as_str()).collect();
        if self.categories.len() != QUESTION_CODE_COUNT || set.len() != QUESTION_CODE_COUNT {
            return Err(AnalyzerError::Config(format!(
                "question codebook needs {QUESTION_CODE_COUNT} distinct categories, has {}",
                set.len()
            )));
        }
        if let Some(c) = self.categories.iter().find(|c| c.eliciting && c.phase.is_none()) {
            return Err(AnalyzerError::Config(format!(
                "eliciting question category `{}` has no phase",
                c.name
            )));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&QuestionCategory> {
        self.categories.iter().find(|c| c.name == name)
    }
}
