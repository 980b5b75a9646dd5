//! MI-fidelity metrics over sentence-level annotations: MITI behavior-code
//! tallies, %CR, R:Q, %MI non-adherent, question-category rates and the
//! bucketed question-ratio series.
//!
//! Annotations arrive as JSONL, one session per line:
//! `{session_id, sentences: [{turn, idx, text, miti, question?, phase?}]}`.
//! Only counselor sentences are annotated.

mod codebook;
mod report;

pub use codebook::{MitiCodebook, Phase, QuestionCategory, QuestionCodebook, MITI_CODE_COUNT, QUESTION_CODE_COUNT};
pub use report::{compare_conditions, read_comparison_csv, Comparison, Verdict};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("analyzer configuration: {0}")]
    Config(String),
    #[error("annotation i/o: {0}")]
    Io(String),
    #[error("{path} line {line}: {reason}")]
    Format { path: String, line: usize, reason: String },
    #[error("session {session}: {reason}")]
    InvalidAnnotation { session: String, reason: String },
    #[error("session {0} has no counselor utterances")]
    EmptyTranscript(String),
    #[error("no reports to compare")]
    NoReports,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceAnnotation {
    pub turn: u32,
    pub idx: u32,
    pub text: String,
    pub miti: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAnnotation {
    pub session_id: String,
    pub sentences: Vec<SentenceAnnotation>,
}

impl SessionAnnotation {
    /// Sentences grouped by counselor utterance, in turn order.
    pub fn utterances(&self) -> Vec<Vec<&SentenceAnnotation>> {
        let mut by_turn: BTreeMap<u32, Vec<&SentenceAnnotation>> = BTreeMap::new();
        for s in &self.sentences {
            by_turn.entry(s.turn).or_default().push(s);
        }
        by_turn.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub pct_cr_fair: f64,
    pub pct_cr_good: f64,
    pub r_to_q_fair: f64,
    pub r_to_q_good: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            pct_cr_fair: 0.4,
            pct_cr_good: 0.5,
            r_to_q_fair: 1.0,
            r_to_q_good: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    pub miti: MitiCodebook,
    pub questions: QuestionCodebook,
    pub thresholds: Thresholds,
    pub bucket_size: usize,
    /// Buckets compared across sessions; longer sessions are cut.
    pub max_buckets: usize,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            miti: MitiCodebook::default(),
            questions: QuestionCodebook::default(),
            thresholds: Thresholds::default(),
            bucket_size: 3,
            max_buckets: 7,
        }
    }
}

impl AnalyzerConfig {
    pub fn validate(&self) -> Result<(), AnalyzerError> {
        self.miti.validate()?;
        self.questions.validate()?;
        if self.bucket_size == 0 || self.max_buckets == 0 {
            return Err(AnalyzerError::Config("bucket size and count must be positive".into()));
        }
        Ok(())
    }
}

/// Reads one JSONL file, or every `*.jsonl` file in a directory (sorted by
/// name).
pub fn load_annotations(path: &Path) -> Result<Vec<SessionAnnotation>, AnalyzerError> {
    let io = |e: std::io::Error| AnalyzerError::Io(format!("{}: {e}", path.display()));
    let files = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = Vec::new();
    for f in files {
        let file = std::fs::File::open(&f).map_err(|e| AnalyzerError::Io(format!("{}: {e}", f.display())))?;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| AnalyzerError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let s = serde_json::from_str(&line).map_err(|e| AnalyzerError::Format {
                path: f.display().to_string(),
                line: n + 1,
                reason: e.to_string(),
            })?;
            out.push(s);
        }
    }
    Ok(out)
}

pub fn validate_session(session: &SessionAnnotation, config: &AnalyzerConfig) -> Result<(), AnalyzerError> {
    let bad = |reason: String| AnalyzerError::InvalidAnnotation {
        session: session.session_id.clone(),
        reason,
    };
    let mut seen = BTreeSet::new();
    for s in &session.sentences {
        if !seen.insert((s.turn, s.idx)) {
            return Err(bad(format!("sentence {}/{} is coded more than once", s.turn, s.idx)));
        }
        if !config.miti.contains(&s.miti) {
            return Err(bad(format!("unknown MITI code `{}`", s.miti)));
        }
        if let Some(q) = &s.question {
            if s.miti != config.miti.question {
                return Err(bad(format!(
                    "sentence {}/{} has a question category but MITI code `{}`",
                    s.turn, s.idx, s.miti
                )));
            }
            if config.questions.get(q).is_none() {
                return Err(bad(format!("unknown question category `{q}`")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitiMetrics {
    pub counts: IndexMap<String, usize>,
    pub total_sentences: usize,
    pub pct_cr: Option<f64>,
    pub r_to_q: Option<f64>,
    pub pct_mi_non_adherent: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_miti_metrics(sessions: &[SessionAnnotation], config: &AnalyzerConfig) -> MitiMetrics {
    let book = &config.miti;
    let mut counts: IndexMap<String, usize> = book.codes.iter().map(|c| (c.clone(), 0)).collect();
    let mut total = 0;
    for s in sessions.iter().flat_map(|s| &s.sentences) {
        if let Some(n) = counts.get_mut(&s.miti) {
            *n += 1;
            total += 1;
        }
    }
    let get = |c: &str| counts.get(c).copied().unwrap_or(0);
    let cr = get(&book.complex_reflection);
    let sr = get(&book.simple_reflection);
    let q = get(&book.question);
    let non_adherent: usize = book.non_adherent.iter().map(|c| get(c)).sum();
    let behavior = total - get(&book.not_applicable);
    MitiMetrics {
        pct_cr: ratio(cr, cr + sr),
        r_to_q: ratio(cr + sr, q),
        pct_mi_non_adherent: ratio(non_adherent, behavior),
        counts,
        total_sentences: total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMetrics {
    pub question_count: usize,
    pub total_sentences: usize,
    pub question_rate: f64,
    pub ev_sentences: usize,
    pub pl_sentences: usize,
    pub ev_elicit_count: usize,
    pub pl_elicit_count: usize,
    pub ev_elicit_rate: f64,
    pub pl_elicit_rate: f64,
}

/// The phase a sentence occurs in: its annotated phase, else the phase of
/// its question category.
fn sentence_phase(s: &SentenceAnnotation, book: &QuestionCodebook) -> Option<Phase> {
    s.phase
        .or_else(|| s.question.as_deref().and_then(|q| book.get(q)).and_then(|c| c.phase))
}

/// Elicit rates count change-talk-eliciting questions of a phase among the
/// sentences occurring in that phase; an empty phase has rate 0.
pub fn compute_question_analysis(sessions: &[SessionAnnotation], config: &AnalyzerConfig) -> QuestionMetrics {
    let book = &config.questions;
    let mut m = QuestionMetrics {
        question_count: 0,
        total_sentences: 0,
        question_rate: 0.0,
        ev_sentences: 0,
        pl_sentences: 0,
        ev_elicit_count: 0,
        pl_elicit_count: 0,
        ev_elicit_rate: 0.0,
        pl_elicit_rate: 0.0,
    };
    for s in sessions.iter().flat_map(|s| &s.sentences) {
        m.total_sentences += 1;
        if s.miti == config.miti.question {
            m.question_count += 1;
        }
        let phase = sentence_phase(s, book);
        match phase {
            Some(Phase::Ev) => m.ev_sentences += 1,
            Some(Phase::Pl) => m.pl_sentences += 1,
            None => {}
        }
        let category = s.question.as_deref().and_then(|q| book.get(q));
        if let Some(c) = category.filter(|c| c.eliciting && c.phase == phase) {
            match c.phase {
                Some(Phase::Ev) => m.ev_elicit_count += 1,
                Some(Phase::Pl) => m.pl_elicit_count += 1,
                None => {}
            }
        }
    }
    m.question_rate = ratio(m.question_count, m.total_sentences).unwrap_or(0.0);
    m.ev_elicit_rate = ratio(m.ev_elicit_count, m.ev_sentences).unwrap_or(0.0);
    m.pl_elicit_rate = ratio(m.pl_elicit_count, m.pl_sentences).unwrap_or(0.0);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub utterances: usize,
    pub sentences: usize,
    pub ev_questions: usize,
    pub pl_questions: usize,
    pub ev_ratio: f64,
    pub pl_ratio: f64,
}

/// Groups counselor utterances in order into buckets of `bucket_size`; the
/// last bucket may be smaller. Ratios are phase-question sentences over all
/// sentences in the bucket.
pub fn bucket_question_ratios(
    session: &SessionAnnotation,
    config: &AnalyzerConfig,
) -> Result<Vec<Bucket>, AnalyzerError> {
    let utterances = session.utterances();
    if utterances.is_empty() {
        return Err(AnalyzerError::EmptyTranscript(session.session_id.clone()));
    }
    Ok(utterances
        .chunks(config.bucket_size)
        .map(|chunk| {
            let sentences: Vec<&SentenceAnnotation> = chunk.iter().flatten().copied().collect();
            let phase_count = |p: Phase| {
                sentences
                    .iter()
                    .filter(|s| {
                        s.question
                            .as_deref()
                            .and_then(|q| config.questions.get(q))
                            .is_some_and(|c| c.phase == Some(p))
                    })
                    .count()
            };
            let ev = phase_count(Phase::Ev);
            let pl = phase_count(Phase::Pl);
            Bucket {
                utterances: chunk.len(),
                sentences: sentences.len(),
                ev_questions: ev,
                pl_questions: pl,
                ev_ratio: ratio(ev, sentences.len()).unwrap_or(0.0),
                pl_ratio: ratio(pl, sentences.len()).unwrap_or(0.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAverage {
    pub index: usize,
    pub sessions: usize,
    pub ev_ratio: f64,
    pub pl_ratio: f64,
}

/// Per-position mean over sessions of the first `max_buckets` buckets.
/// Sessions with fewer buckets contribute only the positions they have.
pub fn average_buckets(series: &[Vec<Bucket>], max_buckets: usize) -> Vec<BucketAverage> {
    let len = series.iter().map(|s| s.len().min(max_buckets)).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let present: Vec<&Bucket> = series.iter().filter_map(|s| s.get(i)).collect();
            let n = present.len() as f64;
            BucketAverage {
                index: i,
                sessions: present.len(),
                ev_ratio: present.iter().map(|b| b.ev_ratio).sum::<f64>() / n,
                pl_ratio: present.iter().map(|b| b.pl_ratio).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions: usize,
    pub miti: MitiMetrics,
    pub questions: QuestionMetrics,
    pub buckets: Vec<BucketAverage>,
    pub pct_cr_verdict: Option<Verdict>,
    pub r_to_q_verdict: Option<Verdict>,
}

pub fn analyze(sessions: &[SessionAnnotation], config: &AnalyzerConfig) -> Result<MetricsReport, AnalyzerError> {
    config.validate()?;
    for s in sessions {
        validate_session(s, config)?;
    }
    let series = sessions
        .iter()
        .map(|s| bucket_question_ratios(s, config))
        .collect::<Result<Vec<_>, _>>()?;
    let miti = compute_miti_metrics(sessions, config);
    let t = &config.thresholds;
    Ok(MetricsReport {
        sessions: sessions.len(),
        pct_cr_verdict: miti.pct_cr.map(|v| Verdict::of(v, t.pct_cr_fair, t.pct_cr_good)),
        r_to_q_verdict: miti.r_to_q.map(|v| Verdict::of(v, t.r_to_q_fair, t.r_to_q_good)),
        questions: compute_question_analysis(sessions, config),
        buckets: average_buckets(&series, config.max_buckets),
        miti,
    })
}
