//! Per-condition analysis over exported session logs and their annotations.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use tracing::warn;

use mi_dialogue::analyzer::{analyze, compare_conditions, load_annotations, AnalyzerConfig, Comparison, MetricsReport};
use mi_dialogue::model::Condition;

use crate::session::{read_log, LogRecord};
use crate::ServiceError;

/// Maps session ids to conditions by reading every exported log in `dir`.
pub fn conditions_from_logs(dir: &Path) -> Result<HashMap<String, Condition>, ServiceError> {
    let mut out = HashMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::Storage(format!("{}: {e}", dir.display())))?;
    for entry in entries.filter_map(Result::ok) {
        let path = entry.path();
        if path.extension().is_none_or(|x| x != "jsonl") {
            continue;
        }
        if let Some(LogRecord::Session {
            session_id, condition, ..
        }) = read_log(&path)?.into_iter().next()
        {
            out.insert(session_id, condition);
        }
    }
    Ok(out)
}

/// Groups annotated sessions by condition (in `ours`, `mi_fs`, `mi_guide`,
/// `corpus` order) and computes one report per condition. Annotated
/// sessions without a log are skipped.
pub fn analyze_conditions(
    logs: &Path,
    annotations: &Path,
    config: &AnalyzerConfig,
) -> Result<(IndexMap<String, MetricsReport>, Comparison), ServiceError> {
    let analyzer_err = |e: mi_dialogue::analyzer::AnalyzerError| ServiceError::Config(e.to_string());
    let conditions = conditions_from_logs(logs)?;
    let sessions = load_annotations(annotations).map_err(analyzer_err)?;
    let mut grouped: IndexMap<Condition, Vec<_>> = IndexMap::new();
    for c in [Condition::Ours, Condition::MiFs, Condition::MiGuide, Condition::Corpus] {
        grouped.insert(c, Vec::new());
    }
    for s in sessions {
        match conditions.get(&s.session_id) {
            Some(c) => grouped.entry(*c).or_default().push(s),
            None => warn!(session = %s.session_id, "annotated session has no exported log; skipped"),
        }
    }
    let mut reports = IndexMap::new();
    for (condition, sessions) in grouped.into_iter().filter(|(_, v)| !v.is_empty()) {
        reports.insert(condition.as_str().to_string(), analyze(&sessions, config).map_err(analyzer_err)?);
    }
    let comparison = compare_conditions(&reports, &config.thresholds).map_err(analyzer_err)?;
    Ok((reports, comparison))
}
