//! Session lifecycle, write-ahead journaling and log export.
//!
//! Each session has an append-only journal at `<data_dir>/sessions/<id>.jsonl`
//! (one `created` record, one `turn` record per completed turn, and an
//! `ended` record). A turn is computed first, journaled second and applied
//! last, so a failed stage or write leaves the session untouched. Ended
//! sessions are exported to `<data_dir>/logs/<id>.jsonl`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use mi_dialogue::model::{
    Condition, DialogueState, DialogueStrategy, Speaker, StateSnapshot, StrategyTraceEntry, Transcript, Utterance,
};

use crate::engine::{Engine, TurnTrace};
use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub turn_index: u32,
    pub trace: TurnTrace,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: String,
    pub condition: Condition,
    pub topic_hint: Option<String>,
    pub status: SessionStatus,
    pub state: DialogueState,
    pub transcript: Transcript,
    pub traces: Vec<TraceEntry>,
    pub log_path: Option<PathBuf>,
}

impl Session {
    pub fn user_utterance_count(&self) -> usize {
        self.transcript.client_count()
    }
}

/// Read-only snapshot returned by `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_hint: Option<String>,
    pub status: SessionStatus,
    pub state: DialogueState,
    pub transcript: Transcript,
    pub user_utterance_count: usize,
    pub min_user_utterances: usize,
    pub protocol_met: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReply {
    pub counselor_text: String,
    pub state: DialogueState,
    pub strategy: Option<DialogueStrategy>,
    pub trace: TraceEntry,
    pub user_utterance_count: usize,
    pub protocol_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndReply {
    pub session_id: String,
    pub log_path: PathBuf,
    pub user_utterance_count: usize,
    pub protocol_met: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum JournalRecord {
    Created {
        session_id: String,
        condition: Condition,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topic_hint: Option<String>,
    },
    Turn {
        client: Utterance,
        counselor: Utterance,
        state: DialogueState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strategy: Option<DialogueStrategy>,
        trace: TurnTrace,
    },
    Ended {
        log_path: PathBuf,
    },
}

/// One line of an exported session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogRecord {
    Session {
        session_id: String,
        condition: Condition,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topic_hint: Option<String>,
        user_utterance_count: usize,
        min_user_utterances: usize,
        protocol_met: bool,
    },
    Utterance(Utterance),
    StateSnapshot(StateSnapshot),
    Strategy(StrategyTraceEntry),
    Trace(TraceEntry),
}

/// Reads an exported log back into its records.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display()))))
        .collect()
}

type IdGen = Box<dyn Fn() -> String + Send + Sync>;
type Clock = Box<dyn Fn() -> Option<DateTime<Utc>> + Send + Sync>;

pub struct SessionManager {
    engine: Arc<Engine>,
    data_dir: PathBuf,
    min_user_utterances: usize,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    ids: IdGen,
    clock: Clock,
}

impl SessionManager {
    /// Opens the data directory and reloads every journaled session.
    pub fn open(engine: Arc<Engine>, data_dir: impl Into<PathBuf>, min_user_utterances: usize) -> Result<Self, ServiceError> {
        let data_dir = data_dir.into();
        for sub in ["sessions", "logs"] {
            std::fs::create_dir_all(data_dir.join(sub)).map_err(|e| storage(&data_dir, e))?;
        }
        let mut sessions = HashMap::new();
        let mut journals: Vec<PathBuf> = std::fs::read_dir(data_dir.join("sessions"))
            .map_err(|e| storage(&data_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        journals.sort();
        for path in journals {
            let s = replay_journal(&path)?;
            sessions.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
        }
        Ok(Self {
            engine,
            data_dir,
            min_user_utterances,
            sessions: RwLock::new(sessions),
            ids: Box::new(|| uuid::Uuid::new_v4().simple().to_string()),
            clock: Box::new(|| Some(Utc::now())),
        })
    }

    pub fn with_id_generator(mut self, ids: impl Fn() -> String + Send + Sync + 'static) -> Self {
        self.ids = Box::new(ids);
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> Option<DateTime<Utc>> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn min_user_utterances(&self) -> usize {
        self.min_user_utterances
    }

    fn journal_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("sessions").join(format!("{id}.jsonl"))
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("logs").join(format!("{id}.jsonl"))
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn create_session(&self, condition: Condition, topic_hint: Option<String>) -> Result<SessionView, ServiceError> {
        self.engine.check_condition(condition)?;
        let mut map = self.sessions.write().expect("session map lock");
        let id = loop {
            let id = (self.ids)();
            if !map.contains_key(&id) && !self.journal_path(&id).exists() {
                break id;
            }
        };
        let record = JournalRecord::Created {
            session_id: id.clone(),
            condition,
            topic_hint: topic_hint.clone(),
        };
        let path = self.journal_path(&id);
        let mut f = OpenOptions::new()
            .create_new(true)
            .write(true)
            .open(&path)
            .map_err(|e| storage(&path, e))?;
        append_record(&mut f, &path, &record)?;
        let session = Session {
            session_id: id.clone(),
            condition,
            topic_hint,
            status: SessionStatus::Active,
            state: DialogueState::new(),
            transcript: Transcript::new(id.clone(), condition),
            traces: Vec::new(),
            log_path: None,
        };
        let view = self.view(&session);
        map.insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    /// Runs one turn under the session's lock. On any error the session is
    /// left exactly as it was.
    pub fn post_utterance(&self, id: &str, text: &str) -> Result<TurnReply, ServiceError> {
        let handle = self.get(id)?;
        let mut session = handle.lock().expect("session lock");
        if session.status == SessionStatus::Ended {
            return Err(ServiceError::SessionEnded(id.to_string()));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::EmptyUtterance);
        }
        let turn = session.transcript.next_turn_index();
        let mut client = Utterance::new(Speaker::Client, text, turn).map_err(|_| ServiceError::EmptyUtterance)?;
        client.timestamp = (self.clock)();
        let mut history = session.transcript.utterances.clone();
        history.push(client.clone());

        let outcome = self.engine.respond(session.condition, &session.state, &history)?;

        let strategy = outcome.strategy.clone();
        let mut counselor = Utterance::counselor(outcome.counselor_text.clone(), turn + 1);
        counselor.timestamp = (self.clock)();
        let record = JournalRecord::Turn {
            client,
            counselor,
            state: outcome.state,
            strategy: outcome.strategy,
            trace: outcome.trace,
        };
        let path = self.journal_path(id);
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| storage(&path, e))?;
        append_record(&mut f, &path, &record)?;
        apply(&mut session, record);

        let trace = session.traces.last().cloned().expect("turn just applied");
        Ok(TurnReply {
            counselor_text: outcome.counselor_text,
            state: session.state.clone(),
            strategy,
            trace,
            user_utterance_count: session.user_utterance_count(),
            protocol_met: session.user_utterance_count() >= self.min_user_utterances,
        })
    }

    /// Ends the session and exports its log. Ending twice returns the same
    /// path.
    pub fn end_session(&self, id: &str) -> Result<EndReply, ServiceError> {
        let handle = self.get(id)?;
        let mut session = handle.lock().expect("session lock");
        let count = session.user_utterance_count();
        let protocol_met = count >= self.min_user_utterances;
        if let (SessionStatus::Ended, Some(path)) = (session.status, &session.log_path) {
            return Ok(EndReply {
                session_id: id.to_string(),
                log_path: path.clone(),
                user_utterance_count: count,
                protocol_met,
            });
        }
        let log_path = self.log_path(id);
        write_export(&session, self.min_user_utterances, &log_path)?;
        let path = self.journal_path(id);
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| storage(&path, e))?;
        let record = JournalRecord::Ended {
            log_path: log_path.clone(),
        };
        append_record(&mut f, &path, &record)?;
        apply(&mut session, record);
        Ok(EndReply {
            session_id: id.to_string(),
            log_path,
            user_utterance_count: count,
            protocol_met,
        })
    }

    pub fn get_session(&self, id: &str) -> Result<SessionView, ServiceError> {
        let handle = self.get(id)?;
        let session = handle.lock().expect("session lock");
        Ok(self.view(&session))
    }

    pub fn get_trace(&self, id: &str) -> Result<Vec<TraceEntry>, ServiceError> {
        let handle = self.get(id)?;
        let session = handle.lock().expect("session lock");
        Ok(session.traces.clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn view(&self, s: &Session) -> SessionView {
        SessionView {
            session_id: s.session_id.clone(),
            condition: s.condition,
            topic_hint: s.topic_hint.clone(),
            status: s.status,
            state: s.state.clone(),
            transcript: s.transcript.clone(),
            user_utterance_count: s.user_utterance_count(),
            min_user_utterances: self.min_user_utterances,
            protocol_met: s.user_utterance_count() >= self.min_user_utterances,
            log_path: s.log_path.clone(),
        }
    }
}

fn storage(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Storage(format!("{}: {e}", path.display()))
}

fn append_record(f: &mut File, path: &Path, record: &JournalRecord) -> Result<(), ServiceError> {
    let mut line = serde_json::to_string(record).expect("journal record serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| storage(path, e))?;
    f.sync_data().map_err(|e| storage(path, e))
}

fn apply(session: &mut Session, record: JournalRecord) {
    match record {
        JournalRecord::Created { .. } => {}
        JournalRecord::Turn {
            client,
            counselor,
            state,
            strategy,
            trace,
        } => {
            let turn_index = counselor.turn_index;
            session.transcript.utterances.push(client);
            session.transcript.utterances.push(counselor);
            if session.condition == Condition::Ours {
                session.transcript.state_snapshots.push(StateSnapshot {
                    turn_index,
                    state: state.clone(),
                });
            }
            if let Some(strategy) = strategy {
                session
                    .transcript
                    .strategy_trace
                    .push(StrategyTraceEntry { turn_index, strategy });
            }
            session.state = state;
            session.traces.push(TraceEntry { turn_index, trace });
        }
        JournalRecord::Ended { log_path } => {
            session.status = SessionStatus::Ended;
            session.log_path = Some(log_path);
        }
    }
}

/// Rebuilds a session from its journal. A torn final line (a write that
/// never completed) is ignored; corruption anywhere else is an error.
fn replay_journal(path: &Path) -> Result<Session, ServiceError> {
    let file = File::open(path).map_err(|e| storage(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| storage(path, e))?;
    let mut session: Option<Session> = None;
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: JournalRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) if i == last && session.is_some() => {
                warn!(path = %path.display(), error = %e, "ignoring torn final journal record");
                break;
            }
            Err(e) => return Err(ServiceError::Storage(format!("{} line {}: {e}", path.display(), i + 1))),
        };
        match (&mut session, record) {
            (
                None,
                JournalRecord::Created {
                    session_id,
                    condition,
                    topic_hint,
                },
            ) => {
                session = Some(Session {
                    transcript: Transcript::new(session_id.clone(), condition),
                    session_id,
                    condition,
                    topic_hint,
                    status: SessionStatus::Active,
                    state: DialogueState::new(),
                    traces: Vec::new(),
                    log_path: None,
                });
            }
            (Some(s), r @ (JournalRecord::Turn { .. } | JournalRecord::Ended { .. })) => apply(s, r),
            _ => {
                return Err(ServiceError::Storage(format!(
                    "{} line {}: unexpected record",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    session.ok_or_else(|| ServiceError::Storage(format!("{}: empty journal", path.display())))
}

fn write_export(session: &Session, min_user_utterances: usize, path: &Path) -> Result<(), ServiceError> {
    let count = session.user_utterance_count();
    let t = &session.transcript;
    let mut records = vec![LogRecord::Session {
        session_id: session.session_id.clone(),
        condition: session.condition,
        topic_hint: session.topic_hint.clone(),
        user_utterance_count: count,
        min_user_utterances,
        protocol_met: count >= min_user_utterances,
    }];
    records.extend(t.utterances.iter().cloned().map(LogRecord::Utterance));
    records.extend(t.state_snapshots.iter().cloned().map(LogRecord::StateSnapshot));
    records.extend(t.strategy_trace.iter().cloned().map(LogRecord::Strategy));
    records.extend(session.traces.iter().cloned().map(LogRecord::Trace));
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r).expect("log record serializes"));
        out.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, out).map_err(|e| storage(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| storage(path, e))
}
