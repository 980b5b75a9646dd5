use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError};

/// One line of a replay store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub fingerprint: String,
    /// Human-readable hint of what the request was; not used for lookup.
    pub request_digest: String,
    pub response: ChatResponse,
}

/// Fingerprint-keyed responses, optionally backed by a JSONL file.
#[derive(Debug, Default)]
pub struct ReplayStore {
    entries: HashMap<String, ChatResponse>,
    path: Option<PathBuf>,
}

fn digest_of(request: &ChatRequest) -> String {
    let last = request
        .messages
        .last()
        .map(|m| m.content.as_str())
        .unwrap_or_default();
    let tail: String = last
        .chars()
        .rev()
        .take(120)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    format!("t={} | {}", request.temperature, tail.replace('\n', " / "))
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates on first write) a JSONL store. Later lines win on
    /// duplicate fingerprints.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| storage(&path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| storage(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                    GatewayError::Storage(format!("{} line {}: {e}", path.display(), n + 1))
                })?;
                entries.insert(rec.fingerprint, rec.response);
            }
        }
        Ok(Self {
            entries,
            path: Some(path),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, request: &ChatRequest) -> Option<&ChatResponse> {
        self.entries.get(&request.fingerprint())
    }

    /// Persists `response` under the request fingerprint.
    pub fn record(&mut self, request: &ChatRequest, response: &ChatResponse) -> Result<(), GatewayError> {
        let rec = ReplayRecord {
            fingerprint: request.fingerprint(),
            request_digest: digest_of(request),
            response: response.clone(),
        };
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| storage(path, e))?;
            let line = serde_json::to_string(&rec).map_err(|e| GatewayError::Storage(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| storage(path, e))?;
        }
        self.entries.insert(rec.fingerprint, rec.response);
        Ok(())
    }
}

fn storage(path: &Path, e: std::io::Error) -> GatewayError {
    GatewayError::Storage(format!("{}: {e}", path.display()))
}

/// Answers only from recorded responses.
pub struct ReplayProvider {
    store: RwLock<ReplayStore>,
}

impl ReplayProvider {
    pub fn new(store: ReplayStore) -> Self {
        Self {
            store: RwLock::new(store),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        Ok(Self::new(ReplayStore::open(path)?))
    }

    /// Primes the store in place (tests and fixture scripts).
    pub fn prime(&self, request: &ChatRequest, response: ChatResponse) -> Result<(), GatewayError> {
        self.store.write().unwrap().record(request, &response)
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.store
            .read()
            .unwrap()
            .lookup(request)
            .cloned()
            .ok_or_else(|| GatewayError::ReplayMiss(request.fingerprint()))
    }
}

/// Forwards to a live provider and records every response.
pub struct RecordingProvider<P> {
    inner: P,
    store: Mutex<ReplayStore>,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P, store: ReplayStore) -> Self {
        Self {
            inner,
            store: Mutex::new(store),
        }
    }

    pub fn record_mode(&self, request: &ChatRequest, live: &ChatResponse) -> Result<(), GatewayError> {
        self.store.lock().unwrap().record(request, live)
    }

    pub fn into_store(self) -> ReplayStore {
        self.store.into_inner().unwrap()
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let resp = self.inner.complete(request)?;
        self.record_mode(request, &resp)?;
        Ok(resp)
    }
}

type Script = dyn Fn(&ChatRequest) -> Result<ChatResponse, GatewayError> + Send + Sync;

/// Provider backed by a closure; used to script fixtures.
pub struct ScriptedProvider {
    script: Box<Script>,
}

impl ScriptedProvider {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ChatResponse, GatewayError> + Send + Sync + 'static,
    {
        Self { script: Box::new(f) }
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (self.script)(request)
    }
}
