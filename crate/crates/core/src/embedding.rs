//! Text embeddings and cosine similarity.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::llm::GatewayError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains non-finite components")]
    NonFinite,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbeddingRepr")]
pub struct Embedding {
    vector: Vec<f64>,
    dim: usize,
}

#[derive(Deserialize)]
struct EmbeddingRepr {
    vector: Vec<f64>,
    dim: usize,
}

impl TryFrom<EmbeddingRepr> for Embedding {
    type Error = EmbeddingError;

    fn try_from(r: EmbeddingRepr) -> Result<Self, Self::Error> {
        if r.vector.len() != r.dim {
            return Err(EmbeddingError::DimensionMismatch(r.vector.len(), r.dim));
        }
        Embedding::new(r.vector)
    }
}

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Result<Self, EmbeddingError> {
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let dim = vector.len();
        Ok(Self { vector, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dim != b.dim {
        return Err(EmbeddingError::DimensionMismatch(a.dim, b.dim));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError>;

    fn dim(&self) -> usize;

    /// Identifies the provider and model; a stored pool is re-embedded when
    /// this changes.
    fn fingerprint(&self) -> String;
}

pub const FALLBACK_DIM: usize = 512;
const NGRAM: usize = 3;

/// Offline embedder: character trigram counts hashed into a fixed number of
/// buckets, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dim: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self { dim: FALLBACK_DIM }
    }
}

impl HashedNgramEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl EmbeddingProvider for HashedNgramEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let chars: Vec<char> = text.chars().collect();
        let mut v = vec![0.0f64; self.dim];
        let grams: Box<dyn Iterator<Item = &[char]>> = if chars.len() < NGRAM {
            Box::new(std::iter::once(chars.as_slice()))
        } else {
            Box::new(chars.windows(NGRAM))
        };
        let mut buf = [0u8; 4];
        for gram in grams {
            let mut h = FnvHasher::default();
            for c in gram {
                h.write(c.encode_utf8(&mut buf).as_bytes());
            }
            v[(h.finish() % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Embedding::new(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hashed-char{NGRAM}gram-fnv1a:{}", self.dim)
    }
}

/// Settings for an OpenAI-style `/embeddings` endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_timeout() -> u64 {
    30
}

pub struct RemoteEmbedder {
    config: RemoteEmbeddingConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbeddingConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent = crate::llm::http::http_agent(config.timeout_secs);
        Self {
            config,
            agent,
            api_key,
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let url = format!("{}/embeddings", self.config.endpoint.trim_end_matches('/'));
        let body = json!({"model": self.config.model, "input": text});
        let v = crate::llm::http::post_json(&self.agent, &url, self.api_key.as_deref(), &body)
            .map_err(|e| match e {
                GatewayError::ProviderUnavailable(m) => EmbeddingError::ProviderUnavailable(m),
                other => EmbeddingError::ProviderUnavailable(other.to_string()),
            })?;
        let vector: Vec<f64> = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbeddingError::ProviderUnavailable(format!("{url}: no embedding")))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(f64::NAN))
            .collect();
        if vector.len() != self.config.dim {
            return Err(EmbeddingError::DimensionMismatch(vector.len(), self.config.dim));
        }
        Embedding::new(vector)
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}:{}", self.config.model, self.config.dim)
    }
}
