//! Service configuration, loaded from TOML. Credentials are never stored
//! here; providers name the environment variable that holds the key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mi_dialogue::analyzer::AnalyzerConfig;
use mi_dialogue::baselines::{MiFsConfig, MiGuideConfig};
use mi_dialogue::decider::DeciderConfig;
use mi_dialogue::embedding::RemoteEmbeddingConfig;
use mi_dialogue::generator::GeneratorConfig;
use mi_dialogue::llm::HttpChatConfig;
use mi_dialogue::tracker::TrackerConfig;

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum LlmConfig {
    /// Live OpenAI-compatible endpoint.
    Openai(HttpChatConfig),
    /// Recorded responses only; unknown requests fail.
    Replay { path: PathBuf },
    /// Live endpoint, appending every exchange to a replay file.
    Record {
        path: PathBuf,
        #[serde(flatten)]
        http: HttpChatConfig,
    },
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig::Openai(HttpChatConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hashed {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote(RemoteEmbeddingConfig),
}

fn default_dim() -> usize {
    mi_dialogue::embedding::FALLBACK_DIM
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashed { dim: default_dim() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Session journals and exported logs live under this directory.
    pub data_dir: PathBuf,
    pub pool: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub tracker_examples: Option<PathBuf>,
    pub mi_fs_samples: Option<PathBuf>,
    /// Directory with per-stage template overrides (`state_update.toml`,
    /// `strategy.toml`, `response.toml`, `mi_fs.toml`, `mi_guide.toml`).
    pub templates: Option<PathBuf>,
    /// Built chat-ui bundle served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            pool: None,
            schema: None,
            tracker_examples: None,
            mi_fs_samples: None,
            templates: None,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Client utterances required before a session counts as complete.
    pub min_user_utterances: usize,
    pub record_timestamps: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            min_user_utterances: 15,
            record_timestamps: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub server: ServerConfig,
    pub paths: PathsConfig,
    pub llm: LlmConfig,
    pub llm_max_retries: Option<u32>,
    pub embedding: EmbeddingConfig,
    pub tracker: TrackerConfig,
    pub decider: DeciderConfig,
    pub generator: GeneratorConfig,
    pub mi_fs: MiFsConfig,
    pub mi_guide: MiGuideConfig,
    pub analyzer: AnalyzerConfig,
}

impl ServiceConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ServiceError> {
        toml::from_str(s).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
            match &mut cfg.llm {
                LlmConfig::Replay { path } | LlmConfig::Record { path, .. } => rebase(path, base),
                LlmConfig::Openai(_) => {}
            }
        }
        Ok(cfg)
    }
}

impl PathsConfig {
    fn rebase(&mut self, base: &Path) {
        rebase(&mut self.data_dir, base);
        for p in [
            &mut self.pool,
            &mut self.schema,
            &mut self.tracker_examples,
            &mut self.mi_fs_samples,
            &mut self.templates,
            &mut self.static_dir,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p, base);
        }
    }
}

fn rebase(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}
