//! Application configuration shared by the CLI and the HTTP service.
//!
//! Read from TOML, or JSON when the file name ends in `.json`. Relative paths
//! are resolved against the configuration file's directory.
//!
//! ```toml
//! store_root = "store"
//! corpus_root = "corpus"
//!
//! [provider]
//! kind = "openai"
//! endpoint = "https://api.openai.com/v1"
//! model = "gpt-4"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, FixedClock, SystemClock};
use crate::gateway::{Fallback, Gateway, GatewayError, MockProvider, MockScript, ProviderConfig};
use crate::pipeline::{GenerationSettings, Pipeline};
use crate::prompts::PromptSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFallback {
    #[default]
    Digest,
    Echo,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Mock {
        #[serde(default)]
        script: Option<PathBuf>,
        #[serde(default)]
        fallback: MockFallback,
        #[serde(default)]
        model: Option<String>,
    },
    #[serde(rename = "openai")]
    OpenAi(ProviderConfig),
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Mock {
            script: None,
            fallback: MockFallback::Digest,
            model: None,
        }
    }
}

impl ProviderSpec {
    /// Parses a command-line override: `mock` or `mock:<script.json>`.
    pub fn parse_override(spec: &str) -> Result<Self> {
        match spec.split_once(':') {
            None if spec == "mock" => Ok(ProviderSpec::default()),
            Some(("mock", path)) if !path.is_empty() => Ok(ProviderSpec::Mock {
                script: Some(PathBuf::from(path)),
                fallback: MockFallback::Digest,
                model: None,
            }),
            _ => Err(Error::precondition(format!(
                "unsupported provider override `{spec}`; expected `mock` or `mock:<script.json>`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Allowed CORS origins; empty disables cross-origin access.
    pub cors_allowlist: Vec<String>,
    pub body_limit_bytes: usize,
    /// Write session transcripts into the store when a session is closed.
    pub persist_transcripts: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            cors_allowlist: Vec::new(),
            body_limit_bytes: 2 * 1024 * 1024,
            persist_transcripts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub store_root: PathBuf,
    /// Base directory for relative corpus paths given at registration.
    pub corpus_root: Option<PathBuf>,
    /// Directory with custom prompt templates; the built-in set otherwise.
    pub prompts_dir: Option<PathBuf>,
    /// Question bank JSON; the placeholder bank otherwise.
    pub question_bank: Option<PathBuf>,
    pub provider: ProviderSpec,
    pub generation: GenerationSettings,
    pub server: ServerConfig,
    /// Pin all timestamps so repeated runs write identical bytes.
    pub fixed_clock: bool,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            store_root: PathBuf::from("store"),
            corpus_root: None,
            prompts_dir: None,
            question_bank: None,
            provider: ProviderSpec::default(),
            generation: GenerationSettings::default(),
            server: ServerConfig::default(),
            fixed_clock: false,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let mut config: AppConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Json {
                context: path.display().to_string(),
                source: e,
            })?
        } else {
            toml::from_str(&text).map_err(|e| Error::validation(format!("config {}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.store_root);
        for p in [
            &mut config.corpus_root,
            &mut config.prompts_dir,
            &mut config.question_bank,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        if let ProviderSpec::Mock { script: Some(p), .. } = &mut config.provider {
            resolve(base, p);
        }
        Ok(config)
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        match &self.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir),
            None => Ok(PromptSet::default()),
        }
    }

    /// Resolves a corpus path given at registration time.
    pub fn corpus_path(&self, path: &Path) -> PathBuf {
        match &self.corpus_root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        if self.fixed_clock {
            Arc::new(FixedClock::epoch())
        } else {
            Arc::new(SystemClock)
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let gateway = build_gateway(&self.provider)?;
        Ok(Pipeline::new(Arc::new(gateway), self.prompts()?)
            .with_settings(self.generation.clone())
            .with_clock(self.clock()))
    }
}

pub fn build_gateway(spec: &ProviderSpec) -> Result<Gateway, GatewayError> {
    match spec {
        ProviderSpec::Mock {
            script,
            fallback,
            model,
        } => {
            let script = match script {
                Some(path) => MockScript::from_json_file(path)?,
                None => MockScript::new(),
            };
            let fallback = match fallback {
                MockFallback::Digest => Fallback::Digest,
                MockFallback::Echo => Fallback::EchoLastUser,
                MockFallback::Empty => Fallback::Empty,
            };
            let mut provider = MockProvider::new(script, fallback);
            if let Some(m) = model {
                provider = provider.with_model(m.clone());
            }
            Ok(Gateway::mock(Arc::new(provider)))
        }
        ProviderSpec::OpenAi(config) => Gateway::from_config(config),
    }
}
