use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use sheetrag_core::agent::{HttpBackend, LlmBackend, LoopBudget, ScriptedBackend};
use sheetrag_core::index::{Embedder, FusionConfig, HttpEmbedder, MockEmbedder};

use crate::CliError;

pub const DEFAULT_CONFIG_FILE: &str = "sheetrag.toml";
pub const DEFAULT_API_KEY_ENV: &str = "SHEETRAG_API_KEY";

/// Settings read from the TOML config file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub index: Option<PathBuf>,
    pub backend: Option<String>,
    pub embedder: Option<String>,
    pub k: Option<usize>,
    pub rrf_k: Option<u32>,
    pub budget: Option<usize>,
    pub concurrency: Option<usize>,
    pub cutoffs: Option<Vec<usize>>,
    /// Name of the environment variable holding the provider credential.
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub embedding_model: Option<String>,
    pub embedding_dimension: Option<usize>,
    pub timeout_secs: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::User(format!("config {}: {e}", path.display())))
    }

    /// The explicit path if given, else `sheetrag.toml` in the working
    /// directory when present.
    pub fn discover(explicit: Option<&Path>) -> Result<FileConfig, CliError> {
        match explicit {
            Some(p) => Self::load(p),
            None if Path::new(DEFAULT_CONFIG_FILE).is_file() => Self::load(Path::new(DEFAULT_CONFIG_FILE)),
            None => Ok(FileConfig::default()),
        }
    }
}

/// Values given on the command line or through the environment; clap has
/// already applied flag-over-environment precedence.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub index: Option<PathBuf>,
    pub backend: Option<String>,
    pub embedder: Option<String>,
    pub k: Option<usize>,
    pub rrf_k: Option<u32>,
    pub budget: Option<usize>,
    pub concurrency: Option<usize>,
    pub cutoffs: Option<Vec<usize>>,
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Scripted(PathBuf),
    Http(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderSpec {
    Mock(usize),
    Http(String),
}

#[derive(Debug, Clone)]
pub struct Config {
    pub index: Option<PathBuf>,
    pub backend: Option<BackendSpec>,
    pub embedder: EmbedderSpec,
    pub k: usize,
    pub rrf_k: u32,
    pub budget: usize,
    pub concurrency: usize,
    pub cutoffs: Vec<usize>,
    pub api_key_env: String,
    pub model: Option<String>,
    pub embedding_model: Option<String>,
    pub embedding_dimension: Option<usize>,
    pub timeout_secs: Option<u64>,
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(name: &str, v: T) -> Result<T, CliError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::User(format!("{name} must be positive, got {v}")))
    }
}

pub fn parse_backend(s: &str) -> Result<BackendSpec, CliError> {
    if let Some(path) = s.strip_prefix("scripted:") {
        let path = PathBuf::from(path);
        if !path.is_file() {
            return Err(CliError::User(format!("backend script {} not found", path.display())));
        }
        return Ok(BackendSpec::Scripted(path));
    }
    if s.starts_with("http://") || s.starts_with("https://") {
        return Ok(BackendSpec::Http(s.to_string()));
    }
    Err(CliError::User(format!(
        "unknown backend `{s}`: expected scripted:<path> or an http(s) URL"
    )))
}

pub fn parse_embedder(s: &str) -> Result<EmbedderSpec, CliError> {
    if s == "mock" {
        return Ok(EmbedderSpec::Mock(MockEmbedder::DEFAULT_DIMENSION));
    }
    if let Some(d) = s.strip_prefix("mock:") {
        let d: usize = d
            .parse()
            .map_err(|_| CliError::User(format!("embedder `{s}`: dimension must be an integer")))?;
        return Ok(EmbedderSpec::Mock(positive("embedder dimension", d)?));
    }
    if s.starts_with("http://") || s.starts_with("https://") {
        return Ok(EmbedderSpec::Http(s.to_string()));
    }
    Err(CliError::User(format!(
        "unknown embedder `{s}`: expected mock, mock:<dimension> or an http(s) URL"
    )))
}

/// A comma-separated cutoff list taken as one argument value.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutoffs(pub Vec<usize>);

pub fn parse_cutoffs(s: &str) -> Result<Cutoffs, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("`{p}` is not a cutoff")))
        .collect::<Result<_, _>>()
        .map(Cutoffs)
}

impl Config {
    /// Flags and environment first, then the config file, then defaults.
    pub fn resolve(over: Overrides, file: FileConfig) -> Result<Config, CliError> {
        let backend = over.backend.or(file.backend).map(|s| parse_backend(&s)).transpose()?;
        let embedder = parse_embedder(&over.embedder.or(file.embedder).unwrap_or_else(|| "mock".into()))?;
        let defaults = LoopBudget::default();
        let fusion = FusionConfig::default();
        let cutoffs = over
            .cutoffs
            .or(file.cutoffs)
            .unwrap_or_else(|| sheetrag_core::evalkit::DEFAULT_CUTOFFS.to_vec());
        if cutoffs.is_empty() || cutoffs.contains(&0) {
            return Err(CliError::User("cutoffs must be positive".into()));
        }
        Ok(Config {
            index: over.index.or(file.index),
            backend,
            embedder,
            k: positive("k", over.k.or(file.k).unwrap_or(defaults.initial_k))?,
            rrf_k: positive("rrf_k", over.rrf_k.or(file.rrf_k).unwrap_or(fusion.k))?,
            budget: positive("budget", over.budget.or(file.budget).unwrap_or(defaults.max_tool_iterations))?,
            concurrency: positive(
                "concurrency",
                over.concurrency
                    .or(file.concurrency)
                    .unwrap_or(sheetrag_core::planner::DEFAULT_CONCURRENCY),
            )?,
            cutoffs,
            api_key_env: over
                .api_key_env
                .or(file.api_key_env)
                .unwrap_or_else(|| DEFAULT_API_KEY_ENV.into()),
            model: file.model,
            embedding_model: file.embedding_model,
            embedding_dimension: file.embedding_dimension,
            timeout_secs: file.timeout_secs,
        })
    }

    pub fn budget(&self) -> LoopBudget {
        LoopBudget {
            max_tool_iterations: self.budget,
            initial_k: self.k,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            k: self.rrf_k,
            top_k: self.k,
            ..FusionConfig::default()
        }
    }

    pub fn index_dir(&self) -> Result<&Path, CliError> {
        self.index
            .as_deref()
            .ok_or_else(|| CliError::User("no index directory: pass --index or set SHEETRAG_INDEX".into()))
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, CliError> {
        Ok(match &self.embedder {
            EmbedderSpec::Mock(d) => Arc::new(MockEmbedder::new(*d)),
            EmbedderSpec::Http(url) => {
                let dimension = self.embedding_dimension.ok_or_else(|| {
                    CliError::User("an http embedder needs embedding_dimension in the config file".into())
                })?;
                let mut e = HttpEmbedder::new(url.clone(), self.embedding_model.clone(), positive("embedding_dimension", dimension)?);
                e.api_key_env = Some(self.api_key_env.clone());
                if let Some(t) = self.timeout_secs {
                    e.timeout_secs = t;
                }
                Arc::new(e)
            }
        })
    }

    pub fn backend(&self) -> Result<Box<dyn LlmBackend>, CliError> {
        match &self.backend {
            None => Err(CliError::User(
                "no backend: pass --backend scripted:<path> or an http(s) URL".into(),
            )),
            Some(BackendSpec::Scripted(path)) => Ok(Box::new(
                ScriptedBackend::from_path(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?,
            )),
            Some(BackendSpec::Http(url)) => {
                let mut b = HttpBackend::new(url.clone());
                b.model = self.model.clone();
                b.api_key_env = Some(self.api_key_env.clone());
                if let Some(t) = self.timeout_secs {
                    b.timeout_secs = t;
                }
                Ok(Box::new(b))
            }
        }
    }
}
