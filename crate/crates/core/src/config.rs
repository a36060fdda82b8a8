//! Run configuration.
//!
//! The config file is flat `key = value` text; `#` starts a comment line.
//! Relative paths in a file are resolved against the file's directory.
//! Every key can also be given as a command-line flag of the same name,
//! which takes precedence.
//!
//! ```text
//! manifest = data/harm.jsonl
//! embeddings = data/harm.emb.jsonl
//! k = 3
//! lambda-v = 0.8
//! lambda-t = 0.2
//! mode = full
//! backend = http
//! endpoint = http://localhost:8000/v1/chat/completions
//! model = llava-1.5-13b
//! prompts.deriving = prompts/deriving.txt
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendConfig, BackendKind};
use crate::eval::ErrorPolicy;
use crate::pipeline::Mode;
use crate::prompts::{PromptPaths, DEFAULT_MAX_INSIGHTS};
use crate::retrieval::FusionWeights;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("{key} = {value:?}: {detail}")]
    BadValue { key: String, value: String, detail: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("reading {path}: {detail}")]
    Io { path: String, detail: String },
}

/// Every recognised key, in canonical order.
pub const KEYS: &[&str] = &[
    "manifest",
    "embeddings",
    "index",
    "lambda-v",
    "lambda-t",
    "k",
    "mode",
    "backend",
    "endpoint",
    "model",
    "temperature",
    "timeout-secs",
    "max-inflight",
    "mock-scenario",
    "prompts.deriving",
    "prompts.debater",
    "prompts.judge",
    "prompts.baseline",
    "max-insights",
    "seed",
    "sample-parallelism",
    "cache",
    "cache-dir",
    "out",
    "error-policy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Persisted index; defaults to `<out>/index/index.jsonl`.
    pub index: Option<PathBuf>,
    pub lambda_v: f64,
    pub lambda_t: f64,
    pub k: usize,
    pub mode: Mode,
    pub backend: BackendConfig,
    pub mock_scenario: Option<PathBuf>,
    pub prompts: PromptPaths,
    pub max_insights: usize,
    pub seed: u64,
    pub sample_parallelism: usize,
    pub cache: bool,
    /// Defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub error_policy: ErrorPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        let weights = FusionWeights::default();
        RunConfig {
            manifest: None,
            embeddings: None,
            index: None,
            lambda_v: weights.lambda_v,
            lambda_t: weights.lambda_t,
            k: 3,
            mode: Mode::Full,
            backend: BackendConfig {
                kind: BackendKind::Http,
                model_name: String::new(),
                ..BackendConfig::default()
            },
            mock_scenario: None,
            prompts: PromptPaths::default(),
            max_insights: DEFAULT_MAX_INSIGHTS,
            seed: 0,
            sample_parallelism: 4,
            cache: true,
            cache_dir: None,
            out: PathBuf::from("mind-out"),
            error_policy: ErrorPolicy::Incorrect,
        }
    }
}

fn bad(key: &str, value: &str, detail: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), detail: detail.into() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| bad(key, value, e.to_string()))
}

fn weight(key: &str, value: &str) -> Result<f64, ConfigError> {
    match num::<f64>(key, value)? {
        w if w.is_finite() && w >= 0.0 => Ok(w),
        _ => Err(bad(key, value, "must be a finite non-negative number")),
    }
}

fn positive(key: &str, value: &str) -> Result<usize, ConfigError> {
    match num::<usize>(key, value)? {
        0 => Err(bad(key, value, "must be positive")),
        n => Ok(n),
    }
}

/// `key = value` pairs with their line numbers.
pub fn parse_config_text(input: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut pairs: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in input.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line: i + 1, key: key.into() });
        }
        if pairs.iter().any(|(_, k, _)| k == key) {
            return Err(ConfigError::DuplicateKey { line: i + 1, key: key.into() });
        }
        pairs.push((i + 1, key.into(), value.into()));
    }
    Ok(pairs)
}

impl RunConfig {
    /// Sets one key. Relative paths are joined onto `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let path = || {
            let p = PathBuf::from(value);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        if value.is_empty() {
            return Err(bad(key, value, "empty value"));
        }
        match key {
            "manifest" => self.manifest = Some(path()),
            "embeddings" => self.embeddings = Some(path()),
            "index" => self.index = Some(path()),
            "lambda-v" => self.lambda_v = weight(key, value)?,
            "lambda-t" => self.lambda_t = weight(key, value)?,
            "k" => self.k = num(key, value)?,
            "mode" => self.mode = value.parse().map_err(|e: String| bad(key, value, e))?,
            "backend" => {
                self.backend.kind = match value {
                    "http" => BackendKind::Http,
                    "mock" => BackendKind::Mock,
                    _ => return Err(bad(key, value, "expected http or mock")),
                }
            }
            "endpoint" => self.backend.endpoint = Some(value.into()),
            "model" => self.backend.model_name = value.into(),
            "temperature" => {
                let t: f64 = num(key, value)?;
                if !t.is_finite() || t < 0.0 {
                    return Err(bad(key, value, "must be a non-negative number"));
                }
                self.backend.temperature = t;
            }
            "timeout-secs" => self.backend.timeout = Duration::from_secs(positive(key, value)? as u64),
            "max-inflight" => self.backend.max_inflight = positive(key, value)?,
            "mock-scenario" => self.mock_scenario = Some(path()),
            "prompts.deriving" => self.prompts.deriving = Some(path()),
            "prompts.debater" => self.prompts.debater = Some(path()),
            "prompts.judge" => self.prompts.judge = Some(path()),
            "prompts.baseline" => self.prompts.baseline = Some(path()),
            "max-insights" => self.max_insights = positive(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sample-parallelism" => self.sample_parallelism = positive(key, value)?,
            "cache" => {
                self.cache = match value {
                    "true" | "on" | "yes" => true,
                    "false" | "off" | "no" => false,
                    _ => return Err(bad(key, value, "expected true or false")),
                }
            }
            "cache-dir" => self.cache_dir = Some(path()),
            "out" => self.out = path(),
            "error-policy" => self.error_policy = value.parse().map_err(|e: String| bad(key, value, e))?,
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.into() }),
        }
        Ok(())
    }

    pub fn from_text(input: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        for (_, key, value) in parse_config_text(input)? {
            config.set(&key, &value, base)?;
        }
        Ok(config)
    }

    /// Loads `path` (if any), then applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Io { path: p.display().to_string(), detail: e.to_string() })?;
                RunConfig::from_text(&text, p.parent())?
            }
            None => RunConfig::default(),
        };
        for (key, value) in overrides {
            config.set(key, value, None)?;
        }
        Ok(config)
    }

    pub fn weights(&self) -> Result<FusionWeights, ConfigError> {
        FusionWeights::new(self.lambda_v, self.lambda_t).map_err(|e| {
            bad("lambda-v/lambda-t", &format!("{}/{}", self.lambda_v, self.lambda_t), e.to_string())
        })
    }

    pub fn index_path(&self) -> PathBuf {
        self.index.clone().unwrap_or_else(|| self.out.join("index").join("index.jsonl"))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("cache"))
    }

    pub fn require_manifest(&self) -> Result<&Path, ConfigError> {
        self.manifest.as_deref().ok_or(ConfigError::Missing("manifest"))
    }

    pub fn require_embeddings(&self) -> Result<&Path, ConfigError> {
        self.embeddings.as_deref().ok_or(ConfigError::Missing("embeddings"))
    }

    /// Checks cross-field constraints needed before a pipeline run.
    pub fn validate_for_run(&self) -> Result<(), ConfigError> {
        self.weights()?;
        self.require_manifest()?;
        if self.mode.needs_index() {
            self.require_embeddings()?;
        }
        if self.mode != Mode::Baseline && self.k == 0 {
            return Err(bad("k", "0", "a pipeline run needs at least one similar meme"));
        }
        match self.backend.kind {
            BackendKind::Mock if self.mock_scenario.is_none() => Err(ConfigError::Missing("mock-scenario")),
            BackendKind::Http if self.backend.endpoint.is_none() => Err(ConfigError::Missing("endpoint")),
            BackendKind::Http if self.backend.model_name.is_empty() => Err(ConfigError::Missing("model")),
            _ => Ok(()),
        }
    }

    /// Canonical `key = value` rendering of every setting.
    pub fn render(&self) -> String {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: Vec<(&str, String)> = vec![
            ("manifest", p(&self.manifest)),
            ("embeddings", p(&self.embeddings)),
            ("index", p(&self.index)),
            ("lambda-v", self.lambda_v.to_string()),
            ("lambda-t", self.lambda_t.to_string()),
            ("k", self.k.to_string()),
            ("mode", self.mode.to_string()),
            ("backend", match self.backend.kind { BackendKind::Http => "http", BackendKind::Mock => "mock" }.into()),
            ("endpoint", self.backend.endpoint.clone().unwrap_or_default()),
            ("model", self.backend.model_name.clone()),
            ("temperature", self.backend.temperature.to_string()),
            ("timeout-secs", self.backend.timeout.as_secs().to_string()),
            ("max-inflight", self.backend.max_inflight.to_string()),
            ("mock-scenario", p(&self.mock_scenario)),
            ("prompts.deriving", p(&self.prompts.deriving)),
            ("prompts.debater", p(&self.prompts.debater)),
            ("prompts.judge", p(&self.prompts.judge)),
            ("prompts.baseline", p(&self.prompts.baseline)),
            ("max-insights", self.max_insights.to_string()),
            ("seed", self.seed.to_string()),
            ("sample-parallelism", self.sample_parallelism.to_string()),
            ("cache", self.cache.to_string()),
            ("cache-dir", p(&self.cache_dir)),
            ("out", self.out.display().to_string()),
            ("error-policy", format!("{:?}", self.error_policy).to_lowercase()),
        ];
        values
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))[..12].to_owned()
    }
}
