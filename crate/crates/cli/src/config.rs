//! Run configuration file.
//!
//! A JSON object with optional keys:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "parallelism": 4,
//!   "output_dir": "out",
//!   "cache_dir": "cache",
//!   "datasets": { "listfn": "data/listfn.jsonl" },
//!   "endpoints": {
//!     "oracle": { "type": "scripted", "transcript": "oracle.json" },
//!     "remote": { "type": "http", "base_url": "https://api.example.com/v1",
//!                 "model": "some-model", "api_key_env": "ANALOGICA_API_KEY" }
//!   },
//!   "pipeline": { "k": 3, "rounds": 2, "budget": "low", "dummy_tokens": 0, "format": "mcq" }
//! }
//! ```
//!
//! Relative paths resolve against the file's directory. Command-line flags
//! win over file values, which win over built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use analogica_core::gateway::HttpConfig;
use analogica_core::model::{DatasetKind, TaskFormat};
use analogica_core::pipeline::Budget;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub datasets: BTreeMap<DatasetKind, PathBuf>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, EndpointSpec>,
    #[serde(default)]
    pub pipeline: PipelineParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EndpointSpec {
    Scripted {
        transcript: PathBuf,
        #[serde(default)]
        model: Option<String>,
    },
    Http(HttpConfig),
}

impl EndpointSpec {
    pub fn model(&self) -> &str {
        match self {
            EndpointSpec::Scripted { model, .. } => model.as_deref().unwrap_or("scripted"),
            EndpointSpec::Http(h) => &h.model,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub rounds: Option<u32>,
    #[serde(default)]
    pub budget: Option<Budget>,
    #[serde(default)]
    pub dummy_tokens: Option<usize>,
    #[serde(default)]
    pub format: Option<TaskFormat>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: `{key}` looks like an inline credential; name an environment variable with `api_key_env` instead")]
    InlineCredential { path: PathBuf, key: String },
    #[error("{0}")]
    Invalid(String),
}

const CREDENTIAL_KEYS: &[&str] = &[
    "api_key",
    "apikey",
    "key",
    "token",
    "access_token",
    "secret",
    "password",
    "authorization",
    "bearer",
];

fn find_credential(v: &Value) -> Option<String> {
    match v {
        Value::Object(m) => m.iter().find_map(|(k, v)| {
            let lk = k.to_ascii_lowercase();
            if CREDENTIAL_KEYS.contains(&lk.as_str())
                || lk.contains("secret")
                || lk.contains("password")
            {
                Some(k.clone())
            } else {
                find_credential(v)
            }
        }),
        Value::Array(xs) => xs.iter().find_map(find_credential),
        _ => None,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_json(&text, path)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
        let parse = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let raw: Value = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
        if let Some(key) = find_credential(&raw) {
            return Err(ConfigError::InlineCredential {
                path: path.to_path_buf(),
                key,
            });
        }
        let mut cfg: RunConfig = serde_json::from_value(raw).map_err(|e| parse(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.output_dir.as_mut().map(fix);
        self.cache_dir.as_mut().map(fix);
        self.datasets.values_mut().for_each(fix);
        for spec in self.endpoints.values_mut() {
            if let EndpointSpec::Scripted { transcript, .. } = spec {
                fix(transcript);
            }
        }
    }

    /// Checks everything that can be checked without touching the network.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (kind, p) in &self.datasets {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "dataset {kind}: {} does not exist",
                    p.display()
                )));
            }
        }
        for (name, spec) in &self.endpoints {
            match spec {
                EndpointSpec::Scripted { transcript, .. } if !transcript.is_file() => {
                    return Err(ConfigError::Invalid(format!(
                        "endpoint {name}: transcript {} does not exist",
                        transcript.display()
                    )));
                }
                EndpointSpec::Http(h) => {
                    if h.parallelism == 0 {
                        return Err(ConfigError::Invalid(format!(
                            "endpoint {name}: parallelism must be at least 1"
                        )));
                    }
                    if let Some(var) = &h.api_key_env {
                        if std::env::var_os(var).is_none() {
                            return Err(ConfigError::Invalid(format!(
                                "endpoint {name}: environment variable {var} is not set"
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        if self.parallelism == Some(0) {
            return Err(ConfigError::Invalid(
                "parallelism must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn endpoint(&self, name: &str) -> Result<&EndpointSpec, ConfigError> {
        self.endpoints.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.endpoints.keys().map(String::as_str).collect();
            ConfigError::Invalid(format!(
                "unknown endpoint `{name}` (configured: {})",
                if known.is_empty() {
                    "none".to_string()
                } else {
                    known.join(", ")
                }
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_relative_paths() {
        let cfg = RunConfig::from_json(
            r#"{"seed": 3, "datasets": {"listfn": "d/l.jsonl"},
                "endpoints": {"o": {"type": "scripted", "transcript": "t.json"},
                              "h": {"type": "http", "base_url": "http://x", "model": "m",
                                    "api_key_env": "SOME_VAR"}},
                "pipeline": {"budget": "high", "format": "mcq"}}"#,
            Path::new("/etc/exp/run.json"),
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(
            cfg.datasets[&DatasetKind::Listfn],
            PathBuf::from("/etc/exp/d/l.jsonl")
        );
        assert_eq!(cfg.pipeline.budget, Some(Budget::High));
        assert_eq!(cfg.endpoint("o").unwrap().model(), "scripted");
        assert_eq!(cfg.endpoint("h").unwrap().model(), "m");
        assert!(cfg.endpoint("zzz").is_err());
    }

    #[test]
    fn rejects_inline_credentials() {
        for body in [
            r#"{"endpoints": {"h": {"type": "http", "base_url": "u", "model": "m", "api_key": "sk-1"}}}"#,
            r#"{"endpoints": {"h": {"type": "http", "base_url": "u", "model": "m", "Client_Secret": "x"}}}"#,
        ] {
            let e = RunConfig::from_json(body, Path::new("c.json")).unwrap_err();
            assert!(matches!(e, ConfigError::InlineCredential { .. }), "{e}");
            assert!(!e.to_string().contains("sk-1"));
        }
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#, Path::new("c.json")).is_err());
    }
}
