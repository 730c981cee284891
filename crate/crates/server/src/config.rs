//! Service configuration, read from TOML.
//!
//! ```toml
//! port = 8080
//! db = "sieve.db"
//!
//! [backend]
//! kind = "simulation"
//! positive = ["casino", "crypto"]
//! negative = ["charity"]
//!
//! [[sources]]
//! kind = "fixture"
//! id = "channel"
//! path = "fixtures/channel.jsonl"
//!
//! [templates]
//! thanks = "Thanks for the comment!"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sieve_core::gateway::remote::{RemoteBackend, RemoteConfig};
use sieve_core::gateway::sim::SimulationRule;
use sieve_core::gateway::{Gateway, GatewaySettings};

use crate::ingest::SourceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Simulation {
        positive: Vec<String>,
        #[serde(default)]
        negative: Vec<String>,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Remote {
        base_url: String,
        /// Environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        completion_model: Option<String>,
        #[serde(default)]
        embedding_model: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
        #[serde(default)]
        max_retries: Option<u32>,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Simulation {
            positive: vec!["casino".into(), "crypto".into(), "giveaway".into()],
            negative: vec!["charity".into()],
            noise: 0.05,
            seed: 7,
        }
    }
}

impl BackendConfig {
    pub fn build(&self, max_concurrency: usize) -> Result<Gateway, String> {
        let settings = GatewaySettings {
            max_concurrency,
            ..GatewaySettings::default()
        };
        match self {
            BackendConfig::Simulation {
                positive,
                negative,
                noise,
                seed,
            } => {
                let rule = SimulationRule::new(positive, negative, *noise, *seed)?;
                Ok(Gateway::new(Arc::new(sieve_core::gateway::sim::SimBackend::new(rule)), settings))
            }
            BackendConfig::Remote {
                base_url,
                api_key_env,
                completion_model,
                embedding_model,
                timeout_secs,
                max_retries,
            } => {
                let mut rc = RemoteConfig::new(base_url);
                if let Some(var) = api_key_env {
                    rc.api_key = Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?);
                }
                if let Some(m) = completion_model {
                    rc.completion_model = m.clone();
                }
                if let Some(m) = embedding_model {
                    rc.embedding_model = m.clone();
                }
                if let Some(t) = timeout_secs {
                    rc.timeout_secs = *t;
                }
                if let Some(r) = max_retries {
                    rc.max_retries = *r;
                }
                let backend = RemoteBackend::new(rc).map_err(|e| e.to_string())?;
                Ok(Gateway::new(Arc::new(backend), settings))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_db")]
    pub db: PathBuf,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Seed for every classification the service runs.
    #[serde(default)]
    pub eval_seed: u64,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    /// Reply templates by id.
    #[serde(default)]
    pub templates: BTreeMap<String, String>,
    /// Directory of a built web UI, served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_db() -> PathBuf {
    PathBuf::from("sieve.db")
}

fn default_concurrency() -> usize {
    8
}

impl Default for ServiceConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut config: ServiceConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // Relative paths in the file are relative to the file.
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.db);
        if let Some(d) = self.static_dir.as_mut() {
            fix(d);
        }
        for s in &mut self.sources {
            fix(s.path_mut());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_parsing() {
        let c = ServiceConfig::default();
        assert_eq!(c.port, 8080);
        assert!(matches!(c.backend, BackendConfig::Simulation { .. }));
        assert!(c.backend.build(4).is_ok());

        let c: ServiceConfig = toml::from_str(
            r#"
            port = 9000
            [backend]
            kind = "remote"
            base_url = "http://localhost:1"
            [[sources]]
            kind = "fixture"
            id = "a"
            path = "a.jsonl"
            [templates]
            thanks = "Thanks!"
            "#,
        )
        .unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.sources.len(), 1);
        assert_eq!(c.templates["thanks"], "Thanks!");
        assert!(c.backend.build(1).is_ok());
    }

    #[test]
    fn bad_rules_and_missing_keys_fail() {
        let bad = BackendConfig::Simulation {
            positive: vec![],
            negative: vec![],
            noise: 0.0,
            seed: 0,
        };
        assert!(bad.build(1).is_err());
        let remote = BackendConfig::Remote {
            base_url: "http://x".into(),
            api_key_env: Some("SIEVE_SURELY_UNSET_VAR".into()),
            completion_model: None,
            embedding_model: None,
            timeout_secs: None,
            max_retries: None,
        };
        assert!(remote.build(1).is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sieve.toml");
        std::fs::write(&path, "db = \"data/s.db\"\n[[sources]]\nkind = \"jsonl\"\npath = \"in.jsonl\"\n").unwrap();
        let c = ServiceConfig::load(&path).unwrap();
        assert_eq!(c.db, dir.path().join("data/s.db"));
        assert_eq!(c.sources[0].path(), dir.path().join("in.jsonl"));
    }
}
