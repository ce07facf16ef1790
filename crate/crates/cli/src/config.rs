//! Service configuration: an optional JSON file named by `MIXQA_CONFIG`,
//! overridden field by field by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "MIXQA_CONFIG";

/// Every field optional; absent fields fall back to flags, then defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfigFile {
    pub index_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub host: Option<String>,
    pub port: Option<u16>,
    pub n_retrieve: Option<usize>,
    pub k: Option<usize>,
    pub max_answer_len: Option<usize>,
}

impl ServiceConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The file named by `MIXQA_CONFIG`, or an empty config when unset.
    pub fn from_env() -> anyhow::Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    /// Fields set in `flags` win over fields set in `self`.
    pub fn overridden_by(self, flags: ServiceConfigFile) -> Self {
        Self {
            index_path: flags.index_path.or(self.index_path),
            checkpoint_path: flags.checkpoint_path.or(self.checkpoint_path),
            host: flags.host.or(self.host),
            port: flags.port.or(self.port),
            n_retrieve: flags.n_retrieve.or(self.n_retrieve),
            k: flags.k.or(self.k),
            max_answer_len: flags.max_answer_len.or(self.max_answer_len),
        }
    }

    pub fn resolve(self) -> anyhow::Result<ServiceConfig> {
        let config = ServiceConfig {
            index_path: self.index_path.context("index path not set")?,
            checkpoint_path: self.checkpoint_path.context("checkpoint path not set")?,
            host: self.host.unwrap_or_else(|| "127.0.0.1".into()),
            port: self.port.unwrap_or(8080),
            n_retrieve: self.n_retrieve.unwrap_or(100),
            k: self.k.unwrap_or(3),
            max_answer_len: self.max_answer_len.unwrap_or(30),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub index_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub host: String,
    pub port: u16,
    pub n_retrieve: usize,
    pub k: usize,
    pub max_answer_len: usize,
}

impl ServiceConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.k == 0 || self.k > self.n_retrieve {
            bail!("need 1 <= k <= n_retrieve, got k={} n_retrieve={}", self.k, self.n_retrieve);
        }
        if self.max_answer_len == 0 {
            bail!("max_answer_len must be positive");
        }
        for p in [&self.index_path, &self.checkpoint_path] {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: ServiceConfigFile =
            serde_json::from_str(r#"{"port": 9000, "k": 2, "host": "0.0.0.0"}"#).unwrap();
        let flags = ServiceConfigFile {
            port: Some(9100),
            ..Default::default()
        };
        let merged = file.overridden_by(flags);
        assert_eq!(merged.port, Some(9100));
        assert_eq!(merged.k, Some(2));
        assert_eq!(merged.host.as_deref(), Some("0.0.0.0"));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<ServiceConfigFile>(r#"{"prot": 1}"#).is_err());
    }

    #[test]
    fn resolve_checks_k_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x");
        std::fs::write(&f, b"").unwrap();
        let base = ServiceConfigFile {
            index_path: Some(f.clone()),
            checkpoint_path: Some(f.clone()),
            ..Default::default()
        };
        let ok = base.clone().resolve().unwrap();
        assert_eq!((ok.n_retrieve, ok.k, ok.max_answer_len), (100, 3, 30));
        let bad_k = ServiceConfigFile {
            k: Some(5),
            n_retrieve: Some(4),
            ..base.clone()
        };
        assert!(bad_k.resolve().is_err());
        let missing = ServiceConfigFile {
            index_path: Some(dir.path().join("nope")),
            ..base
        };
        assert!(missing.resolve().is_err());
    }
}
