use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Model checkpoint used for candidate generation.
    pub checkpoint: Option<PathBuf>,
    /// Holds the record store and per-session event logs.
    pub data_dir: PathBuf,
    pub n_candidates: usize,
    pub k: usize,
    pub temperature: f64,
    pub max_new_tokens: Option<usize>,
    pub seed: u64,
    /// Pending generation requests beyond which new ones are refused.
    pub queue_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            checkpoint: None,
            data_dir: PathBuf::from("prefchat-data"),
            n_candidates: 7,
            k: 10,
            temperature: 1.0,
            max_new_tokens: None,
            seed: 0,
            queue_capacity: 64,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    /// Overrides from `PREFCHAT_BIND`, `PREFCHAT_CHECKPOINT`,
    /// `PREFCHAT_DATA_DIR`, `PREFCHAT_N_CANDIDATES` and `PREFCHAT_K`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(v) = var("PREFCHAT_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("PREFCHAT_CHECKPOINT") {
            self.checkpoint = Some(v.into());
        }
        if let Some(v) = var("PREFCHAT_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("PREFCHAT_N_CANDIDATES") {
            self.n_candidates = v.parse().map_err(|e| anyhow::anyhow!("PREFCHAT_N_CANDIDATES: {e}"))?;
        }
        if let Some(v) = var("PREFCHAT_K") {
            self.k = v.parse().map_err(|e| anyhow::anyhow!("PREFCHAT_K: {e}"))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.n_candidates >= 1, "n_candidates must be at least 1");
        anyhow::ensure!(self.k >= 1, "k must be at least 1");
        anyhow::ensure!(self.queue_capacity >= 1, "queue_capacity must be at least 1");
        anyhow::ensure!(self.temperature.is_finite() && self.temperature > 0.0, "temperature must be positive");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_file_values() {
        let mut c: ServiceConfig = toml::from_str("bind = \"0.0.0.0:1\"\nk = 5").unwrap();
        assert_eq!(c.k, 5);
        c.apply_env(|k| (k == "PREFCHAT_BIND").then(|| "127.0.0.1:9".to_string())).unwrap();
        assert_eq!(c.bind, "127.0.0.1:9");
        assert!(c.apply_env(|k| (k == "PREFCHAT_K").then(|| "x".to_string())).is_err());
        assert!(toml::from_str::<ServiceConfig>("unknown = 1").is_err());
    }
}
