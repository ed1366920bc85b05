use std::path::Path;

use anyhow::{bail, Context};
use prefchat_core::data::synth::SynthConfig;
use prefchat_core::generation::DecodeConfig;
use prefchat_core::train::TrainConfig;
use prefchat_core::ModelConfig;
use prefchat_service::ServiceConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Architecture fields of [`ModelConfig`]; the vocabulary size comes from
/// the data and the seed from `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub max_context_len: usize,
    pub max_response_len: usize,
    pub init_std: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        Self {
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            d_model: d.d_model,
            max_context_len: d.max_context_len,
            max_response_len: d.max_response_len,
            init_std: d.init_std,
        }
    }
}

impl ModelSection {
    pub fn build(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            max_context_len: self.max_context_len,
            max_response_len: self.max_response_len,
            vocab_size,
            seed,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub service: ServiceConfig,
    pub synth: SynthConfig,
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override to `table`.
pub fn set_override(table: &mut Table, spec: &str) -> anyhow::Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not of the form key=value");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut t = table;
    for p in parents {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = match entry {
            Value::Table(inner) => inner,
            _ => bail!("override key {key:?} descends into a non-table value"),
        };
    }
    t.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl CliConfig {
    /// File values (if any), then overrides; unknown keys are errors.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?
                .parse::<Table>()
                .with_context(|| format!("parsing {}", p.display()))?,
            None => Table::new(),
        };
        for o in overrides {
            set_override(&mut table, o)?;
        }
        Ok(Self::deserialize(Value::Table(table))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\npeak_lr = 0.01\nepochs = 2\n[model]\nd_model = 64\n").unwrap();
        let c = CliConfig::load(Some(&p), &["train.epochs=7".into(), "service.bind=0.0.0.0:1".into()]).unwrap();
        assert_eq!((c.train.peak_lr, c.train.epochs, c.model.d_model), (0.01, 7, 64));
        assert_eq!(c.service.bind, "0.0.0.0:1");
        assert_eq!(c.model.n_layers, 4);
        assert!(CliConfig::load(None, &["train.nope=1".into()]).is_err());
        assert!(CliConfig::load(None, &["bogus.x=1".into()]).is_err());
        assert!(CliConfig::load(None, &["train.epochs".into()]).is_err());
        assert!(CliConfig::load(None, &["train.epochs=many".into()]).is_err());
    }
}
