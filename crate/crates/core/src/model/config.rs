use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_init_std() -> f64 {
    0.02
}

/// Architecture and sequence limits of the joint generation/preference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Context tokens kept (most recent) when encoding a dialogue.
    pub max_context_len: usize,
    pub max_response_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian weight initialisation.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: 4 layers, 4 heads, width 128, with the
    /// 384/128 context/response limits.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            max_context_len: 384,
            max_response_len: 128,
            vocab_size,
            seed: 0,
            init_std: default_init_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 {
            return fail("n_layers, n_heads and d_model must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return fail("d_model must be divisible by n_heads");
        }
        if self.max_context_len == 0 || self.max_response_len == 0 {
            return fail("max_context_len and max_response_len must be at least 1");
        }
        if self.vocab_size <= crate::vocab::SCORE as usize {
            return fail("vocab_size must cover the control tokens");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return fail("init_std must be positive");
        }
        Ok(())
    }

    /// Longest sequence `forward` accepts: BOS, context, response, SCORE
    /// and one spare position.
    pub fn max_seq_len(&self) -> usize {
        self.max_context_len + self.max_response_len + 3
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::desk(40);
        c.validate().unwrap();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c.n_heads = 4;
        c.max_response_len = 0;
        assert!(c.validate().is_err());
    }
}
