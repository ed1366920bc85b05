//! Decoder-only language model with a scalar preference read-out.
//!
//! One network serves both roles: next-token logits for generation, and a
//! preference score taken by linearly projecting the final hidden state at
//! a trailing `<score>` token.

mod checkpoint;
mod config;
mod encode;
mod layout;
mod loss;
mod transformer;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use encode::EncodedDialogue;
pub use layout::{ParamLayout, TensorSpec};
pub use loss::{pe_loss, pe_loss_grad, JointLoss, LossOptions};
pub use transformer::{Activations, ForwardOutput, KvCache};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::Vocabulary;

/// Parameters, architecture and vocabulary of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Scalar> {
    config: ModelConfig,
    vocab: Vocabulary,
    layout: ParamLayout,
    params: Vec<T>,
}

impl<T: Scalar> ModelState<T> {
    /// Seeded Gaussian initialisation; layer-norm gains start at one and
    /// biases at zero. Residual output projections are scaled down by
    /// `sqrt(2 · n_layers)`.
    pub fn init(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} does not match vocabulary of {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let layout = ParamLayout::new(&config);
        let mut params = vec![T::zero(); layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = config.init_std;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        for spec in layout.tensors() {
            let name = spec.name.as_str();
            let slot = &mut params[spec.range()];
            if name.ends_with(".gain") {
                slot.fill(T::one());
            } else if name.contains("bias") || name.contains(".b_") {
                slot.fill(T::zero());
            } else {
                let s = if name.ends_with("w_out") { resid_std } else { std };
                let normal = Normal::new(0.0, s).expect("finite std");
                for p in slot.iter_mut() {
                    *p = T::c(normal.sample(&mut rng));
                }
            }
        }
        Ok(Self { config, vocab, layout, params })
    }

    pub(crate) fn from_parts(config: ModelConfig, vocab: Vocabulary, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        if config.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig("vocab_size does not match vocabulary".into()));
        }
        Ok(Self { config, vocab, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|s| &self.params[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.params[range])
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::c(p.to_f64().unwrap())).collect(),
        }
    }
}
