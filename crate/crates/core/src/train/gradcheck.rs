//! Central finite-difference verification of the joint-loss gradient.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::synth::{synth_corpus, SynthConfig};
use crate::data::{build_quadruples, keyed_rng, TrainingQuadruple};
use crate::error::{Error, Result};
use crate::model::{LossOptions, ModelConfig};
use crate::vocab::Vocabulary;
use crate::Model64;

/// Gradients smaller than this are compared on an absolute scale; central
/// differences cannot resolve them more finely in double precision.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Analytic gradient of the joint loss with respect to every parameter.
pub fn analytic_gradient(model: &Model64, quad: &TrainingQuadruple, opts: LossOptions) -> Result<Vec<f64>> {
    let mut grads = vec![0.0; model.num_params()];
    model.joint_loss_grad(quad, opts, 1.0, &mut grads)?;
    Ok(grads)
}

fn central_difference(probe: &mut Model64, quad: &TrainingQuadruple, opts: LossOptions, i: usize, h: f64) -> Result<f64> {
    let orig = probe.params()[i];
    probe.params_mut()[i] = orig + h;
    let up = probe.joint_loss(quad, opts)?.total;
    probe.params_mut()[i] = orig - h;
    let down = probe.joint_loss(quad, opts);
    probe.params_mut()[i] = orig;
    Ok((up - down?.total) / (2.0 * h))
}

/// Central differences at `h` and `h/2` combined to cancel the `h²` error term.
fn richardson_derivative(probe: &mut Model64, quad: &TrainingQuadruple, opts: LossOptions, i: usize, h: f64) -> Result<f64> {
    let coarse = central_difference(probe, quad, opts, i, h)?;
    let fine = central_difference(probe, quad, opts, i, h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)` over
/// `indices`, with numeric derivatives from Richardson-extrapolated central
/// differences of step `epsilon`.
pub fn check_indices(
    model: &Model64,
    quad: &TrainingQuadruple,
    opts: LossOptions,
    epsilon: f64,
    indices: &[usize],
    analytic: &[f64],
) -> Result<GradCheckReport> {
    let mut probe = model.clone();
    let mut worst = (0.0f64, 0usize);
    for &i in indices {
        let numeric = richardson_derivative(&mut probe, quad, opts, i, epsilon)?;
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        if err > worst.0 || indices.len() == 1 {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        worst_tensor: model.layout().owner(worst.1).map(|s| s.name.clone()).unwrap_or_default(),
        checked: indices.len(),
    })
}

/// Checks a seeded random subsample of `n_samples` parameters (at least
/// 200, or all of them for smaller models).
pub fn gradient_check(
    model: &Model64,
    quad: &TrainingQuadruple,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let opts = LossOptions::default();
    let analytic = analytic_gradient(model, quad, opts)?;
    let n = model.num_params();
    let k = n_samples.max(200).min(n);
    let mut indices = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
    indices.sort_unstable();
    check_indices(model, quad, opts, epsilon, &indices, &analytic)
}

/// A small randomly shaped model and one quadruple from a synthetic corpus,
/// both derived from `seed`.
pub fn random_pair(seed: u64) -> Result<(Model64, TrainingQuadruple)> {
    let mut rng = keyed_rng(seed, "gradcheck-pair", 0);
    let corpus = synth_corpus(&SynthConfig { n_dialogues: 3, max_words: 4, seed, ..Default::default() })?;
    let vocab = Vocabulary::from_texts(corpus.iter().flat_map(|r| &r.turns).flat_map(|t| {
        std::iter::once(t.final_text.as_str()).chain(t.shown_candidates.iter().map(String::as_str))
    }));
    let n_heads = rng.gen_range(1..=2);
    let cfg = ModelConfig {
        n_layers: rng.gen_range(1..=2),
        n_heads,
        d_model: n_heads * rng.gen_range(4..=6),
        max_context_len: rng.gen_range(8..=32),
        max_response_len: 32,
        vocab_size: vocab.len(),
        seed,
        init_std: 0.3,
    };
    let model = Model64::init(cfg, vocab)?;
    let quad = build_quadruples(&corpus, seed).choose(&mut rng).cloned().ok_or(Error::EmptyDataset)?;
    Ok((model, quad))
}

/// Checks every parameter of each of `n_pairs` random model/quadruple pairs.
pub fn check_random_pairs(n_pairs: usize, seed: u64, epsilon: f64) -> Result<Vec<GradCheckReport>> {
    (0..n_pairs)
        .map(|i| {
            let (model, quad) = random_pair(keyed_rng(seed, "gradcheck", i).gen())?;
            let opts = LossOptions::default();
            let analytic = analytic_gradient(&model, &quad, opts)?;
            let all: Vec<usize> = (0..model.num_params()).collect();
            check_indices(&model, &quad, opts, epsilon, &all, &analytic)
        })
        .collect()
}
