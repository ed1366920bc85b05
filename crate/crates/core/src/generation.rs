//! Top-k sampling, candidate generation and preference-ranked response
//! selection.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{keyed_rng, Action, AnnotatedTurn, DialogueRecord, RecordStatus};
use crate::dialogue::{DialogueContext, Role};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocabulary, EOS, SCORE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub k: usize,
    pub temperature: f64,
    /// Defaults to the model's response limit when unset.
    pub max_new_tokens: Option<usize>,
    pub n_candidates: usize,
    pub rng_seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { k: 10, temperature: 1.0, max_new_tokens: None, n_candidates: 7, rng_seed: 0 }
    }
}

impl DecodeConfig {
    fn resolve<T: Scalar>(&self, model: &ModelState<T>) -> Result<usize> {
        let v = model.config().vocab_size;
        if self.k == 0 || self.k > v {
            return Err(Error::InvalidArgument(format!("top-k cutoff {} must be in 1..={v}", self.k)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidArgument("n_candidates must be at least 1".into()));
        }
        let limit = model.config().max_response_len;
        match self.max_new_tokens {
            None => Ok(limit),
            Some(n) if n <= limit => Ok(n),
            Some(n) => Err(Error::InvalidArgument(format!("max_new_tokens {n} exceeds max_response_len {limit}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub text: String,
    pub preference_score: f64,
    /// Sum of the per-step log-probabilities under the truncated,
    /// renormalised sampling distribution (EOS step included).
    pub generation_logprob: f64,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step_logprobs: Vec<f64>,
}

/// What the sampler saw at one decoding step.
#[derive(Debug, Clone)]
pub struct StepTrace<'a> {
    /// Temperature-scaled logits with control tokens masked to `-inf`.
    pub logits: &'a [f64],
    pub chosen: TokenId,
}

/// Control tokens the decoder may never emit.
fn is_masked(id: usize) -> bool {
    id != EOS as usize && Vocabulary::is_special(id as TokenId)
}

/// Top-k decoding of one response, followed by a single `<score>` step for
/// the preference score.
pub fn top_k_sample<T: Scalar>(
    model: &ModelState<T>,
    ctx: &DialogueContext,
    cfg: &DecodeConfig,
    rng: &mut dyn RngCore,
) -> Result<ScoredCandidate> {
    top_k_sample_traced(model, ctx, cfg, rng, &mut |_| {})
}

pub fn top_k_sample_traced<T: Scalar>(
    model: &ModelState<T>,
    ctx: &DialogueContext,
    cfg: &DecodeConfig,
    rng: &mut dyn RngCore,
    trace: &mut dyn FnMut(&StepTrace<'_>),
) -> Result<ScoredCandidate> {
    let max_new = cfg.resolve(model)?;
    let prompt = model.encode_prompt(ctx)?;
    let mut cache = model.new_cache();
    let mut logits = model.append(&mut cache, &prompt)?;
    let inv_t = 1.0 / cfg.temperature;
    let mut tokens = Vec::new();
    let mut step_logprobs = Vec::new();
    let mut scaled = vec![0.0f64; logits.len()];
    let mut order: Vec<usize> = Vec::with_capacity(logits.len());
    while tokens.len() < max_new {
        for (i, (s, l)) in scaled.iter_mut().zip(&logits).enumerate() {
            *s = if is_masked(i) { f64::NEG_INFINITY } else { l.to_f64().unwrap() * inv_t };
        }
        order.clear();
        order.extend((0..scaled.len()).filter(|&i| !is_masked(i)));
        order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
        let top = &order[..cfg.k.min(order.len())];
        let max = scaled[top[0]];
        let weights: Vec<f64> = top.iter().map(|&i| (scaled[i] - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * z;
        let mut pick = top.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            if u < *w {
                pick = j;
                break;
            }
            u -= w;
        }
        let chosen = top[pick] as TokenId;
        trace(&StepTrace { logits: &scaled, chosen });
        step_logprobs.push((weights[pick] / z).ln());
        if chosen == EOS {
            break;
        }
        tokens.push(chosen);
        if tokens.len() < max_new {
            logits = model.append(&mut cache, &[chosen])?;
        }
    }
    if tokens.len() == max_new && !tokens.is_empty() && *tokens.last().unwrap() != EOS {
        // Hit the length limit: the last token is not yet in the cache.
        model.append(&mut cache, &tokens[tokens.len() - 1..])?;
    }
    model.append(&mut cache, &[SCORE])?;
    let preference_score = model.project_score(cache.last_hidden()).to_f64().unwrap();
    Ok(ScoredCandidate {
        text: model.vocab().decode(&tokens),
        preference_score,
        generation_logprob: step_logprobs.iter().sum(),
        token_count: tokens.len(),
        step_logprobs,
    })
}

const EXTRA_ATTEMPTS: usize = 3;

/// `cfg.n_candidates` independent samples, each from its own RNG stream.
/// A sample duplicating an earlier candidate verbatim is redrawn up to three
/// times and then kept.
pub fn generate_candidates<T: Scalar>(
    model: &ModelState<T>,
    ctx: &DialogueContext,
    cfg: &DecodeConfig,
) -> Result<Vec<ScoredCandidate>> {
    cfg.resolve(model)?;
    let mut out: Vec<ScoredCandidate> = Vec::with_capacity(cfg.n_candidates);
    for i in 0..cfg.n_candidates {
        let stream = format!("candidate-{i}");
        let mut cand = top_k_sample(model, ctx, cfg, &mut keyed_rng(cfg.rng_seed, &stream, 0))?;
        for attempt in 1..=EXTRA_ATTEMPTS {
            if !out.iter().any(|c| c.text == cand.text) {
                break;
            }
            cand = top_k_sample(model, ctx, cfg, &mut keyed_rng(cfg.rng_seed, &stream, attempt))?;
        }
        out.push(cand);
    }
    Ok(out)
}

/// Index of the highest preference score; ties go to the higher generation
/// log-probability, then to the lower index.
pub fn select_best(candidates: &[ScoredCandidate]) -> Option<usize> {
    (0..candidates.len()).reduce(|best, i| {
        let (a, b) = (&candidates[i], &candidates[best]);
        let better = a
            .preference_score
            .total_cmp(&b.preference_score)
            .then(a.generation_logprob.total_cmp(&b.generation_logprob))
            .is_gt();
        if better {
            i
        } else {
            best
        }
    })
}

/// Generates candidates and returns them with the index of the selected one.
pub fn respond_with_candidates<T: Scalar>(
    model: &ModelState<T>,
    ctx: &DialogueContext,
    cfg: &DecodeConfig,
) -> Result<(usize, Vec<ScoredCandidate>)> {
    let candidates = generate_candidates(model, ctx, cfg)?;
    let best = select_best(&candidates).expect("at least one candidate");
    Ok((best, candidates))
}

pub fn respond<T: Scalar>(model: &ModelState<T>, ctx: &DialogueContext, cfg: &DecodeConfig) -> Result<ScoredCandidate> {
    let (best, mut candidates) = respond_with_candidates(model, ctx, cfg)?;
    Ok(candidates.swap_remove(best))
}

/// Builds a bot turn recording every candidate and its score.
pub fn bot_turn(role: Role, chosen: usize, candidates: &[ScoredCandidate]) -> AnnotatedTurn {
    AnnotatedTurn {
        speaker_role: role,
        final_text: candidates[chosen].text.clone(),
        action: Action::Bot,
        shown_candidates: candidates.iter().map(|c| c.text.clone()).collect(),
        chosen_index: Some(chosen),
        candidate_scores: Some(candidates.iter().map(|c| c.preference_score).collect()),
    }
}

/// The model plays both speakers for `rounds` exchanges after `opening`.
pub fn self_chat<T: Scalar>(
    model: &ModelState<T>,
    opening: &str,
    rounds: usize,
    cfg: &DecodeConfig,
) -> Result<DialogueRecord> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("self-chat needs at least one round".into()));
    }
    let mut ctx = DialogueContext::default();
    ctx.push(opening);
    let mut turns = vec![AnnotatedTurn::opening(Role::A, opening)];
    for turn in 1..=2 * rounds {
        let mut turn_cfg = cfg.clone();
        turn_cfg.rng_seed = keyed_rng(cfg.rng_seed, opening, turn).next_u64();
        let (best, candidates) = respond_with_candidates(model, &ctx, &turn_cfg)?;
        let role = ctx.next_role();
        turns.push(bot_turn(role, best, &candidates));
        ctx.push(candidates[best].text.clone());
    }
    let id = format!("selfchat-{:016x}", keyed_rng(cfg.rng_seed, opening, 0).next_u64());
    Ok(DialogueRecord::new(id, turns, RecordStatus::Complete))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> ModelState<f32> {
        let vocab = Vocabulary::from_texts(["abcdefghij .!"]);
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            max_context_len: 48,
            max_response_len: 12,
            vocab_size: vocab.len(),
            seed,
            init_std: 0.5,
        };
        ModelState::init(cfg, vocab).unwrap()
    }

    fn cand(score: f64, lp: f64) -> ScoredCandidate {
        ScoredCandidate { text: String::new(), preference_score: score, generation_logprob: lp, token_count: 0, step_logprobs: vec![] }
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(select_best(&[cand(0.2, 0.0), cand(1.5, 0.0), cand(-0.3, 0.0)]), Some(1));
        assert_eq!(select_best(&[cand(1.0, -3.0), cand(1.0, -1.0), cand(1.0, -1.0)]), Some(1));
        assert_eq!(select_best(&[cand(1.0, -1.0)]), Some(0));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn k_one_is_greedy() {
        let m = model(4);
        let ctx = DialogueContext::from_texts(&["abc def."]);
        let cfg = DecodeConfig { k: 1, ..Default::default() };
        let sampled = top_k_sample(&m, &ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // Greedy reference through full forward passes.
        let mut ids = m.encode_prompt(&ctx).unwrap();
        let v = m.config().vocab_size;
        let mut out = Vec::new();
        for _ in 0..m.config().max_response_len {
            let f = m.forward(&ids).unwrap();
            let row = f.logits_at(ids.len() - 1, v);
            let next = (0..v).filter(|&i| !is_masked(i)).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
            if next == EOS as usize {
                break;
            }
            out.push(next as TokenId);
            ids.push(next as TokenId);
        }
        assert_eq!(sampled.text, m.vocab().decode(&out));
        assert!(sampled.step_logprobs.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn k_larger_than_vocab_rejected() {
        let m = model(1);
        let ctx = DialogueContext::from_texts(&["a"]);
        let cfg = DecodeConfig { k: m.config().vocab_size + 1, ..Default::default() };
        assert!(top_k_sample(&m, &ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn logprob_is_sum_of_steps_and_score_matches_full_pass() {
        let m = model(5);
        let ctx = DialogueContext::from_texts(&["abc.", "def!"]);
        let c = top_k_sample(&m, &ctx, &DecodeConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let s: f64 = c.step_logprobs.iter().sum();
        assert!((s - c.generation_logprob).abs() < 1e-6);
        let direct = m.preference_score(&ctx, &c.text).unwrap() as f64;
        assert!((direct - c.preference_score).abs() < 1e-5);
    }

    #[test]
    fn candidates_are_seeded_and_bounded() {
        let m = model(6);
        let ctx = DialogueContext::from_texts(&["abc."]);
        let cfg = DecodeConfig { rng_seed: 3, ..Default::default() };
        let a = generate_candidates(&m, &ctx, &cfg).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a, generate_candidates(&m, &ctx, &cfg).unwrap());
        assert!(a.iter().all(|c| c.token_count <= m.config().max_response_len));
    }
}
