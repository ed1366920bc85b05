//! Generation (NLL), preference-estimation and joint objectives.

use serde::{Deserialize, Serialize};

use super::{Activations, EncodedDialogue, ModelState};
use crate::data::TrainingQuadruple;
use crate::dialogue::DialogueContext;
use crate::error::{Error, Result};
use crate::ops::{log_sum_exp, sigmoid, softplus};
use crate::scalar::Scalar;
use crate::vocab::{Vocabulary, EOS};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossOptions {
    /// Divide the NLL by the number of predicted tokens instead of summing.
    #[serde(default)]
    pub nll_token_mean: bool,
}

/// Value of the joint objective on one quadruple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss<T> {
    pub total: T,
    pub nll: T,
    pub pe: T,
    /// Preference scores of the human, model and random responses.
    pub scores: [T; 3],
}

/// `-(1/3)·[log σ(h−m) + log σ(h−r) + log σ(m−r)]`, evaluated through
/// `log σ(x) = −softplus(−x)`.
pub fn pe_loss<T: Scalar>(s_h: T, s_m: T, s_r: T) -> Result<T> {
    if !(s_h.is_finite() && s_m.is_finite() && s_r.is_finite()) {
        return Err(Error::NonFinite("preference scores"));
    }
    let third = T::one() / T::c(3.0);
    Ok(third * (softplus(s_m - s_h) + softplus(s_r - s_h) + softplus(s_r - s_m)))
}

/// Gradient of [`pe_loss`] with respect to `(s_h, s_m, s_r)`.
pub fn pe_loss_grad<T: Scalar>(s_h: T, s_m: T, s_r: T) -> [T; 3] {
    let third = T::one() / T::c(3.0);
    let hm = sigmoid(s_m - s_h);
    let hr = sigmoid(s_r - s_h);
    let mr = sigmoid(s_r - s_m);
    [-third * (hm + hr), third * (hm - mr), third * (hr + mr)]
}

impl<T: Scalar> ModelState<T> {
    /// Sum of `−log p(token)` over the response tokens and the closing EOS,
    /// with the logit gradients of those rows when `grad_scale` is set.
    fn nll_rows(&self, acts: &Activations<T>, enc: &EncodedDialogue, grad_scale: Option<T>) -> (T, usize, Vec<T>) {
        let v = self.config.vocab_size;
        let first = enc.response_start - 1;
        let n = enc.response_len + 1;
        let logits = self.logits_rows(&acts.hidden, first..first + n);
        let mut total = T::zero();
        let mut dlogits = if grad_scale.is_some() { vec![T::zero(); n * v] } else { Vec::new() };
        for r in 0..n {
            let target = if r < enc.response_len { enc.ids[enc.response_start + r] } else { EOS } as usize;
            let row = &logits[r * v..(r + 1) * v];
            let lse = log_sum_exp(row);
            total += lse - row[target];
            if let Some(g) = grad_scale {
                let out = &mut dlogits[r * v..(r + 1) * v];
                for j in 0..v {
                    out[j] = g * (row[j] - lse).exp();
                }
                out[target] -= g;
            }
        }
        (total, first, dlogits)
    }

    fn encode_response(&self, ctx: &DialogueContext, response: &str) -> Result<EncodedDialogue> {
        if Vocabulary::token_len(response) == 0 {
            return Err(Error::EmptyResponse);
        }
        self.encode_dialogue(ctx, Some(response))
    }

    /// `−Σ_t log p(r_t | c, r_<t)` over the response tokens plus EOS.
    pub fn nll_loss(&self, ctx: &DialogueContext, response: &str) -> Result<T> {
        let enc = self.encode_response(ctx, response)?;
        let acts = self.forward_train(&enc.ids)?;
        Ok(self.nll_rows(&acts, &enc, None).0)
    }

    /// Sum of token log-probabilities of `response` (EOS included) under the
    /// full softmax, and the number of predicted tokens.
    pub fn sequence_logprob(&self, ctx: &DialogueContext, response: &str) -> Result<(T, usize)> {
        let enc = self.encode_dialogue(ctx, Some(response))?;
        let acts = self.forward_train(&enc.ids)?;
        let (nll, _, _) = self.nll_rows(&acts, &enc, None);
        Ok((-nll, enc.response_len + 1))
    }

    /// `s(c, r)`: the preference head read at the trailing SCORE token.
    pub fn preference_score(&self, ctx: &DialogueContext, response: &str) -> Result<T> {
        let enc = self.encode_dialogue(ctx, Some(response))?;
        let acts = self.forward_train(&enc.ids)?;
        Ok(self.score_of(&acts))
    }

    pub fn joint_loss(&self, quad: &TrainingQuadruple, opts: LossOptions) -> Result<JointLoss<T>> {
        self.joint_loss_impl(quad, opts, None)
    }

    /// Evaluates the joint loss and adds `weight ·` its gradient to `grads`.
    pub fn joint_loss_grad(&self, quad: &TrainingQuadruple, opts: LossOptions, weight: T, grads: &mut [T]) -> Result<JointLoss<T>> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        self.joint_loss_impl(quad, opts, Some((weight, grads)))
    }

    fn joint_loss_impl(&self, quad: &TrainingQuadruple, opts: LossOptions, grad: Option<(T, &mut [T])>) -> Result<JointLoss<T>> {
        let enc_h = self.encode_response(&quad.context, &quad.r_h)?;
        let enc_m = self.encode_dialogue(&quad.context, Some(&quad.r_m))?;
        let enc_r = self.encode_dialogue(&quad.context, Some(&quad.r_r))?;
        let acts_h = self.forward_train(&enc_h.ids)?;
        let acts_m = self.forward_train(&enc_m.ids)?;
        let acts_r = self.forward_train(&enc_r.ids)?;
        let scores = [self.score_of(&acts_h), self.score_of(&acts_m), self.score_of(&acts_r)];
        let pe = pe_loss(scores[0], scores[1], scores[2])?;
        let n_pred = T::from_usize(enc_h.response_len + 1).unwrap();
        let nll_scale = if opts.nll_token_mean { T::one() / n_pred } else { T::one() };
        let (nll, first, dlogits) = self.nll_rows(&acts_h, &enc_h, grad.as_ref().map(|(w, _)| *w * nll_scale));
        let nll = nll * nll_scale;
        if !nll.is_finite() {
            return Err(Error::NonFinite("nll loss"));
        }
        if let Some((w, grads)) = grad {
            let ds = pe_loss_grad(scores[0], scores[1], scores[2]);
            self.backward(&acts_h, first, &dlogits, w * ds[0], grads);
            self.backward(&acts_m, 0, &[], w * ds[1], grads);
            self.backward(&acts_r, 0, &[], w * ds[2], grads);
        }
        Ok(JointLoss { total: nll + pe, nll, pe, scores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pe_loss_reference_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((pe_loss(0.0f64, 0.0, 0.0).unwrap() - ln2).abs() < 1e-15);
        assert!((pe_loss(1.0f64, 0.0, -1.0).unwrap() - 0.251_150_5).abs() < 1e-6);
        assert!(pe_loss(f64::NAN, 0.0, 0.0).is_err());
        assert!(pe_loss(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn pe_loss_grad_matches_difference_quotient() {
        let s = [0.3f64, -1.1, 0.8];
        let g = pe_loss_grad(s[0], s[1], s[2]);
        for i in 0..3 {
            let (mut a, mut b) = (s, s);
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (pe_loss(a[0], a[1], a[2]).unwrap() - pe_loss(b[0], b[1], b[2]).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn pe_loss_depends_on_differences_only(h in -20.0f64..20.0, m in -20.0f64..20.0, r in -20.0f64..20.0, c in -50.0f64..50.0) {
            let a = pe_loss(h, m, r).unwrap();
            let b = pe_loss(h + c, m + c, r + c).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a > 0.0);
        }

        #[test]
        fn pe_loss_decreases_with_human_margin(h in -5.0f64..5.0, m in -5.0f64..5.0, r in -5.0f64..5.0, d in 0.01f64..3.0) {
            prop_assert!(pe_loss(h + d, m, r).unwrap() < pe_loss(h, m, r).unwrap());
        }
    }

    #[test]
    fn pe_loss_vanishes_for_wide_ordered_gaps() {
        assert!(pe_loss(100.0f64, 0.0, -100.0).unwrap() < 1e-40);
        assert!(pe_loss(100.0f64, 0.0, -100.0).unwrap() > 0.0);
    }
}
