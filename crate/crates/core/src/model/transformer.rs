//! Forward and backward passes of the pre-norm causal transformer.

use super::layout::LayerOffsets;
use super::ModelState;
use crate::error::{Error, Result};
use crate::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place};
use crate::scalar::{Layout, Scalar};
use crate::vocab::TokenId;

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    pub(crate) tokens: Vec<TokenId>,
    layers: Vec<LayerCache<T>>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
    /// Final layer-normed hidden states, `[len, d_model]`.
    pub(crate) hidden: Vec<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    /// Attention probabilities, `[heads, len, len]`.
    probs: Vec<T>,
    att_out: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    h2: Vec<T>,
    fc_pre: Vec<T>,
    fc_act: Vec<T>,
}

impl<T> Activations<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Result of [`ModelState::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// Next-token logits, row-major `[len, vocab_size]`.
    pub logits: Vec<T>,
    /// Final hidden states, row-major `[len, d_model]`.
    pub hidden: Vec<T>,
    /// Preference head applied to the last position.
    pub preference_score: T,
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn logits_at(&self, pos: usize, vocab_size: usize) -> &[T] {
        &self.logits[pos * vocab_size..(pos + 1) * vocab_size]
    }
}

impl<T: Scalar> ModelState<T> {
    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let max = self.config.max_seq_len();
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if tokens.len() > max {
            return Err(Error::SequenceTooLong { len: tokens.len(), max });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {t} outside the vocabulary")));
        }
        Ok(())
    }

    /// Logits for every position plus the preference score read at the
    /// last position.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<ForwardOutput<T>> {
        let acts = self.forward_train(tokens)?;
        let logits = self.logits_rows(&acts.hidden, 0..acts.len());
        let preference_score = self.score_of(&acts);
        Ok(ForwardOutput { logits, preference_score, hidden: acts.hidden })
    }

    /// Logits for `rows` of a hidden-state matrix.
    pub(crate) fn logits_rows(&self, hidden: &[T], rows: std::ops::Range<usize>) -> Vec<T> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let o = &self.layout.offsets;
        let n = rows.len();
        let mut out = vec![T::zero(); n * v];
        linear(
            &hidden[rows.start * d..rows.end * d],
            &self.params[o.w_lm..o.w_lm + d * v],
            &self.params[o.b_lm..o.b_lm + v],
            n,
            d,
            v,
            &mut out,
        );
        out
    }

    pub(crate) fn project_score(&self, hidden_row: &[T]) -> T {
        let o = &self.layout.offsets;
        let d = self.config.d_model;
        let w = &self.params[o.pref_w..o.pref_w + d];
        hidden_row.iter().zip(w).map(|(&h, &w)| h * w).sum::<T>() + self.params[o.pref_b]
    }

    pub(crate) fn score_of(&self, acts: &Activations<T>) -> T {
        let d = self.config.d_model;
        let last = acts.len() - 1;
        self.project_score(&acts.hidden[last * d..(last + 1) * d])
    }

    /// Full-sequence forward pass retaining activations.
    pub fn forward_train(&self, tokens: &[TokenId]) -> Result<Activations<T>> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let (l, d, f, nh, hd) = (tokens.len(), cfg.d_model, cfg.d_ff(), cfg.n_heads, cfg.head_dim());
        let o = &self.layout.offsets;
        let p = &self.params;
        let scale = T::one() / T::from_usize(hd).unwrap().sqrt();

        let mut x = vec![T::zero(); l * d];
        for (i, &t) in tokens.iter().enumerate() {
            let te = &p[o.tok_emb + t as usize * d..][..d];
            let pe = &p[o.pos_emb + i * d..][..d];
            for j in 0..d {
                x[i * d + j] = te[j] + pe[j];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &o.layers {
            let mut c = LayerCache {
                ln1_xhat: vec![T::zero(); l * d],
                ln1_rstd: vec![T::zero(); l],
                h1: vec![T::zero(); l * d],
                qkv: vec![T::zero(); l * 3 * d],
                probs: vec![T::zero(); nh * l * l],
                att_out: vec![T::zero(); l * d],
                ln2_xhat: vec![T::zero(); l * d],
                ln2_rstd: vec![T::zero(); l],
                h2: vec![T::zero(); l * d],
                fc_pre: vec![T::zero(); l * f],
                fc_act: vec![T::zero(); l * f],
            };
            layer_norm(&x, &p[lo.ln1_g..][..d], &p[lo.ln1_b..][..d], d, &mut c.h1, Some(&mut c.ln1_xhat), Some(&mut c.ln1_rstd));
            linear(&c.h1, &p[lo.w_qkv..][..d * 3 * d], &p[lo.b_qkv..][..3 * d], l, d, 3 * d, &mut c.qkv);
            for h in 0..nh {
                let probs = &mut c.probs[h * l * l..(h + 1) * l * l];
                T::gemm(
                    scale,
                    &c.qkv[h * hd..],
                    Layout::strided(l, hd, 3 * d),
                    &c.qkv[d + h * hd..],
                    Layout::strided(l, hd, 3 * d).t(),
                    T::zero(),
                    probs,
                    Layout::row_major(l, l),
                );
                for i in 0..l {
                    let row = &mut probs[i * l..(i + 1) * l];
                    softmax_in_place(&mut row[..=i]);
                    row[i + 1..].fill(T::zero());
                }
                T::gemm(
                    T::one(),
                    probs,
                    Layout::row_major(l, l),
                    &c.qkv[2 * d + h * hd..],
                    Layout::strided(l, hd, 3 * d),
                    T::zero(),
                    &mut c.att_out[h * hd..],
                    Layout::strided(l, hd, d),
                );
            }
            let mut tmp = vec![T::zero(); l * d];
            linear(&c.att_out, &p[lo.w_o..][..d * d], &p[lo.b_o..][..d], l, d, d, &mut tmp);
            for (xi, ti) in x.iter_mut().zip(&tmp) {
                *xi += *ti;
            }
            layer_norm(&x, &p[lo.ln2_g..][..d], &p[lo.ln2_b..][..d], d, &mut c.h2, Some(&mut c.ln2_xhat), Some(&mut c.ln2_rstd));
            linear(&c.h2, &p[lo.w_fc..][..d * f], &p[lo.b_fc..][..f], l, d, f, &mut c.fc_pre);
            for (a, &z) in c.fc_act.iter_mut().zip(&c.fc_pre) {
                *a = gelu(z);
            }
            linear(&c.fc_act, &p[lo.w_proj..][..f * d], &p[lo.b_proj..][..d], l, f, d, &mut tmp);
            for (xi, ti) in x.iter_mut().zip(&tmp) {
                *xi += *ti;
            }
            layers.push(c);
        }

        let mut hidden = vec![T::zero(); l * d];
        let mut lnf_xhat = vec![T::zero(); l * d];
        let mut lnf_rstd = vec![T::zero(); l];
        layer_norm(&x, &p[o.lnf_g..][..d], &p[o.lnf_b..][..d], d, &mut hidden, Some(&mut lnf_xhat), Some(&mut lnf_rstd));
        Ok(Activations { tokens: tokens.to_vec(), layers, lnf_xhat, lnf_rstd, hidden })
    }

    /// Accumulates parameter gradients into `grads`.
    ///
    /// `dlogits` holds loss gradients for the logit rows starting at
    /// `logit_rows_start`; `dscore` is the gradient with respect to the
    /// preference score at the last position.
    pub(crate) fn backward(
        &self,
        acts: &Activations<T>,
        logit_rows_start: usize,
        dlogits: &[T],
        dscore: T,
        grads: &mut [T],
    ) {
        let cfg = &self.config;
        let (l, d, f, v, nh, hd) = (acts.len(), cfg.d_model, cfg.d_ff(), cfg.vocab_size, cfg.n_heads, cfg.head_dim());
        let o = &self.layout.offsets;
        let p = &self.params;
        let scale = T::one() / T::from_usize(hd).unwrap().sqrt();

        // Output heads.
        let mut dhidden = vec![T::zero(); l * d];
        let n_rows = dlogits.len() / v;
        if n_rows > 0 {
            let rows = logit_rows_start..logit_rows_start + n_rows;
            let (dw, rest) = grads[o.w_lm..].split_at_mut(d * v);
            linear_backward(
                &acts.hidden[rows.start * d..rows.end * d],
                &p[o.w_lm..][..d * v],
                dlogits,
                n_rows,
                d,
                v,
                dw,
                &mut rest[..v],
                Some(&mut dhidden[rows.start * d..rows.end * d]),
            );
        }
        if dscore != T::zero() {
            let last = l - 1;
            let h = &acts.hidden[last * d..(last + 1) * d];
            for j in 0..d {
                grads[o.pref_w + j] += dscore * h[j];
                dhidden[last * d + j] += dscore * p[o.pref_w + j];
            }
            grads[o.pref_b] += dscore;
        }

        let mut dx = vec![T::zero(); l * d];
        {
            let (dg, db) = grads[o.lnf_g..].split_at_mut(d);
            layer_norm_backward(&dhidden, &acts.lnf_xhat, &acts.lnf_rstd, &p[o.lnf_g..][..d], d, dg, &mut db[..d], &mut dx);
        }

        let mut dtmp = vec![T::zero(); l * f];
        let mut dh = vec![T::zero(); l * d];
        let mut dqkv = vec![T::zero(); l * 3 * d];
        let mut datt = vec![T::zero(); l * d];
        let mut dprobs = vec![T::zero(); l * l];
        for (lo, c) in o.layers.iter().zip(&acts.layers).rev() {
            let lo: &LayerOffsets = lo;
            // MLP block: x += W_proj · gelu(W_fc · LN2(x)).
            {
                let (dw, rest) = grads[lo.w_proj..].split_at_mut(f * d);
                linear_backward(&c.fc_act, &p[lo.w_proj..][..f * d], &dx, l, f, d, dw, &mut rest[..d], Some(&mut dtmp));
            }
            for (g, &z) in dtmp.iter_mut().zip(&c.fc_pre) {
                *g *= gelu_grad(z);
            }
            {
                let (dw, rest) = grads[lo.w_fc..].split_at_mut(d * f);
                linear_backward(&c.h2, &p[lo.w_fc..][..d * f], &dtmp, l, d, f, dw, &mut rest[..f], Some(&mut dh));
            }
            {
                let (dg, db) = grads[lo.ln2_g..].split_at_mut(d);
                layer_norm_backward(&dh, &c.ln2_xhat, &c.ln2_rstd, &p[lo.ln2_g..][..d], d, dg, &mut db[..d], &mut dx);
            }

            // Attention block: x += W_o · attn(LN1(x)).
            {
                let (dw, rest) = grads[lo.w_o..].split_at_mut(d * d);
                linear_backward(&c.att_out, &p[lo.w_o..][..d * d], &dx, l, d, d, dw, &mut rest[..d], Some(&mut datt));
            }
            for h in 0..nh {
                let probs = &c.probs[h * l * l..(h + 1) * l * l];
                // dP = dO · Vᵀ
                T::gemm(
                    T::one(),
                    &datt[h * hd..],
                    Layout::strided(l, hd, d),
                    &c.qkv[2 * d + h * hd..],
                    Layout::strided(l, hd, 3 * d).t(),
                    T::zero(),
                    &mut dprobs,
                    Layout::row_major(l, l),
                );
                // dV = Pᵀ · dO
                T::gemm(
                    T::one(),
                    probs,
                    Layout::row_major(l, l).t(),
                    &datt[h * hd..],
                    Layout::strided(l, hd, d),
                    T::zero(),
                    &mut dqkv[2 * d + h * hd..],
                    Layout::strided(l, hd, 3 * d),
                );
                // Softmax backward, folding in the score scale.
                for i in 0..l {
                    let pr = &probs[i * l..(i + 1) * l];
                    let dr = &mut dprobs[i * l..(i + 1) * l];
                    let dot: T = pr[..=i].iter().zip(&dr[..=i]).map(|(&a, &b)| a * b).sum();
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                    dr[i + 1..].fill(T::zero());
                }
                // dQ = dS · K
                T::gemm(
                    T::one(),
                    &dprobs,
                    Layout::row_major(l, l),
                    &c.qkv[d + h * hd..],
                    Layout::strided(l, hd, 3 * d),
                    T::zero(),
                    &mut dqkv[h * hd..],
                    Layout::strided(l, hd, 3 * d),
                );
                // dK = dSᵀ · Q
                T::gemm(
                    T::one(),
                    &dprobs,
                    Layout::row_major(l, l).t(),
                    &c.qkv[h * hd..],
                    Layout::strided(l, hd, 3 * d),
                    T::zero(),
                    &mut dqkv[d + h * hd..],
                    Layout::strided(l, hd, 3 * d),
                );
            }
            {
                let (dw, rest) = grads[lo.w_qkv..].split_at_mut(d * 3 * d);
                linear_backward(&c.h1, &p[lo.w_qkv..][..d * 3 * d], &dqkv, l, d, 3 * d, dw, &mut rest[..3 * d], Some(&mut dh));
            }
            {
                let (dg, db) = grads[lo.ln1_g..].split_at_mut(d);
                layer_norm_backward(&dh, &c.ln1_xhat, &c.ln1_rstd, &p[lo.ln1_g..][..d], d, dg, &mut db[..d], &mut dx);
            }
        }

        for (i, &t) in acts.tokens.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let te = o.tok_emb + t as usize * d;
            let pe = o.pos_emb + i * d;
            for j in 0..d {
                grads[te + j] += row[j];
                grads[pe + j] += row[j];
            }
        }
    }
}

/// Per-layer key/value cache for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
    last_hidden: Vec<T>,
}

impl<T: Scalar> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Final hidden state of the most recently appended token.
    pub fn last_hidden(&self) -> &[T] {
        &self.last_hidden
    }
}

impl<T: Scalar> ModelState<T> {
    pub fn new_cache(&self) -> KvCache<T> {
        let n = self.config.max_seq_len() * self.config.d_model;
        KvCache {
            keys: vec![vec![T::zero(); n]; self.config.n_layers],
            values: vec![vec![T::zero(); n]; self.config.n_layers],
            len: 0,
            last_hidden: vec![T::zero(); self.config.d_model],
        }
    }

    /// Runs `tokens` through the network after everything already in
    /// `cache`, returning the logits of the last appended position.
    pub fn append(&self, cache: &mut KvCache<T>, tokens: &[TokenId]) -> Result<Vec<T>> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("nothing to append".into()));
        }
        let total = cache.len + tokens.len();
        let max = self.config.max_seq_len();
        if total > max {
            return Err(Error::SequenceTooLong { len: total, max });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {t} outside the vocabulary")));
        }
        let cfg = &self.config;
        let (n, d, f, nh, hd) = (tokens.len(), cfg.d_model, cfg.d_ff(), cfg.n_heads, cfg.head_dim());
        let start = cache.len;
        let o = &self.layout.offsets;
        let p = &self.params;
        let scale = T::one() / T::from_usize(hd).unwrap().sqrt();

        let mut x = vec![T::zero(); n * d];
        for (i, &t) in tokens.iter().enumerate() {
            let te = &p[o.tok_emb + t as usize * d..][..d];
            let pe = &p[o.pos_emb + (start + i) * d..][..d];
            for j in 0..d {
                x[i * d + j] = te[j] + pe[j];
            }
        }
        let mut h = vec![T::zero(); n * d];
        let mut qkv = vec![T::zero(); n * 3 * d];
        let mut att = vec![T::zero(); n * d];
        let mut tmp = vec![T::zero(); n * d];
        let mut fc = vec![T::zero(); n * f];
        let mut scores = vec![T::zero(); n * total];
        for (li, lo) in o.layers.iter().enumerate() {
            layer_norm(&x, &p[lo.ln1_g..][..d], &p[lo.ln1_b..][..d], d, &mut h, None, None);
            linear(&h, &p[lo.w_qkv..][..d * 3 * d], &p[lo.b_qkv..][..3 * d], n, d, 3 * d, &mut qkv);
            let (keys, values) = (&mut cache.keys[li], &mut cache.values[li]);
            for i in 0..n {
                let row = &qkv[i * 3 * d..(i + 1) * 3 * d];
                keys[(start + i) * d..(start + i + 1) * d].copy_from_slice(&row[d..2 * d]);
                values[(start + i) * d..(start + i + 1) * d].copy_from_slice(&row[2 * d..]);
            }
            for hh in 0..nh {
                T::gemm(
                    scale,
                    &qkv[hh * hd..],
                    Layout::strided(n, hd, 3 * d),
                    &keys[hh * hd..],
                    Layout::strided(total, hd, d).t(),
                    T::zero(),
                    &mut scores,
                    Layout::row_major(n, total),
                );
                for i in 0..n {
                    let row = &mut scores[i * total..(i + 1) * total];
                    softmax_in_place(&mut row[..=start + i]);
                    row[start + i + 1..].fill(T::zero());
                }
                T::gemm(
                    T::one(),
                    &scores,
                    Layout::row_major(n, total),
                    &values[hh * hd..],
                    Layout::strided(total, hd, d),
                    T::zero(),
                    &mut att[hh * hd..],
                    Layout::strided(n, hd, d),
                );
            }
            linear(&att, &p[lo.w_o..][..d * d], &p[lo.b_o..][..d], n, d, d, &mut tmp);
            for (xi, ti) in x.iter_mut().zip(&tmp) {
                *xi += *ti;
            }
            layer_norm(&x, &p[lo.ln2_g..][..d], &p[lo.ln2_b..][..d], d, &mut h, None, None);
            linear(&h, &p[lo.w_fc..][..d * f], &p[lo.b_fc..][..f], n, d, f, &mut fc);
            fc.iter_mut().for_each(|z| *z = gelu(*z));
            linear(&fc, &p[lo.w_proj..][..f * d], &p[lo.b_proj..][..d], n, f, d, &mut tmp);
            for (xi, ti) in x.iter_mut().zip(&tmp) {
                *xi += *ti;
            }
        }
        let last = &x[(n - 1) * d..];
        let mut hidden = vec![T::zero(); d];
        layer_norm(last, &p[o.lnf_g..][..d], &p[o.lnf_b..][..d], d, &mut hidden, None, None);
        cache.len = total;
        let logits = self.logits_rows(&hidden, 0..1);
        cache.last_hidden = hidden;
        Ok(logits)
    }
}
