use super::ModelState;
use crate::dialogue::DialogueContext;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocabulary, BOS, SCORE, SEP};

/// `BOS, context…, response…, SCORE` where every context utterance is
/// followed by `SEP`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDialogue {
    pub ids: Vec<TokenId>,
    /// Index of the first response token (equivalently, of `SCORE` when the
    /// response is empty).
    pub response_start: usize,
    pub response_len: usize,
}

impl EncodedDialogue {
    /// Context tokens including separators, without BOS.
    pub fn context(&self) -> &[TokenId] {
        &self.ids[1..self.response_start]
    }

    pub fn response(&self) -> &[TokenId] {
        &self.ids[self.response_start..self.response_start + self.response_len]
    }

    pub fn score_position(&self) -> usize {
        self.ids.len() - 1
    }

    /// Splits the id sequence back into context utterances and response.
    pub fn decode(&self, vocab: &Vocabulary) -> (Vec<String>, String) {
        let utterances = self
            .context()
            .split(|&t| t == SEP)
            .collect::<Vec<_>>();
        // The context always ends with SEP, leaving one empty trailing split.
        let utterances = utterances[..utterances.len().saturating_sub(1)]
            .iter()
            .map(|u| vocab.decode(u))
            .collect();
        (utterances, vocab.decode(self.response()))
    }
}

/// Context tokens with a separator after each utterance, keeping only the
/// most recent `max_len`.
pub(crate) fn context_tokens(vocab: &Vocabulary, ctx: &DialogueContext, max_len: usize) -> Result<Vec<TokenId>> {
    ctx.validate()?;
    let mut ids = Vec::new();
    for u in &ctx.utterances {
        ids.extend(vocab.encode(&u.text)?);
        ids.push(SEP);
    }
    if ids.len() > max_len {
        ids.drain(..ids.len() - max_len);
    }
    Ok(ids)
}

impl<T: Scalar> ModelState<T> {
    pub fn encode_dialogue(&self, ctx: &DialogueContext, response: Option<&str>) -> Result<EncodedDialogue> {
        let mut ids = vec![BOS];
        ids.extend(context_tokens(&self.vocab, ctx, self.config.max_context_len)?);
        let response_start = ids.len();
        let mut resp = match response {
            Some(r) => self.vocab.encode(r)?,
            None => Vec::new(),
        };
        resp.truncate(self.config.max_response_len);
        let response_len = resp.len();
        ids.extend(resp);
        ids.push(SCORE);
        Ok(EncodedDialogue { ids, response_start, response_len })
    }

    /// `BOS, context…` — the prefix the decoder continues from.
    pub fn encode_prompt(&self, ctx: &DialogueContext) -> Result<Vec<TokenId>> {
        let mut ids = vec![BOS];
        ids.extend(context_tokens(&self.vocab, ctx, self.config.max_context_len)?);
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::ModelConfig;

    fn tiny(max_ctx: usize, max_resp: usize) -> ModelState<f32> {
        let vocab = Vocabulary::from_texts(["abcdefghijklmnopqrstuvwxyz .!?"]);
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 1,
            d_model: 4,
            max_context_len: max_ctx,
            max_response_len: max_resp,
            vocab_size: vocab.len(),
            seed: 0,
            init_std: 0.02,
        };
        ModelState::init(cfg, vocab).unwrap()
    }

    #[test]
    fn layout_and_round_trip() {
        let m = tiny(384, 128);
        let ctx = DialogueContext::from_texts(&["hi there", "hello!"]);
        let enc = m.encode_dialogue(&ctx, Some("how are you?")).unwrap();
        assert_eq!(enc.ids[0], BOS);
        assert_eq!(*enc.ids.last().unwrap(), SCORE);
        assert_eq!(enc.context().iter().filter(|&&t| t == SEP).count(), 2);
        let (utts, resp) = enc.decode(m.vocab());
        assert_eq!(utts, vec!["hi there".to_string(), "hello!".to_string()]);
        assert_eq!(resp, "how are you?");
        // exactly one trailing special beyond the response
        assert_eq!(enc.ids.len(), 1 + enc.context().len() + "how are you?".len() + 1);
    }

    #[test]
    fn context_keeps_most_recent_tokens() {
        let m = tiny(20, 128);
        // 29 chars + SEP = 30 tokens = max_context_len + 10
        let text = "abcdefghijklmnopqrstuvwxyz abc";
        let ctx = DialogueContext::from_texts(&[&text[..29]]);
        let enc = m.encode_dialogue(&ctx, None).unwrap();
        assert_eq!(enc.context().len(), 20);
        let full = [m.vocab().encode(&text[..29]).unwrap(), vec![SEP]].concat();
        assert_eq!(enc.context(), &full[10..]);
    }

    #[test]
    fn response_truncated_to_limit() {
        let m = tiny(384, 128);
        let ctx = DialogueContext::from_texts(&["hi"]);
        let resp: String = "ab".repeat(65);
        assert_eq!(resp.len(), 130);
        let enc = m.encode_dialogue(&ctx, Some(&resp)).unwrap();
        assert_eq!(enc.response_len, 128);
    }

    #[test]
    fn oov_in_context_is_reported() {
        let m = tiny(384, 128);
        let ctx = DialogueContext::from_texts(&["héllo"]);
        assert!(matches!(m.encode_dialogue(&ctx, None), Err(Error::OutOfVocabulary(t)) if t == "é"));
    }
}
