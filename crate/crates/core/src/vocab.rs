//! Character-level vocabulary with five reserved control tokens.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const SCORE: TokenId = 4;

const SPECIAL_NAMES: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<score>"];

/// Maps single characters to contiguous ids `5..`; ids `0..5` are the
/// control tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<char, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        if repr.tokens.len() < SPECIAL_NAMES.len()
            || repr.tokens[..SPECIAL_NAMES.len()] != SPECIAL_NAMES
        {
            return Err(Error::InvalidConfig("vocabulary must start with the five control tokens".into()));
        }
        let mut index = HashMap::new();
        for (id, tok) in repr.tokens.iter().enumerate().skip(SPECIAL_NAMES.len()) {
            let mut chars = tok.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(Error::InvalidConfig(format!("vocabulary entry {tok:?} is not a single character")));
            };
            if index.insert(c, id as TokenId).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary entry {tok:?}")));
            }
        }
        Ok(Self { tokens: repr.tokens, index })
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self { tokens: v.tokens }
    }
}

impl Vocabulary {
    /// Builds a vocabulary covering every character of `texts`, in sorted
    /// order so the result does not depend on iteration order.
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let chars: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self::from_chars(chars)
    }

    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Self {
        let chars: BTreeSet<char> = chars.into_iter().collect();
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        tokens.extend(chars.iter().map(|c| c.to_string()));
        let index = chars
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c, (i + SPECIAL_NAMES.len()) as TokenId))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIAL_NAMES.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, c: char) -> Option<TokenId> {
        self.index.get(&c).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .map(|c| self.id(c).ok_or_else(|| Error::OutOfVocabulary(c.to_string())))
            .collect()
    }

    /// Number of tokens `text` encodes to, ignoring vocabulary membership.
    pub fn token_len(text: &str) -> usize {
        text.chars().count()
    }

    /// Concatenates the characters of non-special ids.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect()
    }
}
