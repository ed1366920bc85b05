use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
}

impl Role {
    pub fn other(self) -> Self {
        match self {
            Role::A => Role::B,
            Role::B => Role::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

/// The conversation so far, oldest utterance first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub utterances: Vec<Utterance>,
}

impl DialogueContext {
    /// Builds a context from texts whose speakers alternate starting with A.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut role = Role::A;
        let utterances = texts
            .iter()
            .map(|t| {
                let u = Utterance { role, text: t.as_ref().to_owned() };
                role = role.other();
                u
            })
            .collect();
        Self { utterances }
    }

    pub fn validate(&self) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::EmptyContext);
        }
        for (i, w) in self.utterances.windows(2).enumerate() {
            if w[0].role == w[1].role {
                return Err(Error::RolesNotAlternating(i + 1));
            }
        }
        Ok(())
    }

    /// Role of whoever speaks next.
    pub fn next_role(&self) -> Role {
        self.utterances.last().map_or(Role::A, |u| u.role.other())
    }

    pub fn push(&mut self, text: impl Into<String>) {
        let role = self.next_role();
        self.utterances.push(Utterance { role, text: text.into() });
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(matches!(DialogueContext::default().validate(), Err(Error::EmptyContext)));
        let ok = DialogueContext::from_texts(&["hi", "hello", "how are you"]);
        ok.validate().unwrap();
        assert_eq!(ok.next_role(), Role::B);
        let mut bad = ok.clone();
        bad.utterances[2].role = Role::B;
        assert!(matches!(bad.validate(), Err(Error::RolesNotAlternating(2))));
    }
}
