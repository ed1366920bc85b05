use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueContext, Role, Utterance};
use crate::error::{Error, Result};

/// Version written into every dataset line.
pub const SCHEMA_VERSION: u32 = 1;

/// Minimum number of annotated rounds in a finished collection dialogue.
pub const MIN_ANNOTATED_ROUNDS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// A shown candidate used verbatim.
    Select,
    /// A shown candidate used as the starting point and edited.
    Revise,
    /// Written from scratch.
    Rewrite,
    Opening,
    /// Produced by the model (chat and self-chat transcripts).
    Bot,
}

impl Action {
    /// Whether the turn is a human response produced against candidates.
    pub fn is_annotated(self) -> bool {
        matches!(self, Action::Select | Action::Revise | Action::Rewrite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedTurn {
    pub speaker_role: Role,
    pub final_text: String,
    pub action: Action,
    #[serde(default)]
    pub shown_candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_index: Option<usize>,
    /// Preference scores of `shown_candidates`, when a model scored them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_scores: Option<Vec<f64>>,
}

impl AnnotatedTurn {
    pub fn opening(role: Role, text: impl Into<String>) -> Self {
        Self {
            speaker_role: role,
            final_text: text.into(),
            action: Action::Opening,
            shown_candidates: Vec::new(),
            chosen_index: None,
            candidate_scores: None,
        }
    }

    /// Checks the action/candidate consistency rules.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let chosen = || -> std::result::Result<&str, String> {
            let i = self.chosen_index.ok_or_else(|| format!("{:?} requires chosen_index", self.action))?;
            self.shown_candidates
                .get(i)
                .map(String::as_str)
                .ok_or_else(|| format!("chosen_index {i} out of range for {} candidates", self.shown_candidates.len()))
        };
        match self.action {
            Action::Select => {
                if chosen()? != self.final_text {
                    return Err("select requires final_text to equal the chosen candidate verbatim".into());
                }
            }
            Action::Revise => {
                if chosen()? == self.final_text {
                    return Err("revise requires final_text to differ from the chosen candidate".into());
                }
            }
            Action::Rewrite => {
                if self.chosen_index.is_some() {
                    return Err("rewrite must not carry chosen_index".into());
                }
            }
            Action::Opening => {
                if !self.shown_candidates.is_empty() || self.chosen_index.is_some() {
                    return Err("opening turns carry no candidates".into());
                }
            }
            Action::Bot => {
                if !self.shown_candidates.is_empty() && chosen()? != self.final_text {
                    return Err("bot turn text must equal its chosen candidate".into());
                }
            }
        }
        if let Some(scores) = &self.candidate_scores {
            if scores.len() != self.shown_candidates.len() {
                return Err("candidate_scores length differs from shown_candidates".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    InProgress,
    Complete,
    UnderReview,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub id: String,
    pub turns: Vec<AnnotatedTurn>,
    pub status: RecordStatus,
    #[serde(default)]
    pub split: Split,
    /// Unix seconds at which the dialogue was finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl DialogueRecord {
    pub fn new(id: impl Into<String>, turns: Vec<AnnotatedTurn>, status: RecordStatus) -> Self {
        Self { schema_version: SCHEMA_VERSION, id: id.into(), turns, status, split: Split::Unassigned, created_at: None }
    }

    pub fn annotated_rounds(&self) -> usize {
        self.turns.iter().filter(|t| t.action.is_annotated()).count()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::InvalidRecord { id: self.id.clone(), message });
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("unsupported schema_version {}", self.schema_version));
        }
        for (i, w) in self.turns.windows(2).enumerate() {
            if w[0].speaker_role == w[1].speaker_role {
                return fail(format!("turn {} repeats the previous speaker", i + 1));
            }
        }
        for (i, t) in self.turns.iter().enumerate() {
            if let Err(m) = t.validate() {
                return fail(format!("turn {i}: {m}"));
            }
        }
        let finished = matches!(self.status, RecordStatus::Complete | RecordStatus::UnderReview | RecordStatus::Accepted);
        let rounds = self.annotated_rounds();
        // Fully machine-generated transcripts (self-chat) have no annotated rounds.
        if finished && rounds > 0 && rounds < MIN_ANNOTATED_ROUNDS {
            return fail(format!("finished dialogue has {rounds} annotated rounds, at least {MIN_ANNOTATED_ROUNDS} required"));
        }
        Ok(())
    }

    /// Context formed by turns `0..turn`.
    pub fn context_before(&self, turn: usize) -> DialogueContext {
        DialogueContext {
            utterances: self.turns[..turn]
                .iter()
                .map(|t| Utterance { role: t.speaker_role, text: t.final_text.clone() })
                .collect(),
        }
    }
}
