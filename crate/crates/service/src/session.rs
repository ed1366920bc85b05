//! Session state machine for collection and chat, independent of transport.

use std::fmt;

use prefchat_core::data::{Action, AnnotatedTurn, DialogueRecord, RecordStatus, MIN_ANNOTATED_ROUNDS};
use prefchat_core::generation::{bot_turn, select_best, ScoredCandidate};
use prefchat_core::{DialogueContext, Role, Utterance};
use serde::{Deserialize, Serialize};

/// Upper bound on chat rounds; chat sessions may finish from the minimum
/// round count up to this value.
pub const MAX_CHAT_ROUNDS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Collect,
    Chat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingOpening,
    AwaitingResponse,
    CandidatesReady,
    Finished,
    UnderReview,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    Opening { text: String },
    Response { action: Action, chosen_index: Option<usize>, text: String },
    Message { text: String },
    Finish,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    /// The request is malformed for the current candidates or mode.
    Validation(String),
    /// The request does not fit the session's current state.
    Conflict(String),
    TooFewRounds { rounds: usize, remaining: usize },
}

impl fmt::Display for SessionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionError::Validation(m) | SessionError::Conflict(m) => f.write_str(m),
            SessionError::TooFewRounds { rounds, remaining } => {
                write!(f, "{rounds} rounds completed, {remaining} more required before finishing")
            }
        }
    }
}

impl std::error::Error for SessionError {}

/// A validated command waiting for model candidates (if it needs any).
#[derive(Debug, Clone)]
pub struct Prepared {
    command: Command,
    turn: Option<AnnotatedTurn>,
    /// Context the next candidates are generated for.
    pub context: Option<DialogueContext>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// Bot reply appended in chat mode.
    pub reply: Option<ScoredCandidate>,
    pub record: Option<DialogueRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub mode: Mode,
    pub state: SessionState,
    pub turns: Vec<AnnotatedTurn>,
    pub pending_candidates: Vec<String>,
    #[serde(default)]
    pub pending_scores: Vec<f64>,
    pub round_count: usize,
}

fn context_of(turns: &[AnnotatedTurn]) -> DialogueContext {
    DialogueContext {
        utterances: turns.iter().map(|t| Utterance { role: t.speaker_role, text: t.final_text.clone() }).collect(),
    }
}

impl Session {
    pub fn new(id: impl Into<String>, mode: Mode) -> Self {
        let state = match mode {
            Mode::Collect => SessionState::AwaitingOpening,
            Mode::Chat => SessionState::AwaitingResponse,
        };
        Self { id: id.into(), mode, state, turns: Vec::new(), pending_candidates: Vec::new(), pending_scores: Vec::new(), round_count: 0 }
    }

    pub fn can_finish(&self) -> bool {
        let ready = match self.mode {
            Mode::Collect => self.state == SessionState::CandidatesReady,
            Mode::Chat => self.state == SessionState::AwaitingResponse,
        };
        ready && self.round_count >= MIN_ANNOTATED_ROUNDS
    }

    fn next_role(&self) -> Role {
        self.turns.last().map_or(Role::A, |t| t.speaker_role.other())
    }

    fn expect(&self, state: SessionState, what: &str) -> Result<(), SessionError> {
        if self.state == state {
            Ok(())
        } else {
            Err(SessionError::Conflict(format!("cannot {what} while session is {:?}", self.state)))
        }
    }

    fn non_empty(text: &str) -> Result<(), SessionError> {
        if text.trim().is_empty() {
            Err(SessionError::Validation("text must not be empty".into()))
        } else {
            Ok(())
        }
    }

    /// Validates `command` against the current state without changing it.
    pub fn prepare(&self, command: Command) -> Result<Prepared, SessionError> {
        let with_turn = |turn: AnnotatedTurn, command: Command| {
            let mut turns = self.turns.clone();
            turns.push(turn.clone());
            Prepared { command, turn: Some(turn), context: Some(context_of(&turns)) }
        };
        match &command {
            Command::Opening { text } => {
                if self.mode != Mode::Collect {
                    return Err(SessionError::Conflict("openings are submitted in collect mode only".into()));
                }
                self.expect(SessionState::AwaitingOpening, "submit an opening")?;
                Self::non_empty(text)?;
                Ok(with_turn(AnnotatedTurn::opening(Role::A, text.clone()), command))
            }
            Command::Response { action, chosen_index, text } => {
                if self.mode != Mode::Collect {
                    return Err(SessionError::Conflict("responses are submitted in collect mode only".into()));
                }
                self.expect(SessionState::CandidatesReady, "submit a response")?;
                Self::non_empty(text)?;
                let turn = self.annotated_turn(*action, *chosen_index, text)?;
                Ok(with_turn(turn, command))
            }
            Command::Message { text } => {
                if self.mode != Mode::Chat {
                    return Err(SessionError::Conflict("messages are sent in chat mode only".into()));
                }
                self.expect(SessionState::AwaitingResponse, "send a message")?;
                if self.round_count >= MAX_CHAT_ROUNDS {
                    return Err(SessionError::Conflict(format!("chat is limited to {MAX_CHAT_ROUNDS} rounds; finish the session")));
                }
                Self::non_empty(text)?;
                let turn = AnnotatedTurn {
                    speaker_role: self.next_role(),
                    final_text: text.clone(),
                    action: Action::Rewrite,
                    shown_candidates: Vec::new(),
                    chosen_index: None,
                    candidate_scores: None,
                };
                Ok(with_turn(turn, command))
            }
            Command::Finish => {
                if !matches!(self.state, SessionState::CandidatesReady | SessionState::AwaitingResponse) {
                    return Err(SessionError::Conflict(format!("cannot finish while session is {:?}", self.state)));
                }
                if self.round_count < MIN_ANNOTATED_ROUNDS {
                    return Err(SessionError::TooFewRounds {
                        rounds: self.round_count,
                        remaining: MIN_ANNOTATED_ROUNDS - self.round_count,
                    });
                }
                Ok(Prepared { command, turn: None, context: None })
            }
        }
    }

    /// Builds the annotated turn, enforcing the select/revise/rewrite rules.
    /// A declared rewrite whose text matches a shown candidate verbatim is
    /// recorded as a select of that candidate.
    fn annotated_turn(&self, action: Action, chosen: Option<usize>, text: &str) -> Result<AnnotatedTurn, SessionError> {
        let shown = &self.pending_candidates;
        let pick = |i: Option<usize>| -> Result<usize, SessionError> {
            let i = i.ok_or_else(|| SessionError::Validation(format!("{action:?} requires chosen_index").to_lowercase()))?;
            if i >= shown.len() {
                return Err(SessionError::Validation(format!("chosen_index {i} out of range for {} candidates", shown.len())));
            }
            Ok(i)
        };
        let (action, chosen_index) = match action {
            Action::Select => {
                let i = pick(chosen)?;
                if shown[i] != text {
                    return Err(SessionError::Validation(format!(
                        "select requires text to equal candidate {i} verbatim; use revise for edited text"
                    )));
                }
                (Action::Select, Some(i))
            }
            Action::Revise => {
                let i = pick(chosen)?;
                if shown[i] == text {
                    return Err(SessionError::Validation(format!(
                        "revise requires text to differ from candidate {i}; use select for unedited text"
                    )));
                }
                (Action::Revise, Some(i))
            }
            Action::Rewrite => {
                if chosen.is_some() {
                    return Err(SessionError::Validation("rewrite must not carry chosen_index".into()));
                }
                match shown.iter().position(|c| c == text) {
                    Some(i) => (Action::Select, Some(i)),
                    None => (Action::Rewrite, None),
                }
            }
            Action::Opening | Action::Bot => {
                return Err(SessionError::Validation("action must be select, revise or rewrite".into()));
            }
        };
        Ok(AnnotatedTurn {
            speaker_role: self.next_role(),
            final_text: text.to_string(),
            action,
            shown_candidates: shown.clone(),
            chosen_index,
            candidate_scores: None,
        })
    }

    /// Applies a prepared command with the candidates generated for its
    /// context. Must follow `prepare` on an unchanged session.
    pub fn commit(&mut self, prepared: Prepared, candidates: Vec<ScoredCandidate>) -> Outcome {
        let Prepared { command, turn, .. } = prepared;
        let mut outcome = Outcome::default();
        match command {
            Command::Opening { .. } | Command::Response { .. } => {
                self.turns.push(turn.expect("prepared turn"));
                if matches!(command, Command::Response { .. }) {
                    self.round_count += 1;
                }
                self.pending_candidates = candidates.iter().map(|c| c.text.clone()).collect();
                self.pending_scores = candidates.iter().map(|c| c.preference_score).collect();
                self.state = SessionState::CandidatesReady;
            }
            Command::Message { .. } => {
                let user = turn.expect("prepared turn");
                let best = select_best(&candidates).expect("generator returned no candidates");
                let role = user.speaker_role.other();
                self.turns.push(user);
                self.turns.push(bot_turn(role, best, &candidates));
                self.round_count += 1;
                outcome.reply = Some(candidates[best].clone());
            }
            Command::Finish => {
                let status = match self.mode {
                    Mode::Collect => {
                        self.state = SessionState::UnderReview;
                        RecordStatus::UnderReview
                    }
                    Mode::Chat => {
                        self.state = SessionState::Finished;
                        RecordStatus::Complete
                    }
                };
                self.pending_candidates.clear();
                self.pending_scores.clear();
                outcome.record = Some(DialogueRecord::new(self.id.clone(), self.turns.clone(), status));
            }
        }
        outcome
    }

    /// `prepare` followed by `commit` with a synchronous generator.
    pub fn apply(
        &mut self,
        command: Command,
        generate: &mut dyn FnMut(&DialogueContext) -> Vec<ScoredCandidate>,
    ) -> Result<Outcome, SessionError> {
        let prepared = self.prepare(command)?;
        let candidates = prepared.context.as_ref().map(|c| generate(c)).unwrap_or_default();
        Ok(self.commit(prepared, candidates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(ctx: &DialogueContext) -> Vec<ScoredCandidate> {
        (0..7)
            .map(|i| ScoredCandidate {
                text: format!("c{} {i}", ctx.len()),
                preference_score: i as f64,
                generation_logprob: 0.0,
                token_count: 4,
                step_logprobs: vec![],
            })
            .collect()
    }

    fn resp(action: Action, chosen_index: Option<usize>, text: &str) -> Command {
        Command::Response { action, chosen_index, text: text.into() }
    }

    #[test]
    fn collect_flow() {
        let mut s = Session::new("s", Mode::Collect);
        assert_eq!(s.round_count, 0);
        assert!(matches!(s.apply(Command::Opening { text: " ".into() }, &mut gen), Err(SessionError::Validation(_))));
        s.apply(Command::Opening { text: "hi".into() }, &mut gen).unwrap();
        assert_eq!(s.pending_candidates.len(), 7);
        assert!(matches!(s.apply(Command::Opening { text: "again".into() }, &mut gen), Err(SessionError::Conflict(_))));
        let bad = resp(Action::Select, Some(2), "not it");
        assert!(matches!(s.apply(bad, &mut gen), Err(SessionError::Validation(_))));
        let shown = s.pending_candidates.clone();
        s.apply(resp(Action::Revise, Some(1), "edited"), &mut gen).unwrap();
        assert_eq!(s.turns[1].action, Action::Revise);
        assert_eq!(s.turns[1].shown_candidates, shown);
        // Declared rewrite matching a candidate is recorded as select.
        let c3 = s.pending_candidates[3].clone();
        s.apply(resp(Action::Rewrite, None, &c3), &mut gen).unwrap();
        assert_eq!((s.turns[2].action, s.turns[2].chosen_index), (Action::Select, Some(3)));
        for i in 0..4 {
            assert_eq!(
                s.apply(Command::Finish, &mut gen),
                Err(SessionError::TooFewRounds { rounds: 2 + i, remaining: 5 - i })
            );
            s.apply(resp(Action::Rewrite, None, &format!("mine {i}")), &mut gen).unwrap();
        }
        assert!(matches!(s.apply(Command::Finish, &mut gen), Err(SessionError::TooFewRounds { rounds: 6, remaining: 1 })));
        s.apply(resp(Action::Rewrite, None, "last"), &mut gen).unwrap();
        let rec = s.apply(Command::Finish, &mut gen).unwrap().record.unwrap();
        assert_eq!(rec.status, RecordStatus::UnderReview);
        assert_eq!(rec.annotated_rounds(), 7);
        rec.validate().unwrap();
        assert_eq!(s.state, SessionState::UnderReview);
    }

    #[test]
    fn chat_flow() {
        let mut s = Session::new("c", Mode::Chat);
        assert!(s.apply(Command::Opening { text: "x".into() }, &mut gen).is_err());
        for i in 0..MAX_CHAT_ROUNDS {
            let out = s.apply(Command::Message { text: format!("m{i}") }, &mut gen).unwrap();
            // The stub scores candidate 6 highest.
            assert!(out.reply.unwrap().text.ends_with(" 6"));
        }
        assert!(matches!(s.apply(Command::Message { text: "more".into() }, &mut gen), Err(SessionError::Conflict(_))));
        let rec = s.apply(Command::Finish, &mut gen).unwrap().record.unwrap();
        assert_eq!(rec.turns.len(), 2 * MAX_CHAT_ROUNDS);
        rec.validate().unwrap();
    }
}
