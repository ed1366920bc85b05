//! Exhaustive walk over short command sequences in collect mode.

use prefchat_core::data::{Action, RecordStatus, MIN_ANNOTATED_ROUNDS};
use prefchat_core::generation::ScoredCandidate;
use prefchat_core::DialogueContext;
use prefchat_service::session::{Command, Mode, Session, SessionError, SessionState};

const DEPTH: usize = 10;

fn gen(ctx: &DialogueContext) -> Vec<ScoredCandidate> {
    (0..3)
        .map(|i| ScoredCandidate {
            text: format!("c{} {i}", ctx.len()),
            preference_score: i as f64,
            generation_logprob: 0.0,
            token_count: 3,
            step_logprobs: vec![],
        })
        .collect()
}

fn commands(s: &Session) -> Vec<Command> {
    let cand = s.pending_candidates.first().cloned().unwrap_or_else(|| "none".into());
    let resp = |action, chosen_index, text: &str| Command::Response { action, chosen_index, text: text.into() };
    vec![
        Command::Opening { text: "hello".into() },
        resp(Action::Select, Some(0), &cand),
        resp(Action::Select, Some(0), "not the candidate"),
        resp(Action::Revise, Some(0), &format!("{cand} edited")),
        resp(Action::Rewrite, None, &format!("own {}", s.turns.len())),
        resp(Action::Rewrite, None, &cand),
        Command::Message { text: "chat".into() },
        Command::Finish,
    ]
}

struct Walk {
    paths: usize,
    finishes: usize,
}

fn walk(s: &Session, depth: usize, w: &mut Walk) {
    if depth == DEPTH {
        w.paths += 1;
        return;
    }
    for cmd in commands(s) {
        let mut next = s.clone();
        let finish = cmd == Command::Finish;
        match next.apply(cmd, &mut gen) {
            Ok(out) => {
                assert!(next.round_count <= depth, "round count outran submitted commands");
                if finish {
                    assert!(s.round_count >= MIN_ANNOTATED_ROUNDS, "finished with {} rounds", s.round_count);
                    let rec = out.record.expect("finish yields a record");
                    assert_eq!(rec.status, RecordStatus::UnderReview);
                    assert!(rec.annotated_rounds() >= MIN_ANNOTATED_ROUNDS);
                    rec.validate().unwrap();
                    assert_eq!(next.state, SessionState::UnderReview);
                    w.finishes += 1;
                }
                for t in &next.turns {
                    t.validate().unwrap();
                }
                walk(&next, depth + 1, w);
            }
            Err(e) => {
                assert_eq!(&next, s, "failed command changed the session");
                if finish && s.state == SessionState::CandidatesReady {
                    assert_eq!(
                        e,
                        SessionError::TooFewRounds { rounds: s.round_count, remaining: MIN_ANNOTATED_ROUNDS - s.round_count }
                    );
                }
            }
        }
    }
}

#[test]
fn finish_requires_seven_rounds_on_every_path() {
    let mut w = Walk { paths: 0, finishes: 0 };
    walk(&Session::new("dfs", Mode::Collect), 0, &mut w);
    assert!(w.paths > 1000, "explored {} paths", w.paths);
    assert!(w.finishes > 0);
}
