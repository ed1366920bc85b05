//! Small hand-checkable datasets shared by tests and examples.

use super::record::{Action, AnnotatedTurn, DialogueRecord, RecordStatus};
use crate::dialogue::Role;

fn annotated(role: Role, action: Action, text: &str, source: Option<&str>, turn: usize) -> AnnotatedTurn {
    let mut shown: Vec<String> = (0..7).map(|k| format!("c{turn} {k}")).collect();
    let chosen_index = match action {
        Action::Select => {
            shown[2] = text.to_owned();
            Some(2)
        }
        Action::Revise => {
            shown[4] = source.expect("revise needs a source").to_owned();
            Some(4)
        }
        _ => None,
    };
    AnnotatedTurn {
        speaker_role: role,
        final_text: text.to_owned(),
        action,
        shown_candidates: shown,
        chosen_index,
        candidate_scores: None,
    }
}

fn dialogue(id: &str, opening: &str, rest: &[(Action, &str, Option<&str>)]) -> DialogueRecord {
    let mut turns = vec![AnnotatedTurn::opening(Role::A, opening)];
    let mut role = Role::B;
    for (i, &(action, text, source)) in rest.iter().enumerate() {
        turns.push(annotated(role, action, text, source, i + 1));
        role = role.other();
    }
    DialogueRecord::new(id, turns, RecordStatus::Accepted)
}

/// Two accepted dialogues of eight turns each (an opening plus seven
/// annotated responses).
///
/// Character counts per turn: `2 5 11 4 4 7 12 3` and `2 9 3 8 4 3 7 6`
/// (90 tokens over 16 utterances). Actions over the 14 annotated turns:
/// 4 select, 4 revise, 6 rewrite.
pub fn two_dialogues() -> Vec<DialogueRecord> {
    use Action::*;
    vec![
        dialogue(
            "d1",
            "hi",
            &[
                (Select, "hello", None),
                (Revise, "how are you", Some("how are u")),
                (Rewrite, "fine", None),
                (Select, "good", None),
                (Rewrite, "and you", None),
                (Revise, "great thanks", Some("great")),
                (Rewrite, "bye", None),
            ],
        ),
        dialogue(
            "d2",
            "yo",
            &[
                (Rewrite, "hey there", None),
                (Select, "sup", None),
                (Revise, "not much", Some("not much!")),
                (Rewrite, "cool", None),
                (Select, "yes", None),
                (Rewrite, "ok then", None),
                (Revise, "see ya", Some("see you")),
            ],
        ),
    ]
}
