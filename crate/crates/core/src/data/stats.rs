use serde::{Deserialize, Serialize};

use super::record::{Action, DialogueRecord, RecordStatus};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionProportions {
    pub select: f64,
    pub revise: f64,
    pub rewrite: f64,
}

/// Corpus summary: dialogue and utterance counts, mean utterance length in
/// tokens, and the share of each annotator action.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_dialogues: usize,
    pub n_utterances: usize,
    pub avg_utterance_length: f64,
    pub action_proportions: ActionProportions,
    pub action_counts: [usize; 3],
}

/// Statistics over all records except rejected ones.
pub fn compute_stats(records: &[DialogueRecord]) -> CorpusStats {
    compute_stats_with(records, false)
}

pub fn compute_stats_with(records: &[DialogueRecord], include_rejected: bool) -> CorpusStats {
    let mut s = CorpusStats::default();
    let mut tokens = 0usize;
    for r in records {
        if r.status == RecordStatus::Rejected && !include_rejected {
            continue;
        }
        s.n_dialogues += 1;
        for t in &r.turns {
            s.n_utterances += 1;
            tokens += Vocabulary::token_len(&t.final_text);
            match t.action {
                Action::Select => s.action_counts[0] += 1,
                Action::Revise => s.action_counts[1] += 1,
                Action::Rewrite => s.action_counts[2] += 1,
                Action::Opening | Action::Bot => {}
            }
        }
    }
    if s.n_utterances > 0 {
        s.avg_utterance_length = tokens as f64 / s.n_utterances as f64;
    }
    let annotated: usize = s.action_counts.iter().sum();
    if annotated > 0 {
        let n = annotated as f64;
        s.action_proportions = ActionProportions {
            select: s.action_counts[0] as f64 / n,
            revise: s.action_counts[1] as f64 / n,
            rewrite: s.action_counts[2] as f64 / n,
        };
    }
    s
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "dialogues            {}", self.n_dialogues)?;
        writeln!(f, "utterances           {}", self.n_utterances)?;
        writeln!(f, "avg utterance length {:.2}", self.avg_utterance_length)?;
        let p = &self.action_proportions;
        write!(
            f,
            "select/revise/rewrite {:.1}% / {:.1}% / {:.1}%",
            100.0 * p.select,
            100.0 * p.revise,
            100.0 * p.rewrite
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::two_dialogues;

    #[test]
    fn empty_dataset_is_all_zero() {
        assert_eq!(compute_stats(&[]), CorpusStats::default());
    }

    #[test]
    fn fixture_hand_counts() {
        let s = compute_stats(&two_dialogues());
        assert_eq!(s.n_dialogues, 2);
        assert_eq!(s.n_utterances, 16);
        assert_eq!(s.avg_utterance_length, 90.0 / 16.0);
        assert_eq!(s.action_counts, [4, 4, 6]);
        assert_eq!(s.action_proportions.select, 4.0 / 14.0);
        assert_eq!(s.action_proportions.rewrite, 6.0 / 14.0);
        let p = s.action_proportions;
        assert!((p.select + p.revise + p.rewrite - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejected_records_excluded_by_default() {
        let mut recs = two_dialogues();
        recs[1].status = RecordStatus::Rejected;
        let s = compute_stats(&recs);
        assert_eq!(s.n_dialogues, 1);
        assert_eq!(s.n_utterances, 8);
        assert_eq!(s.avg_utterance_length, 48.0 / 8.0);
        assert_eq!(compute_stats_with(&recs, true).n_dialogues, 2);
    }

    #[test]
    fn permutation_invariant() {
        let mut recs = two_dialogues();
        let a = compute_stats(&recs);
        recs.reverse();
        assert_eq!(a, compute_stats(&recs));
    }
}
