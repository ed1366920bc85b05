//! Training quadruples `(context, human, shown model candidate, random)`,
//! re-sampled every epoch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{DialogueRecord, RecordStatus};
use crate::dialogue::DialogueContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingQuadruple {
    pub context: DialogueContext,
    pub r_h: String,
    pub r_m: String,
    pub r_r: String,
    pub record_id: String,
    pub turn_index: usize,
}

/// FNV-1a over the bytes, used to fold string ids into seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG keyed by `(seed, record id, turn)` so any sharding of the records
/// reproduces the same samples.
pub fn keyed_rng(seed: u64, record_id: &str, turn: usize) -> ChaCha8Rng {
    let k = splitmix(seed ^ splitmix(fnv1a(record_id.as_bytes())) ^ splitmix(turn as u64).rotate_left(17));
    ChaCha8Rng::seed_from_u64(k)
}

pub fn is_trainable(r: &DialogueRecord) -> bool {
    matches!(r.status, RecordStatus::Accepted | RecordStatus::Complete)
}

/// One quadruple per annotated turn of every accepted or complete record.
///
/// `r_m` is drawn uniformly from the turn's shown candidates that differ
/// from the human response; `r_r` uniformly from annotated responses of
/// other dialogues. Turns with no eligible candidate are skipped with a
/// warning.
pub fn build_quadruples(records: &[DialogueRecord], epoch_seed: u64) -> Vec<TrainingQuadruple> {
    let records: Vec<&DialogueRecord> = records.iter().filter(|r| is_trainable(r)).collect();
    // Pool of annotated responses; each record's entries are contiguous.
    let mut pool: Vec<&str> = Vec::new();
    let mut spans = Vec::with_capacity(records.len());
    for r in &records {
        let start = pool.len();
        pool.extend(r.turns.iter().filter(|t| t.action.is_annotated()).map(|t| t.final_text.as_str()));
        spans.push(start..pool.len());
    }

    let mut out = Vec::new();
    for (rec, span) in records.iter().zip(&spans) {
        let others = pool.len() - span.len();
        for (ti, turn) in rec.turns.iter().enumerate() {
            if !turn.action.is_annotated() || turn.final_text.is_empty() {
                continue;
            }
            let eligible: Vec<&String> = turn.shown_candidates.iter().filter(|c| **c != turn.final_text).collect();
            if eligible.is_empty() {
                log::warn!("record {} turn {ti}: no shown candidate differs from the human response; skipped", rec.id);
                continue;
            }
            if others == 0 {
                log::warn!("record {} turn {ti}: no other dialogue to draw a random response from; skipped", rec.id);
                continue;
            }
            let mut rng = keyed_rng(epoch_seed, &rec.id, ti);
            let r_m = eligible[rng.gen_range(0..eligible.len())].clone();
            let mut k = rng.gen_range(0..others);
            if k >= span.start {
                k += span.len();
            }
            out.push(TrainingQuadruple {
                context: rec.context_before(ti),
                r_h: turn.final_text.clone(),
                r_m,
                r_r: pool[k].to_owned(),
                record_id: rec.id.clone(),
                turn_index: ti,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::two_dialogues;
    use crate::data::record::Action;
    use std::collections::HashSet;

    #[test]
    fn random_response_comes_from_the_other_dialogue() {
        let recs = two_dialogues();
        let texts = |i: usize| -> HashSet<String> { recs[i].turns.iter().map(|t| t.final_text.clone()).collect() };
        let (d1, d2) = (texts(0), texts(1));
        for seed in 0..20 {
            let quads = build_quadruples(&recs, seed);
            assert_eq!(quads.len(), 14);
            for q in quads {
                let other = if q.record_id == "d1" { &d2 } else { &d1 };
                assert!(other.contains(&q.r_r), "{q:?}");
                assert_ne!(q.r_m, q.r_h);
            }
        }
    }

    #[test]
    fn select_turn_never_pairs_with_itself() {
        let recs = two_dialogues();
        for seed in 0..200 {
            for q in build_quadruples(&recs, seed) {
                let t = &recs.iter().find(|r| r.id == q.record_id).unwrap().turns[q.turn_index];
                if t.action == Action::Select {
                    assert_ne!(q.r_m, q.r_h);
                }
            }
        }
    }

    #[test]
    fn epochs_resample() {
        let recs = two_dialogues();
        let a = build_quadruples(&recs, 1);
        let b = build_quadruples(&recs, 2);
        assert_eq!(a, build_quadruples(&recs, 1));
        assert!(a.iter().zip(&b).any(|(x, y)| x.r_m != y.r_m));
    }

    #[test]
    fn sharding_does_not_change_samples() {
        let recs = two_dialogues();
        let all = build_quadruples(&recs, 5);
        // The random pool depends on the full dataset, so compare the
        // deterministic r_m choice per (id, turn) on a single-record shard.
        let shard: Vec<_> = recs.iter().cloned().filter(|r| r.id == "d2").chain(std::iter::once(recs[0].clone())).collect();
        let resharded = build_quadruples(&shard, 5);
        for q in &all {
            let twin = resharded.iter().find(|p| p.record_id == q.record_id && p.turn_index == q.turn_index).unwrap();
            assert_eq!(twin.r_m, q.r_m);
        }
    }

    #[test]
    fn skips_turn_without_eligible_candidate() {
        let mut recs = two_dialogues();
        let t = &mut recs[0].turns[1];
        t.shown_candidates = vec![t.final_text.clone(); 7];
        t.chosen_index = Some(0);
        let quads = build_quadruples(&recs, 0);
        assert_eq!(quads.len(), 13);
        assert!(!quads.iter().any(|q| q.record_id == "d1" && q.turn_index == 1));
    }

    #[test]
    fn rejected_records_are_excluded() {
        let mut recs = two_dialogues();
        recs[1].status = RecordStatus::Rejected;
        // With one trainable dialogue there is nothing to draw r_r from.
        assert!(build_quadruples(&recs, 0).is_empty());
    }
}
