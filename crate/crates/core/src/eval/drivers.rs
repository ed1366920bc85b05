//! Static and self-chat evaluation runs producing material for raters.

use rand::seq::index::sample;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{keyed_rng, DialogueRecord, RecordStatus};
use crate::error::{Error, Result};
use crate::generation::{respond, self_chat, DecodeConfig};
use crate::model::ModelState;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEvalRow {
    pub sample_id: String,
    pub record_id: String,
    pub turn_index: usize,
    pub context: Vec<String>,
    pub model_response: String,
    pub reference: String,
    pub preference_score: f64,
}

/// Turns that can serve as a static-evaluation context: every annotated turn
/// of a non-rejected record.
fn eval_points(records: &[DialogueRecord]) -> Vec<(usize, usize)> {
    let mut pts = Vec::new();
    for (ri, rec) in records.iter().enumerate() {
        if rec.status == RecordStatus::Rejected {
            continue;
        }
        for (t, turn) in rec.turns.iter().enumerate() {
            if t > 0 && turn.action.is_annotated() {
                pts.push((ri, t));
            }
        }
    }
    pts
}

/// Responds to `n` contexts drawn without replacement from the records.
pub fn static_eval<T: Scalar>(
    model: &ModelState<T>,
    records: &[DialogueRecord],
    n: usize,
    seed: u64,
    cfg: &DecodeConfig,
) -> Result<Vec<StaticEvalRow>> {
    let pts = eval_points(records);
    if n > pts.len() {
        return Err(Error::InvalidArgument(format!("requested {n} samples but only {} contexts exist", pts.len())));
    }
    let mut rng = keyed_rng(seed, "static-eval", 0);
    let mut picks: Vec<usize> = sample(&mut rng, pts.len(), n).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let (ri, t) = pts[p];
            let rec = &records[ri];
            let ctx = rec.context_before(t);
            let turn_cfg = DecodeConfig { rng_seed: keyed_rng(seed, &rec.id, t).next_u64(), ..cfg.clone() };
            let best = respond(model, &ctx, &turn_cfg)?;
            Ok(StaticEvalRow {
                sample_id: format!("static-{i:04}"),
                record_id: rec.id.clone(),
                turn_index: t,
                context: ctx.utterances.iter().map(|u| u.text.clone()).collect(),
                model_response: best.text,
                reference: rec.turns[t].final_text.clone(),
                preference_score: best.preference_score,
            })
        })
        .collect()
}

/// One self-chat transcript per opening, each on its own seed.
pub fn self_chat_eval<T: Scalar>(
    model: &ModelState<T>,
    openings: &[String],
    rounds: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<DialogueRecord>> {
    openings
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let c = DecodeConfig { rng_seed: keyed_rng(cfg.rng_seed, "self-chat", i).next_u64(), ..cfg.clone() };
            let mut rec = self_chat(model, o, rounds, &c)?;
            rec.id = format!("selfchat-{i:04}");
            Ok(rec)
        })
        .collect()
}
