//! Candidate ranking and MAP / MRR / P@1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{keyed_rng, Action, DialogueRecord, RecordStatus};
use crate::dialogue::DialogueContext;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::scalar::Scalar;

/// Candidates per instance: one human response and seven model samples.
pub const RANKING_CANDIDATES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub record_id: String,
    pub turn_index: usize,
    pub context: DialogueContext,
    pub candidates: Vec<String>,
    pub relevant_index: usize,
}

impl RankingInstance {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() != RANKING_CANDIDATES {
            return Err(Error::InvalidArgument(format!(
                "ranking instance {}#{} has {} candidates, expected {RANKING_CANDIDATES}",
                self.record_id,
                self.turn_index,
                self.candidates.len()
            )));
        }
        if self.relevant_index >= self.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "relevant index {} out of range in {}#{}",
                self.relevant_index, self.record_id, self.turn_index
            )));
        }
        self.context.validate()
    }
}

/// One instance per revise/rewrite turn of a non-rejected record: the human
/// text plus the first seven shown candidates, with the human text inserted
/// at a seeded position. Select turns are skipped because their human text
/// is itself one of the candidates; so is any turn whose final text
/// coincides with a shown candidate.
pub fn build_ranking_instances(records: &[DialogueRecord], seed: u64) -> Vec<RankingInstance> {
    let mut out = Vec::new();
    for rec in records.iter().filter(|r| r.status != RecordStatus::Rejected) {
        for (t, turn) in rec.turns.iter().enumerate() {
            if !matches!(turn.action, Action::Revise | Action::Rewrite) {
                continue;
            }
            if turn.shown_candidates.len() < RANKING_CANDIDATES - 1
                || turn.shown_candidates.iter().any(|c| *c == turn.final_text)
            {
                continue;
            }
            let mut candidates: Vec<String> = turn.shown_candidates[..RANKING_CANDIDATES - 1].to_vec();
            let relevant_index = keyed_rng(seed, &rec.id, t).gen_range(0..RANKING_CANDIDATES);
            candidates.insert(relevant_index, turn.final_text.clone());
            out.push(RankingInstance {
                record_id: rec.id.clone(),
                turn_index: t,
                context: rec.context_before(t),
                candidates,
                relevant_index,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    PreferenceScore,
    /// Raw sum of token log-probabilities, EOS included.
    GenerationLogprob,
    /// Log-probability divided by the number of predicted tokens.
    LengthNormalizedLogprob,
}

impl Scorer {
    pub const ALL: [Scorer; 3] = [Scorer::PreferenceScore, Scorer::GenerationLogprob, Scorer::LengthNormalizedLogprob];

    pub fn name(self) -> &'static str {
        match self {
            Scorer::PreferenceScore => "preference_score",
            Scorer::GenerationLogprob => "generation_logprob",
            Scorer::LengthNormalizedLogprob => "length_normalized_logprob",
        }
    }
}

pub fn score_candidates<T: Scalar>(scorer: Scorer, model: &ModelState<T>, inst: &RankingInstance) -> Result<Vec<f64>> {
    inst.candidates
        .iter()
        .map(|c| {
            Ok(match scorer {
                Scorer::PreferenceScore => model.preference_score(&inst.context, c)?.to_f64().unwrap(),
                Scorer::GenerationLogprob => model.sequence_logprob(&inst.context, c)?.0.to_f64().unwrap(),
                Scorer::LengthNormalizedLogprob => {
                    let (lp, n) = model.sequence_logprob(&inst.context, c)?;
                    lp.to_f64().unwrap() / n as f64
                }
            })
        })
        .collect()
}

/// Indices sorted by descending score; equal scores keep index order.
pub fn order_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn rank_by<T: Scalar>(scorer: Scorer, model: &ModelState<T>, inst: &RankingInstance) -> Result<Vec<usize>> {
    Ok(order_by_scores(&score_candidates(scorer, model, inst)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedInstance {
    /// Candidate indices, best first.
    pub order: Vec<usize>,
    pub relevant_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub n: usize,
}

/// With a single relevant item AP and RR are both 1/rank.
pub fn map_mrr_p1(ranked: &[RankedInstance]) -> Result<RankingMetrics> {
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("no ranked instances".into()));
    }
    let (mut rr_sum, mut hits) = (0.0, 0usize);
    for (i, r) in ranked.iter().enumerate() {
        let rank = r.order.iter().position(|&c| c == r.relevant_index).ok_or(Error::NoRelevant(i))? + 1;
        rr_sum += 1.0 / rank as f64;
        hits += usize::from(rank == 1);
    }
    let n = ranked.len() as f64;
    let mrr = rr_sum / n;
    Ok(RankingMetrics { map: mrr, mrr, p_at_1: hits as f64 / n, n: ranked.len() })
}

/// Ranks every instance under `scorer` and reduces to metrics.
pub fn evaluate_ranking<T: Scalar>(
    scorer: Scorer,
    model: &ModelState<T>,
    instances: &[RankingInstance],
) -> Result<RankingMetrics> {
    let ranked = instances
        .iter()
        .map(|inst| {
            inst.validate()?;
            Ok(RankedInstance { order: rank_by(scorer, model, inst)?, relevant_index: inst.relevant_index })
        })
        .collect::<Result<Vec<_>>>()?;
    map_mrr_p1(&ranked)
}
