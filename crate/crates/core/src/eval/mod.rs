//! Ranking metrics, rubric aggregation, rater agreement and evaluation runs.

mod drivers;
mod gap;
mod kappa;
mod ranking;
mod report;
mod rubric;

pub use drivers::{self_chat_eval, static_eval, StaticEvalRow};
pub use gap::{ranking_gap, GapConfig, GapReport};
pub use kappa::{category_counts, fleiss_kappa};
pub use ranking::{
    build_ranking_instances, evaluate_ranking, map_mrr_p1, order_by_scores, rank_by, score_candidates, RankedInstance,
    RankingInstance, RankingMetrics, Scorer, RANKING_CANDIDATES,
};
pub use report::EvalReport;
pub use rubric::{
    aggregate_rubric, majority3, rubric_kappa, Metric, RubricRating, RubricSummary, SampleScores, MAX_SCORE,
    RATERS_PER_SAMPLE, RUBRIC_TEXT,
};
