//! Three-rater rubric scores with majority aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::kappa::{category_counts, fleiss_kappa};

/// Rater-facing description of the four metrics and their 0-2 scale.
pub const RUBRIC_TEXT: &str = include_str!("../../data/rubric.md");

pub const RATERS_PER_SAMPLE: usize = 3;
pub const MAX_SCORE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Coherence,
    Informativeness,
    Safety,
    Engagingness,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Coherence, Metric::Informativeness, Metric::Safety, Metric::Engagingness];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Coherence => "coherence",
            Metric::Informativeness => "informativeness",
            Metric::Safety => "safety",
            Metric::Engagingness => "engagingness",
        }
    }
}

/// One rater's scores for one sample. The first three metrics are rated per
/// utterance, engagingness per dialogue, so a sample may omit some of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RubricRating {
    pub sample_id: String,
    pub rater_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informativeness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engagingness: Option<u8>,
}

impl RubricRating {
    pub fn get(&self, m: Metric) -> Option<u8> {
        match m {
            Metric::Coherence => self.coherence,
            Metric::Informativeness => self.informativeness,
            Metric::Safety => self.safety,
            Metric::Engagingness => self.engagingness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub scores: BTreeMap<Metric, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSummary {
    pub samples: Vec<SampleScores>,
    /// Mean final score per metric over the samples that carry it.
    pub means: BTreeMap<Metric, f64>,
}

/// Majority of three scores; with all three distinct the median is used,
/// which also equals the majority whenever one exists.
pub fn majority3(mut s: [u8; 3]) -> u8 {
    s.sort_unstable();
    s[1]
}

fn group(ratings: &[RubricRating]) -> Result<BTreeMap<&str, Vec<&RubricRating>>> {
    let mut by_sample: BTreeMap<&str, Vec<&RubricRating>> = BTreeMap::new();
    for r in ratings {
        for m in Metric::ALL {
            if let Some(v) = r.get(m).filter(|&v| v > MAX_SCORE) {
                return Err(Error::Rating {
                    sample: r.sample_id.clone(),
                    message: format!("{} score {v} from rater {} outside 0..={MAX_SCORE}", m.name(), r.rater_id),
                });
            }
        }
        by_sample.entry(&r.sample_id).or_default().push(r);
    }
    for (sample, rs) in &by_sample {
        let err = |message: String| Error::Rating { sample: sample.to_string(), message };
        if rs.len() != RATERS_PER_SAMPLE {
            return Err(err(format!("{} ratings, expected {RATERS_PER_SAMPLE}", rs.len())));
        }
        if rs[0].rater_id == rs[1].rater_id || rs[0].rater_id == rs[2].rater_id || rs[1].rater_id == rs[2].rater_id {
            return Err(err("raters are not distinct".into()));
        }
        for m in Metric::ALL {
            let present = rs.iter().filter(|r| r.get(m).is_some()).count();
            if present != 0 && present != RATERS_PER_SAMPLE {
                return Err(err(format!("{} rated by {present} of {RATERS_PER_SAMPLE} raters", m.name())));
            }
        }
    }
    Ok(by_sample)
}

fn triple(rs: &[&RubricRating], m: Metric) -> Option<[u8; 3]> {
    Some([rs[0].get(m)?, rs[1].get(m)?, rs[2].get(m)?])
}

pub fn aggregate_rubric(ratings: &[RubricRating]) -> Result<RubricSummary> {
    let by_sample = group(ratings)?;
    let mut samples = Vec::with_capacity(by_sample.len());
    let mut sums: BTreeMap<Metric, (f64, usize)> = BTreeMap::new();
    for (sample, rs) in by_sample {
        let mut scores = BTreeMap::new();
        for m in Metric::ALL {
            if let Some(t) = triple(&rs, m) {
                let s = majority3(t);
                scores.insert(m, s);
                let e = sums.entry(m).or_default();
                e.0 += f64::from(s);
                e.1 += 1;
            }
        }
        samples.push(SampleScores { sample_id: sample.to_string(), scores });
    }
    let means = sums.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect();
    Ok(RubricSummary { samples, means })
}

/// Fleiss' kappa per metric over the samples rated on it.
pub fn rubric_kappa(ratings: &[RubricRating]) -> Result<BTreeMap<Metric, f64>> {
    let by_sample = group(ratings)?;
    let mut out = BTreeMap::new();
    for m in Metric::ALL {
        let labels: Vec<Vec<u8>> = by_sample.values().filter_map(|rs| triple(rs, m)).map(|t| t.to_vec()).collect();
        if !labels.is_empty() {
            let counts = category_counts(&labels, usize::from(MAX_SCORE) + 1)?;
            out.insert(m, fleiss_kappa(&counts, RATERS_PER_SAMPLE)?);
        }
    }
    Ok(out)
}
