use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::eval::ranking::RankingMetrics;
use crate::eval::rubric::Metric;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Ranking metrics keyed by scorer name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ranking: BTreeMap<String, RankingMetrics>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rubric_means: BTreeMap<Metric, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fleiss_kappa: BTreeMap<Metric, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.ranking.is_empty() {
            writeln!(f, "{:<28} {:>7} {:>7} {:>7} {:>6}", "scorer", "MAP", "MRR", "P@1", "n")?;
            for (name, m) in &self.ranking {
                writeln!(f, "{name:<28} {:>7.3} {:>7.3} {:>7.3} {:>6}", m.map, m.mrr, m.p_at_1, m.n)?;
            }
        }
        if !self.rubric_means.is_empty() || !self.fleiss_kappa.is_empty() {
            writeln!(f, "{:<28} {:>7} {:>7}", "metric", "mean", "kappa")?;
            for m in Metric::ALL {
                let mean = self.rubric_means.get(&m).map_or("-".to_string(), |v| format!("{v:.3}"));
                let kappa = self.fleiss_kappa.get(&m).map_or("-".to_string(), |v| format!("{v:.3}"));
                if mean != "-" || kappa != "-" {
                    writeln!(f, "{:<28} {mean:>7} {kappa:>7}", m.name())?;
                }
            }
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}
