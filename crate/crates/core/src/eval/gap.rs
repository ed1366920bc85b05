//! End-to-end comparison of preference-score ranking with
//! generation-probability ranking on a synthetic corpus.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_ranking_instances, evaluate_ranking, RankingMetrics, Scorer};
use crate::data::synth::{synth_corpus, SynthConfig};
use crate::data::{split_dataset, DialogueRecord, Split};
use crate::error::Result;
use crate::train::{TrainConfig, TrainEvent, Trainer};
use crate::{Model, ModelConfig, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    /// Fraction of dialogues held out for ranking.
    pub test_fraction: f64,
    pub max_context_len: usize,
    pub max_response_len: usize,
    pub split_seed: u64,
    pub instance_seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig { peak_lr: 1e-3, epochs: 5, ..Default::default() },
            test_fraction: 0.2,
            max_context_len: 64,
            max_response_len: 40,
            split_seed: 0,
            instance_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub epoch_means: Vec<(usize, f64)>,
    pub metrics: BTreeMap<Scorer, RankingMetrics>,
    pub train_dialogues: usize,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

fn part(records: &[DialogueRecord], split: Split) -> Vec<DialogueRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

/// Generates the corpus, trains the desk architecture on the training
/// split and ranks every held-out instance under each scorer.
pub fn ranking_gap(cfg: &GapConfig, on_event: &mut dyn FnMut(&TrainEvent)) -> Result<GapReport> {
    let mut records = synth_corpus(&cfg.synth)?;
    split_dataset(&mut records, [1.0 - cfg.test_fraction, 0.0, cfg.test_fraction], cfg.split_seed)?;
    let (train, test) = (part(&records, Split::Train), part(&records, Split::Test));

    let vocab = Vocabulary::from_texts(records.iter().flat_map(|r| &r.turns).map(|t| t.final_text.as_str()));
    let model_cfg = ModelConfig {
        max_context_len: cfg.max_context_len,
        max_response_len: cfg.max_response_len,
        seed: cfg.train.seed,
        ..ModelConfig::desk(vocab.len())
    };
    let mut trainer = Trainer::new(Model::init(model_cfg, vocab)?, cfg.train.clone())?;
    let t0 = Instant::now();
    let report = trainer.run(&train, &[], on_event)?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let model = trainer.into_model();
    let instances = build_ranking_instances(&test, cfg.instance_seed);
    let t1 = Instant::now();
    let metrics = Scorer::ALL
        .into_iter()
        .map(|s| Ok((s, evaluate_ranking(s, &model, &instances)?)))
        .collect::<Result<_>>()?;
    Ok(GapReport {
        epoch_means: report.epoch_means(),
        metrics,
        train_dialogues: train.len(),
        train_seconds,
        eval_seconds: t1.elapsed().as_secs_f64(),
    })
}
