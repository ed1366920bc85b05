//! The joint training loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::schedule::{lr_schedule, TrainConfig};
use crate::data::{build_quadruples, keyed_rng, DialogueRecord, TrainingQuadruple};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub nll: f64,
    pub pe: f64,
    /// Fraction of quadruples where the human response outscores both others.
    pub p_at_1: f64,
    pub n: usize,
}

/// One line of the training event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    Step { step: u64, epoch: usize, lr: f64, nll: f64, pe: f64, total: f64 },
    Epoch { epoch: usize, steps: u64, mean_nll: f64, mean_pe: f64, mean_total: f64, validation: Option<ValidationMetrics> },
    Checkpoint { epoch: usize, path: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub events: Vec<TrainEvent>,
}

impl TrainReport {
    /// `(epoch, mean_total)` for every finished epoch.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TrainEvent::Epoch { epoch, mean_total, .. } => Some((*epoch, *mean_total)),
                _ => None,
            })
            .collect()
    }

    pub fn checkpoints(&self) -> Vec<&Path> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TrainEvent::Checkpoint { path, .. } => Some(path.as_path()),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).expect("event serialises") + "\n").collect()
    }
}

/// Seed used to re-sample quadruples for `epoch`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    keyed_rng(seed, "epoch", epoch).next_u64()
}

#[derive(Serialize, Deserialize)]
struct ResumeMeta {
    kind: String,
    epochs_done: usize,
    optimizer_steps: u64,
    train_config: TrainConfig,
}

/// Owns the parameters and optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    model: ModelState<T>,
    adam: Adam<T>,
    cfg: TrainConfig,
    epochs_done: usize,
    checkpoint_dir: Option<PathBuf>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ModelState<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.num_params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
        Ok(Self { model, adam, cfg, epochs_done: 0, checkpoint_dir: None })
    }

    /// Restores model, optimizer moments and epoch counter from a training
    /// checkpoint. `cfg` may extend `epochs`; other fields should match the
    /// original run for an identical continuation.
    pub fn resume(path: &Path, cfg: TrainConfig) -> Result<Self> {
        let ck = Checkpoint::read(path)?;
        let bad = |m: &str| Error::Checkpoint { path: path.to_owned(), message: m.to_owned() };
        let meta: ResumeMeta = serde_json::from_value(ck.meta().clone()).map_err(|_| bad("not a training checkpoint"))?;
        let model = ck.to_model::<T>()?;
        let mut trainer = Self::new(model, cfg)?;
        trainer.adam.m = ck.extra("adam.m").ok_or_else(|| bad("missing adam.m"))?;
        trainer.adam.v = ck.extra("adam.v").ok_or_else(|| bad("missing adam.v"))?;
        if trainer.adam.m.len() != trainer.model.num_params() || trainer.adam.v.len() != trainer.model.num_params() {
            return Err(bad("optimizer state size mismatch"));
        }
        trainer.adam.t = meta.optimizer_steps;
        trainer.epochs_done = meta.epochs_done;
        Ok(trainer)
    }

    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn model(&self) -> &ModelState<T> {
        &self.model
    }

    pub fn into_model(self) -> ModelState<T> {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.t
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = ResumeMeta {
            kind: "train".into(),
            epochs_done: self.epochs_done,
            optimizer_steps: self.adam.t,
            train_config: self.cfg.clone(),
        };
        Checkpoint::from_model(&self.model)
            .with_extra("adam.m", &self.adam.m)
            .with_extra("adam.v", &self.adam.v)
            .with_meta(serde_json::to_value(meta)?)
            .write(path)
    }

    fn validate_on(&self, quads: &[TrainingQuadruple]) -> Result<Option<ValidationMetrics>> {
        if quads.is_empty() {
            return Ok(None);
        }
        let (mut nll, mut pe, mut hits) = (0.0, 0.0, 0usize);
        for q in quads {
            let l = self.model.joint_loss(q, self.cfg.loss)?;
            nll += l.nll.to_f64().unwrap();
            pe += l.pe.to_f64().unwrap();
            if l.scores[0] > l.scores[1] && l.scores[0] > l.scores[2] {
                hits += 1;
            }
        }
        let n = quads.len() as f64;
        Ok(Some(ValidationMetrics { nll: nll / n, pe: pe / n, p_at_1: hits as f64 / n, n: quads.len() }))
    }

    /// Trains until `cfg.epochs` epochs are complete, reporting every event
    /// to `sink` as it happens.
    pub fn run(
        &mut self,
        train: &[DialogueRecord],
        valid: &[DialogueRecord],
        sink: &mut dyn FnMut(&TrainEvent),
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        let mut emit = |report: &mut TrainReport, e: TrainEvent| {
            sink(&e);
            report.events.push(e);
        };
        if self.epochs_done >= self.cfg.epochs {
            return Ok(report);
        }
        let mut valid_quads = build_quadruples(valid, epoch_seed(self.cfg.seed, usize::MAX));
        valid_quads.truncate(self.cfg.max_valid_quadruples);

        let mut grads = vec![T::zero(); self.model.num_params()];
        while self.epochs_done < self.cfg.epochs {
            let epoch = self.epochs_done;
            let mut quads = build_quadruples(train, epoch_seed(self.cfg.seed, epoch));
            if quads.is_empty() {
                return Err(Error::EmptyDataset);
            }
            quads.shuffle(&mut keyed_rng(self.cfg.seed, "order", epoch));

            let (mut sum_nll, mut sum_pe, mut sum_total) = (0.0, 0.0, 0.0);
            let mut steps = 0u64;
            for batch in quads.chunks(self.cfg.batch_size) {
                grads.iter_mut().for_each(|g| *g = T::zero());
                let w = T::one() / T::from_usize(batch.len()).unwrap();
                let (mut b_nll, mut b_pe) = (0.0, 0.0);
                for q in batch {
                    let l = self.model.joint_loss_grad(q, self.cfg.loss, w, &mut grads);
                    let l = match l {
                        Ok(l) if l.total.is_finite() => l,
                        Ok(_) | Err(Error::NonFinite(_)) => {
                            return Err(Error::Diverged {
                                step: self.adam.t + 1,
                                records: batch.iter().map(|q| format!("{}#{}", q.record_id, q.turn_index)).collect(),
                            })
                        }
                        Err(e) => return Err(e),
                    };
                    b_nll += l.nll.to_f64().unwrap();
                    b_pe += l.pe.to_f64().unwrap();
                }
                if grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged {
                        step: self.adam.t + 1,
                        records: batch.iter().map(|q| format!("{}#{}", q.record_id, q.turn_index)).collect(),
                    });
                }
                if let Some(max_norm) = self.cfg.grad_clip {
                    let norm = grads.iter().map(|&g| g.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
                    if norm > max_norm {
                        let s = T::c(max_norm / norm);
                        grads.iter_mut().for_each(|g| *g *= s);
                    }
                }
                let step = self.adam.t + 1;
                let lr = lr_schedule(step, &self.cfg)?;
                self.adam.step(self.model.params_mut(), &grads, lr);
                let n = batch.len() as f64;
                let (nll, pe) = (b_nll / n, b_pe / n);
                sum_nll += b_nll;
                sum_pe += b_pe;
                sum_total += b_nll + b_pe;
                steps += 1;
                emit(&mut report, TrainEvent::Step { step, epoch, lr, nll, pe, total: nll + pe });
            }
            let n = quads.len() as f64;
            self.epochs_done += 1;
            let validation = self.validate_on(&valid_quads)?;
            emit(
                &mut report,
                TrainEvent::Epoch {
                    epoch,
                    steps,
                    mean_nll: sum_nll / n,
                    mean_pe: sum_pe / n,
                    mean_total: sum_total / n,
                    validation,
                },
            );
            if let Some(dir) = &self.checkpoint_dir {
                let path = dir.join(format!("epoch-{epoch}.ckpt"));
                self.save_checkpoint(&path)?;
                emit(&mut report, TrainEvent::Checkpoint { epoch, path });
            }
        }
        Ok(report)
    }
}

/// Convenience wrapper: fresh optimizer, no checkpoints, events discarded.
pub fn train<T: Scalar>(
    model: ModelState<T>,
    train: &[DialogueRecord],
    valid: &[DialogueRecord],
    cfg: TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    let mut trainer = Trainer::new(model, cfg)?;
    let report = trainer.run(train, valid, &mut |_| {})?;
    Ok((trainer.into_model(), report))
}
