use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossOptions;

/// Hyper-parameters of joint training.
///
/// Defaults are sized for CPU runs. The large-scale reference setting
/// (peak lr 2e-6, 500 warmup steps, 5 epochs, batch 168) is expressible
/// with the same fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
    pub loss: LossOptions,
    /// Upper bound on validation quadruples scored per epoch.
    pub max_valid_quadruples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-4,
            warmup_steps: 100,
            epochs: 5,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grad_clip: None,
            loss: LossOptions::default(),
            max_valid_quadruples: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_lr > 0.0
            && self.warmup_steps >= 1
            && self.batch_size >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.grad_clip.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Linear warmup to `peak_lr`, then inverse-square-root decay anchored so
/// the two pieces meet at `warmup_steps`.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step < 1 {
        return Err(Error::InvalidArgument("learning-rate steps start at 1".into()));
    }
    let w = cfg.warmup_steps as f64;
    let s = step as f64;
    Ok(if s <= w { cfg.peak_lr * s / w } else { cfg.peak_lr * (w / s).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(peak: f64, warmup: u64) -> TrainConfig {
        TrainConfig { peak_lr: peak, warmup_steps: warmup, ..Default::default() }
    }

    #[test]
    fn reference_points() {
        let c = cfg(3e-4, 100);
        assert_eq!(lr_schedule(100, &c).unwrap(), 3e-4);
        assert!((lr_schedule(400, &c).unwrap() - 1.5e-4).abs() < 1e-18);
        let big = cfg(2e-6, 500);
        assert!((lr_schedule(250, &big).unwrap() - 1e-6).abs() < 1e-20);
        assert!(lr_schedule(0, &c).is_err());
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let c = cfg(1e-3, 37);
        let at = lr_schedule(37, &c).unwrap();
        let after = lr_schedule(38, &c).unwrap();
        let before = lr_schedule(36, &c).unwrap();
        assert!((at - 1e-3).abs() < 1e-18);
        assert!(after < at && before < at);
        assert!((after - at).abs() < at * 0.02);
    }

    #[test]
    fn reference_setting_is_accepted() {
        let c = TrainConfig { peak_lr: 2e-6, warmup_steps: 500, epochs: 5, batch_size: 168, ..Default::default() };
        c.validate().unwrap();
        let parsed: TrainConfig = serde_json::from_str(r#"{"peak_lr":2e-6,"warmup_steps":500,"batch_size":168}"#).unwrap();
        assert_eq!(parsed.batch_size, 168);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"peak":1}"#).is_err());
    }
}
