use serde::{Deserialize, Serialize};

use crate::dynamics::{EvidenceMode, DEFAULT_MAX_ITERS, DEFAULT_THETA};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error between free-running visible values and targets.
    Se,
    /// Energy gap between clamped and free-running visible states.
    DeltaE,
    /// Soft hinge (softplus) on the energy gap.
    DeltaEPlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradNorm {
    L2,
    Linf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    /// Each parameter block's gradient rescaled to unit norm, then a plain step.
    SgdRenorm { norm: GradNorm, lr: f64 },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::SgdRenorm { lr, .. } | Optimizer::Adam { lr, .. } => lr,
        }
    }
}

/// Learning-rate multiplier in force from `epoch` (0-based) onwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epoch: usize,
    pub multiplier: f64,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}
fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_chunk() -> usize {
    50
}
fn default_conv_std() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub lr_schedule: Vec<LrStep>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fixed at 1.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Items per autodiff tape; chunks run in parallel.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default = "default_conv_std")]
    pub conv_init_std: f64,
    /// Inject the loss after every sweep (TD(1)); when false only the loss at
    /// each item's final sweep counts.
    #[serde(default = "default_true")]
    pub loss_every_sweep: bool,
    #[serde(default)]
    pub evidence: EvidenceMode,
}

impl TrainConfig {
    pub fn new(loss: LossKind, optimizer: Optimizer, batch_size: usize, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            loss,
            optimizer,
            lr_schedule: Vec::new(),
            theta: DEFAULT_THETA,
            max_iters: DEFAULT_MAX_ITERS,
            batch_size,
            epochs,
            seed,
            temperature: 1.0,
            chunk_size: default_chunk(),
            conv_init_std: default_conv_std(),
            loss_every_sweep: true,
            evidence: EvidenceMode::Clamp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.optimizer.lr() > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.optimizer.lr()));
        }
        if let Optimizer::Adam { beta1, beta2, eps, .. } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("Adam needs betas in [0, 1) and eps > 0".into());
            }
        }
        if !(self.theta > 0.0) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if self.temperature != 1.0 {
            return bad(format!("temperature is fixed at 1, got {}", self.temperature));
        }
        if self.max_iters == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return bad("max_iters, batch_size and chunk_size must be at least 1".into());
        }
        if !(self.conv_init_std >= 0.0) {
            return bad(format!(
                "conv init std must be non-negative, got {}",
                self.conv_init_std
            ));
        }
        if self.lr_schedule.iter().any(|s| !(s.multiplier > 0.0)) {
            return bad("learning-rate multipliers must be positive".into());
        }
        Ok(())
    }

    /// Multiplier of the latest schedule entry at or before `epoch`.
    pub fn lr_multiplier(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|s| s.epoch <= epoch)
            .max_by_key(|s| s.epoch)
            .map_or(1.0, |s| s.multiplier)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_and_validation() {
        let mut c = TrainConfig::new(
            LossKind::DeltaEPlus,
            Optimizer::SgdRenorm {
                norm: GradNorm::L2,
                lr: 0.01,
            },
            20,
            10,
            1,
        );
        assert!(c.validate().is_ok());
        c.lr_schedule = vec![
            LrStep {
                epoch: 5,
                multiplier: 0.1,
            },
            LrStep {
                epoch: 8,
                multiplier: 0.01,
            },
        ];
        assert_eq!(c.lr_multiplier(0), 1.0);
        assert_eq!(c.lr_multiplier(5), 0.1);
        assert_eq!(c.lr_multiplier(9), 0.01);
        c.temperature = 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_defaults() {
        let c: TrainConfig = serde_json::from_str(
            r#"{"loss":"delta_e_plus","optimizer":{"type":"adam","lr":0.001},
                "batch_size":4,"epochs":1,"seed":3}"#,
        )
        .unwrap();
        assert_eq!(c.theta, 0.01);
        assert_eq!(c.max_iters, 100);
        assert_eq!(c.optimizer, Optimizer::adam(0.001));
        assert!(c.loss_every_sweep);
    }
}
