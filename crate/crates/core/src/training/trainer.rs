use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{shuffled_indices, stack_examples, Example, TaskData};
use crate::dynamics::{
    settle_with, ArchSpec, Evidence, EvidenceMode, NetState, SettleOptions, SettleReport, WeightBundle,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::{init_weights_with, optimizer_step, OptimizerState};
use super::td1::{td1_loss_and_grad, Td1Settings};

/// Stacks examples into batched evidence and targets.
pub fn batch_inputs(examples: &[Example], mode: EvidenceMode) -> Result<(Evidence, Tensor)> {
    let (targets, mask) = stack_examples(examples)?;
    let ev = Evidence::new(mode, mask, targets.clone())?;
    Ok((ev, targets))
}

/// Settles a batch of examples from their evidence.
pub fn complete(
    examples: &[Example],
    w: &WeightBundle,
    arch: &ArchSpec,
    mode: EvidenceMode,
    opts: &SettleOptions,
) -> Result<(NetState, SettleReport)> {
    let (ev, _) = batch_inputs(examples, mode)?;
    let state = NetState::with_evidence(arch, ev)?;
    settle_with(&state, w, arch, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub loss: f64,
    pub mean_t_star: f64,
    pub nonconverged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0-based index of the finished epoch.
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_t_star: f64,
    pub nonconverged: usize,
    pub lr_multiplier: f64,
}

/// Mutable training run: weights, optimizer moments, epoch counter and the
/// generator driving shuffles and masks.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub arch: ArchSpec,
    pub cfg: TrainConfig,
    pub weights: WeightBundle,
    pub opt_state: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh weights and generator, both derived from `cfg.seed`.
    pub fn new(arch: ArchSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = init_weights_with(&arch, cfg.seed, cfg.conv_init_std)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
        Ok(Trainer {
            arch,
            cfg,
            weights,
            opt_state: OptimizerState::default(),
            epoch: 0,
            rng,
        })
    }

    pub fn resume(
        arch: ArchSpec,
        cfg: TrainConfig,
        weights: WeightBundle,
        opt_state: OptimizerState,
        epoch: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        weights.validate(&arch)?;
        Ok(Trainer {
            arch,
            cfg,
            weights,
            opt_state,
            epoch,
            rng,
        })
    }

    /// One gradient step on `examples`.
    pub fn train_batch(&mut self, examples: &[Example]) -> Result<BatchStats> {
        let (ev, targets) = batch_inputs(examples, self.cfg.evidence)?;
        let settings = Td1Settings::from(&self.cfg);
        let (out, grads) = td1_loss_and_grad(&ev, &targets, &self.weights, &self.arch, &settings, self.cfg.chunk_size)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite {
                index: 0,
                context: "batch loss".into(),
            });
        }
        let mult = self.cfg.lr_multiplier(self.epoch);
        optimizer_step(
            &self.cfg.optimizer,
            &mut self.opt_state,
            &mut self.weights,
            &grads,
            mult,
        )?;
        let n = out.reports.len() as f64;
        Ok(BatchStats {
            loss: out.loss,
            mean_t_star: out.reports.iter().map(|r| r.t_star as f64).sum::<f64>() / n,
            nonconverged: out.reports.iter().filter(|r| !r.converged).count(),
        })
    }

    /// One pass over `data` in shuffled mini-batches, with masks redrawn for
    /// every example.
    pub fn run_epoch(&mut self, data: &dyn TaskData) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let epoch = self.epoch;
        let order = shuffled_indices(data.len(), &mut self.rng);
        let (mut loss_sum, mut t_sum, mut items, mut nonconverged) = (0.0, 0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let examples = idx
                .iter()
                .map(|&i| data.example(i, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let stats = self
                .train_batch(&examples)
                .map_err(|e| e.with_context(format!("epoch {epoch}, batch {b}")))?;
            let k = examples.len();
            loss_sum += stats.loss * k as f64;
            t_sum += stats.mean_t_star * k as f64;
            items += k;
            nonconverged += stats.nonconverged;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch,
            mean_loss: loss_sum / items as f64,
            mean_t_star: t_sum / items as f64,
            nonconverged,
            lr_multiplier: self.cfg.lr_multiplier(epoch),
        })
    }
}

/// Trains for `cfg.epochs` epochs from a fresh initialization.
pub fn train(data: &dyn TaskData, arch: &ArchSpec, cfg: &TrainConfig) -> Result<(WeightBundle, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(arch.clone(), cfg.clone())?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        log.push(trainer.run_epoch(data)?);
    }
    Ok((trainer.weights, log))
}
