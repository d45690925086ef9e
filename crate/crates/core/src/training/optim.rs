use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{ArchSpec, WeightBundle};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::{GradNorm, Optimizer};

/// Adam moments; empty for plain SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

fn renormalize(g: &Tensor, norm: GradNorm) -> Tensor {
    let n = match norm {
        GradNorm::L2 => g.data().iter().map(|v| v * v).sum::<f64>().sqrt(),
        GradNorm::Linf => g.max_abs(),
    };
    if n > 0.0 {
        g.scale(1.0 / n)
    } else {
        g.clone()
    }
}

/// Applies one update to every parameter block of `w`. In symmetric mode
/// only forward weights exist, so the derived reverse maps follow
/// automatically.
pub fn optimizer_step(
    opt: &Optimizer,
    state: &mut OptimizerState,
    w: &mut WeightBundle,
    grads: &WeightBundle,
    lr_multiplier: f64,
) -> Result<()> {
    if w.num_blocks() != grads.num_blocks() || w.blocks().zip(grads.blocks()).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::Shape("gradient blocks do not match the weights".into()));
    }
    for (i, g) in grads.blocks().enumerate() {
        g.check_finite(&format!("gradient block {i}"))?;
    }
    state.step += 1;
    match *opt {
        Optimizer::SgdRenorm { norm, lr } => {
            let lr = lr * lr_multiplier;
            for (p, g) in w.blocks_mut().zip(grads.blocks()) {
                let step = renormalize(g, norm).scale(lr);
                *p = p.sub(&step)?;
            }
        }
        Optimizer::Adam { lr, beta1, beta2, eps } => {
            if state.m.is_empty() {
                state.m = grads.blocks().map(|g| Tensor::zeros(g.shape())).collect();
                state.v = state.m.clone();
            }
            let lr = lr * lr_multiplier;
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, g), m), v) in w
                .blocks_mut()
                .zip(grads.blocks())
                .zip(state.m.iter_mut())
                .zip(state.v.iter_mut())
            {
                *m = m.zip_map(g, |m, g| beta1 * m + (1.0 - beta1) * g)?;
                *v = v.zip_map(g, |v, g| beta2 * v + (1.0 - beta2) * g * g)?;
                let step = m.zip_map(v, |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps))?;
                *p = p.sub(&step)?;
            }
        }
    }
    for (i, p) in w.blocks().enumerate() {
        p.check_finite(&format!("parameter block {i} after update"))?;
    }
    Ok(())
}

/// Standard deviation for a fully-connected pair of `n_lo` and `n_hi` units:
/// `0.1 / √(n_lo/2 + n_hi/2 + 1)`.
pub fn fc_init_std(n_lo: usize, n_hi: usize) -> f64 {
    0.1 / (0.5 * n_lo as f64 + 0.5 * n_hi as f64 + 1.0).sqrt()
}

pub const DEFAULT_CONV_INIT_STD: f64 = 0.01;

/// Gaussian weights (see [`fc_init_std`]; conv pairs use `conv_std`),
/// zero biases. Deterministic in `seed`.
pub fn init_weights_with(arch: &ArchSpec, seed: u64, conv_std: f64) -> Result<WeightBundle> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightBundle::zeros(arch);
    let draw = |t: &Tensor, std: f64, rng: &mut ChaCha8Rng| -> Result<Tensor> {
        if std == 0.0 {
            return Ok(Tensor::zeros(t.shape()));
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Tensor::from_fn(t.shape(), |_| normal.sample(rng)))
    };
    let stds: Vec<f64> = (0..arch.num_pairs())
        .map(|p| {
            if arch.is_conv_pair(p) {
                conv_std
            } else {
                fc_init_std(arch.layers[p].units(), arch.layers[p + 1].units())
            }
        })
        .collect();
    for (p, f) in w.forward.iter_mut().enumerate() {
        *f = draw(f, stds[p], &mut rng)?;
    }
    if let Some(rev) = w.reverse.as_mut() {
        for (p, r) in rev.iter_mut().enumerate() {
            *r = draw(r, stds[p], &mut rng)?;
        }
    }
    Ok(w)
}

pub fn init_weights(arch: &ArchSpec, seed: u64) -> Result<WeightBundle> {
    init_weights_with(arch, seed, DEFAULT_CONV_INIT_STD)
}
