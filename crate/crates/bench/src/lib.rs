//! Seeded fixtures shared by the benchmarks.

use cban::training::init_weights;
use cban::{ActivationKind, ArchSpec, Evidence, Mask, Tensor, WeightBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal entries.
pub fn gaussian(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::from_fn(shape, |_| n.sample(&mut r))
}

/// Dense tanh net with initial weights.
pub fn dense_net(sizes: &[usize], seed: u64) -> (ArchSpec, WeightBundle) {
    let arch = ArchSpec::dense(sizes, ActivationKind::Tanh).expect("valid sizes");
    let w = init_weights(&arch, seed).expect("init");
    (arch, w)
}

/// Clamped evidence with about a third of the visible units hidden.
pub fn evidence(batch: usize, visible: usize, seed: u64) -> (Evidence, Tensor) {
    let mut r = rng(seed);
    let targets = Tensor::from_fn(&[batch, visible], |_| if r.random::<bool>() { 0.9 } else { -0.9 });
    let bits: Vec<bool> = (0..batch * visible).map(|_| r.random::<f64>() >= 1.0 / 3.0).collect();
    let mask = Mask::new([batch, visible], bits).expect("mask shape");
    let ev = Evidence::clamp(mask, targets.clone()).expect("evidence");
    (ev, targets)
}
