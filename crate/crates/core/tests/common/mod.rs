#![allow(dead_code)]

use cban::dynamics::{ArchSpec, LayerSpec, Role, WeightBundle};
use cban::{ActivationKind, Evidence, Mask, NetState, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_| n.sample(rng))
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Random dense stack with 2 or 3 layers of 1..=max units each.
pub fn random_dense_arch(rng: &mut ChaCha8Rng, max_units: usize, kind: ActivationKind) -> ArchSpec {
    let layers = rng.random_range(2..=3);
    let sizes: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=max_units)).collect();
    ArchSpec::dense(&sizes, kind).unwrap()
}

/// Three unpooled conv layers on a small grid.
pub fn conv_arch(h: usize, w: usize, k: usize, kind: ActivationKind) -> ArchSpec {
    ArchSpec {
        layers: vec![
            LayerSpec::conv(1, h, w, false, Role::Visible),
            LayerSpec::conv(3, h, w, false, Role::Hidden),
            LayerSpec::conv(2, h, w, false, Role::Hidden),
        ],
        kernel_sizes: vec![k],
        activation: kind,
        symmetric: true,
    }
}

/// Conv stack with 2×2 pooling into each hidden layer.
pub fn pooled_conv_arch(kind: ActivationKind) -> ArchSpec {
    ArchSpec {
        layers: vec![
            LayerSpec::conv(1, 8, 8, false, Role::Visible),
            LayerSpec::conv(3, 4, 4, true, Role::Hidden),
            LayerSpec::conv(4, 2, 2, true, Role::Hidden),
        ],
        kernel_sizes: vec![3],
        activation: kind,
        symmetric: true,
    }
}

/// Gaussian weights and biases for every block.
pub fn random_weights(arch: &ArchSpec, std: f64, bias_std: f64, rng: &mut ChaCha8Rng) -> WeightBundle {
    let mut w = WeightBundle::zeros(arch);
    let nf = w.forward.len() + w.reverse.as_ref().map_or(0, Vec::len);
    for (i, b) in w.blocks_mut().enumerate() {
        let s = if i < nf { std } else { bias_std };
        *b = gaussian(b.shape(), s, rng);
    }
    w
}

/// Batch of `n` states with every unit uniform in (-0.9, 0.9).
pub fn random_state(arch: &ArchSpec, n: usize, rng: &mut ChaCha8Rng) -> NetState {
    NetState {
        layers: (0..arch.num_layers())
            .map(|l| uniform(&arch.batched_shape(l, n), -0.9, 0.9, rng))
            .collect(),
        evidence: None,
    }
}

/// Clamp evidence on roughly half of the visible units; at least one unit is
/// observed and one is free per item when the layer has two or more units.
pub fn random_clamp(arch: &ArchSpec, n: usize, rng: &mut ChaCha8Rng) -> Evidence {
    let shape = arch.batched_shape(0, n);
    let per = arch.visible().units();
    let mut bits: Vec<bool> = (0..n * per).map(|_| rng.random_bool(0.5)).collect();
    for i in 0..n {
        bits[i * per] = true;
        if per > 1 {
            bits[i * per + per - 1] = false;
        }
    }
    let values = uniform(&shape, -0.9, 0.9, rng);
    Evidence::clamp(Mask::new(shape, bits).unwrap(), values).unwrap()
}

/// Random state whose visible layer already honours `ev`.
pub fn random_state_with(arch: &ArchSpec, ev: Evidence, rng: &mut ChaCha8Rng) -> NetState {
    let n = ev.shape()[0];
    let mut s = random_state(arch, n, rng);
    let v: Vec<f64> = s.layers[0]
        .data()
        .iter()
        .zip(ev.mask().bits())
        .zip(ev.values().data())
        .map(|((&x, &m), &e)| if m { e } else { x })
        .collect();
    s.layers[0] = Tensor::new(arch.batched_shape(0, n), v).unwrap();
    s.evidence = Some(ev);
    s
}
