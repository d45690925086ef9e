//! Randomized invariant suites behind `cban check`.

use cban::dynamics::{settle_with, synchronous_iterate, update_layer, SettleOptions};
use cban::training::{td1_forward, td1_loss_and_grad, LossKind, Td1Settings};
use cban::{energy, ActivationKind, ArchSpec, Evidence, LayerSpec, Mask, NetState, Role, Tensor, WeightBundle};
use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::CliResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradients,
    Energy,
    Convergence,
    Bound,
}

/// One line of the printed table.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Worst observed value or other context.
    pub detail: String,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn print_table(rows: &[CheckRow]) {
    println!(
        "{:<44} {:>7} {:>8}  {:<6} detail",
        "check", "trials", "failures", "result"
    );
    for r in rows {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<44} {:>7} {:>8}  {:<6} {}",
            r.name, r.trials, r.failures, verdict, r.detail
        );
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> CliResult<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match suite {
        Suite::Gradients => gradients(&mut rng),
        Suite::Energy => energy_descent(&mut rng),
        Suite::Convergence => convergence(&mut rng),
        Suite::Bound => bound(&mut rng),
    }
}

fn gaussian(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| n.sample(rng))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn random_weights(arch: &ArchSpec, std: f64, bias_std: f64, rng: &mut ChaCha8Rng) -> WeightBundle {
    let mut w = WeightBundle::zeros(arch);
    let nf = w.forward.len() + w.reverse.as_ref().map_or(0, Vec::len);
    for (i, b) in w.blocks_mut().enumerate() {
        *b = gaussian(b.shape(), if i < nf { std } else { bias_std }, rng);
    }
    w
}

/// 2 or 3 dense layers with at most `total` units in all.
fn random_dense(rng: &mut ChaCha8Rng, total: usize, kind: ActivationKind) -> ArchSpec {
    let layers = rng.random_range(2..=3);
    let sizes: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=total / layers)).collect();
    ArchSpec::dense(&sizes, kind).expect("valid sizes")
}

fn random_state(arch: &ArchSpec, rng: &mut ChaCha8Rng) -> NetState {
    NetState {
        layers: (0..arch.num_layers())
            .map(|l| uniform(&arch.batched_shape(l, 1), -0.9, 0.9, rng))
            .collect(),
        evidence: None,
    }
}

/// Observes a random half of the visible units of `state` at their current
/// values.
fn clamp_half(arch: &ArchSpec, mut state: NetState, rng: &mut ChaCha8Rng) -> CliResult<NetState> {
    let shape = arch.batched_shape(0, 1);
    let bits: Vec<bool> = (0..state.layers[0].len()).map(|_| rng.random_bool(0.5)).collect();
    let ev = Evidence::clamp(Mask::new(shape, bits)?, state.layers[0].clone())?;
    state.evidence = Some(ev);
    Ok(state)
}

/// Largest energy rise over `sweeps` full sweeps of single-layer updates.
fn worst_rise(state: NetState, w: &WeightBundle, arch: &ArchSpec, sweeps: usize) -> CliResult<f64> {
    let mut s = state;
    let mut e = energy(&s, w, arch)?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..sweeps {
        for l in arch.sweep_order() {
            s = update_layer(&s, w, arch, l)?;
            let next = energy(&s, w, arch)?;
            worst = worst.max(next - e);
            e = next;
        }
    }
    Ok(worst)
}

const ENERGY_SLACK: f64 = 1e-9;

fn energy_descent(rng: &mut ChaCha8Rng) -> CliResult<Vec<CheckRow>> {
    let trials = 200;
    let (mut rises, mut stuck) = (0, 0);
    let mut worst = f64::NEG_INFINITY;
    let mut slowest = 0;
    for t in 0..trials {
        let arch = random_dense(rng, 64, ActivationKind::Tanh);
        let w = random_weights(&arch, 0.5, 0.5, rng);
        let mut s = random_state(&arch, rng);
        if t % 2 == 1 {
            s = clamp_half(&arch, s, rng)?;
        }
        let rise = worst_rise(s.clone(), &w, &arch, 3)?;
        worst = worst.max(rise);
        rises += usize::from(rise > ENERGY_SLACK);
        let opts = SettleOptions {
            theta: 1e-3,
            max_iters: 500,
            record_energy: false,
            ..SettleOptions::default()
        };
        let (_, rep) = settle_with(&s, &w, &arch, &opts)?;
        stuck += usize::from(!rep.converged || rep.cycle_length != 0);
        slowest = slowest.max(rep.t_star);
    }

    let conv_trials = 50;
    let mut conv_rises = 0;
    let mut conv_worst = f64::NEG_INFINITY;
    for _ in 0..conv_trials {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let arch = ArchSpec {
            layers: vec![
                LayerSpec::conv(1, 6, 5, false, Role::Visible),
                LayerSpec::conv(3, 6, 5, false, Role::Hidden),
                LayerSpec::conv(2, 6, 5, false, Role::Hidden),
            ],
            kernel_sizes: vec![k],
            activation: ActivationKind::Tanh,
            symmetric: true,
        };
        let w = random_weights(&arch, 0.5, 0.3, rng);
        let s = clamp_half(&arch, random_state(&arch, rng), rng)?;
        let rise = worst_rise(s, &w, &arch, 2)?;
        conv_worst = conv_worst.max(rise);
        conv_rises += usize::from(rise > ENERGY_SLACK);
    }
    Ok(vec![
        CheckRow {
            name: "dense layerwise updates never raise energy",
            trials,
            failures: rises,
            detail: format!("largest change {worst:.2e}"),
        },
        CheckRow {
            name: "dense settling reaches a fixed point",
            trials,
            failures: stuck,
            detail: format!("slowest t* {slowest} of 500"),
        },
        CheckRow {
            name: "conv layerwise updates never raise energy",
            trials: conv_trials,
            failures: conv_rises,
            detail: format!("largest change {conv_worst:.2e}"),
        },
    ])
}

fn symmetric_matrix(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let g = gaussian(&[n, n], 2.0, rng);
    Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        if i == j {
            g.data()[k].abs()
        } else {
            0.5 * (g.data()[i * n + j] + g.data()[j * n + i])
        }
    })
}

fn convergence(rng: &mut ChaCha8Rng) -> CliResult<Vec<CheckRow>> {
    let trials = 200;
    let mut long = 0;
    let mut periods = [0usize; 3];
    for _ in 0..trials {
        let n = rng.random_range(2..=12);
        let w = symmetric_matrix(n, rng);
        let b = gaussian(&[n], 0.5, rng);
        let x0 = uniform(&[n], -1.0, 1.0, rng);
        let rep = synchronous_iterate(&w, &b, &x0, ActivationKind::Tanh, 20_000, 24, 1e-9)?;
        match rep.period {
            1 | 2 => periods[rep.period] += 1,
            _ => long += 1,
        }
    }

    let asym_trials = 200;
    let mut cycling = 0;
    for _ in 0..asym_trials {
        let mut arch = ArchSpec::dense(&[4, 4], ActivationKind::Tanh)?;
        arch.symmetric = false;
        let w = random_weights(&arch, 3.0, 0.0, rng);
        let opts = SettleOptions {
            theta: 1e-6,
            max_iters: 300,
            record_energy: false,
            ..SettleOptions::default()
        };
        let (_, rep) = settle_with(&random_state(&arch, rng), &w, &arch, &opts)?;
        cycling += usize::from(!rep.converged && rep.cycle_length >= 2);
    }
    Ok(vec![
        CheckRow {
            name: "symmetric synchronous period is 1 or 2",
            trials,
            failures: long,
            detail: format!("{} fixed points, {} 2-cycles", periods[1], periods[2]),
        },
        CheckRow {
            name: "asymmetric nets show limit cycles",
            trials: asym_trials,
            failures: usize::from(cycling == 0),
            detail: format!("{cycling} cycling"),
        },
    ])
}

/// Scales every weight so that `alpha · ‖W‖₁,∞ = target`.
fn rescale(w: &mut WeightBundle, arch: &ArchSpec, alpha: f64, target: f64) {
    let norm = w.norm_1inf(arch);
    w.scale_weights(target / (alpha * norm));
}

fn bound(rng: &mut ChaCha8Rng) -> CliResult<Vec<CheckRow>> {
    let opts = SettleOptions {
        theta: 1e-6,
        max_iters: 2000,
        record_energy: false,
        ..SettleOptions::default()
    };
    let trials = 200;
    // Returns (settled, slowest t*) over `trials` random leaky nets.
    let run = |target: f64, symmetric: bool, rng: &mut ChaCha8Rng| -> CliResult<(usize, usize)> {
        let (mut settled, mut slowest) = (0, 0);
        for _ in 0..trials {
            let alpha = rng.random_range(0.1..0.9);
            let kind = ActivationKind::LeakySigmoid { alpha };
            let mut arch = random_dense(rng, 30, kind);
            arch.symmetric = symmetric;
            let mut w = random_weights(&arch, 1.0, 0.5, rng);
            rescale(&mut w, &arch, alpha, target);
            // Unbounded activations may overflow, which settling reports as
            // an error; that run did not settle either.
            if let Ok((_, rep)) = settle_with(&random_state(&arch, rng), &w, &arch, &opts) {
                if rep.converged && rep.cycle_length == 0 {
                    settled += 1;
                    slowest = slowest.max(rep.t_star);
                }
            }
        }
        Ok((settled, slowest))
    };
    let (ok, slowest) = run(0.9, true, rng)?;
    let (ok_large, _) = run(5.0, true, rng)?;
    // The guarantee rests on symmetric weights; independent reverse weights
    // can cycle under the same norm, so this row only reports.
    let (ok_asym, _) = run(0.9, false, rng)?;
    Ok(vec![
        CheckRow {
            name: "alpha·norm = 0.9 settles to a fixed point",
            trials,
            failures: trials - ok,
            detail: format!("slowest t* {slowest}"),
        },
        CheckRow {
            name: "alpha·norm = 5 loses the guarantee",
            trials,
            failures: usize::from(ok_large == trials),
            detail: format!("{} of {trials} did not settle", trials - ok_large),
        },
        CheckRow {
            name: "asymmetric, alpha·norm = 0.9 (no guarantee)",
            trials,
            failures: 0,
            detail: format!("{} of {trials} did not settle", trials - ok_asym),
        },
    ])
}

fn small_arch(rng: &mut ChaCha8Rng) -> ArchSpec {
    let tanh = ActivationKind::Tanh;
    match rng.random_range(0..4) {
        0 => ArchSpec::dense(&[3, 4], tanh).expect("valid"),
        1 => ArchSpec::dense(&[3, 3, 2], tanh).expect("valid"),
        2 => {
            let mut a = ArchSpec::dense(&[3, 3], tanh).expect("valid");
            a.symmetric = false;
            a
        }
        _ => ArchSpec {
            layers: vec![
                LayerSpec::conv(1, 3, 3, false, Role::Visible),
                LayerSpec::conv(2, 3, 3, false, Role::Hidden),
            ],
            kernel_sizes: vec![3],
            activation: tanh,
            symmetric: true,
        },
    }
}

fn nudged(w: &WeightBundle, block: usize, idx: usize, delta: f64) -> CliResult<WeightBundle> {
    let mut blocks: Vec<Tensor> = w.blocks().cloned().collect();
    let mut data = blocks[block].data().to_vec();
    data[idx] += delta;
    blocks[block] = Tensor::new(blocks[block].shape().to_vec(), data)?;
    Ok(WeightBundle::from_blocks_like(w, blocks))
}

fn gradients(rng: &mut ChaCha8Rng) -> CliResult<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (loss, name) in [
        (LossKind::Se, "SE gradients match finite differences"),
        (LossKind::DeltaE, "ΔE gradients match finite differences"),
        (LossKind::DeltaEPlus, "ΔE+ gradients match finite differences"),
    ] {
        let trials = 20;
        let (mut failures, mut worst) = (0, 0.0f64);
        for _ in 0..trials {
            let arch = small_arch(rng);
            let w = random_weights(&arch, 0.5, 0.2, rng);
            let n = 2;
            let shape = arch.batched_shape(0, n);
            let values = uniform(&shape, -0.9, 0.9, rng);
            let bits = (0..values.len()).map(|_| rng.random_bool(0.5)).collect();
            let ev = Evidence::clamp(Mask::new(shape.clone(), bits)?, values.clone())?;
            let y = Tensor::from_fn(&shape, |i| {
                if ev.mask().bits()[i] {
                    values.data()[i]
                } else {
                    rng.random_range(-0.9..0.9)
                }
            });
            // An unreachable threshold fixes the unroll length.
            let s = Td1Settings {
                loss,
                theta: 1e-300,
                max_iters: rng.random_range(1..=5),
                loss_every_sweep: true,
            };
            let (_, grads) = td1_loss_and_grad(&ev, &y, &w, &arch, &s, 1)?;
            let h = 1e-5;
            let mut trial_worst = 0.0f64;
            for (b, g) in grads.blocks().enumerate() {
                for i in 0..g.len() {
                    let up = td1_forward(&ev, &y, &nudged(&w, b, i, h)?, &arch, &s)?.loss;
                    let down = td1_forward(&ev, &y, &nudged(&w, b, i, -h)?, &arch, &s)?.loss;
                    let fd = (up - down) / (2.0 * h);
                    let a = g.data()[i];
                    trial_worst = trial_worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
                }
            }
            worst = worst.max(trial_worst);
            failures += usize::from(!(trial_worst < 1e-4));
        }
        rows.push(CheckRow {
            name,
            trials,
            failures,
            detail: format!("worst relative error {worst:.2e}"),
        });
    }
    Ok(rows)
}
