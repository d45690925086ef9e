use rayon::prelude::*;

use crate::autodiff::{Eager, Graph, Tape};
use crate::dynamics::{fold_item_delta, sweep_in_place, ArchSpec, Evidence, Net, Params, SettleReport, WeightBundle};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::{LossKind, TrainConfig};
use super::losses::loss_items;

/// Settings of one unrolled forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Td1Settings {
    pub loss: LossKind,
    pub theta: f64,
    pub max_iters: usize,
    pub loss_every_sweep: bool,
}

impl From<&TrainConfig> for Td1Settings {
    fn from(c: &TrainConfig) -> Self {
        Td1Settings {
            loss: c.loss,
            theta: c.theta,
            max_iters: c.max_iters,
            loss_every_sweep: c.loss_every_sweep,
        }
    }
}

/// Loss of a batch and how each item settled.
#[derive(Clone, Debug, PartialEq)]
pub struct Td1Output {
    /// Mean over items of the per-sweep losses summed up to each item's t*.
    pub loss: f64,
    pub reports: Vec<SettleReport>,
}

/// Unrolls sweeps on `g` for one chunk of items. Returns the summed loss
/// (over items and sweeps) and a report per item.
pub(crate) fn td1_chunk<G: Graph>(
    g: &mut G,
    params: &Params<G::Value>,
    arch: &ArchSpec,
    evidence: &Evidence,
    targets: &Tensor,
    s: &Td1Settings,
) -> Result<(Option<G::Value>, Vec<SettleReport>)> {
    let kind = arch.activation;
    let n = targets.shape()[0];
    let net = Net::new(g, arch, params);
    let ev = evidence.compile(g);
    let y = g.constant(targets.clone());
    let mut layers: Vec<G::Value> = (0..arch.num_layers())
        .map(|l| {
            let t = if l == 0 {
                evidence.initial_visible()
            } else {
                Tensor::zeros(&arch.batched_shape(l, n))
            };
            g.constant(t)
        })
        .collect();

    let mut reports: Vec<SettleReport> = (0..n)
        .map(|_| SettleReport {
            t_star: s.max_iters,
            converged: false,
            cycle_length: 0,
            energy_trace: Vec::new(),
            max_delta_trace: Vec::new(),
            item_t_star: Vec::new(),
        })
        .collect();
    let mut done = vec![false; n];
    let mut total: Option<G::Value> = None;

    for t in 1..=s.max_iters {
        let before: Vec<Tensor> = layers.iter().map(|v| g.value(v).clone()).collect();
        let mut v_free = sweep_in_place(g, &net, &ev, &mut layers);
        if ev.external.is_some() {
            let u = net.preactivation(g, &layers, 0, None);
            v_free = g.activation(&u, kind);
        }
        let mut delta = vec![0.0; n];
        for (l, (v, old)) in layers.iter().zip(&before).enumerate() {
            let new = g.value(v);
            new.check_finite(&format!("layer {l}"))
                .map_err(|e| e.with_context(format!("unrolled sweep {t} diverged")))?;
            fold_item_delta(new, old, &mut delta);
        }
        let mut weight = vec![0.0; n];
        for i in 0..n {
            if done[i] {
                continue;
            }
            reports[i].max_delta_trace.push(delta[i]);
            let settled = delta[i] < s.theta;
            if settled {
                done[i] = true;
                reports[i].t_star = t;
                reports[i].converged = true;
            }
            if s.loss_every_sweep || settled || t == s.max_iters {
                weight[i] = 1.0;
            }
        }
        if weight.iter().any(|&w| w != 0.0) {
            let li = loss_items(g, s.loss, kind, &v_free, &y);
            let wv = g.constant(Tensor::new(vec![n], weight)?);
            let weighted = g.mul(&li, &wv);
            let term = g.sum(&weighted);
            total = Some(match total {
                Some(acc) => g.add(&acc, &term),
                None => term,
            });
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    for r in reports.iter_mut() {
        r.item_t_star = vec![r.t_star];
    }
    Ok((total, reports))
}

fn check_batch(
    evidence: &Evidence,
    targets: &Tensor,
    w: &WeightBundle,
    arch: &ArchSpec,
    s: &Td1Settings,
) -> Result<()> {
    w.validate(arch)?;
    if !(s.theta > 0.0) || s.max_iters == 0 {
        return Err(Error::InvalidArgument(
            "theta must be positive and max_iters ≥ 1".into(),
        ));
    }
    let n = targets.shape().first().copied().unwrap_or(0);
    if targets.shape() != arch.batched_shape(0, n).as_slice() || evidence.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "targets {:?} and evidence {:?} must both match visible layer {:?}",
            targets.shape(),
            evidence.shape(),
            arch.batched_shape(0, n)
        )));
    }
    targets.check_finite("targets")?;
    evidence.check_range(arch.activation)?;
    if let Some((lo, hi)) = arch.activation.range() {
        if let Some((index, &value)) = targets.data().iter().enumerate().find(|(_, &v)| v <= lo || v >= hi) {
            return Err(Error::Domain {
                index,
                value,
                what: "the activation range (targets)",
            });
        }
    }
    Ok(())
}

fn split(n: usize, chunk: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(chunk.max(1)).map(|a| (a, (a + chunk).min(n))).collect()
}

fn slice_items(t: &Tensor, a: usize, b: usize) -> Result<Tensor> {
    let stride = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = b - a;
    Tensor::new(shape, t.data()[a * stride..b * stride].to_vec())
}

/// Runs the unrolled forward pass without recording and returns the loss.
pub fn td1_forward(
    evidence: &Evidence,
    targets: &Tensor,
    w: &WeightBundle,
    arch: &ArchSpec,
    s: &Td1Settings,
) -> Result<Td1Output> {
    check_batch(evidence, targets, w, arch, s)?;
    let n = targets.shape()[0];
    let mut g = Eager;
    let (total, reports) = td1_chunk(&mut g, w, arch, evidence, targets, s)?;
    let loss = total.map_or(0.0, |t| t.item()) / n as f64;
    Ok(Td1Output { loss, reports })
}

/// Loss and its gradient with respect to every parameter block. Items are
/// split into chunks of `chunk_size`, each on its own tape; chunk gradients
/// are summed in order.
pub fn td1_loss_and_grad(
    evidence: &Evidence,
    targets: &Tensor,
    w: &WeightBundle,
    arch: &ArchSpec,
    s: &Td1Settings,
    chunk_size: usize,
) -> Result<(Td1Output, WeightBundle)> {
    check_batch(evidence, targets, w, arch, s)?;
    let n = targets.shape()[0];
    let parts: Vec<Result<(f64, Vec<Tensor>, Vec<SettleReport>)>> = split(n, chunk_size)
        .into_par_iter()
        .map(|(a, b)| {
            let ev = evidence.items(a, b)?;
            let y = slice_items(targets, a, b)?;
            let mut tape = Tape::new();
            let vars: Vec<_> = w.blocks().map(|t| tape.var(t.clone())).collect();
            let params = Params::from_blocks_like(w, vars.clone());
            let (total, reports) = td1_chunk(&mut tape, &params, arch, &ev, &y, s)?;
            match total {
                Some(t) => {
                    let value = tape.value(&t).item();
                    let grads = tape.grad(t, &vars)?;
                    Ok((value, grads, reports))
                }
                None => Ok((0.0, w.blocks().map(|b| Tensor::zeros(b.shape())).collect(), reports)),
            }
        })
        .collect();

    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = w.blocks().map(|b| Tensor::zeros(b.shape())).collect();
    let mut reports = Vec::with_capacity(n);
    for part in parts {
        let (value, g, r) = part?;
        loss += value;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
        reports.extend(r);
    }
    let scale = 1.0 / n as f64;
    let grads = grads.into_iter().map(|g| g.scale(scale)).collect();
    Ok((
        Td1Output {
            loss: loss * scale,
            reports,
        },
        Params::from_blocks_like(w, grads),
    ))
}
