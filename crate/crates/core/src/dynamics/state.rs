use std::collections::VecDeque;

use crate::autodiff::{Eager, Graph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::arch::ArchSpec;
use super::cycle::detect_cycle;
use super::evidence::{CompiledEvidence, Evidence};
use super::network::{Net, WeightBundle};

/// Default stability criterion.
pub const DEFAULT_THETA: f64 = 0.01;
/// Default sweep cap.
pub const DEFAULT_MAX_ITERS: usize = 100;
/// Number of trailing states kept for limit-cycle detection.
pub const CYCLE_WINDOW: usize = 24;

/// Activations of every layer for a batch of items, plus the evidence on the
/// visible layer. `layers[l]` has shape `[n, …]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState {
    pub layers: Vec<Tensor>,
    pub evidence: Option<Evidence>,
}

impl NetState {
    /// All units at 0, no evidence.
    pub fn zeros(arch: &ArchSpec, batch: usize) -> Self {
        NetState {
            layers: (0..arch.num_layers())
                .map(|l| Tensor::zeros(&arch.batched_shape(l, batch)))
                .collect(),
            evidence: None,
        }
    }

    /// Unobserved units at 0, observed visible units at their evidence values.
    pub fn with_evidence(arch: &ArchSpec, evidence: Evidence) -> Result<Self> {
        let n = evidence.shape()[0];
        if evidence.shape() != arch.batched_shape(0, n).as_slice() {
            return Err(Error::Shape(format!(
                "evidence shape {:?} does not match visible layer {:?}",
                evidence.shape(),
                arch.batched_shape(0, n)
            )));
        }
        evidence.check_range(arch.activation)?;
        let mut state = NetState::zeros(arch, n);
        state.layers[0] = evidence.initial_visible();
        state.evidence = Some(evidence);
        Ok(state)
    }

    pub fn batch_len(&self) -> usize {
        self.layers[0].shape()[0]
    }

    pub fn visible(&self) -> &Tensor {
        &self.layers[0]
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        if self.layers.len() != arch.num_layers() {
            return Err(Error::Shape(format!(
                "state has {} layers, architecture {}",
                self.layers.len(),
                arch.num_layers()
            )));
        }
        let n = self.batch_len();
        for (l, x) in self.layers.iter().enumerate() {
            if x.shape() != arch.batched_shape(l, n).as_slice() {
                return Err(Error::Shape(format!(
                    "layer {l}: shape {:?}, expected {:?}",
                    x.shape(),
                    arch.batched_shape(l, n)
                )));
            }
            x.check_finite(&format!("layer {l}"))?;
        }
        if let Some(ev) = &self.evidence {
            if ev.shape() != self.layers[0].shape() {
                return Err(Error::Shape("evidence does not match visible layer".into()));
            }
        }
        Ok(())
    }
}

fn check_inputs(state: &NetState, w: &WeightBundle, arch: &ArchSpec) -> Result<()> {
    w.validate(arch)?;
    state.validate(arch)
}

fn compile<G: Graph>(g: &mut G, ev: Option<&Evidence>) -> CompiledEvidence<G> {
    match ev {
        Some(e) => e.compile(g),
        None => CompiledEvidence::none(),
    }
}

/// Recomputes layer `l` in place. For the visible layer, returns the value
/// computed before evidence was re-applied.
pub(crate) fn update_in_place<G: Graph>(
    g: &mut G,
    net: &Net<'_, G>,
    ev: &CompiledEvidence<G>,
    layers: &mut [G::Value],
    l: usize,
) -> Option<G::Value> {
    let external = if l == 0 { ev.external.as_ref() } else { None };
    let u = net.preactivation(g, layers, l, external);
    let x = g.activation(&u, net.arch.activation);
    if l == 0 {
        layers[0] = ev.apply(g, &x);
        Some(x)
    } else {
        layers[l] = x;
        None
    }
}

/// One sweep in place; returns the visible value computed in the final step
/// before evidence was re-applied.
pub(crate) fn sweep_in_place<G: Graph>(
    g: &mut G,
    net: &Net<'_, G>,
    ev: &CompiledEvidence<G>,
    layers: &mut [G::Value],
) -> G::Value {
    let mut free_visible = None;
    for l in net.arch.sweep_order() {
        if let Some(v) = update_in_place(g, net, ev, layers, l) {
            free_visible = Some(v);
        }
    }
    free_visible.expect("every sweep ends on the visible layer")
}

/// Per-item energy `[n]`.
pub(crate) fn energy_items<G: Graph>(
    g: &mut G,
    net: &Net<'_, G>,
    layers: &[G::Value],
    external: Option<&G::Value>,
) -> G::Value {
    let kind = net.arch.activation;
    let mut total: Option<G::Value> = None;
    let mut acc = |g: &mut G, term: G::Value| {
        total = Some(match total.take() {
            Some(t) => g.add(&t, &term),
            None => term,
        });
    };
    for p in 0..net.arch.num_pairs() {
        let up = net.up(g, p, &layers[p]);
        let prod = g.mul(&layers[p + 1], &up);
        let s = g.sum_rows(&prod);
        let neg = g.scale(&s, -1.0);
        acc(g, neg);
    }
    for (l, x) in layers.iter().enumerate() {
        let rho = g.barrier(x, kind);
        let zero = g.constant(Tensor::zeros(g.value(x).shape()));
        let b = g.add_bias(&zero, &net.bias[l]);
        let bx = g.mul(&b, x);
        let diff = g.sub(&rho, &bx);
        let s = g.sum_rows(&diff);
        acc(g, s);
    }
    if let Some(e) = external {
        let ex = g.mul(e, &layers[0]);
        let s = g.sum_rows(&ex);
        let neg = g.scale(&s, -1.0);
        acc(g, neg);
    }
    total.expect("at least one term")
}

/// Per-item `max |a − b|` over a batched pair of tensors, folded into `acc`.
pub(crate) fn fold_item_delta(a: &Tensor, b: &Tensor, acc: &mut [f64]) {
    let stride = a.len() / acc.len();
    for (i, (ca, cb)) in a.data().chunks(stride).zip(b.data().chunks(stride)).enumerate() {
        let m = ca.iter().zip(cb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        acc[i] = acc[i].max(m);
    }
}

/// Net input `u^l` of layer `l`, including the external evidence term on
/// the visible layer when the evidence mode supplies one.
pub fn layer_preactivation(state: &NetState, w: &WeightBundle, arch: &ArchSpec, l: usize) -> Result<Tensor> {
    if l >= arch.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "layer {l} out of range for {} layers",
            arch.num_layers()
        )));
    }
    check_inputs(state, w, arch)?;
    let mut g = Eager;
    let net = Net::new(&mut g, arch, w);
    let ext = if l == 0 {
        state.evidence.as_ref().and_then(Evidence::external_bias)
    } else {
        None
    };
    let u = net.preactivation(&mut g, &state.layers, l, ext.as_ref());
    u.check_finite(&format!("net input of layer {l}"))?;
    Ok(u)
}

/// Returns the state after recomputing layer `l` (evidence re-applied on the
/// visible layer).
pub fn update_layer(state: &NetState, w: &WeightBundle, arch: &ArchSpec, l: usize) -> Result<NetState> {
    if l >= arch.num_layers() {
        return Err(Error::InvalidArgument(format!(
            "layer {l} out of range for {} layers",
            arch.num_layers()
        )));
    }
    check_inputs(state, w, arch)?;
    let mut g = Eager;
    let net = Net::new(&mut g, arch, w);
    let ev = compile(&mut g, state.evidence.as_ref());
    let mut next = state.clone();
    update_in_place(&mut g, &net, &ev, &mut next.layers, l);
    next.layers[l].check_finite(&format!("layer {l} after update"))?;
    Ok(next)
}

/// One full iteration: layers `1, 2, …, L−1, L−2, …, 1, 0`.
pub fn sweep(state: &NetState, w: &WeightBundle, arch: &ArchSpec) -> Result<NetState> {
    check_inputs(state, w, arch)?;
    let mut g = Eager;
    let net = Net::new(&mut g, arch, w);
    let ev = compile(&mut g, state.evidence.as_ref());
    let mut next = state.clone();
    sweep_in_place(&mut g, &net, &ev, &mut next.layers);
    for (l, x) in next.layers.iter().enumerate() {
        x.check_finite(&format!("layer {l} after sweep"))?;
    }
    Ok(next)
}

fn check_barrier_domain(state: &NetState, arch: &ArchSpec) -> Result<()> {
    for (l, x) in state.layers.iter().enumerate() {
        if let Some((index, &value)) = x
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| !arch.activation.in_barrier_domain(v))
        {
            return Err(Error::Domain {
                index,
                value,
                what: "the barrier function",
            }
            .with_context(format!("energy of layer {l}")));
        }
    }
    Ok(())
}

/// Energy of each batch item.
pub fn energy_per_item(state: &NetState, w: &WeightBundle, arch: &ArchSpec) -> Result<Vec<f64>> {
    check_inputs(state, w, arch)?;
    check_barrier_domain(state, arch)?;
    let mut g = Eager;
    let net = Net::new(&mut g, arch, w);
    let ext = state.evidence.as_ref().and_then(Evidence::external_bias);
    Ok(energy_items(&mut g, &net, &state.layers, ext.as_ref()).into_data())
}

/// Total energy of the state, summed over batch items.
///
/// `E = −Σ_l ⟨x^{l+1}, up(x^l)⟩ + Σ_l Σ_i [ρ(x_i) − b_i x_i]`, minus the
/// external evidence term `⟨e, x^0⟩` under `ExternalBias`.
pub fn energy(state: &NetState, w: &WeightBundle, arch: &ArchSpec) -> Result<f64> {
    Ok(energy_per_item(state, w, arch)?.iter().sum())
}

/// Visible value the hidden layers drive, with no evidence applied.
pub fn unclamped_visible(state: &NetState, w: &WeightBundle, arch: &ArchSpec) -> Result<Tensor> {
    check_inputs(state, w, arch)?;
    let mut g = Eager;
    let net = Net::new(&mut g, arch, w);
    let u = net.preactivation(&mut g, &state.layers, 0, None);
    let v = g.activation(&u, arch.activation);
    v.check_finite("unclamped visible")?;
    Ok(v)
}

/// Trajectory summary returned by [`settle`].
#[derive(Clone, Debug, PartialEq)]
pub struct SettleReport {
    /// Sweeps run: the first sweep whose max change fell below theta, or
    /// `max_iters` when that never happened.
    pub t_star: usize,
    pub converged: bool,
    /// 0 for a fixed point or when no cycle was found; otherwise the period.
    pub cycle_length: usize,
    /// Energy after each sweep (empty when not recorded).
    pub energy_trace: Vec<f64>,
    /// Max |Δx| over the whole state for each sweep.
    pub max_delta_trace: Vec<f64>,
    /// Per-item t*, counted the same way as `t_star`.
    pub item_t_star: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SettleOptions {
    pub theta: f64,
    pub max_iters: usize,
    pub cycle_window: usize,
    pub record_energy: bool,
}

impl Default for SettleOptions {
    fn default() -> Self {
        SettleOptions {
            theta: DEFAULT_THETA,
            max_iters: DEFAULT_MAX_ITERS,
            cycle_window: CYCLE_WINDOW,
            record_energy: true,
        }
    }
}

/// Sweeps until the largest change over one iteration is below `theta` or
/// `max_iters` sweeps have run.
pub fn settle(
    state: &NetState,
    w: &WeightBundle,
    arch: &ArchSpec,
    theta: f64,
    max_iters: usize,
) -> Result<(NetState, SettleReport)> {
    settle_with(
        state,
        w,
        arch,
        &SettleOptions {
            theta,
            max_iters,
            ..SettleOptions::default()
        },
    )
}

pub fn settle_with(
    state: &NetState,
    w: &WeightBundle,
    arch: &ArchSpec,
    opts: &SettleOptions,
) -> Result<(NetState, SettleReport)> {
    if !(opts.theta > 0.0) || opts.max_iters == 0 {
        return Err(Error::InvalidArgument(format!(
            "settle needs theta > 0 and max_iters ≥ 1, got {} and {}",
            opts.theta, opts.max_iters
        )));
    }
    check_inputs(state, w, arch)?;
    let mut g = Eager;
    let net = Net::new(&mut g, arch, w);
    let ev = compile(&mut g, state.evidence.as_ref());
    let ext = state.evidence.as_ref().and_then(Evidence::external_bias);
    let n = state.batch_len();

    let mut layers = state.layers.clone();
    let mut report = SettleReport {
        t_star: opts.max_iters,
        converged: false,
        cycle_length: 0,
        energy_trace: Vec::new(),
        max_delta_trace: Vec::new(),
        item_t_star: vec![0; n],
    };
    let mut trail: VecDeque<Tensor> = VecDeque::with_capacity(opts.cycle_window);

    for t in 1..=opts.max_iters {
        let before = layers.clone();
        sweep_in_place(&mut g, &net, &ev, &mut layers);
        let mut item_delta = vec![0.0; n];
        for (l, (new, old)) in layers.iter().zip(&before).enumerate() {
            if let Err(e) = new.check_finite(&format!("layer {l}")) {
                return Err(e.with_context(format!("settling diverged at sweep {t}")));
            }
            fold_item_delta(new, old, &mut item_delta);
        }
        for (ts, &d) in report.item_t_star.iter_mut().zip(&item_delta) {
            if *ts == 0 && d < opts.theta {
                *ts = t;
            }
        }
        let delta = item_delta.iter().fold(0.0f64, |m, &d| m.max(d));
        report.max_delta_trace.push(delta);
        if opts.record_energy {
            let e = energy_items(&mut g, &net, &layers, ext.as_ref());
            report.energy_trace.push(e.sum());
        }
        if opts.cycle_window >= 2 {
            if trail.len() == opts.cycle_window {
                trail.pop_front();
            }
            let flat: Vec<f64> = layers.iter().flat_map(|x| x.data().iter().copied()).collect();
            trail.push_back(Tensor::from_parts(vec![flat.len()], flat));
        }
        if delta < opts.theta {
            report.t_star = t;
            report.converged = true;
            break;
        }
    }
    for ts in report.item_t_star.iter_mut() {
        if *ts == 0 {
            *ts = opts.max_iters;
        }
    }
    if !report.converged {
        report.cycle_length = detect_cycle(trail.make_contiguous(), opts.theta);
    }
    Ok((
        NetState {
            layers,
            evidence: state.evidence.clone(),
        },
        report,
    ))
}
