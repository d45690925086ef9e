use crate::activation::ActivationKind;
use crate::autodiff::{softplus, Eager, Graph};
use crate::dynamics::{unclamped_visible, ArchSpec, NetState, WeightBundle};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::LossKind;

/// Tanh inputs to `f⁻¹` are clipped to this magnitude.
pub const TANH_CLIP: f64 = 0.999_999;

/// Per-item loss `[n]` for batched free-running visible values and targets.
pub(crate) fn loss_items<G: Graph>(
    g: &mut G,
    loss: LossKind,
    kind: ActivationKind,
    v_tilde: &G::Value,
    y: &G::Value,
) -> G::Value {
    match loss {
        LossKind::Se => {
            let d = g.sub(v_tilde, y);
            let sq = g.mul(&d, &d);
            g.sum_rows(&sq)
        }
        LossKind::DeltaE => delta_e_items(g, kind, v_tilde, y),
        LossKind::DeltaEPlus => {
            let d = delta_e_items(g, kind, v_tilde, y);
            g.softplus(&d)
        }
    }
}

fn delta_e_items<G: Graph>(g: &mut G, kind: ActivationKind, v_tilde: &G::Value, y: &G::Value) -> G::Value {
    let v = match kind {
        ActivationKind::Tanh => g.clip(v_tilde, -TANH_CLIP, TANH_CLIP),
        ActivationKind::LeakySigmoid { .. } => v_tilde.clone(),
    };
    let u = g.inverse_activation(&v, kind);
    let gap = g.sub(&v, y);
    let lin = g.mul(&u, &gap);
    let rho_y = g.barrier(y, kind);
    let rho_v = g.barrier(&v, kind);
    let a = g.add(&lin, &rho_y);
    let terms = g.sub(&a, &rho_v);
    g.sum_rows(&terms)
}

fn as_row(t: &Tensor) -> Tensor {
    t.reshape(&[1, t.len()]).expect("same length")
}

/// `Σ (ṽ − y)²`.
pub fn loss_se(v_tilde: &Tensor, y: &Tensor) -> Result<f64> {
    v_tilde.expect_same_shape(y)?;
    let mut g = Eager;
    Ok(loss_items(&mut g, LossKind::Se, ActivationKind::Tanh, &as_row(v_tilde), &as_row(y)).item())
}

/// Free-running and clamped visible values sharing one hidden configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastivePair {
    /// Targets `y` on every visible unit.
    pub clamped_visible: Tensor,
    /// `ṽ`: the values the hidden units drive when the visible layer is free.
    pub unclamped_visible: Tensor,
    /// Layers `1..L` of the shared state.
    pub hidden: Vec<Tensor>,
}

impl ContrastivePair {
    pub fn new(clamped_visible: Tensor, unclamped_visible: Tensor, hidden: Vec<Tensor>) -> Result<Self> {
        clamped_visible.expect_same_shape(&unclamped_visible)?;
        Ok(ContrastivePair {
            clamped_visible,
            unclamped_visible,
            hidden,
        })
    }

    /// Pair built from `state`'s hidden layers and the given targets.
    pub fn from_state(state: &NetState, w: &WeightBundle, arch: &ArchSpec, targets: &Tensor) -> Result<Self> {
        let v = unclamped_visible(state, w, arch)?;
        ContrastivePair::new(targets.clone(), v, state.layers[1..].to_vec())
    }

    /// The two full states `(x, x̃)`: visible at targets vs. at `ṽ`.
    pub fn states(&self) -> (NetState, NetState) {
        let with = |v: &Tensor| {
            let mut layers = vec![v.clone()];
            layers.extend(self.hidden.iter().cloned());
            NetState { layers, evidence: None }
        };
        (with(&self.clamped_visible), with(&self.unclamped_visible))
    }

    fn check_domain(&self, kind: ActivationKind) -> Result<()> {
        for (what, t) in [("ṽ", &self.unclamped_visible), ("y", &self.clamped_visible)] {
            if let Some((index, &value)) = t.data().iter().enumerate().find(|(_, &v)| !kind.in_barrier_domain(v)) {
                return Err(Error::Domain {
                    index,
                    value,
                    what: "the barrier function",
                }
                .with_context(format!("energy loss on {what}")));
            }
        }
        Ok(())
    }
}

/// `Σ f⁻¹(ṽ)(ṽ − y) + ρ(y) − ρ(ṽ)`, equal to `E(x) − E(x̃)`. For tanh, `ṽ`
/// is clipped to `±0.999999` first.
pub fn loss_delta_e(pair: &ContrastivePair, kind: ActivationKind) -> Result<f64> {
    pair.check_domain(kind)?;
    let mut g = Eager;
    Ok(loss_items(
        &mut g,
        LossKind::DeltaE,
        kind,
        &as_row(&pair.unclamped_visible),
        &as_row(&pair.clamped_visible),
    )
    .item())
}

/// `log(1 + exp(ΔE))`, overflow-safe.
pub fn loss_delta_e_plus(pair: &ContrastivePair, kind: ActivationKind) -> Result<f64> {
    Ok(softplus(loss_delta_e(pair, kind)?))
}
