use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

/// How observed values constrain the visible layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
#[derive(Default)]
pub enum EvidenceMode {
    /// Observed units are overwritten with their values after every update.
    #[default]
    Clamp,
    /// Observed values enter the net input as an extra bias `scale · v`.
    /// Experimental.
    ExternalBias { scale: f64 },
    /// Observed units become `w · v + (1 − w) · computed`. Experimental.
    ConvexMix { mix_weight: f64 },
    /// The visible layer holds two copies of the observation along axis 1.
    /// The first copy is clamped, the second is free and serves as read-out.
    Replicated,
}

/// Observation attached to the (batched) visible layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Evidence {
    pub mode: EvidenceMode,
    mask: Mask,
    values: Tensor,
}

impl Evidence {
    /// `mask` and `values` share the batched visible shape; values off the
    /// mask are ignored and stored as 0.
    pub fn new(mode: EvidenceMode, mask: Mask, values: Tensor) -> Result<Self> {
        if mask.shape() != values.shape() {
            return Err(Error::Shape(format!(
                "evidence mask {:?} vs values {:?}",
                mask.shape(),
                values.shape()
            )));
        }
        values.check_finite("evidence values")?;
        match mode {
            EvidenceMode::ExternalBias { scale } if !scale.is_finite() => {
                return Err(Error::InvalidArgument(format!("external bias scale {scale}")));
            }
            EvidenceMode::ConvexMix { mix_weight } if !(0.0..=1.0).contains(&mix_weight) => {
                return Err(Error::InvalidArgument(format!(
                    "mix weight must lie in [0, 1], got {mix_weight}"
                )));
            }
            _ => {}
        }
        let data = values
            .data()
            .iter()
            .zip(mask.bits())
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        let values = Tensor::new(mask.shape().to_vec(), data)?;
        Ok(Evidence { mode, mask, values })
    }

    pub fn clamp(mask: Mask, values: Tensor) -> Result<Self> {
        Evidence::new(EvidenceMode::Clamp, mask, values)
    }

    /// Builds replicated evidence from a half-width observation `[n, c, …]`:
    /// the visible layer becomes `[n, 2c, …]` with the second copy unobserved.
    pub fn replicated(mask: Mask, values: Tensor) -> Result<Self> {
        if mask.shape() != values.shape() || mask.shape().len() < 2 {
            return Err(Error::Shape(format!(
                "replicated evidence needs matching batched shapes, got {:?} and {:?}",
                mask.shape(),
                values.shape()
            )));
        }
        let n = mask.shape()[0];
        let half = mask.len() / n;
        let mut shape = mask.shape().to_vec();
        shape[1] *= 2;
        let mut bits = Vec::with_capacity(2 * mask.len());
        let mut data = Vec::with_capacity(2 * mask.len());
        for i in 0..n {
            bits.extend_from_slice(&mask.bits()[i * half..(i + 1) * half]);
            bits.extend(std::iter::repeat_n(false, half));
            data.extend_from_slice(&values.data()[i * half..(i + 1) * half]);
            data.extend(std::iter::repeat_n(0.0, half));
        }
        Evidence::new(
            EvidenceMode::Replicated,
            Mask::new(shape.clone(), bits)?,
            Tensor::new(shape, data)?,
        )
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.mask.shape()
    }

    /// Checks observed values lie inside the open range of `kind`.
    pub fn check_range(&self, kind: ActivationKind) -> Result<()> {
        if let Some((lo, hi)) = kind.range() {
            for (index, (&v, &m)) in self.values.data().iter().zip(self.mask.bits()).enumerate() {
                if m && !(v > lo && v < hi) {
                    return Err(Error::Domain {
                        index,
                        value: v,
                        what: "the activation range",
                    });
                }
            }
        }
        Ok(())
    }

    /// Evidence for batch items `start..end`.
    pub fn items(&self, start: usize, end: usize) -> Result<Evidence> {
        let n = self.shape()[0];
        if start >= end || end > n {
            return Err(Error::InvalidArgument(format!(
                "item range {start}..{end} outside batch of {n}"
            )));
        }
        let stride = self.mask.len() / n;
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        Ok(Evidence {
            mode: self.mode,
            mask: Mask::new(shape.clone(), self.mask.bits()[start * stride..end * stride].to_vec())?,
            values: Tensor::new(shape, self.values.data()[start * stride..end * stride].to_vec())?,
        })
    }

    /// Initial visible state: observed values on the mask, 0 elsewhere.
    pub fn initial_visible(&self) -> Tensor {
        self.values.clone()
    }

    pub(crate) fn compile<G: Graph>(&self, g: &mut G) -> CompiledEvidence<G> {
        let m = self.mask.to_tensor();
        let overwrite = |w: f64, g: &mut G| {
            let keep = m.map(|b| 1.0 - w * b);
            let fixed = self.values.scale(w);
            Overwrite {
                keep: g.constant(keep),
                fixed: g.constant(fixed),
            }
        };
        match self.mode {
            EvidenceMode::Clamp | EvidenceMode::Replicated => CompiledEvidence {
                overwrite: Some(overwrite(1.0, g)),
                external: None,
            },
            EvidenceMode::ConvexMix { mix_weight } => CompiledEvidence {
                overwrite: Some(overwrite(mix_weight, g)),
                external: None,
            },
            EvidenceMode::ExternalBias { scale } => CompiledEvidence {
                overwrite: None,
                external: Some(g.constant(self.values.scale(scale))),
            },
        }
    }

    /// The `[n, …]` external bias term under `ExternalBias`, else `None`.
    pub fn external_bias(&self) -> Option<Tensor> {
        match self.mode {
            EvidenceMode::ExternalBias { scale } => Some(self.values.scale(scale)),
            _ => None,
        }
    }
}

pub(crate) struct Overwrite<G: Graph> {
    keep: G::Value,
    fixed: G::Value,
}

/// Evidence lowered to graph constants: visible ← keep ⊙ computed + fixed,
/// and/or an additive term on the visible net input.
pub(crate) struct CompiledEvidence<G: Graph> {
    overwrite: Option<Overwrite<G>>,
    pub external: Option<G::Value>,
}

impl<G: Graph> CompiledEvidence<G> {
    pub fn none() -> Self {
        CompiledEvidence {
            overwrite: None,
            external: None,
        }
    }

    pub fn apply(&self, g: &mut G, computed: &G::Value) -> G::Value {
        match &self.overwrite {
            Some(o) => {
                let kept = g.mul(computed, &o.keep);
                g.add(&kept, &o.fixed)
            }
            None => computed.clone(),
        }
    }
}
