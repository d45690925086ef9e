use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

/// Connectivity and extent of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv {
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Visible,
    Hidden,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// 2×2 average pooling on the upward map into this layer and nearest
    /// upsampling on the downward map out of it.
    #[serde(default)]
    pub pool_before: bool,
    pub role: Role,
}

impl LayerSpec {
    pub fn dense(units: usize, role: Role) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { units },
            pool_before: false,
            role,
        }
    }

    pub fn conv(channels: usize, height: usize, width: usize, pool_before: bool, role: Role) -> Self {
        LayerSpec {
            kind: LayerKind::Conv {
                channels,
                height,
                width,
            },
            pool_before,
            role,
        }
    }

    /// Per-item shape: `[units]` or `[channels, height, width]`.
    pub fn item_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense { units } => vec![units],
            LayerKind::Conv {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    pub fn units(&self) -> usize {
        self.item_shape().iter().product()
    }

    /// Extent of axis 1 of the batched state, which biases index.
    pub fn channels(&self) -> usize {
        match self.kind {
            LayerKind::Dense { units } => units,
            LayerKind::Conv { channels, .. } => channels,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. })
    }
}

fn default_true() -> bool {
    true
}

/// A bipartite layer stack. Layer 0 is the visible layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
    /// Odd kernel extent per adjacent conv pair; a single entry applies to all pairs.
    #[serde(default)]
    pub kernel_sizes: Vec<usize>,
    pub activation: ActivationKind,
    /// When false, reverse weights are stored and trained independently.
    #[serde(default = "default_true")]
    pub symmetric: bool,
}

impl ArchSpec {
    /// Fully-connected stack `sizes[0] (visible) - sizes[1] - ...`.
    pub fn dense(sizes: &[usize], activation: ActivationKind) -> Result<Self> {
        let layers = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| LayerSpec::dense(n, if i == 0 { Role::Visible } else { Role::Hidden }))
            .collect();
        let arch = ArchSpec {
            layers,
            kernel_sizes: Vec::new(),
            activation,
            symmetric: true,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn visible(&self) -> &LayerSpec {
        &self.layers[0]
    }

    pub fn batched_shape(&self, layer: usize, batch: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend(self.layers[layer].item_shape());
        s
    }

    pub fn is_conv_pair(&self, pair: usize) -> bool {
        self.layers[pair].is_conv()
    }

    pub fn kernel_size(&self, pair: usize) -> usize {
        match self.kernel_sizes.len() {
            0 => 1,
            1 => self.kernel_sizes[0],
            _ => self.kernel_sizes[pair],
        }
    }

    /// Shape of the forward weights from layer `pair` to `pair + 1`.
    pub fn weight_shape(&self, pair: usize) -> Vec<usize> {
        let (lo, hi) = (&self.layers[pair], &self.layers[pair + 1]);
        if lo.is_conv() {
            let k = self.kernel_size(pair);
            vec![hi.channels(), lo.channels(), k, k]
        } else {
            vec![hi.units(), lo.units()]
        }
    }

    /// Shape of independent reverse weights from `pair + 1` back to `pair`.
    pub fn reverse_shape(&self, pair: usize) -> Vec<usize> {
        let mut s = self.weight_shape(pair);
        s.swap(0, 1);
        s
    }

    pub fn bias_shape(&self, layer: usize) -> Vec<usize> {
        vec![self.layers[layer].channels()]
    }

    /// Layer update order for one iteration: 1, 2, …, L-1, L-2, …, 1, 0.
    pub fn sweep_order(&self) -> Vec<usize> {
        let l = self.num_layers();
        (1..l).chain((0..l.saturating_sub(1)).rev()).collect()
    }

    pub fn total_units(&self) -> usize {
        self.layers.iter().map(LayerSpec::units).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Arch(msg));
        self.activation.validate()?;
        if self.layers.len() < 2 {
            return fail(format!("need at least 2 layers, got {}", self.layers.len()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let want = if i == 0 { Role::Visible } else { Role::Hidden };
            if layer.role != want {
                return fail(format!("layer {i} must be {want:?}"));
            }
            if layer.item_shape().contains(&0) {
                return fail(format!("layer {i} has a zero extent"));
            }
            if layer.pool_before && (i == 0 || !layer.is_conv()) {
                return fail(format!("layer {i}: pooling only applies to hidden conv layers"));
            }
        }
        match self.kernel_sizes.len() {
            0 | 1 => {}
            n if n == self.num_pairs() => {}
            n => return fail(format!("{n} kernel sizes for {} layer pairs", self.num_pairs())),
        }
        for p in 0..self.num_pairs() {
            let (lo, hi) = (&self.layers[p], &self.layers[p + 1]);
            match (lo.kind, hi.kind) {
                (LayerKind::Dense { .. }, LayerKind::Dense { .. }) => {}
                (
                    LayerKind::Conv {
                        height: h0, width: w0, ..
                    },
                    LayerKind::Conv {
                        height: h1, width: w1, ..
                    },
                ) => {
                    let k = self.kernel_size(p);
                    if k.is_multiple_of(2) {
                        return fail(format!("pair {p}: kernel size {k} must be odd"));
                    }
                    let ok = if hi.pool_before {
                        h0 % 2 == 0 && w0 % 2 == 0 && h1 * 2 == h0 && w1 * 2 == w0
                    } else {
                        h0 == h1 && w0 == w1
                    };
                    if !ok {
                        return fail(format!(
                            "pair {p}: {h0}×{w0} → {h1}×{w1} inconsistent with pooling flag {}",
                            hi.pool_before
                        ));
                    }
                }
                _ => return fail(format!("pair {p} mixes dense and conv layers")),
            }
        }
        Ok(())
    }
}
