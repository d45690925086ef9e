use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::arch::ArchSpec;

/// Trainable parameters of a network, generic over how values are held
/// (plain tensors, or variables on a tape).
///
/// `forward[p]` maps layer `p` to `p + 1` (`[n_{p+1}, n_p]` or
/// `[c_{p+1}, c_p, k, k]`). In symmetric mode the reverse map is derived from
/// it and `reverse` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub forward: Vec<T>,
    pub reverse: Option<Vec<T>>,
    pub bias: Vec<T>,
}

/// Weights and biases of a network held as tensors.
pub type WeightBundle = Params<Tensor>;

impl<T> Params<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        Params {
            forward: self.forward.iter().map(&mut f).collect(),
            reverse: self.reverse.as_ref().map(|r| r.iter().map(&mut f).collect()),
            bias: self.bias.iter().map(&mut f).collect(),
        }
    }

    /// Every parameter block in declaration order: forward, reverse, bias.
    pub fn blocks(&self) -> impl Iterator<Item = &T> {
        self.forward
            .iter()
            .chain(self.reverse.iter().flatten())
            .chain(self.bias.iter())
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.forward
            .iter_mut()
            .chain(self.reverse.iter_mut().flatten())
            .chain(self.bias.iter_mut())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks().count()
    }

    /// Rebuilds a bundle from blocks produced by [`Params::blocks`] order.
    pub fn from_blocks_like<U>(template: &Params<U>, blocks: Vec<T>) -> Params<T> {
        let mut it = blocks.into_iter();
        let forward = it.by_ref().take(template.forward.len()).collect();
        let reverse = template.reverse.as_ref().map(|r| it.by_ref().take(r.len()).collect());
        let bias = it.collect();
        Params { forward, reverse, bias }
    }
}

impl WeightBundle {
    /// All-zero weights and biases for `arch`.
    pub fn zeros(arch: &ArchSpec) -> Self {
        let forward = (0..arch.num_pairs())
            .map(|p| Tensor::zeros(&arch.weight_shape(p)))
            .collect();
        let reverse = (!arch.symmetric).then(|| {
            (0..arch.num_pairs())
                .map(|p| Tensor::zeros(&arch.reverse_shape(p)))
                .collect()
        });
        let bias = (0..arch.num_layers())
            .map(|l| Tensor::zeros(&arch.bias_shape(l)))
            .collect();
        Params { forward, reverse, bias }
    }

    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        arch.validate()?;
        let expect = WeightBundle::zeros(arch);
        if self.forward.len() != expect.forward.len()
            || self.bias.len() != expect.bias.len()
            || self.reverse.is_some() != expect.reverse.is_some()
        {
            return Err(Error::Shape(
                "weight bundle does not match the architecture's layer structure".into(),
            ));
        }
        for (i, (have, want)) in self.blocks().zip(expect.blocks()).enumerate() {
            if have.shape() != want.shape() {
                return Err(Error::Shape(format!(
                    "parameter block {i}: shape {:?}, architecture needs {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
            have.check_finite(&format!("parameter block {i}"))?;
        }
        Ok(())
    }

    /// Multiplies every weight (not bias) by `c`.
    pub fn scale_weights(&mut self, c: f64) {
        for w in self.forward.iter_mut().chain(self.reverse.iter_mut().flatten()) {
            *w = w.scale(c);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().map(Tensor::len).sum()
    }

    /// `‖W‖₁,∞`: the largest L1 norm of any unit's incoming weights over the
    /// whole bipartite connection structure (both neighbours).
    pub fn norm_1inf(&self, arch: &ArchSpec) -> f64 {
        let mut per_layer: Vec<Vec<f64>> = arch.layers.iter().map(|l| vec![0.0; l.channels()]).collect();
        for p in 0..arch.num_pairs() {
            let fwd = &self.forward[p];
            // Upward: a unit of layer p+1 receives forward row (q, ·).
            accumulate_rows(fwd, &mut per_layer[p + 1]);
            // Downward: a unit of layer p receives the reverse map's row.
            match &self.reverse {
                Some(rev) => accumulate_rows(&rev[p], &mut per_layer[p]),
                None => accumulate_columns(fwd, &mut per_layer[p]),
            }
        }
        per_layer.iter().flatten().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Adds `Σ_{rest} |w[i, rest]|` to `acc[i]`.
fn accumulate_rows(w: &Tensor, acc: &mut [f64]) {
    let stride = w.len() / w.shape()[0];
    for (i, row) in w.data().chunks(stride).enumerate() {
        acc[i] += row.iter().map(|v| v.abs()).sum::<f64>();
    }
}

/// Adds `Σ_{i, rest} |w[i, j, rest]|` to `acc[j]`.
fn accumulate_columns(w: &Tensor, acc: &mut [f64]) {
    let cols = w.shape()[1];
    let inner: usize = w.shape()[2..].iter().product();
    for (idx, chunk) in w.data().chunks(inner).enumerate() {
        acc[idx % cols] += chunk.iter().map(|v| v.abs()).sum::<f64>();
    }
}

/// `max_i Σ_j |w_ij|` of a plain matrix.
pub fn matrix_norm_1inf(w: &Tensor) -> f64 {
    let stride = w.len() / w.shape()[0];
    w.data()
        .chunks(stride)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Network parameters prepared for evaluation on a particular graph, with the
/// reverse maps derived once.
pub(crate) struct Net<'a, G: Graph> {
    pub arch: &'a ArchSpec,
    pub forward: Vec<G::Value>,
    /// Conv pairs: the kernel applied on the downward map. Dense pairs: the
    /// independent reverse matrix in asymmetric mode, `None` when symmetric.
    pub down: Vec<Option<G::Value>>,
    pub bias: Vec<G::Value>,
}

impl<'a, G: Graph> Net<'a, G> {
    pub fn new(g: &mut G, arch: &'a ArchSpec, params: &Params<G::Value>) -> Self {
        let down = (0..arch.num_pairs())
            .map(|p| match (&params.reverse, arch.is_conv_pair(p)) {
                (Some(rev), _) => Some(rev[p].clone()),
                (None, true) => Some(g.reverse_kernel(&params.forward[p])),
                (None, false) => None,
            })
            .collect();
        Net {
            arch,
            forward: params.forward.clone(),
            down,
            bias: params.bias.clone(),
        }
    }

    /// Contribution of layer `pair` to the net input of layer `pair + 1`.
    pub fn up(&self, g: &mut G, pair: usize, x: &G::Value) -> G::Value {
        if self.arch.is_conv_pair(pair) {
            let pooled;
            let src = if self.arch.layers[pair + 1].pool_before {
                pooled = g.avg_pool2(x);
                &pooled
            } else {
                x
            };
            g.conv2d(src, &self.forward[pair])
        } else {
            g.matmul(x, false, &self.forward[pair], true)
        }
    }

    /// Contribution of layer `pair + 1` to the net input of layer `pair`.
    pub fn down(&self, g: &mut G, pair: usize, x: &G::Value) -> G::Value {
        if self.arch.is_conv_pair(pair) {
            let k = self.down[pair].as_ref().expect("conv reverse kernel");
            let y = g.conv2d(x, k);
            if self.arch.layers[pair + 1].pool_before {
                g.upsample2(&y)
            } else {
                y
            }
        } else {
            match &self.down[pair] {
                None => g.matmul(x, false, &self.forward[pair], false),
                Some(rev) => g.matmul(x, false, rev, true),
            }
        }
    }

    /// Net input of layer `l`: neighbour contributions plus bias, plus the
    /// external evidence bias when given.
    pub fn preactivation(&self, g: &mut G, layers: &[G::Value], l: usize, external: Option<&G::Value>) -> G::Value {
        let from_below = (l > 0).then(|| self.up(g, l - 1, &layers[l - 1]));
        let from_above = (l + 1 < layers.len()).then(|| self.down(g, l, &layers[l + 1]));
        let sum = match (from_below, from_above) {
            (Some(a), Some(b)) => g.add(&a, &b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("networks have at least two layers"),
        };
        let u = g.add_bias(&sum, &self.bias[l]);
        match external {
            Some(e) => g.add(&u, e),
            None => u,
        }
    }
}
