//! Dense `f64` tensors and the structural maps used by the network: half-padded
//! convolution, its symmetric reverse kernel, 2×2 average pooling and 2×2
//! nearest-neighbour upsampling.
//!
//! Feature maps are laid out channels-first (`[c, h, w]`), optionally with a
//! leading batch dimension (`[n, c, h, w]`). Kernels are `[out, in, kh, kw]`.

use crate::error::{Error, Result};

/// Dense row-major array of finite 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking extents, length and finiteness.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// One-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range on axis {i}");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(index) => Err(Error::NonFinite {
                index,
                context: context.to_string(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    #[cfg(test)]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of items along the leading axis.
    pub fn batch_len(&self) -> usize {
        self.shape[0]
    }

    /// Slice `n` of the leading axis, with that axis removed.
    pub fn batch_item(&self, n: usize) -> Tensor {
        assert!(self.rank() >= 2 && n < self.shape[0]);
        let stride = self.len() / self.shape[0];
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[n * stride..(n + 1) * stride].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose2(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected a matrix, got {:?}", self.shape))),
        }
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
        let t = Self::matmul_any(a, trans_a, b, trans_b)?;
        t.check_finite("matmul")?;
        Ok(t)
    }

    /// `matmul` that lets overflow through, for callers that check
    /// finiteness themselves.
    pub(crate) fn matmul_any(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (ar, ac) = a.matrix_dims()?;
        let (br, bc) = b.matrix_dims()?;
        let (m, k, rsa, csa) = if trans_a { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
        let (k2, n, rsb, csb) = if trans_b { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims {k} vs {k2} ({:?}{} · {:?}{})",
                a.shape,
                if trans_a { "ᵀ" } else { "" },
                b.shape,
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &a.data, rsa, csa, &b.data, rsb, csb, &mut out, 0.0);
        Ok(Tensor::from_parts(vec![m, n], out))
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero extent in {shape:?}")));
    }
    Ok(())
}

/// `c = a·b + beta·c` for row/column-strided `a` (m×k) and `b` (k×n); `c` is
/// dense row-major m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Boolean array with a shape, used for observation masks (`true` = observed).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(shape: impl Into<Vec<usize>>, bits: Vec<bool>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != bits.len() {
            return Err(Error::Shape(format!(
                "mask shape {:?} needs {} bits, got {}",
                shape,
                shape.iter().product::<usize>(),
                bits.len()
            )));
        }
        Ok(Mask { shape, bits })
    }

    pub fn filled(shape: &[usize], value: bool) -> Self {
        Mask {
            shape: shape.to_vec(),
            bits: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 1.0 where set, 0.0 elsewhere.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Mask> {
        Mask::new(shape.to_vec(), self.bits.clone())
    }

    pub fn stack(items: &[Mask]) -> Result<Mask> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero masks".into()))?;
        let mut bits = Vec::with_capacity(first.len() * items.len());
        for m in items {
            if m.shape != first.shape {
                return Err(Error::Shape(format!("{:?} vs {:?}", first.shape, m.shape)));
            }
            bits.extend_from_slice(&m.bits);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Mask { shape, bits })
    }

    pub fn batch_item(&self, n: usize) -> Mask {
        let stride = self.len() / self.shape[0];
        Mask {
            shape: self.shape[1..].to_vec(),
            bits: self.bits[n * stride..(n + 1) * stride].to_vec(),
        }
    }
}

/// Convolution kernel `[out_channels, in_channels, kh, kw]` with odd spatial extents.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel(Tensor);

impl ConvKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        check_kernel_shape(weights.shape())?;
        Ok(ConvKernel(weights))
    }

    pub fn weights(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn out_channels(&self) -> usize {
        self.0.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.0.shape[1]
    }

    /// Transposes the channel axes and flips both spatial axes. The result maps
    /// the destination layer back onto the source layer with the adjoint weights.
    pub fn reverse(&self) -> ConvKernel {
        ConvKernel(reverse_kernel_tensor(&self.0))
    }
}

pub(crate) fn check_kernel_shape(shape: &[usize]) -> Result<()> {
    match shape {
        [_, _, kh, kw] => {
            if kh % 2 == 0 || kw % 2 == 0 {
                Err(Error::Shape(format!(
                    "kernel extents must be odd for half padding, got {kh}×{kw}"
                )))
            } else {
                Ok(())
            }
        }
        _ => Err(Error::Shape(format!("kernel must be rank 4, got {shape:?}"))),
    }
}

/// Reverse kernel: `out[r,q,a,b] = in[q,r,A-1-a,B-1-b]`.
pub fn reverse_kernel(k: &ConvKernel) -> ConvKernel {
    k.reverse()
}

pub(crate) fn reverse_kernel_tensor(k: &Tensor) -> Tensor {
    let [q, r, ka, kb] = k.shape[..] else {
        panic!("reverse_kernel on non-kernel shape {:?}", k.shape)
    };
    let mut out = vec![0.0; k.len()];
    for qi in 0..q {
        for ri in 0..r {
            for a in 0..ka {
                for b in 0..kb {
                    out[((ri * q + qi) * ka + a) * kb + b] =
                        k.data[((qi * r + ri) * ka + (ka - 1 - a)) * kb + (kb - 1 - b)];
                }
            }
        }
    }
    Tensor::from_parts(vec![r, q, ka, kb], out)
}

/// Splits a feature-map shape into (batch, channels, height, width).
fn map_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((1, *c, *h, *w)),
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        _ => Err(Error::Shape(format!("expected [c,h,w] or [n,c,h,w], got {shape:?}"))),
    }
}

fn with_spatial(shape: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    let mut out = shape.to_vec();
    let r = out.len();
    out[r - 3] = c;
    out[r - 2] = h;
    out[r - 1] = w;
    out
}

/// Half-padded (zero padding of `(k-1)/2`) stride-1 convolution; output has the
/// input's spatial extent and `k.out_channels()` channels.
pub fn conv2d_half(input: &Tensor, k: &ConvKernel) -> Result<Tensor> {
    let (_, c, _, _) = map_dims(input.shape())?;
    if c != k.in_channels() {
        return Err(Error::Shape(format!(
            "input has {c} channels, kernel expects {}",
            k.in_channels()
        )));
    }
    let out = conv2d_raw(input, &k.0);
    out.check_finite("conv2d_half")?;
    Ok(out)
}

/// Lays out the receptive fields of one `[c,h,w]` item as a `(c·kh·kw) × (h·w)` matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, cols: &mut [f64]) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for a in 0..kh {
            for b in 0..kw {
                let row = &mut cols[((ci * kh + a) * kw + b) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + a as isize - ph as isize;
                    let dst = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let sj = j as isize + b as isize - pw as isize;
                        *d = if sj < 0 || sj >= w as isize {
                            0.0
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Convolution without validation; shapes must already agree.
pub(crate) fn conv2d_raw(input: &Tensor, k: &Tensor) -> Tensor {
    let (n, c, h, w) = map_dims(input.shape()).expect("feature map");
    let [q, r, kh, kw] = k.shape[..] else {
        panic!("kernel rank")
    };
    assert_eq!(c, r, "conv channel mismatch");
    let hw = h * w;
    let kdim = r * kh * kw;
    let mut out = vec![0.0; n * q * hw];
    let pointwise = kh == 1 && kw == 1;
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; kdim * hw] };
    for ni in 0..n {
        let x = &input.data[ni * c * hw..(ni + 1) * c * hw];
        let b: &[f64] = if pointwise {
            x
        } else {
            im2col(x, c, h, w, kh, kw, &mut cols);
            &cols
        };
        gemm(
            q,
            kdim,
            hw,
            &k.data,
            kdim,
            1,
            b,
            hw,
            1,
            &mut out[ni * q * hw..(ni + 1) * q * hw],
            0.0,
        );
    }
    Tensor::from_parts(with_spatial(input.shape(), q, h, w), out)
}

/// Gradient of `sum(grad_out ⊙ conv2d_half(input, k))` with respect to `k`.
pub(crate) fn conv2d_kernel_grad(input: &Tensor, grad_out: &Tensor, kshape: &[usize]) -> Tensor {
    let (n, c, h, w) = map_dims(input.shape()).expect("feature map");
    let [q, r, kh, kw] = kshape[..] else {
        panic!("kernel rank")
    };
    assert_eq!(c, r);
    let hw = h * w;
    let kdim = r * kh * kw;
    let mut gk = vec![0.0; q * kdim];
    let pointwise = kh == 1 && kw == 1;
    let mut cols = if pointwise { Vec::new() } else { vec![0.0; kdim * hw] };
    for ni in 0..n {
        let x = &input.data[ni * c * hw..(ni + 1) * c * hw];
        let b: &[f64] = if pointwise {
            x
        } else {
            im2col(x, c, h, w, kh, kw, &mut cols);
            &cols
        };
        let g = &grad_out.data[ni * q * hw..(ni + 1) * q * hw];
        // gk (q × kdim) += g (q × hw) · colsᵀ (hw × kdim)
        gemm(q, hw, kdim, g, hw, 1, b, 1, hw, &mut gk, 1.0);
    }
    Tensor::from_parts(kshape.to_vec(), gk)
}

/// 2×2 block mean; spatial extents must be even.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = map_dims(input.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "avg_pool2 needs even spatial extents, got {h}×{w}"
        )));
    }
    Ok(avg_pool2_raw(input))
}

pub(crate) fn avg_pool2_raw(input: &Tensor) -> Tensor {
    let (n, c, h, w) = map_dims(input.shape()).expect("feature map");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &input.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let s = src[2 * i * w + 2 * j]
                    + src[2 * i * w + 2 * j + 1]
                    + src[(2 * i + 1) * w + 2 * j]
                    + src[(2 * i + 1) * w + 2 * j + 1];
                dst[i * ow + j] = 0.25 * s;
            }
        }
    }
    Tensor::from_parts(with_spatial(input.shape(), c, oh, ow), out)
}

/// Replicates each element into a 2×2 block.
pub fn nn_upsample2(input: &Tensor) -> Result<Tensor> {
    map_dims(input.shape())?;
    Ok(nn_upsample2_raw(input))
}

pub(crate) fn nn_upsample2_raw(input: &Tensor) -> Tensor {
    let (n, c, h, w) = map_dims(input.shape()).expect("feature map");
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        let src = &input.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::from_parts(with_spatial(input.shape(), c, oh, ow), out)
}

/// Adds `bias` (one value per entry of axis 1) to every item of a batched tensor.
pub(crate) fn add_bias_raw(x: &Tensor, bias: &Tensor) -> Tensor {
    let ch = x.shape[1];
    assert_eq!(bias.len(), ch, "bias length vs axis 1");
    let inner: usize = x.shape[2..].iter().product();
    let mut out = x.data.clone();
    for (idx, chunk) in out.chunks_mut(inner).enumerate() {
        let b = bias.data[idx % ch];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Tensor::from_parts(x.shape.clone(), out)
}

/// Sums a batched tensor over every axis but 1 (adjoint of [`add_bias_raw`]).
pub(crate) fn sum_to_bias(g: &Tensor) -> Tensor {
    let ch = g.shape[1];
    let inner: usize = g.shape[2..].iter().product();
    let mut out = vec![0.0; ch];
    for (idx, chunk) in g.data.chunks(inner).enumerate() {
        out[idx % ch] += chunk.iter().sum::<f64>();
    }
    Tensor::from_parts(vec![ch], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct sliding-window sum, independent of im2col.
    fn conv_naive(x: &Tensor, k: &Tensor) -> Tensor {
        let [c, h, w] = x.shape()[..] else { panic!() };
        let [q, r, ka, kb] = k.shape()[..] else { panic!() };
        assert_eq!(c, r);
        let (pa, pb) = (ka as isize / 2, kb as isize / 2);
        Tensor::from_fn(&[q, h, w], |flat| {
            let (qi, i, j) = (flat / (h * w), (flat / w) % h, flat % w);
            let mut s = 0.0;
            for ri in 0..r {
                for a in 0..ka {
                    for b in 0..kb {
                        let (si, sj) = (i as isize + a as isize - pa, j as isize + b as isize - pb);
                        if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                            s += k.get(&[qi, ri, a, b]) * x.get(&[ri, si as usize, sj as usize]);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn conv_of_zeros_is_zero() {
        let x = Tensor::zeros(&[1, 3, 3]);
        let k = ConvKernel::new(Tensor::full(&[2, 1, 3, 3], 0.7)).unwrap();
        let y = conv2d_half(&x, &k).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let k = ConvKernel::new(Tensor::ones(&[1, 1, 1, 1])).unwrap();
        assert_eq!(conv2d_half(&x, &k).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_window_sums() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let k = ConvKernel::new(Tensor::ones(&[1, 1, 3, 3])).unwrap();
        let y = conv2d_half(&x, &k).unwrap();
        assert_eq!(y.get(&[0, 1, 1]), 45.0);
        assert_eq!(y.get(&[0, 0, 0]), 12.0);
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::zeros(&[2, 3, 3]);
        let k = ConvKernel::new(Tensor::zeros(&[1, 1, 3, 3])).unwrap();
        assert!(matches!(conv2d_half(&x, &k), Err(Error::Shape(_))));
        assert!(ConvKernel::new(Tensor::zeros(&[1, 1, 2, 3])).is_err());
        assert!(ConvKernel::new(Tensor::zeros(&[1, 3, 3])).is_err());
    }

    #[test]
    fn conv_matches_naive_and_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(c, q, h, w, ka, kb) in &[(1, 1, 4, 5, 3, 3), (3, 2, 6, 4, 5, 3), (2, 4, 3, 3, 1, 5)] {
            let x = random(&[c, h, w], &mut rng);
            let k = random(&[q, c, ka, kb], &mut rng);
            let fast = conv2d_half(&x, &ConvKernel::new(k.clone()).unwrap()).unwrap();
            let slow = conv_naive(&x, &k);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);

            let x2 = random(&[c, h, w], &mut rng);
            let batch = Tensor::stack(&[x.clone(), x2.clone()]).unwrap();
            let out = conv2d_raw(&batch, &k);
            assert_eq!(out.batch_item(0), fast);
            assert!(out.batch_item(1).max_abs_diff(&conv_naive(&x2, &k)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn reverse_kernel_examples() {
        let k = ConvKernel::new(Tensor::scalar(2.5).reshape(&[1, 1, 1, 1]).unwrap()).unwrap();
        assert_eq!(reverse_kernel(&k), k);

        let mut data = vec![0.0; 9];
        data[0] = 1.0;
        let k = ConvKernel::new(Tensor::new(vec![1, 1, 3, 3], data).unwrap()).unwrap();
        let rk = reverse_kernel(&k);
        assert_eq!(rk.weights().get(&[0, 0, 2, 2]), 1.0);
        assert_eq!(rk.weights().sum(), 1.0);

        let k = ConvKernel::new(Tensor::new(vec![2, 1, 1, 1], vec![3.0, -4.0]).unwrap()).unwrap();
        let rk = reverse_kernel(&k);
        assert_eq!(rk.weights().shape(), &[1, 2, 1, 1]);
        assert_eq!(rk.weights().data(), &[3.0, -4.0]);
        assert_eq!(reverse_kernel(&rk), k);
    }

    #[test]
    fn pooling_examples() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool2(&x).unwrap().data(), &[2.5]);
        let c = Tensor::full(&[2, 4, 6], -0.3);
        let p = avg_pool2(&c).unwrap();
        assert_eq!(p.shape(), &[2, 2, 3]);
        assert!(p.data().iter().all(|&v| (v + 0.3).abs() < 1e-15));
        assert!(avg_pool2(&Tensor::zeros(&[1, 3, 4])).is_err());

        let up = nn_upsample2(&Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap()).unwrap();
        assert_eq!(up, Tensor::full(&[1, 2, 2], 5.0));
        let up = nn_upsample2(&x).unwrap();
        assert_eq!(up.shape(), &[1, 4, 4]);
        let expect = [
            1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(up.data(), &expect);
    }

    #[test]
    fn matmul_transposes() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 1], vec![1.0, 0.0, -1.0]).unwrap();
        assert_eq!(Tensor::matmul(&a, false, &b, false).unwrap().data(), &[-2.0, -2.0]);
        let at = a.transpose2().unwrap();
        assert_eq!(Tensor::matmul(&at, true, &b, false).unwrap().data(), &[-2.0, -2.0]);
        let bt = b.transpose2().unwrap();
        assert_eq!(Tensor::matmul(&a, false, &bt, true).unwrap().data(), &[-2.0, -2.0]);
        assert!(Tensor::matmul(&a, false, &a, false).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reverse_kernel_is_an_involution(
            seed in any::<u64>(), q in 1usize..4, r in 1usize..4, ka in 0usize..3, kb in 0usize..3
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = ConvKernel::new(random(&[q, r, 2 * ka + 1, 2 * kb + 1], &mut rng)).unwrap();
            prop_assert_eq!(k.reverse().reverse(), k);
        }

        #[test]
        fn reverse_kernel_gives_the_adjoint_convolution(
            seed in any::<u64>(), c1 in 1usize..4, c2 in 1usize..4,
            h in 1usize..7, w in 1usize..7, ext in 0usize..3
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kext = 2 * ext + 1;
            let x = random(&[c1, h, w], &mut rng);
            let y = random(&[c2, h, w], &mut rng);
            let k = ConvKernel::new(random(&[c2, c1, kext, kext], &mut rng)).unwrap();
            let lhs = y.dot(&conv2d_half(&x, &k).unwrap()).unwrap();
            let rhs = x.dot(&conv2d_half(&y, &k.reverse()).unwrap()).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            prop_assert!((lhs - rhs).abs() / scale < 1e-12, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn pooling_and_upsampling_adjoint_gap_is_four(
            seed in any::<u64>(), c in 1usize..3, h in 1usize..5, w in 1usize..5
        ) {
            // Dyadic entries keep every sum exact, so the factor is checked exactly.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dyadic = |shape: &[usize]| {
                Tensor::from_fn(shape, |_| rng.random_range(-64i32..64) as f64 / 16.0)
            };
            let x = dyadic(&[c, 2 * h, 2 * w]);
            let y = dyadic(&[c, h, w]);
            let lhs = y.dot(&avg_pool2(&x).unwrap()).unwrap();
            let rhs = 0.25 * nn_upsample2(&y).unwrap().dot(&x).unwrap();
            prop_assert_eq!(lhs, rhs);
            prop_assert_eq!(avg_pool2(&nn_upsample2(&y).unwrap()).unwrap(), y);
        }
    }
}
