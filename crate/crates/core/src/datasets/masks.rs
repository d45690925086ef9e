use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

/// How observation masks are drawn for an image. Masks use `true` for
/// observed pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaskSpec {
    Perlin {
        frequency: usize,
        obscured_fraction: f64,
    },
    SquarePatches {
        diameter_min: usize,
        diameter_max: usize,
        white_fraction: f64,
    },
    Bernoulli {
        p: f64,
    },
    /// Image fully observed; only a label (if the task has one) is hidden.
    LabelOnly,
    /// Label hidden plus an image mask drawn from `inner`.
    LabelPlus {
        inner: Box<MaskSpec>,
    },
}

fn unit_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            MaskSpec::Perlin {
                frequency,
                obscured_fraction,
            } => {
                if *frequency == 0 {
                    return Err(Error::InvalidArgument("Perlin frequency must be ≥ 1".into()));
                }
                unit_fraction("obscured fraction", *obscured_fraction)
            }
            MaskSpec::SquarePatches {
                diameter_min,
                diameter_max,
                white_fraction,
            } => {
                if *diameter_min == 0 || diameter_min > diameter_max {
                    return Err(Error::InvalidArgument(format!(
                        "patch diameters need 1 ≤ min ≤ max, got {diameter_min} and {diameter_max}"
                    )));
                }
                unit_fraction("white fraction", *white_fraction)
            }
            MaskSpec::Bernoulli { p } => unit_fraction("Bernoulli p", *p),
            MaskSpec::LabelOnly => Ok(()),
            MaskSpec::LabelPlus { inner } => match **inner {
                MaskSpec::LabelOnly | MaskSpec::LabelPlus { .. } => {
                    Err(Error::InvalidArgument("label-plus needs an image mask inside".into()))
                }
                _ => inner.validate(),
            },
        }
    }

    /// Draws a mask over a `[h, w]` image.
    pub fn image_mask<R: Rng + ?Sized>(&self, image: &Tensor, rng: &mut R) -> Result<Mask> {
        if image.rank() != 2 {
            return Err(Error::Shape(format!(
                "image mask needs [h, w], got {:?}",
                image.shape()
            )));
        }
        let (h, w) = (image.shape()[0], image.shape()[1]);
        match self {
            MaskSpec::Perlin {
                frequency,
                obscured_fraction,
            } => Ok(perlin_mask(h, w, *frequency, *obscured_fraction, rng)),
            MaskSpec::SquarePatches {
                diameter_min,
                diameter_max,
                white_fraction,
            } => square_patch_mask(image, *diameter_min, *diameter_max, *white_fraction, rng),
            MaskSpec::Bernoulli { p } => Ok(bernoulli_mask(h, w, *p, rng)),
            MaskSpec::LabelOnly => Ok(Mask::filled(&[h, w], true)),
            MaskSpec::LabelPlus { inner } => inner.image_mask(image, rng),
        }
    }
}

/// Single-octave 2-D gradient noise on a `frequency × frequency` lattice of
/// random unit gradients spanning the image, sampled at pixel centres.
pub fn perlin_noise<R: Rng + ?Sized>(h: usize, w: usize, frequency: usize, rng: &mut R) -> Vec<f64> {
    let f = frequency.max(1);
    let grads: Vec<(f64, f64)> = (0..(f + 1) * (f + 1))
        .map(|_| {
            let a = rng.random_range(0.0..TAU);
            (a.cos(), a.sin())
        })
        .collect();
    let fade = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let y = (i as f64 + 0.5) * f as f64 / h as f64;
        let y0 = (y.floor() as usize).min(f - 1);
        let dy = y - y0 as f64;
        for j in 0..w {
            let x = (j as f64 + 0.5) * f as f64 / w as f64;
            let x0 = (x.floor() as usize).min(f - 1);
            let dx = x - x0 as f64;
            let corner = |cy: usize, cx: usize| {
                let (gx, gy) = grads[(y0 + cy) * (f + 1) + x0 + cx];
                gx * (dx - cx as f64) + gy * (dy - cy as f64)
            };
            let (sx, sy) = (fade(dx), fade(dy));
            let top = corner(0, 0) + sx * (corner(0, 1) - corner(0, 0));
            let bottom = corner(1, 0) + sx * (corner(1, 1) - corner(1, 0));
            out.push(top + sy * (bottom - top));
        }
    }
    out
}

/// Perlin noise thresholded at its per-image quantile so that exactly
/// `round(fraction · h · w)` pixels (the highest noise values) are hidden.
pub fn perlin_mask<R: Rng + ?Sized>(h: usize, w: usize, frequency: usize, obscured_fraction: f64, rng: &mut R) -> Mask {
    let noise = perlin_noise(h, w, frequency, rng);
    let hidden = (obscured_fraction * (h * w) as f64).round() as usize;
    let mut order: Vec<usize> = (0..h * w).collect();
    order.sort_by(|&a, &b| noise[b].total_cmp(&noise[a]).then(a.cmp(&b)));
    let mut bits = vec![true; h * w];
    for &i in &order[..hidden.min(h * w)] {
        bits[i] = false;
    }
    Mask::new(vec![h, w], bits).expect("mask extents")
}

/// Each pixel hidden independently with probability `p`.
pub fn bernoulli_mask<R: Rng + ?Sized>(h: usize, w: usize, p: f64, rng: &mut R) -> Mask {
    let bits = (0..h * w).map(|_| !rng.random_bool(p.clamp(0.0, 1.0))).collect();
    Mask::new(vec![h, w], bits).expect("mask extents")
}

/// Hides random squares (side uniform in `[diameter_min, diameter_max]`,
/// possibly overlapping) until at least `white_fraction` of the white
/// (`> 0`) pixels are hidden.
pub fn square_patch_mask<R: Rng + ?Sized>(
    image: &Tensor,
    diameter_min: usize,
    diameter_max: usize,
    white_fraction: f64,
    rng: &mut R,
) -> Result<Mask> {
    if image.rank() != 2 {
        return Err(Error::Shape(format!(
            "patch mask needs [h, w], got {:?}",
            image.shape()
        )));
    }
    if diameter_min == 0 || diameter_min > diameter_max {
        return Err(Error::InvalidArgument(format!(
            "patch diameters need 1 ≤ min ≤ max, got {diameter_min} and {diameter_max}"
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let white: Vec<bool> = image.data().iter().map(|&v| v > 0.0).collect();
    let total = white.iter().filter(|&&b| b).count();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "image has no white pixels; masked white fraction is undefined".into(),
        ));
    }
    let need = (white_fraction * total as f64).ceil() as usize;
    let mut bits = vec![true; h * w];
    let mut masked = 0usize;
    while masked < need {
        let side = rng.random_range(diameter_min..=diameter_max);
        let (sh, sw) = (side.min(h), side.min(w));
        let top = rng.random_range(0..=h - sh);
        let left = rng.random_range(0..=w - sw);
        for i in top..top + sh {
            for j in left..left + sw {
                let k = i * w + j;
                if bits[k] {
                    bits[k] = false;
                    if white[k] {
                        masked += 1;
                    }
                }
            }
        }
    }
    Mask::new(vec![h, w], bits)
}

/// Fraction of hidden pixels having at least one hidden 4-neighbour
/// (0 when nothing is hidden).
pub fn mask_coherence(mask: &Mask) -> f64 {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let hidden = |i: usize, j: usize| !mask.bits()[i * w + j];
    let mut count = 0usize;
    let mut adjacent = 0usize;
    for i in 0..h {
        for j in 0..w {
            if !hidden(i, j) {
                continue;
            }
            count += 1;
            let near = (i > 0 && hidden(i - 1, j))
                || (i + 1 < h && hidden(i + 1, j))
                || (j > 0 && hidden(i, j - 1))
                || (j + 1 < w && hidden(i, j + 1));
            if near {
                adjacent += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        adjacent as f64 / count as f64
    }
}
