//! Reconstruction and classification quality: PSNR, SSIM and completion
//! accuracy, with per-item values summarised by mean and standard error.

use serde::{Deserialize, Serialize};

use crate::datasets::{decode_label, label_row};
use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

/// Peak signal-to-noise ratio in decibels; `f64::INFINITY` for identical
/// inputs.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.expect_same_shape(b)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn to_gray(t: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    match *t.shape() {
        [h, w] => Ok((h, w, t.data().to_vec())),
        [c, h, w] => {
            let plane = h * w;
            let data = (0..plane)
                .map(|p| (0..c).map(|ch| t.data()[ch * plane + p]).sum::<f64>() / c as f64)
                .collect();
            Ok((h, w, data))
        }
        _ => Err(Error::Shape(format!(
            "SSIM needs [h, w] or [c, h, w], got {:?}",
            t.shape()
        ))),
    }
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5), with
/// `C1 = (0.01·peak)²` and `C2 = (0.03·peak)²`. Colour inputs are reduced to
/// channel-mean luminance first.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.expect_same_shape(b)?;
    let (h, w, x) = to_gray(a)?;
    let (_, _, y) = to_gray(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..SSIM_WINDOW {
                for b in 0..SSIM_WINDOW {
                    let wt = g[a] * g[b];
                    let k = (i + a) * w + j + b;
                    let (u, v) = (x[k], y[k]);
                    mx += wt * u;
                    my += wt * v;
                    sxx += wt * u * u;
                    syy += wt * v * v;
                    sxy += wt * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Mean, standard error and the per-item values they summarise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over √n; 0 for fewer than two items.
    pub std_err: f64,
    pub values: Vec<f64>,
}

impl Summary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                std_err: f64::NAN,
                values,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_err = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Summary { mean, std_err, values }
    }
}

/// Bar-style accuracy on hidden units, by sign.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionAccuracy {
    /// Fraction of items whose every hidden unit has the target's sign.
    pub per_item: f64,
    /// Fraction of hidden units with the target's sign.
    pub per_pixel: f64,
    pub item_correct: Vec<bool>,
}

/// Compares `outputs` and `targets` (both `[n, …]`) on units where `mask`
/// is false, thresholding at 0.
pub fn completion_accuracy(outputs: &Tensor, targets: &Tensor, mask: &Mask) -> Result<CompletionAccuracy> {
    outputs.expect_same_shape(targets)?;
    if mask.shape() != outputs.shape() {
        return Err(Error::Shape(format!(
            "mask {:?} vs outputs {:?}",
            mask.shape(),
            outputs.shape()
        )));
    }
    let n = outputs.batch_len();
    let stride = outputs.len() / n.max(1);
    let mut item_correct = Vec::with_capacity(n);
    let (mut hidden, mut right) = (0usize, 0usize);
    for i in 0..n {
        let r = i * stride..(i + 1) * stride;
        let mut ok = true;
        for ((&o, &t), &m) in outputs.data()[r.clone()]
            .iter()
            .zip(&targets.data()[r.clone()])
            .zip(&mask.bits()[r])
        {
            if m {
                continue;
            }
            hidden += 1;
            if (o > 0.0) == (t > 0.0) {
                right += 1;
            } else {
                ok = false;
            }
        }
        item_correct.push(ok);
    }
    let per_item = item_correct.iter().filter(|&&c| c).count() as f64 / n.max(1) as f64;
    let per_pixel = if hidden == 0 { 1.0 } else { right as f64 / hidden as f64 };
    Ok(CompletionAccuracy {
        per_item,
        per_pixel,
        item_correct,
    })
}

/// Fraction of supervised visible vectors (`[n, 812]`) whose decoded label
/// row matches the true class.
pub fn label_accuracy(outputs: &Tensor, classes: &[usize]) -> Result<f64> {
    if outputs.rank() != 2 || outputs.shape()[0] != classes.len() {
        return Err(Error::Shape(format!(
            "label accuracy needs [n, units] outputs for {} classes, got {:?}",
            classes.len(),
            outputs.shape()
        )));
    }
    let stride = outputs.shape()[1];
    let hits = outputs
        .data()
        .chunks(stride)
        .zip(classes)
        .filter(|(row, &c)| decode_label(label_row(row)) == c)
        .count();
    Ok(hits as f64 / classes.len().max(1) as f64)
}

/// PSNR and SSIM per item of `[n, …]` batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: Summary,
    pub ssim: Summary,
    pub accuracy: Option<Summary>,
}

/// Scores each item of `outputs` against `targets`; items are reshaped to
/// `image_shape` (`[h, w]` or `[c, h, w]`) for SSIM.
pub fn image_report(outputs: &Tensor, targets: &Tensor, image_shape: &[usize], peak: f64) -> Result<MetricReport> {
    outputs.expect_same_shape(targets)?;
    let n = outputs.batch_len();
    let mut p = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let o = outputs.batch_item(i).reshape(image_shape)?;
        let t = targets.batch_item(i).reshape(image_shape)?;
        p.push(psnr(&o, &t, peak)?);
        s.push(ssim(&o, &t, peak)?);
    }
    Ok(MetricReport {
        psnr: Summary::new(p),
        ssim: Summary::new(s),
        accuracy: None,
    })
}
