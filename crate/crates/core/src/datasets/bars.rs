use rand::Rng;

use crate::error::Result;
use crate::tensor::{Mask, Tensor};

use super::Example;

pub const BAR_SIDE: usize = 5;
const ON: f64 = 0.999;
const OFF: f64 = -0.999;

/// The 20 bar images: every pair of full rows, then every pair of full
/// columns, as `[5, 5]` tensors with values ±0.999.
pub fn gen_bar_patterns() -> Vec<Tensor> {
    let mut out = Vec::with_capacity(20);
    for rows in [true, false] {
        for a in 0..BAR_SIDE {
            for b in a + 1..BAR_SIDE {
                out.push(Tensor::from_fn(&[BAR_SIDE, BAR_SIDE], |i| {
                    let line = if rows { i / BAR_SIDE } else { i % BAR_SIDE };
                    if line == a || line == b {
                        ON
                    } else {
                        OFF
                    }
                }));
            }
        }
    }
    out
}

/// Number of bar patterns that agree with `values` on every observed pixel
/// (compared by sign).
pub fn count_consistent(patterns: &[Tensor], mask: &Mask, values: &Tensor) -> usize {
    patterns
        .iter()
        .filter(|p| {
            p.data()
                .iter()
                .zip(values.data())
                .zip(mask.bits())
                .all(|((&a, &b), &m)| !m || (a > 0.0) == (b > 0.0))
        })
        .count()
}

/// Draws observation masks for `pattern` until exactly one bar pattern is
/// consistent with the evidence and at least one pixel is hidden.
///
/// The observed fraction of each attempt is itself drawn from `[0.1, 0.6]`,
/// so both sparse and dense evidence appear.
pub fn gen_bar_evidence<R: Rng + ?Sized>(pattern: &Tensor, rng: &mut R) -> Result<Example> {
    let patterns = gen_bar_patterns();
    let n = BAR_SIDE * BAR_SIDE;
    loop {
        let p: f64 = rng.random_range(0.1..0.6);
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let observed = bits.iter().filter(|&&b| b).count();
        if observed == 0 || observed == n {
            continue;
        }
        let mask = Mask::new(vec![BAR_SIDE, BAR_SIDE], bits)?;
        if count_consistent(&patterns, &mask, pattern) == 1 {
            return Example::new(pattern.clone(), mask);
        }
    }
}
