use std::collections::VecDeque;

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest period `p ≥ 1` such that every state in the window matches the
/// state `p` steps earlier to within `tol` (max-abs), or 0 if none.
///
/// A period is only accepted when the window holds at least two full
/// repetitions of it (`2p ≤ len`).
pub fn detect_cycle(states: &[Tensor], tol: f64) -> usize {
    let len = states.len();
    if len < 2 {
        return 0;
    }
    (1..=len / 2)
        .find(|&p| {
            (p..len).all(|t| {
                states[t]
                    .data()
                    .iter()
                    .zip(states[t - p].data())
                    .all(|(a, b)| (a - b).abs() < tol)
            })
        })
        .unwrap_or(0)
}

/// Outcome of [`synchronous_iterate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyncReport {
    /// Detected period, 0 if none was found within the iteration budget.
    pub period: usize,
    pub iterations: usize,
    pub state: Tensor,
}

/// Iterates `x ← f(W x + b)` on all units at once (not layerwise) for a
/// square `W`, stopping as soon as the trailing `window` states show a cycle.
pub fn synchronous_iterate(
    w: &Tensor,
    bias: &Tensor,
    x0: &Tensor,
    kind: ActivationKind,
    max_iters: usize,
    window: usize,
    tol: f64,
) -> Result<SyncReport> {
    let n = x0.len();
    if w.shape() != [n, n] || bias.len() != n || x0.rank() != 1 {
        return Err(Error::Shape(format!(
            "synchronous iteration needs W [{n}, {n}], b [{n}], x [{n}]; got {:?}, {:?}, {:?}",
            w.shape(),
            bias.shape(),
            x0.shape()
        )));
    }
    if window < 2 {
        return Err(Error::InvalidArgument(
            "cycle window must hold at least 2 states".into(),
        ));
    }
    let mut trail: VecDeque<Tensor> = VecDeque::with_capacity(window);
    let mut x = x0.clone();
    trail.push_back(x.clone());
    for it in 1..=max_iters {
        let data = w
            .data()
            .chunks(n)
            .zip(bias.data())
            .map(|(row, b)| kind.apply(row.iter().zip(x.data()).map(|(a, v)| a * v).sum::<f64>() + b))
            .collect();
        x = Tensor::new(vec![n], data).map_err(|e| e.with_context(format!("synchronous iteration {it}")))?;
        if trail.len() == window {
            trail.pop_front();
        }
        trail.push_back(x.clone());
        if trail.len() == window {
            let period = detect_cycle(trail.make_contiguous(), tol);
            if period > 0 {
                return Ok(SyncReport {
                    period,
                    iterations: it,
                    state: x,
                });
            }
        }
    }
    Ok(SyncReport {
        period: 0,
        iterations: max_iters,
        state: x,
    })
}
