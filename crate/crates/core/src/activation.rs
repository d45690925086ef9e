//! Unit activation functions, their inverses, and the matching barrier
//! functions `ρ(x) = ∫₀ˣ f⁻¹(ξ) dξ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activation function shared by every unit of a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    /// Identity on `[-1, 1]`, slope `alpha` outside.
    LeakySigmoid {
        alpha: f64,
    },
}

impl ActivationKind {
    pub fn leaky_sigmoid(alpha: f64) -> Result<Self> {
        let kind = ActivationKind::LeakySigmoid { alpha };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::Tanh => Ok(()),
            ActivationKind::LeakySigmoid { alpha } if alpha > 0.0 && alpha < 1.0 => Ok(()),
            ActivationKind::LeakySigmoid { alpha } => Err(Error::InvalidArgument(format!(
                "leaky sigmoid slope must lie in (0, 1), got {alpha}"
            ))),
        }
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::LeakySigmoid { alpha } => {
                if z > 1.0 {
                    alpha * (z - 1.0) + 1.0
                } else if z < -1.0 {
                    alpha * (z + 1.0) - 1.0
                } else {
                    z
                }
            }
        }
    }

    /// `f'(z)` expressed through the output `y = f(z)`.
    #[inline]
    pub fn derivative_from_output(&self, y: f64) -> f64 {
        match *self {
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::LeakySigmoid { alpha } => {
                if y.abs() > 1.0 {
                    alpha
                } else {
                    1.0
                }
            }
        }
    }

    /// `f⁻¹(x)`; for tanh this is `atanh`, infinite at `|x| = 1`.
    #[inline]
    pub fn inverse(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Tanh => x.atanh(),
            ActivationKind::LeakySigmoid { alpha } => {
                if x > 1.0 {
                    (x - 1.0) / alpha + 1.0
                } else if x < -1.0 {
                    (x + 1.0) / alpha - 1.0
                } else {
                    x
                }
            }
        }
    }

    /// Derivative of `f⁻¹` at `x`.
    #[inline]
    pub fn inverse_derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Tanh => 1.0 / (1.0 - x * x),
            ActivationKind::LeakySigmoid { alpha } => {
                if x.abs() > 1.0 {
                    1.0 / alpha
                } else {
                    1.0
                }
            }
        }
    }

    /// Barrier `ρ(x)`. Tanh uses the half-scaled entropy form so that `ρ' = atanh`.
    #[inline]
    pub fn barrier(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Tanh => 0.5 * (xlogx(1.0 + x) + xlogx(1.0 - x)),
            ActivationKind::LeakySigmoid { alpha } => {
                if x > 1.0 {
                    (x * x + (1.0 - alpha) * (1.0 - 2.0 * x)) / (2.0 * alpha)
                } else if x < -1.0 {
                    (x * x + (1.0 - alpha) * (1.0 + 2.0 * x)) / (2.0 * alpha)
                } else {
                    0.5 * x * x
                }
            }
        }
    }

    /// Whether `x` lies in the closed domain of the barrier.
    #[inline]
    pub fn in_barrier_domain(&self, x: f64) -> bool {
        match self {
            ActivationKind::Tanh => x.abs() <= 1.0,
            ActivationKind::LeakySigmoid { .. } => x.is_finite(),
        }
    }

    /// Lower and upper bound of the activation's open range, if bounded.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self {
            ActivationKind::Tanh => Some((-1.0, 1.0)),
            ActivationKind::LeakySigmoid { .. } => None,
        }
    }
}

/// `t ln t` with the continuous extension `0 ln 0 = 0`.
#[inline]
fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// Elementwise `f(z)`.
pub fn activation(kind: ActivationKind, z: &Tensor) -> Tensor {
    z.map(|v| kind.apply(v))
}

/// Elementwise `f⁻¹(x)`; tanh requires `|x| < 1` strictly.
pub fn inverse_activation(kind: ActivationKind, x: &Tensor) -> Result<Tensor> {
    if let ActivationKind::Tanh = kind {
        if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, v)| v.abs() >= 1.0) {
            return Err(Error::Domain {
                index,
                value,
                what: "atanh",
            });
        }
    }
    Ok(x.map(|v| kind.inverse(v)))
}

/// Elementwise barrier `ρ(x)`; tanh requires `|x| ≤ 1`.
pub fn barrier(kind: ActivationKind, x: &Tensor) -> Result<Tensor> {
    if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, &v)| !kind.in_barrier_domain(v)) {
        return Err(Error::Domain {
            index,
            value,
            what: "the barrier function",
        });
    }
    Ok(x.map(|v| kind.barrier(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LEAKY: ActivationKind = ActivationKind::LeakySigmoid { alpha: 0.2 };

    #[test]
    fn activation_values() {
        assert_eq!(ActivationKind::Tanh.apply(0.0), 0.0);
        assert_eq!(LEAKY.apply(1.0), 1.0);
        assert_eq!(LEAKY.apply(-1.0), -1.0);
        assert!((LEAKY.apply(2.0) - 1.2).abs() < 1e-15);
        assert!((LEAKY.apply(-3.0) + 1.4).abs() < 1e-15);
    }

    #[test]
    fn inverse_values() {
        assert_eq!(ActivationKind::Tanh.inverse(0.0), 0.0);
        assert!((LEAKY.inverse(1.2) - 2.0).abs() < 1e-12);
        let err = inverse_activation(
            ActivationKind::Tanh,
            &Tensor::new(vec![3], vec![0.0, 0.5, -1.0]).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain { index: 2, .. }));
    }

    #[test]
    fn barrier_values() {
        assert_eq!(ActivationKind::Tanh.barrier(0.0), 0.0);
        assert_eq!(LEAKY.barrier(0.0), 0.0);
        let expect = 0.5 * 1.5 * 1.5f64.ln() + 0.5 * 0.5 * 0.5f64.ln();
        assert!((ActivationKind::Tanh.barrier(0.5) - expect).abs() < 1e-15);
        assert!((ActivationKind::Tanh.barrier(0.5) - 0.130812).abs() < 1e-6);
        assert_eq!(LEAKY.barrier(1.0), 0.5);
        assert!((ActivationKind::Tanh.barrier(1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(barrier(ActivationKind::Tanh, &Tensor::scalar(1.01)).is_err());
    }

    #[test]
    fn tanh_barrier_matches_integral_of_atanh() {
        // Composite Simpson quadrature of atanh on [0, x].
        for &x in &[0.1, 0.5, -0.7, 0.95] {
            let n = 2000;
            let h = x / n as f64;
            let mut s = 0.0f64.atanh() + x.atanh();
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * (i as f64 * h).atanh();
            }
            let integral = s * h / 3.0;
            assert!((ActivationKind::Tanh.barrier(x) - integral).abs() < 1e-10);
        }
    }

    #[test]
    fn validation() {
        assert!(ActivationKind::leaky_sigmoid(0.0).is_err());
        assert!(ActivationKind::leaky_sigmoid(1.0).is_err());
        assert!(ActivationKind::leaky_sigmoid(0.5).is_ok());
    }

    proptest! {
        #[test]
        fn inverse_round_trips(x in -0.999_999f64..0.999_999, y in -50.0f64..50.0) {
            let t = ActivationKind::Tanh;
            prop_assert!((t.apply(t.inverse(x)) - x).abs() < 1e-12);
            prop_assert!((LEAKY.apply(LEAKY.inverse(y)) - y).abs() < 1e-12);
        }

        #[test]
        fn barrier_derivative_is_the_inverse(x in -0.95f64..0.95, y in -4.0f64..4.0) {
            let h = 1e-5;
            for (kind, v) in [(ActivationKind::Tanh, x), (LEAKY, y)] {
                // Skip the kinks of the piecewise barrier.
                if (v.abs() - 1.0).abs() < 1e-3 {
                    continue;
                }
                let numeric = (kind.barrier(v + h) - kind.barrier(v - h)) / (2.0 * h);
                prop_assert!((numeric - kind.inverse(v)).abs() < 1e-6,
                    "{:?} at {}: {} vs {}", kind, v, numeric, kind.inverse(v));
            }
        }

        #[test]
        fn leaky_barrier_is_continuous(alpha in 0.05f64..0.95) {
            let k = ActivationKind::LeakySigmoid { alpha };
            for b in [-1.0f64, 1.0] {
                prop_assert!((k.barrier(b + 1e-12 * b.signum()) - k.barrier(b)).abs() < 1e-9);
            }
        }
    }
}
