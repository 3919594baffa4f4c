use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Point-symmetric activations. Every registered kind satisfies
/// `σ(-z) = -σ(z)` and `σ(0) = 0`, which is what keeps the action path of an
/// SCN decoder odd.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sin,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Tanh, Activation::Sin, Activation::Identity];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sin => z.sin(),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`, given `y = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sin => z.cos(),
            Activation::Identity => 1.0,
        }
    }

    pub fn is_odd(self) -> bool {
        true
    }

    /// Elementwise application to a vector.
    pub fn forward(self, input: &[f64]) -> Vec<f64> {
        input.iter().map(|&z| self.apply(z)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sin => "sin",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sin" => Ok(Activation::Sin),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "activation '{other}' is not a registered odd activation (tanh, sin, identity)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tanh_zero() {
        assert_eq!(Activation::Tanh.forward(&[0.0]), vec![0.0]);
    }

    #[test]
    fn tanh_odd_at_point() {
        let z = 0.7;
        assert_eq!(Activation::Tanh.apply(-z), -Activation::Tanh.apply(z));
    }

    #[test]
    fn sin_half_pi() {
        let y = Activation::Sin.forward(&[std::f64::consts::FRAC_PI_2]);
        assert!((y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unregistered_kind_is_config_error() {
        let err = "relu".parse::<Activation>().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!("TANH".parse::<Activation>().unwrap(), Activation::Tanh);
    }

    #[test]
    fn oddness_over_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in Activation::ALL {
            assert_eq!(kind.apply(0.0), 0.0);
            for _ in 0..10_000 {
                let z: f64 = rng.random_range(-20.0..20.0);
                let diff = (kind.apply(-z) + kind.apply(z)).abs();
                assert!(diff <= 1e-15, "{kind} not odd at {z}: {diff}");
            }
        }
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for kind in Activation::ALL {
            for &z in &[-1.3, -0.2, 0.0, 0.4, 2.1] {
                let h = 1e-6;
                let fd = (kind.apply(z + h) - kind.apply(z - h)) / (2.0 * h);
                let an = kind.derivative(z, kind.apply(z));
                assert!((fd - an).abs() < 1e-9, "{kind} at {z}");
            }
        }
    }
}
