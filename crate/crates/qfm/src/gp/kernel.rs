//! Stationary correlation functions for kriging.
//!
//! Both families are anisotropic tensor products of one-dimensional
//! correlations, one correlation length per input dimension, evaluated on
//! normalized coordinates.

use serde::{Deserialize, Serialize};

/// Correlation family. Matern 5/2 is the default: twice differentiable
/// sample paths, robust for smooth-but-not-analytic responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    Matern52,
    SquaredExponential,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Matern52 => "matern52",
            Kernel::SquaredExponential => "squared-exponential",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "matern52" | "matern-52" => Some(Kernel::Matern52),
            "squared-exponential" | "sqexp" | "gaussian" => Some(Kernel::SquaredExponential),
            _ => None,
        }
    }

    fn corr_1d(self, h: f64) -> f64 {
        match self {
            Kernel::Matern52 => {
                let a = 5.0f64.sqrt() * h.abs();
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            Kernel::SquaredExponential => (-0.5 * h * h).exp(),
        }
    }

    /// Tensor-product correlation between two points with per-dimension
    /// lengths `theta`.
    pub fn corr(self, a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        debug_assert_eq!(a.len(), theta.len());
        let mut rho = 1.0;
        for i in 0..a.len() {
            rho *= self.corr_1d((a[i] - b[i]) / theta[i]);
        }
        rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_at_zero_distance() {
        for k in [Kernel::Matern52, Kernel::SquaredExponential] {
            assert_eq!(k.corr(&[0.3, 0.7], &[0.3, 0.7], &[1.0, 1.0]), 1.0);
        }
    }

    #[test]
    fn decays_with_distance_and_smaller_theta() {
        for k in [Kernel::Matern52, Kernel::SquaredExponential] {
            let near = k.corr(&[0.0], &[0.1], &[1.0]);
            let far = k.corr(&[0.0], &[0.5], &[1.0]);
            assert!(near > far && far > 0.0);
            let tight = k.corr(&[0.0], &[0.1], &[0.01]);
            assert!(tight < 1e-6, "theta=0.01 at distance 0.1: {tight}");
        }
    }

    #[test]
    fn matern52_closed_form_value() {
        // rho(h) = (1 + sqrt5 h + 5 h^2/3) exp(-sqrt5 h) at h = 1
        let a = 5.0f64.sqrt();
        let expect = (1.0 + a + 5.0 / 3.0) * (-a).exp();
        let got = Kernel::Matern52.corr(&[0.0], &[1.0], &[1.0]);
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn tensor_product_factorizes() {
        let k = Kernel::Matern52;
        let joint = k.corr(&[0.0, 0.0], &[0.2, 0.4], &[0.5, 2.0]);
        let split = k.corr(&[0.0], &[0.2], &[0.5]) * k.corr(&[0.0], &[0.4], &[2.0]);
        assert!((joint - split).abs() < 1e-15);
    }

    #[test]
    fn names_roundtrip() {
        for k in [Kernel::Matern52, Kernel::SquaredExponential] {
            assert_eq!(Kernel::from_name(k.name()), Some(k));
        }
        assert_eq!(Kernel::from_name("nope"), None);
    }
}
