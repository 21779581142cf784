//! Independent oracles for the numerical test suites.
//!
//! Everything here recomputes results through a different algebraic route
//! than the library under test: kriging quantities via explicit matrix
//! inverses and determinants instead of Cholesky solves, expectations via
//! brute-force Monte Carlo instead of closed forms. Keep it that way — an
//! oracle that shares the implementation path can't catch its bugs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;

/// Tensor-product Matern 5/2 correlation, written out from the formula.
pub fn matern52(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let mut rho = 1.0;
    for i in 0..a.len() {
        let h = 5.0f64.sqrt() * ((a[i] - b[i]) / theta[i]).abs();
        rho *= (1.0 + h + h * h / 3.0) * (-h).exp();
    }
    rho
}

/// Tensor-product squared-exponential correlation.
pub fn squared_exponential(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let mut rho = 1.0;
    for i in 0..a.len() {
        let h = (a[i] - b[i]) / theta[i];
        rho *= (-0.5 * h * h).exp();
    }
    rho
}

/// Kriging quantities at a fixed `theta`, computed with explicit inverses.
pub struct DenseKriging {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// `log det R + n log sigma2` (the concentrated likelihood criterion).
    pub nll: f64,
    r_inv: DMatrix<f64>,
    design: Vec<Vec<f64>>,
    theta: Vec<f64>,
    resid: DVector<f64>,
    corr: fn(&[f64], &[f64], &[f64]) -> f64,
}

impl DenseKriging {
    /// Fits the closed-form pieces on (already normalized) design points.
    /// `nugget` is added to the correlation diagonal exactly as the library
    /// does, but every downstream solve uses the explicit inverse.
    pub fn new(
        design: &[Vec<f64>],
        observations: &[f64],
        theta: &[f64],
        nugget: f64,
        corr: fn(&[f64], &[f64], &[f64]) -> f64,
    ) -> Self {
        let n = design.len();
        let d = design[0].len();
        let r = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 + nugget
            } else {
                corr(&design[i], &design[j], theta)
            }
        });
        let r_inv = r.clone().try_inverse().expect("oracle inverse");
        let h = DMatrix::from_fn(n, d + 1, |row, col| {
            if col == 0 {
                1.0
            } else {
                design[row][col - 1]
            }
        });
        let y = DVector::from_column_slice(observations);
        // generalized least squares by explicit inversion
        let hti = h.transpose() * &r_inv;
        let gram = (&hti * &h).try_inverse().expect("oracle GLS inverse");
        let beta = gram * (&hti * &y);
        let resid = &y - &h * &beta;
        let sigma2 = (resid.transpose() * &r_inv * &resid)[(0, 0)] / (n - (d + 1)) as f64;
        let nll = r.determinant().ln() + n as f64 * sigma2.max(f64::MIN_POSITIVE).ln();
        Self {
            beta: beta.iter().copied().collect(),
            sigma2,
            nll,
            r_inv,
            design: design.to_vec(),
            theta: theta.to_vec(),
            resid,
            corr,
        }
    }

    /// Kriging mean and variance at a (normalized) point, via the explicit
    /// inverse.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.design.len();
        let r = DVector::from_fn(n, |i, _| (self.corr)(&self.design[i], x, &self.theta));
        let mut mean = self.beta[0];
        for (j, &c) in x.iter().enumerate() {
            mean += self.beta[j + 1] * c;
        }
        mean += (r.transpose() * &self.r_inv * &self.resid)[(0, 0)];
        let variance = self.sigma2 * (1.0 - (r.transpose() * &self.r_inv * &r)[(0, 0)]);
        (mean, variance)
    }
}

/// Monte Carlo estimate (value, standard error) of `E[(Z - best)^+]` for
/// `Z ~ N(mean, variance)`.
pub fn mc_positive_part(mean: f64, variance: f64, best: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(mean, variance.sqrt()).expect("finite moments");
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let z: f64 = normal.sample(&mut rng);
        let v = (z - best).max(0.0);
        sum += v;
        sumsq += v * v;
    }
    let est = sum / n as f64;
    let var = (sumsq / n as f64 - est * est).max(0.0);
    (est, (var / n as f64).sqrt())
}

/// A draw of a centered Gaussian process on `design` with unit variance and
/// Matern 5/2 correlation `theta_star`, plus an affine trend — test data for
/// hyperparameter-recovery checks.
pub fn simulate_gp_observations(
    design: &[Vec<f64>],
    theta_star: &[f64],
    trend: (f64, &[f64]),
    sigma: f64,
    seed: u64,
) -> Vec<f64> {
    let n = design.len();
    let r = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + 1e-10
        } else {
            matern52(&design[i], &design[j], theta_star)
        }
    });
    let chol = r.cholesky().expect("simulation covariance");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let z = DVector::from_fn(n, |_, _| {
        let v: f64 = rand_distr::StandardNormal.sample(&mut rng);
        v
    });
    let field = chol.l() * z;
    design
        .iter()
        .zip(field.iter())
        .map(|(x, f)| {
            let (b0, bs) = trend;
            b0 + x.iter().zip(bs).map(|(c, b)| c * b).sum::<f64>() + sigma * f
        })
        .collect()
}

/// Uniform random points in the unit box, for random test problems.
pub fn random_unit_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Closed-form toy-simulator moments.
pub mod toy {
    /// `E[sin(x + U)]` for `U ~ N(0,1)`.
    pub fn mean_sin_normal(x: f64) -> f64 {
        x.sin() * (-0.5f64).exp()
    }

    /// `E[cos(x + U)]` for `U ~ Exp(1)`.
    pub fn mean_cos_exp(x: f64) -> f64 {
        (x.cos() - x.sin()) / 2.0
    }

    /// `E[G(x)]` for the toy simulator.
    pub fn mean(x: &[f64]) -> f64 {
        mean_sin_normal(x[0]) + mean_cos_exp(x[1])
    }
}
