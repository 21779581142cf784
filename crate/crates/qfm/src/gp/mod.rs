//! Scalar Gaussian-process regression (kriging) with a linear trend.
//!
//! The model is `Y(x) = h(x) + Z(x)` with `h(x) = beta_0 + sum_j beta_j x_j`
//! and `Z` a centered stationary Gaussian process with covariance
//! `sigma^2 K_theta(x - u)`. Given correlation lengths `theta`, the trend
//! coefficients and process variance have closed-form maximum-likelihood
//! estimates:
//!
//! ```text
//! beta_hat   = (H' R^-1 H)^-1 H' R^-1 y
//! sigma2_hat = (y - H beta_hat)' R^-1 (y - H beta_hat) / (n - (d+1))
//! ```
//!
//! where `R` is the correlation matrix of the design (with a small nugget on
//! the diagonal) and `H` the trend matrix. `theta` itself has no closed form;
//! it minimizes the concentrated criterion
//! `log det R(theta) + n log sigma2_hat(theta)` over a bounded box, searched
//! here in log scale by multi-start Nelder-Mead from a Halton seed set.
//!
//! Prediction at a new point returns the kriging mean
//! `h(x) beta + r(x)' R^-1 (y - H beta)` and the kriging variance
//! `sigma^2 (1 - r(x)' R^-1 r(x))`, clamped at zero. Estimation uncertainty
//! of `beta_hat` and `theta_hat` is deliberately ignored.
//!
//! Inputs are normalized per dimension to [0,1] when ranges are supplied;
//! correlation-length bounds refer to normalized coordinates.

mod kernel;
pub mod optim;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::parse_field;

pub use kernel::Kernel;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("input point has no coordinates")]
    EmptyPoint,
    #[error("coordinate {0} is not finite")]
    NonFiniteCoord(usize),
    #[error("design has {n} points; the trend needs n > d+1 = {min}")]
    TooFewPoints { n: usize, min: usize },
    #[error("design and observations have different lengths ({design} vs {observations})")]
    LengthMismatch { design: usize, observations: usize },
    #[error("design points {0} and {1} coincide after normalization")]
    DuplicateInput(usize, usize),
    #[error("point dimension {got} does not match model dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error(
        "correlation matrix is not positive definite even with nugget {nugget_max:e}; \
         the design is too ill-conditioned"
    )]
    IllConditioned { nugget_max: f64 },
    #[error("trend matrix is rank deficient (a constant or duplicated input column?)")]
    DegenerateTrend,
    #[error("likelihood search failed on all starts: {0}")]
    FitFailed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("observation {0} is not finite")]
    NonFiniteObservation(usize),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file: {0}")]
    Csv(#[from] csv::Error),
    #[error("model file: {0}")]
    BadData(String),
}

/// A point of the input space E, raw (unnormalized) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPoint {
    coords: Vec<f64>,
}

impl InputPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, GpError> {
        if coords.is_empty() {
            return Err(GpError::EmptyPoint);
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(GpError::NonFiniteCoord(i));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Exact-equality key (coordinate bit patterns), for dedup sets and
    /// replay tables.
    pub fn bit_key(&self) -> Vec<u64> {
        self.coords.iter().map(|c| c.to_bits()).collect()
    }

    /// Lexicographic coordinate order, the deterministic tie-breaker.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.coords.iter().zip(&other.coords) {
            match a.partial_cmp(b).expect("coordinates are finite") {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.coords.len().cmp(&other.coords.len())
    }
}

impl fmt::Display for InputPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Kriging prediction at one point: a Gaussian law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
}

/// Fit configuration. Defaults follow the normalized-input convention:
/// correlation lengths searched in `[1e-2, 10]` per dimension, ten
/// Halton-seeded Nelder-Mead starts, nugget escalating from `1e-8` to at
/// most `1e-4` of the process variance.
#[derive(Debug, Clone)]
pub struct GpConfig {
    pub kernel: Kernel,
    pub theta_bounds: (f64, f64),
    pub n_starts: usize,
    pub max_evals_per_start: usize,
    /// Optional warm start added to the multi-start seed list (raw theta).
    pub warm_start: Option<Vec<f64>>,
    /// Per-dimension `(min, max)` used to normalize inputs to [0,1].
    /// `None` leaves coordinates unchanged.
    pub normalization: Option<Vec<(f64, f64)>>,
    pub nugget: f64,
    pub nugget_max: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Matern52,
            theta_bounds: (1e-2, 10.0),
            n_starts: 10,
            max_evals_per_start: 150,
            warm_start: None,
            normalization: None,
            nugget: 1e-8,
            nugget_max: 1e-4,
        }
    }
}

impl GpConfig {
    fn validate(&self, dim: usize) -> Result<(), GpError> {
        let (lo, hi) = self.theta_bounds;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return Err(GpError::InvalidConfig(format!(
                "theta bounds ({lo}, {hi}) must satisfy 0 < lo < hi"
            )));
        }
        if self.n_starts == 0 && self.warm_start.is_none() {
            return Err(GpError::InvalidConfig(
                "need at least one start (n_starts >= 1 or a warm start)".into(),
            ));
        }
        if let Some(w) = &self.warm_start {
            if w.len() != dim {
                return Err(GpError::InvalidConfig(format!(
                    "warm start has dimension {}, design has {dim}",
                    w.len()
                )));
            }
        }
        if let Some(ranges) = &self.normalization {
            if ranges.len() != dim {
                return Err(GpError::InvalidConfig(format!(
                    "normalization has {} ranges, design has dimension {dim}",
                    ranges.len()
                )));
            }
            for &(lo, hi) in ranges {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(GpError::InvalidConfig(format!(
                        "normalization range ({lo}, {hi}) must satisfy lo < hi"
                    )));
                }
            }
        }
        if !(self.nugget > 0.0 && self.nugget <= self.nugget_max) {
            return Err(GpError::InvalidConfig(format!(
                "nugget {} must be in (0, nugget_max = {}]",
                self.nugget, self.nugget_max
            )));
        }
        Ok(())
    }
}

fn normalize(coords: &[f64], ranges: &[(f64, f64)]) -> Vec<f64> {
    coords
        .iter()
        .zip(ranges)
        .map(|(c, &(lo, hi))| (c - lo) / (hi - lo))
        .collect()
}

/// Solves `R x = b` from the lower Cholesky factor of `R` (two triangular
/// solves).
fn solve_spd(chol_l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = chol_l
        .solve_lower_triangular(b)
        .expect("factor is nonsingular");
    chol_l
        .tr_solve_lower_triangular(&z)
        .expect("factor is nonsingular")
}

/// Everything the concentrated likelihood needs, precomputed once per fit.
struct FitWorkspace {
    x_norm: Vec<Vec<f64>>,
    h: DMatrix<f64>,
    y: DVector<f64>,
    kernel: Kernel,
    nugget0: f64,
    nugget_max: f64,
}

/// The closed-form pieces evaluated at one theta.
struct FitParts {
    beta: DVector<f64>,
    sigma2: f64,
    chol_l: DMatrix<f64>,
    nugget: f64,
    nll: f64,
}

impl FitWorkspace {
    fn new(
        design: &[InputPoint],
        observations: &[f64],
        config: &GpConfig,
    ) -> Result<Self, GpError> {
        if design.len() != observations.len() {
            return Err(GpError::LengthMismatch {
                design: design.len(),
                observations: observations.len(),
            });
        }
        let n = design.len();
        let d = design.first().map_or(0, InputPoint::dim);
        if n == 0 || d == 0 {
            return Err(GpError::EmptyPoint);
        }
        if n <= d + 1 {
            return Err(GpError::TooFewPoints { n, min: d + 1 });
        }
        config.validate(d)?;
        for (i, x) in design.iter().enumerate() {
            if x.dim() != d {
                return Err(GpError::DimensionMismatch {
                    got: x.dim(),
                    want: d,
                });
            }
            if !observations[i].is_finite() {
                return Err(GpError::NonFiniteObservation(i));
            }
        }
        let identity = vec![(0.0, 1.0); d];
        let ranges = config.normalization.as_deref().unwrap_or(&identity);
        let x_norm: Vec<Vec<f64>> = design.iter().map(|x| normalize(x.coords(), ranges)).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if x_norm[i] == x_norm[j] {
                    return Err(GpError::DuplicateInput(i, j));
                }
            }
        }
        let h = DMatrix::from_fn(n, d + 1, |r, c| if c == 0 { 1.0 } else { x_norm[r][c - 1] });
        let y = DVector::from_column_slice(observations);
        Ok(Self {
            x_norm,
            h,
            y,
            kernel: config.kernel,
            nugget0: config.nugget,
            nugget_max: config.nugget_max,
        })
    }

    fn n(&self) -> usize {
        self.x_norm.len()
    }

    fn dim(&self) -> usize {
        self.x_norm[0].len()
    }

    /// Cholesky of the correlation matrix, escalating the nugget tenfold on
    /// failure up to `nugget_max`.
    fn factorize(&self, theta: &[f64]) -> Result<(DMatrix<f64>, f64), GpError> {
        let n = self.n();
        let base = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                self.kernel.corr(&self.x_norm[i], &self.x_norm[j], theta)
            }
        });
        let mut nugget = self.nugget0;
        loop {
            let mut r = base.clone();
            for i in 0..n {
                r[(i, i)] += nugget;
            }
            if let Some(chol) = r.cholesky() {
                if nugget > self.nugget0 {
                    log::debug!("nugget escalated to {nugget:e} for theta {theta:?}");
                }
                return Ok((chol.unpack(), nugget));
            }
            if nugget >= self.nugget_max {
                return Err(GpError::IllConditioned {
                    nugget_max: self.nugget_max,
                });
            }
            nugget = (nugget * 10.0).min(self.nugget_max);
        }
    }

    fn parts_at(&self, theta: &[f64]) -> Result<FitParts, GpError> {
        let (l, nugget) = self.factorize(theta)?;
        let n = self.n();
        let p = self.dim() + 1;
        let hw = l
            .solve_lower_triangular(&self.h)
            .ok_or(GpError::DegenerateTrend)?;
        let yw = l
            .solve_lower_triangular(&self.y)
            .ok_or(GpError::DegenerateTrend)?;
        let hth = hw.transpose() * &hw;
        let hty = hw.transpose() * &yw;
        let small = hth.cholesky().ok_or(GpError::DegenerateTrend)?;
        let beta = small.solve(&hty);
        let residw = &yw - &hw * &beta;
        let sigma2 = residw.dot(&residw) / (n - p) as f64;
        let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let nll = log_det + n as f64 * sigma2.max(f64::MIN_POSITIVE).ln();
        Ok(FitParts {
            beta,
            sigma2,
            chol_l: l,
            nugget,
            nll,
        })
    }
}

/// The concentrated negative log-likelihood criterion
/// `log det R(theta) + n log sigma2_hat(theta)` with the closed-form
/// `beta_hat(theta)`, `sigma2_hat(theta)` plugged in.
pub fn neg_log_likelihood(
    design: &[InputPoint],
    observations: &[f64],
    theta: &[f64],
    config: &GpConfig,
) -> Result<f64, GpError> {
    let ws = FitWorkspace::new(design, observations, config)?;
    if theta.len() != ws.dim() {
        return Err(GpError::DimensionMismatch {
            got: theta.len(),
            want: ws.dim(),
        });
    }
    Ok(ws.parts_at(theta)?.nll)
}

/// A fitted Gaussian-process regression model. Immutable; prediction is
/// safe from any number of threads.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: Kernel,
    design: Vec<InputPoint>,
    x_norm: Vec<Vec<f64>>,
    observations: Vec<f64>,
    normalization: Vec<(f64, f64)>,
    beta: Vec<f64>,
    sigma2: f64,
    theta: Vec<f64>,
    nugget: f64,
    nll: f64,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Fits trend, variance, and correlation lengths by maximum likelihood.
    pub fn fit(
        design: &[InputPoint],
        observations: &[f64],
        config: &GpConfig,
    ) -> Result<Self, GpError> {
        let ws = FitWorkspace::new(design, observations, config)?;
        let d = ws.dim();
        let (lo, hi) = config.theta_bounds;
        let log_bounds = vec![(lo.ln(), hi.ln()); d];

        let mut starts: Vec<Vec<f64>> = Vec::new();
        if let Some(w) = &config.warm_start {
            let clamped: Vec<f64> = w.iter().map(|t| t.clamp(lo, hi).ln()).collect();
            starts.push(clamped);
        }
        for s in 1..=config.n_starts {
            starts.push(optim::halton_point(s, &log_bounds));
        }

        let objective = |z: &[f64]| {
            let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            ws.parts_at(&theta).map_or(f64::INFINITY, |p| p.nll)
        };
        let mut best: Option<optim::LocalMin> = None;
        for start in &starts {
            let m = optim::nelder_mead(
                objective,
                start,
                &log_bounds,
                config.max_evals_per_start,
                1e-6,
                1e-9,
            );
            if best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
        let best = best.expect("at least one start");
        if !best.value.is_finite() {
            return Err(GpError::FitFailed(format!(
                "objective not finite on any of {} starts (theta bounds {:?})",
                starts.len(),
                config.theta_bounds
            )));
        }
        let theta: Vec<f64> = best.x.iter().map(|v| v.exp()).collect();
        let parts = ws.parts_at(&theta)?;
        let h_beta = &ws.h * &parts.beta;
        let resid = &ws.y - h_beta;
        let alpha = solve_spd(&parts.chol_l, &resid);
        Ok(Self {
            kernel: ws.kernel,
            design: design.to_vec(),
            x_norm: ws.x_norm,
            observations: observations.to_vec(),
            normalization: config
                .normalization
                .clone()
                .unwrap_or_else(|| vec![(0.0, 1.0); d]),
            beta: parts.beta.iter().copied().collect(),
            sigma2: parts.sigma2,
            theta,
            nugget: parts.nugget,
            nll: parts.nll,
            chol_l: parts.chol_l,
            alpha,
        })
    }

    /// Kriging mean and variance at `x`. The variance is clamped at zero
    /// from below.
    pub fn predict(&self, x: &InputPoint) -> Result<GaussianPrediction, GpError> {
        if x.dim() != self.dim() {
            return Err(GpError::DimensionMismatch {
                got: x.dim(),
                want: self.dim(),
            });
        }
        let xn = normalize(x.coords(), &self.normalization);
        let n = self.design.len();
        let r = DVector::from_fn(n, |i, _| self.kernel.corr(&self.x_norm[i], &xn, &self.theta));
        let mut mean = self.beta[0] + self.alpha.dot(&r);
        for (j, &c) in xn.iter().enumerate() {
            mean += self.beta[j + 1] * c;
        }
        let w = self
            .chol_l
            .solve_lower_triangular(&r)
            .expect("factor is nonsingular");
        let variance = (self.sigma2 * (1.0 - w.dot(&w))).max(0.0);
        Ok(GaussianPrediction { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.x_norm[0].len()
    }

    pub fn len(&self) -> usize {
        self.design.len()
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty()
    }

    pub fn design(&self) -> &[InputPoint] {
        &self.design
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// The achieved value of the likelihood criterion.
    pub fn nll(&self) -> f64 {
        self.nll
    }

    pub fn normalization(&self) -> &[(f64, f64)] {
        &self.normalization
    }

    /// Writes the model as a JSON manifest (estimates) plus a CSV of the
    /// design and observations.
    pub fn save<P: AsRef<Path>, Q: AsRef<Path>>(
        &self,
        manifest_path: P,
        data_path: Q,
    ) -> Result<(), GpError> {
        let manifest = GpManifest {
            kernel: self.kernel,
            beta: self.beta.clone(),
            sigma2: self.sigma2,
            theta: self.theta.clone(),
            nugget: self.nugget,
            nll: self.nll,
            normalization: self.normalization.clone(),
        };
        let file = std::fs::File::create(manifest_path)?;
        serde_json::to_writer_pretty(file, &manifest)?;
        let mut w = csv::Writer::from_writer(std::fs::File::create(data_path)?);
        let d = self.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (x, y) in self.design.iter().zip(&self.observations) {
            let mut rec: Vec<String> = x.coords().iter().map(|c| format!("{c}")).collect();
            rec.push(format!("{y}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reloads a saved model, refactorizing the correlation matrix from the
    /// stored estimates. Predictions reproduce the original ones up to
    /// refactorization round-off.
    pub fn load<P: AsRef<Path>, Q: AsRef<Path>>(
        manifest_path: P,
        data_path: Q,
    ) -> Result<Self, GpError> {
        let manifest: GpManifest = serde_json::from_reader(std::fs::File::open(manifest_path)?)?;
        let mut design = Vec::new();
        let mut observations = Vec::new();
        let mut r = csv::Reader::from_reader(std::fs::File::open(data_path)?);
        let width = r.headers()?.len();
        if width < 2 {
            return Err(GpError::BadData("data CSV needs x columns and y".into()));
        }
        for record in r.records() {
            let record = record?;
            let coords = record
                .iter()
                .take(width - 1)
                .map(parse_field)
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| GpError::BadData(e.to_string()))?;
            let y = parse_field(record.get(width - 1).unwrap())
                .map_err(|e| GpError::BadData(e.to_string()))?;
            design.push(InputPoint::new(coords)?);
            observations.push(y);
        }
        Self::from_manifest(manifest, design, observations)
    }

    fn from_manifest(
        manifest: GpManifest,
        design: Vec<InputPoint>,
        observations: Vec<f64>,
    ) -> Result<Self, GpError> {
        let n = design.len();
        if n == 0 || n != observations.len() {
            return Err(GpError::BadData(format!(
                "data has {n} design rows and {} observations",
                observations.len()
            )));
        }
        let d = design[0].dim();
        if manifest.theta.len() != d || manifest.normalization.len() != d {
            return Err(GpError::BadData(
                "manifest dimensions disagree with data".into(),
            ));
        }
        let x_norm: Vec<Vec<f64>> = design
            .iter()
            .map(|x| normalize(x.coords(), &manifest.normalization))
            .collect();
        let base = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 + manifest.nugget
            } else {
                manifest.kernel.corr(&x_norm[i], &x_norm[j], &manifest.theta)
            }
        });
        let chol_l = base
            .cholesky()
            .ok_or(GpError::IllConditioned {
                nugget_max: manifest.nugget,
            })?
            .unpack();
        let h = DMatrix::from_fn(n, d + 1, |r, c| if c == 0 { 1.0 } else { x_norm[r][c - 1] });
        let y = DVector::from_column_slice(&observations);
        let beta = DVector::from_column_slice(&manifest.beta);
        let resid = &y - h * &beta;
        let alpha = solve_spd(&chol_l, &resid);
        Ok(Self {
            kernel: manifest.kernel,
            design,
            x_norm,
            observations,
            normalization: manifest.normalization,
            beta: manifest.beta,
            sigma2: manifest.sigma2,
            theta: manifest.theta,
            nugget: manifest.nugget,
            nll: manifest.nll,
            chol_l,
            alpha,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GpManifest {
    kernel: Kernel,
    beta: Vec<f64>,
    sigma2: f64,
    theta: Vec<f64>,
    nugget: f64,
    nll: f64,
    normalization: Vec<(f64, f64)>,
}
