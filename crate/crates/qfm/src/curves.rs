//! Probability grids, discretized quantile curves, and their L2 geometry.
//!
//! A quantile function is a nondecreasing map from (0,1) to the output
//! support. Everything downstream works with its discretization on a fixed
//! [`ProbGrid`]: the default is the uniform midpoint grid `p_i = (i-0.5)/m`,
//! which avoids the endpoints 0 and 1 (where quantile functions of unbounded
//! outputs diverge) and makes L2 quadrature a plain mean over grid values.
//!
//! Curves are only ever compared on identical grids; nothing here resamples
//! implicitly.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

/// Errors from grid and curve construction, evaluation, and persistence.
#[derive(Debug, Error)]
pub enum CurveError {
    #[error("probability grid needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("grid level {index} = {value} is outside the open interval (0,1)")]
    LevelOutOfRange { index: usize, value: f64 },
    #[error("grid levels must be strictly increasing (violation at index {0})")]
    LevelsNotIncreasing(usize),
    #[error("curve has {values} values but its grid has {levels} levels")]
    LengthMismatch { levels: usize, values: usize },
    #[error("curve value at index {0} is not finite")]
    NonFiniteValue(usize),
    #[error("curves live on different probability grids")]
    GridMismatch,
    #[error("probability {0} is outside the open interval (0,1)")]
    ProbOutOfRange(f64),
    #[error("curve file: {0}")]
    Csv(#[from] csv::Error),
    #[error("curve file: {0}")]
    Io(#[from] std::io::Error),
    #[error("curve file: bad numeric field {field:?}: {detail}")]
    BadField { field: String, detail: String },
}

/// An ordered set of probability levels in the open interval (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    levels: Vec<f64>,
}

impl ProbGrid {
    /// Builds a grid from explicit levels. Levels must be strictly
    /// increasing, inside (0,1) exclusive, and at least two.
    pub fn new(levels: Vec<f64>) -> Result<Self, CurveError> {
        if levels.len() < 2 {
            return Err(CurveError::TooFewLevels(levels.len()));
        }
        for (i, &p) in levels.iter().enumerate() {
            if !p.is_finite() || p <= 0.0 || p >= 1.0 {
                return Err(CurveError::LevelOutOfRange { index: i, value: p });
            }
            if i > 0 && p <= levels[i - 1] {
                return Err(CurveError::LevelsNotIncreasing(i));
            }
        }
        Ok(Self { levels })
    }

    /// The uniform midpoint grid `p_i = (i - 0.5)/m` for `i = 1..=m`.
    pub fn uniform_midpoint(m: usize) -> Result<Self, CurveError> {
        if m < 2 {
            return Err(CurveError::TooFewLevels(m));
        }
        let levels = (1..=m).map(|i| (i as f64 - 0.5) / m as f64).collect();
        Self::new(levels)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

/// A quantile function discretized on a [`ProbGrid`].
///
/// Values are in output units (e.g. a monetary unit for a net-present-value
/// simulator). Empirical curves are nondecreasing by construction; predicted
/// curves may dip, which callers detect with [`QuantileCurve::is_monotone`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve {
    grid: Arc<ProbGrid>,
    values: Vec<f64>,
}

impl QuantileCurve {
    /// Wraps values on a grid. Requires one finite value per grid level;
    /// monotonicity is deliberately not enforced here.
    pub fn new(grid: Arc<ProbGrid>, values: Vec<f64>) -> Result<Self, CurveError> {
        if values.len() != grid.len() {
            return Err(CurveError::LengthMismatch {
                levels: grid.len(),
                values: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CurveError::NonFiniteValue(i));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<ProbGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True iff `values[i+1] >= values[i] - tol` for all consecutive pairs.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0] - tol)
    }

    /// Minimum and maximum observed values, a diagnostic for the output
    /// support.
    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Evaluates the curve at probability `p` in (0,1): stored value at grid
    /// levels, linear interpolation between them, clamped to the end values
    /// beyond the grid's range.
    pub fn eval_at(&self, p: f64) -> Result<f64, CurveError> {
        if !p.is_finite() || p <= 0.0 || p >= 1.0 {
            return Err(CurveError::ProbOutOfRange(p));
        }
        let levels = self.grid.levels();
        let idx = levels.partition_point(|&l| l < p);
        if idx == 0 {
            return Ok(self.values[0]);
        }
        if idx == levels.len() {
            return Ok(self.values[levels.len() - 1]);
        }
        if levels[idx] == p {
            return Ok(self.values[idx]);
        }
        let (p0, p1) = (levels[idx - 1], levels[idx]);
        let (v0, v1) = (self.values[idx - 1], self.values[idx]);
        Ok(v0 + (v1 - v0) * (p - p0) / (p1 - p0))
    }

    fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    /// L2(0,1) inner product approximated on the grid with weight `1/m`.
    pub fn inner(&self, other: &Self) -> Result<f64, CurveError> {
        if !self.same_grid(other) {
            return Err(CurveError::GridMismatch);
        }
        let m = self.values.len() as f64;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(s / m)
    }

    /// L2(0,1) norm approximated on the grid.
    pub fn l2_norm(&self) -> f64 {
        let m = self.values.len() as f64;
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (s / m).sqrt()
    }

    /// Grid-quadrature approximation of the L2(0,1) distance between two
    /// curves sharing a grid.
    pub fn l2_distance(&self, other: &Self) -> Result<f64, CurveError> {
        if !self.same_grid(other) {
            return Err(CurveError::GridMismatch);
        }
        let m = self.values.len() as f64;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((s / m).sqrt())
    }

    /// Writes the curve as CSV with header `p,value`, one row per grid level,
    /// at full round-trip precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CurveError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["p", "value"])?;
        for (p, v) in self.grid.levels().iter().zip(&self.values) {
            w.write_record([format!("{p}"), format!("{v}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), CurveError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    /// Reads a curve from `p,value` CSV, rebuilding the grid from the file.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, CurveError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut levels = Vec::new();
        let mut values = Vec::new();
        for record in r.records() {
            let record = record?;
            levels.push(parse_field(record.get(0).unwrap_or(""))?);
            values.push(parse_field(record.get(1).unwrap_or(""))?);
        }
        let grid = Arc::new(ProbGrid::new(levels)?);
        Self::new(grid, values)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self, CurveError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }
}

impl fmt::Display for QuantileCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.value_range();
        write!(f, "curve[m={}, range {lo:.4}..{hi:.4}]", self.len())
    }
}

pub(crate) fn parse_field(s: &str) -> Result<f64, CurveError> {
    s.trim().parse::<f64>().map_err(|e| CurveError::BadField {
        field: s.to_string(),
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(levels: &[f64]) -> Arc<ProbGrid> {
        Arc::new(ProbGrid::new(levels.to_vec()).unwrap())
    }

    fn curve(g: &Arc<ProbGrid>, values: &[f64]) -> QuantileCurve {
        QuantileCurve::new(g.clone(), values.to_vec()).unwrap()
    }

    #[test]
    fn midpoint_grid_levels() {
        let g = ProbGrid::uniform_midpoint(4).unwrap();
        assert_eq!(g.levels(), &[0.125, 0.375, 0.625, 0.875]);
        assert!(ProbGrid::uniform_midpoint(1).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(
            ProbGrid::new(vec![0.5]),
            Err(CurveError::TooFewLevels(1))
        ));
        assert!(matches!(
            ProbGrid::new(vec![0.0, 0.5]),
            Err(CurveError::LevelOutOfRange { .. })
        ));
        assert!(matches!(
            ProbGrid::new(vec![0.2, 0.2]),
            Err(CurveError::LevelsNotIncreasing(1))
        ));
        assert!(matches!(
            ProbGrid::new(vec![0.2, 1.0]),
            Err(CurveError::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn l2_distance_identity_is_zero() {
        let g = Arc::new(ProbGrid::uniform_midpoint(7).unwrap());
        let f = curve(&g, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(f.l2_distance(&f).unwrap(), 0.0);
    }

    #[test]
    fn l2_distance_constant_offset() {
        // f = 0, g = 1 on a uniform midpoint grid: distance is exactly 1.
        for m in [2, 11, 101] {
            let g = Arc::new(ProbGrid::uniform_midpoint(m).unwrap());
            let zero = curve(&g, &vec![0.0; m]);
            let one = curve(&g, &vec![1.0; m]);
            assert!((zero.l2_distance(&one).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_distance_linear_curve_matches_integral() {
        // f(p) = p, g = 0 on the midpoint grid, m = 101: the quadrature
        // approximates sqrt(int_0^1 p^2 dp) = sqrt(1/3).
        let m = 101;
        let g = Arc::new(ProbGrid::uniform_midpoint(m).unwrap());
        let f = QuantileCurve::new(g.clone(), g.levels().to_vec()).unwrap();
        let zero = curve(&g, &vec![0.0; m]);
        let d = f.l2_distance(&zero).unwrap();
        assert!(
            (d - (1.0f64 / 3.0).sqrt()).abs() < 1e-3,
            "got {d}, want ~{}",
            (1.0f64 / 3.0).sqrt()
        );
    }

    #[test]
    fn l2_distance_grid_mismatch() {
        let g1 = Arc::new(ProbGrid::uniform_midpoint(5).unwrap());
        let g2 = Arc::new(ProbGrid::uniform_midpoint(6).unwrap());
        let f = curve(&g1, &[0.0; 5]);
        let h = curve(&g2, &[0.0; 6]);
        assert!(matches!(f.l2_distance(&h), Err(CurveError::GridMismatch)));
    }

    #[test]
    fn equal_grids_by_value_are_accepted() {
        let g1 = grid(&[0.25, 0.5, 0.75]);
        let g2 = grid(&[0.25, 0.5, 0.75]);
        let f = curve(&g1, &[1.0, 2.0, 3.0]);
        let h = curve(&g2, &[1.0, 2.0, 3.0]);
        assert_eq!(f.l2_distance(&h).unwrap(), 0.0);
    }

    #[test]
    fn monotone_checks() {
        let g = grid(&[0.25, 0.5, 0.75]);
        assert!(curve(&g, &[2.0, 2.0, 2.0]).is_monotone(0.0));
        let dip = curve(&g, &[0.0, 1.0, 0.5]);
        assert!(!dip.is_monotone(0.0));
        assert!(dip.is_monotone(0.6));
    }

    #[test]
    fn eval_at_levels_between_and_beyond() {
        let g = grid(&[0.25, 0.5, 0.75]);
        let f = curve(&g, &[1.0, 2.0, 3.0]);
        assert_eq!(f.eval_at(0.5).unwrap(), 2.0);
        assert_eq!(f.eval_at(0.375).unwrap(), 1.5);
        assert_eq!(f.eval_at(0.9).unwrap(), 3.0);
        assert_eq!(f.eval_at(0.1).unwrap(), 1.0);
        assert!(matches!(f.eval_at(0.0), Err(CurveError::ProbOutOfRange(_))));
        assert!(matches!(f.eval_at(1.0), Err(CurveError::ProbOutOfRange(_))));
        assert!(matches!(
            f.eval_at(f64::NAN),
            Err(CurveError::ProbOutOfRange(_))
        ));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let g = Arc::new(ProbGrid::uniform_midpoint(11).unwrap());
        let values: Vec<f64> = (0..11).map(|i| (i as f64).sin() * 1e-3 + 0.1).collect();
        let f = QuantileCurve::new(g, values).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = QuantileCurve::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn curve_construction_errors() {
        let g = grid(&[0.25, 0.5, 0.75]);
        assert!(matches!(
            QuantileCurve::new(g.clone(), vec![1.0, 2.0]),
            Err(CurveError::LengthMismatch { .. })
        ));
        assert!(matches!(
            QuantileCurve::new(g, vec![1.0, f64::NAN, 2.0]),
            Err(CurveError::NonFiniteValue(1))
        ));
    }
}
