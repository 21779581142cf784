//! Stochastic simulators and adapters.
//!
//! A [`Simulator`] produces independent draws of a random output at any input
//! point of a finite per-dimension grid. Three implementations are provided:
//!
//! - [`ToySimulator`]: `G(x) = sin(x1+U1) + cos(x2+U2) + x3*U3` with
//!   `U1 ~ N(0,1)`, `U2 ~ Exp(1)`, `U3 ~ U([-0.5,0.5])`, on the grid
//!   `{0.1, 0.2, ..., 1.0}^3`. Cheap enough to enumerate exhaustively, rich
//!   enough to exercise the whole pipeline.
//! - [`ReplaySimulator`]: serves draws from a stored table, so studies can be
//!   reproduced, and proprietary simulators replayed, without any live
//!   process.
//! - [`external::ExternalSimulator`]: drives a child process over a
//!   line-delimited JSON protocol on stdin/stdout.
//!
//! Randomness is counter-based: every batch derives its stream from
//! `(master seed, input coordinates)` via [`stream_seed`] feeding a ChaCha12
//! generator, so the draws at a given input do not depend on evaluation
//! order or thread scheduling.

pub mod external;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use thiserror::Error;

use crate::empirical::SampleBatch;
use crate::gp::InputPoint;

pub use external::ExternalSimulator;

/// Errors raised by simulator implementations.
#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("input {0:?} is not on the simulator grid")]
    OutOfGrid(Vec<f64>),
    #[error("input {0:?} has dimension {1}, simulator expects {2}")]
    DimensionMismatch(Vec<f64>, usize, usize),
    #[error("replay table has no entry for input {0:?}")]
    UnknownInput(Vec<f64>),
    #[error("replay table exhausted for input {input:?}: {requested} draws requested, {remaining} left")]
    Exhausted {
        input: Vec<f64>,
        requested: usize,
        remaining: usize,
    },
    #[error("failed to spawn external simulator {cmd:?}: {source}")]
    Spawn {
        cmd: String,
        #[source]
        source: std::io::Error,
    },
    #[error("external simulator exited or closed its pipe; stderr tail:\n{diagnostics}")]
    ProcessGone { diagnostics: String },
    #[error("malformed external response ({detail}); line: {line:?}")]
    MalformedResponse { detail: String, line: String },
    #[error("external simulator timed out after {0:.1}s")]
    Timeout(f64),
    #[error("simulator produced a non-finite draw at input {0:?}")]
    NonFiniteDraw(Vec<f64>),
    #[error("simulator table: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulator table: {0}")]
    Csv(#[from] csv::Error),
    #[error("simulator table: {0}")]
    BadTable(String),
}

/// Per-dimension discrete input grids (the finite space E).
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpace {
    grids: Vec<Vec<f64>>,
}

impl InputSpace {
    /// Builds a space from per-dimension value lists, each strictly
    /// increasing and nonempty.
    pub fn new(grids: Vec<Vec<f64>>) -> Result<Self, SimulatorError> {
        for g in &grids {
            let ok = !g.is_empty()
                && g.iter().all(|v| v.is_finite())
                && g.windows(2).all(|w| w[1] > w[0]);
            if !ok {
                return Err(SimulatorError::OutOfGrid(g.clone()));
            }
        }
        Ok(Self { grids })
    }

    /// Equally spaced grid `{lo, lo+step, ...}` with `count` values per
    /// dimension. Values are rounded to nine decimals so they agree bit for
    /// bit with decimal literals like `0.3`.
    pub fn regular(dims: usize, lo: f64, step: f64, count: usize) -> Result<Self, SimulatorError> {
        let grid: Vec<f64> = (0..count)
            .map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9)
            .collect();
        Self::new(vec![grid; dims])
    }

    pub fn dim(&self) -> usize {
        self.grids.len()
    }

    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    /// Per-dimension `(min, max)`, the normalization ranges for kriging.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        self.grids
            .iter()
            .map(|g| (g[0], *g.last().unwrap()))
            .collect()
    }

    /// Total number of grid points (cartesian product size).
    pub fn size(&self) -> usize {
        self.grids.iter().map(Vec::len).product()
    }

    /// True iff every coordinate of `x` is within `tol` of a grid value.
    pub fn contains(&self, x: &InputPoint, tol: f64) -> bool {
        x.dim() == self.dim()
            && x.coords()
                .iter()
                .zip(&self.grids)
                .all(|(c, g)| g.iter().any(|v| (v - c).abs() <= tol))
    }

    /// The grid point at a flat cartesian index (row-major, last dimension
    /// fastest).
    pub fn point_at(&self, mut index: usize) -> InputPoint {
        let mut coords = vec![0.0; self.dim()];
        for (c, g) in coords.iter_mut().zip(&self.grids).rev() {
            *c = g[index % g.len()];
            index /= g.len();
        }
        InputPoint::new(coords).expect("grid coordinates are finite")
    }

    /// Every point of the space in flat-index order.
    pub fn enumerate(&self) -> Vec<InputPoint> {
        (0..self.size()).map(|i| self.point_at(i)).collect()
    }

    /// `n` distinct points sampled uniformly without replacement, skipping
    /// any point in `exclude`.
    pub fn sample_distinct(
        &self,
        n: usize,
        exclude: &[InputPoint],
        rng: &mut impl Rng,
    ) -> Vec<InputPoint> {
        let excluded: Vec<Vec<u64>> = exclude.iter().map(InputPoint::bit_key).collect();
        let keep: Vec<usize> = (0..self.size())
            .filter(|&i| !excluded.contains(&self.point_at(i).bit_key()))
            .collect();
        assert!(
            n <= keep.len(),
            "cannot sample {n} distinct points from {} available",
            keep.len()
        );
        let picks = rand::seq::index::sample(rng, keep.len(), n);
        picks.into_iter().map(|i| self.point_at(keep[i])).collect()
    }
}

fn fnv1a(chunks: impl IntoIterator<Item = u8>) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for byte in chunks {
        h = (h ^ byte as u64).wrapping_mul(PRIME);
    }
    h
}

/// Derives a stream seed from a master seed and input coordinates (FNV-1a
/// over the coordinate bit patterns). Identical inputs always map to
/// identical streams, so batches are reproducible regardless of the order in
/// which inputs get evaluated.
pub fn stream_seed(master: u64, coords: &[f64]) -> u64 {
    let bytes = master
        .to_le_bytes()
        .into_iter()
        .chain(coords.iter().flat_map(|c| c.to_bits().to_le_bytes()));
    fnv1a(bytes)
}

/// Derives a sub-seed for auxiliary purposes (design sampling, repetition
/// streams) from a master seed and a tag/index pair.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let bytes = master
        .to_le_bytes()
        .into_iter()
        .chain(tag.bytes())
        .chain(index.to_le_bytes());
    fnv1a(bytes)
}

/// A stochastic simulator over a finite input space.
///
/// Contract: `draw_batch(x, n, seed)` returns exactly `n` finite draws and is
/// a pure function of `(x, n, seed)` — the same arguments always produce the
/// same batch.
pub trait Simulator: Send + Sync {
    fn input_space(&self) -> &InputSpace;

    fn draw_batch(&self, x: &InputPoint, n: usize, seed: u64) -> Result<Vec<f64>, SimulatorError>;
}

/// The analytic toy simulator
/// `G(x) = sin(x1+U1) + cos(x2+U2) + x3*U3` on `{0.1,...,1.0}^3`.
#[derive(Debug)]
pub struct ToySimulator {
    space: InputSpace,
}

impl ToySimulator {
    const GRID_TOL: f64 = 1e-9;

    pub fn new() -> Self {
        let space = InputSpace::regular(3, 0.1, 0.1, 10).expect("static grid is valid");
        Self { space }
    }

    /// One draw of `G(x)` from an explicit stream.
    pub fn draw(&self, x: &InputPoint, rng: &mut ChaCha12Rng) -> Result<f64, SimulatorError> {
        self.check_input(x)?;
        Ok(self.draw_unchecked(x.coords(), rng))
    }

    fn check_input(&self, x: &InputPoint) -> Result<(), SimulatorError> {
        if x.dim() != self.space.dim() {
            return Err(SimulatorError::DimensionMismatch(
                x.coords().to_vec(),
                x.dim(),
                self.space.dim(),
            ));
        }
        if !self.space.contains(x, Self::GRID_TOL) {
            return Err(SimulatorError::OutOfGrid(x.coords().to_vec()));
        }
        Ok(())
    }

    fn draw_unchecked(&self, c: &[f64], rng: &mut ChaCha12Rng) -> f64 {
        let u1: f64 = StandardNormal.sample(rng);
        let u2: f64 = Exp1.sample(rng);
        let u3: f64 = rng.random::<f64>() - 0.5;
        (c[0] + u1).sin() + (c[1] + u2).cos() + c[2] * u3
    }
}

impl Default for ToySimulator {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator for ToySimulator {
    fn input_space(&self) -> &InputSpace {
        &self.space
    }

    fn draw_batch(&self, x: &InputPoint, n: usize, seed: u64) -> Result<Vec<f64>, SimulatorError> {
        self.check_input(x)?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let c = x.coords();
        Ok((0..n).map(|_| self.draw_unchecked(c, &mut rng)).collect())
    }
}

type TableKey = Vec<u64>;

/// Serves stored draws verbatim, in order, keyed by exact input coordinates.
///
/// The table format is the long CSV written by
/// [`crate::empirical::write_batches_csv`]: header `x1,...,xd,draw`, one row
/// per draw. Seeds passed to `draw_batch` are ignored; the "randomness" is
/// whatever was recorded.
#[derive(Debug)]
pub struct ReplaySimulator {
    space: InputSpace,
    table: BTreeMap<TableKey, Vec<f64>>,
    cursors: Mutex<BTreeMap<TableKey, usize>>,
}

impl ReplaySimulator {
    pub fn from_batches(batches: &[SampleBatch]) -> Result<Self, SimulatorError> {
        if batches.is_empty() {
            return Err(SimulatorError::UnknownInput(Vec::new()));
        }
        let dim = batches[0].input().dim();
        let mut table: BTreeMap<TableKey, Vec<f64>> = BTreeMap::new();
        let mut per_dim: Vec<Vec<f64>> = vec![Vec::new(); dim];
        for b in batches {
            if b.input().dim() != dim {
                return Err(SimulatorError::DimensionMismatch(
                    b.input().coords().to_vec(),
                    b.input().dim(),
                    dim,
                ));
            }
            table
                .entry(b.input().bit_key())
                .or_default()
                .extend_from_slice(b.draws());
            for (vals, &c) in per_dim.iter_mut().zip(b.input().coords()) {
                if !vals.contains(&c) {
                    vals.push(c);
                }
            }
        }
        for vals in &mut per_dim {
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        Ok(Self {
            space: InputSpace::new(per_dim)?,
            table,
            cursors: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self, SimulatorError> {
        let batches = crate::empirical::read_batches_csv(path)
            .map_err(|e| SimulatorError::BadTable(e.to_string()))?;
        Self::from_batches(&batches)
    }

    /// Rewinds every cursor, making all stored draws available again.
    pub fn reset(&self) {
        self.cursors.lock().unwrap().clear();
    }

    /// Inputs present in the table, in key order.
    pub fn inputs(&self) -> Vec<InputPoint> {
        self.table
            .keys()
            .map(|k| {
                InputPoint::new(k.iter().map(|b| f64::from_bits(*b)).collect())
                    .expect("stored coordinates are finite")
            })
            .collect()
    }

    pub fn remaining(&self, x: &InputPoint) -> usize {
        let key = x.bit_key();
        let stored = self.table.get(&key).map_or(0, Vec::len);
        let used = *self.cursors.lock().unwrap().get(&key).unwrap_or(&0);
        stored - used
    }
}

impl Simulator for ReplaySimulator {
    fn input_space(&self) -> &InputSpace {
        &self.space
    }

    fn draw_batch(&self, x: &InputPoint, n: usize, _seed: u64) -> Result<Vec<f64>, SimulatorError> {
        let key = x.bit_key();
        let draws = self
            .table
            .get(&key)
            .ok_or_else(|| SimulatorError::UnknownInput(x.coords().to_vec()))?;
        let mut cursors = self.cursors.lock().unwrap();
        let cursor = cursors.entry(key).or_insert(0);
        let remaining = draws.len() - *cursor;
        if n > remaining {
            return Err(SimulatorError::Exhausted {
                input: x.coords().to_vec(),
                requested: n,
                remaining,
            });
        }
        let out = draws[*cursor..*cursor + n].to_vec();
        *cursor += n;
        Ok(out)
    }
}
