//! Empirical quantile curves from raw simulator replications.
//!
//! A [`SampleBatch`] holds the Monte Carlo draws of one input. The curve
//! estimator is the left-continuous order-statistic rule: the value at level
//! `p` is the draw of rank `ceil(p * N)` in the sorted sample. Differences
//! between quantile-estimator conventions are O(1/N) and invisible at the
//! replication counts used here; the Monte Carlo error of the estimated
//! curve is neglected downstream.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::curves::{parse_field, CurveError, ProbGrid, QuantileCurve};
use crate::gp::InputPoint;
use crate::simulators::{stream_seed, Simulator, SimulatorError};

#[derive(Debug, Error)]
pub enum EmpiricalError {
    #[error("sample batch needs at least one draw")]
    EmptySample,
    #[error("draw {0} is not finite")]
    NonFiniteDraw(usize),
    #[error("batch has {n} draws but the grid has {m} levels; need n >= m")]
    TooFewDraws { n: usize, m: usize },
    #[error("collect needs n_mc >= 1")]
    ZeroDrawsRequested,
    #[error("simulator failed at input {input:?}: {source}")]
    Simulator {
        input: Vec<f64>,
        #[source]
        source: SimulatorError,
    },
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("batch file: {0}")]
    Io(#[from] std::io::Error),
    #[error("batch file: {0}")]
    Csv(#[from] csv::Error),
    #[error("batch file has inconsistent row width at line {0}")]
    RaggedRow(usize),
}

/// The raw replications of one input: `draws[i]` is the i-th independent
/// observation of the simulator output at `input`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    input: InputPoint,
    draws: Vec<f64>,
}

impl SampleBatch {
    pub fn new(input: InputPoint, draws: Vec<f64>) -> Result<Self, EmpiricalError> {
        if draws.is_empty() {
            return Err(EmpiricalError::EmptySample);
        }
        if let Some(i) = draws.iter().position(|d| !d.is_finite()) {
            return Err(EmpiricalError::NonFiniteDraw(i));
        }
        Ok(Self { input, draws })
    }

    pub fn input(&self) -> &InputPoint {
        &self.input
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Estimates the quantile curve of a batch on `grid`: sorts the draws and
/// reads the order statistic of rank `ceil(p * N)` (1-based) at each level.
/// The result is nondecreasing by construction.
pub fn empirical_quantile_curve(
    batch: &SampleBatch,
    grid: &Arc<ProbGrid>,
) -> Result<QuantileCurve, EmpiricalError> {
    let n = batch.draws.len();
    if n < grid.len() {
        return Err(EmpiricalError::TooFewDraws { n, m: grid.len() });
    }
    let mut sorted = batch.draws.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("draws are finite"));
    let values = grid
        .levels()
        .iter()
        .map(|&p| {
            let rank = (p * n as f64).ceil() as usize;
            sorted[rank.clamp(1, n) - 1]
        })
        .collect();
    Ok(QuantileCurve::new(grid.clone(), values)?)
}

/// Runs the simulator `n_mc` times at `x` and returns the batch.
///
/// The draw stream is derived from `(master_seed, x)`, so the batch is a
/// pure function of those two values: any evaluation order, thread
/// interleaving, or repetition yields the same draws.
pub fn collect<S: Simulator + ?Sized>(
    sim: &S,
    x: &InputPoint,
    n_mc: usize,
    master_seed: u64,
) -> Result<SampleBatch, EmpiricalError> {
    if n_mc == 0 {
        return Err(EmpiricalError::ZeroDrawsRequested);
    }
    let seed = stream_seed(master_seed, x.coords());
    let draws = sim
        .draw_batch(x, n_mc, seed)
        .map_err(|source| EmpiricalError::Simulator {
            input: x.coords().to_vec(),
            source,
        })?;
    SampleBatch::new(x.clone(), draws)
}

/// Writes batches as long CSV `x1,...,xd,draw`, one row per draw, at full
/// round-trip precision. This is also the replay-simulator table format.
pub fn write_batches_csv<P: AsRef<Path>>(
    path: P,
    batches: &[SampleBatch],
) -> Result<(), EmpiricalError> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    let d = batches.first().map_or(0, |b| b.input().dim());
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("draw".to_string());
    w.write_record(&header)?;
    for b in batches {
        for draw in b.draws() {
            let mut record: Vec<String> = b.input().coords().iter().map(|c| format!("{c}")).collect();
            record.push(format!("{draw}"));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads batches back from the long CSV format, grouping consecutive rows
/// with identical coordinates.
pub fn read_batches_csv<P: AsRef<Path>>(path: P) -> Result<Vec<SampleBatch>, EmpiricalError> {
    let mut r = csv::Reader::from_reader(std::fs::File::open(path)?);
    let width = r.headers()?.len();
    if width < 2 {
        return Err(EmpiricalError::RaggedRow(1));
    }
    let d = width - 1;
    let mut batches: Vec<SampleBatch> = Vec::new();
    let mut current: Option<(InputPoint, Vec<f64>)> = None;
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(EmpiricalError::RaggedRow(line + 2));
        }
        let coords = record
            .iter()
            .take(d)
            .map(parse_field)
            .collect::<Result<Vec<f64>, _>>()?;
        let draw = parse_field(record.get(d).unwrap())?;
        let x = InputPoint::new(coords).map_err(|_| EmpiricalError::NonFiniteDraw(line + 2))?;
        match &mut current {
            Some((cx, draws)) if *cx == x => draws.push(draw),
            _ => {
                if let Some((cx, draws)) = current.take() {
                    batches.push(SampleBatch::new(cx, draws)?);
                }
                current = Some((x, vec![draw]));
            }
        }
    }
    if let Some((cx, draws)) = current.take() {
        batches.push(SampleBatch::new(cx, draws)?);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::ToySimulator;

    fn pt(c: &[f64]) -> InputPoint {
        InputPoint::new(c.to_vec()).unwrap()
    }

    fn grid(levels: &[f64]) -> Arc<ProbGrid> {
        Arc::new(ProbGrid::new(levels.to_vec()).unwrap())
    }

    #[test]
    fn order_statistic_ranks() {
        // sorted sample (1,2,3); ranks ceil(0.75)=1, ceil(1.5)=2, ceil(2.25)=3
        let b = SampleBatch::new(pt(&[0.0]), vec![3.0, 1.0, 2.0]).unwrap();
        let g = grid(&[0.25, 0.5, 0.75]);
        let c = empirical_quantile_curve(&b, &g).unwrap();
        assert_eq!(c.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_draws_give_constant_curve() {
        let b = SampleBatch::new(pt(&[0.0]), vec![4.25; 200]).unwrap();
        let g = Arc::new(ProbGrid::uniform_midpoint(101).unwrap());
        let c = empirical_quantile_curve(&b, &g).unwrap();
        assert!(c.values().iter().all(|&v| v == 4.25));
    }

    #[test]
    fn empty_and_undersized_samples_error() {
        assert!(matches!(
            SampleBatch::new(pt(&[0.0]), vec![]),
            Err(EmpiricalError::EmptySample)
        ));
        let b = SampleBatch::new(pt(&[0.0]), vec![1.0, 2.0]).unwrap();
        let g = grid(&[0.25, 0.5, 0.75]);
        assert!(matches!(
            empirical_quantile_curve(&b, &g),
            Err(EmpiricalError::TooFewDraws { n: 2, m: 3 })
        ));
    }

    #[test]
    fn median_of_standard_normal_sample() {
        // Binomial CI: the empirical median of 1e4 N(0,1) draws is within
        // +-0.04 of 0 with overwhelming probability.
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| rand_distr::StandardNormal.sample(&mut rng))
            .collect();
        let b = SampleBatch::new(pt(&[0.0]), draws).unwrap();
        let g = grid(&[0.25, 0.5, 0.75]);
        let c = empirical_quantile_curve(&b, &g).unwrap();
        assert!(c.values()[1].abs() < 0.04, "median {}", c.values()[1]);
    }

    #[test]
    fn normal_quantiles_converge_pointwise() {
        // At N = 1e5 the empirical 0.1/0.5/0.9 quantiles match the normal
        // closed forms within 0.02.
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| rand_distr::StandardNormal.sample(&mut rng))
            .collect();
        let b = SampleBatch::new(pt(&[0.0]), draws).unwrap();
        let g = grid(&[0.1, 0.5, 0.9]);
        let c = empirical_quantile_curve(&b, &g).unwrap();
        let z90 = 1.2815515655446004; // Phi^{-1}(0.9)
        for (got, want) in c.values().iter().zip([-z90, 0.0, z90]) {
            assert!((got - want).abs() < 0.02, "quantile {got} vs {want}");
        }
    }

    #[test]
    fn permutation_invariance() {
        let g = grid(&[0.2, 0.5, 0.8]);
        let draws = vec![0.3, -1.2, 4.0, 2.2, 0.0, 7.5, -3.3];
        let b1 = SampleBatch::new(pt(&[0.0]), draws.clone()).unwrap();
        let mut rev = draws;
        rev.reverse();
        let b2 = SampleBatch::new(pt(&[0.0]), rev).unwrap();
        assert_eq!(
            empirical_quantile_curve(&b1, &g).unwrap(),
            empirical_quantile_curve(&b2, &g).unwrap()
        );
    }

    #[test]
    fn curves_are_monotone() {
        let sim = ToySimulator::new();
        let g = Arc::new(ProbGrid::uniform_midpoint(101).unwrap());
        for seed in 0..5 {
            let b = collect(&sim, &pt(&[0.4, 0.6, 0.8]), 500, seed).unwrap();
            let c = empirical_quantile_curve(&b, &g).unwrap();
            assert!(c.is_monotone(0.0));
        }
    }

    #[test]
    fn collect_is_deterministic_and_validates() {
        let sim = ToySimulator::new();
        let x = pt(&[0.1, 0.1, 0.1]);
        let a = collect(&sim, &x, 64, 5).unwrap();
        let b = collect(&sim, &x, 64, 5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            collect(&sim, &x, 0, 5),
            Err(EmpiricalError::ZeroDrawsRequested)
        ));
        let bad = pt(&[0.15, 0.1, 0.1]);
        match collect(&sim, &bad, 8, 5) {
            Err(EmpiricalError::Simulator { input, .. }) => assert_eq!(input, bad.coords()),
            other => panic!("expected simulator error, got {other:?}"),
        }
    }

    #[test]
    fn collect_mean_matches_closed_form_at_origin_like_point() {
        // E[G(0.1,0.1,0.1)] = sin(0.1)e^{-1/2} + (cos 0.1 - sin 0.1)/2
        let sim = ToySimulator::new();
        let x = pt(&[0.1, 0.1, 0.1]);
        let b = collect(&sim, &x, 10_000, 31).unwrap();
        let mean = b.draws().iter().sum::<f64>() / b.len() as f64;
        let expect = 0.1f64.sin() * (-0.5f64).exp() + (0.1f64.cos() - 0.1f64.sin()) / 2.0;
        assert!((mean - expect).abs() < 0.05, "mean {mean} vs {expect}");
    }

    #[test]
    fn batches_csv_roundtrip() {
        let batches = vec![
            SampleBatch::new(pt(&[0.1, 0.2]), vec![1.5, -2.25, 1.0 / 3.0]).unwrap(),
            SampleBatch::new(pt(&[0.3, 0.4]), vec![0.125]).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batches.csv");
        write_batches_csv(&path, &batches).unwrap();
        let back = read_batches_csv(&path).unwrap();
        assert_eq!(batches, back);
    }
}
