//! The quantile-function metamodel: one Gaussian process per projection
//! coefficient, assembled back into predicted curves and per-level Gaussian
//! laws.
//!
//! Fitting chains the pipeline: select a basis from the learning curves,
//! project every curve, then fit `k` independent GPs on the coefficient
//! columns. Prediction at a new input combines the kriging means,
//! `sum_j psihat_j(x) R_j`, and the per-level law of the projected quantile
//! is Gaussian with variance `sum_j R_j(p)^2 MSE_j(x)` by independence of
//! the coefficient processes.
//!
//! An optional log-shift transform (`log(psi_j + 1)` before fitting,
//! `exp - 1` after prediction) keeps predicted coefficients nonnegative,
//! which is sufficient for monotone reconstructions. It also destroys the
//! Gaussianity of the assembled law, so it is off by default and rejected by
//! [`QuantileMetamodel::predict_law`]; monotonicity is instead verified
//! after the fact and reported.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{CurveError, ProbGrid, QuantileCurve};
use crate::gp::{GpConfig, GpError, GpModel, InputPoint};
use crate::mmp::{self, Basis, CoeffVector, MmpError};

#[derive(Debug, Error)]
pub enum QmetaError {
    #[error("designs and curves have different lengths ({designs} vs {curves})")]
    LengthMismatch { designs: usize, curves: usize },
    #[error(
        "log-shift transform needs nonnegative coefficients; input {input} has \
         psi_{coeff} = {value}"
    )]
    TransformDomain {
        input: usize,
        coeff: usize,
        value: f64,
    },
    #[error("per-level Gaussian laws are only defined for the identity transform")]
    TransformUnsupported,
    #[error("probability {0} is outside the open interval (0,1)")]
    ProbOutOfRange(f64),
    #[error("truth table is empty")]
    EmptyTruth,
    #[error("truth curve {index} has zero norm; relative errors are undefined")]
    ZeroNormCurve { index: usize },
    #[error("objective values are constant over the truth set; range normalization is undefined")]
    DegenerateObjective,
    #[error(transparent)]
    Mmp(#[from] MmpError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("bundle: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bundle: {0}")]
    Csv(#[from] csv::Error),
    #[error("bundle: {0}")]
    BadBundle(String),
}

/// Coefficient-space transform applied before GP fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    #[default]
    Identity,
    LogShift,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::LogShift => "log-shift",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Transform::Identity),
            "log-shift" | "logshift" | "log" => Some(Transform::LogShift),
            _ => None,
        }
    }
}

/// The Gaussian law of the projected quantile at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileLaw {
    pub mean: f64,
    pub variance: f64,
    pub level: f64,
}

/// Metamodel fit configuration.
#[derive(Debug, Clone)]
pub struct QmetaConfig {
    pub k: usize,
    pub transform: Transform,
    pub gp: GpConfig,
}

/// Diagnostics accumulated while fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetamodelFitReport {
    /// Mean relative L2 projection error over the learning curves.
    pub projection_error_learning: f64,
    /// Learning inputs whose coefficients leave the nonnegative set.
    pub negative_coeff_inputs: Vec<usize>,
    /// Learning inputs whose projected curve is not monotone (tolerance 0).
    pub nonmonotone_projections: Vec<usize>,
    /// Per-coefficient GP summaries.
    pub gp_theta: Vec<Vec<f64>>,
    pub gp_sigma2: Vec<f64>,
    pub gp_nugget: Vec<f64>,
    pub gp_nll: Vec<f64>,
}

/// The fitted quantile-function metamodel.
#[derive(Debug, Clone)]
pub struct QuantileMetamodel {
    grid: Arc<ProbGrid>,
    basis: Basis,
    coeff_models: Vec<GpModel>,
    transform: Transform,
    design: Vec<InputPoint>,
    learning_curves: Vec<QuantileCurve>,
    coeffs: Vec<CoeffVector>,
    fit_report: MetamodelFitReport,
}

/// Fits the full pipeline on a learning sample: basis selection, projection,
/// one GP per coefficient (fitted in parallel).
pub fn fit_metamodel(
    designs: &[InputPoint],
    curves: &[QuantileCurve],
    config: &QmetaConfig,
) -> Result<QuantileMetamodel, QmetaError> {
    if designs.len() != curves.len() {
        return Err(QmetaError::LengthMismatch {
            designs: designs.len(),
            curves: curves.len(),
        });
    }
    let basis = mmp::select_basis(curves, config.k)?;
    let coeffs: Vec<CoeffVector> = curves
        .iter()
        .map(|c| mmp::project(c, &basis))
        .collect::<Result<_, _>>()?;

    if config.transform == Transform::LogShift {
        for (i, cv) in coeffs.iter().enumerate() {
            if let Some((j, &v)) = cv.psi().iter().enumerate().find(|(_, &v)| v < 0.0) {
                return Err(QmetaError::TransformDomain {
                    input: i,
                    coeff: j,
                    value: v,
                });
            }
        }
    }

    let targets: Vec<Vec<f64>> = (0..config.k)
        .map(|j| {
            coeffs
                .iter()
                .map(|cv| match config.transform {
                    Transform::Identity => cv.psi()[j],
                    Transform::LogShift => (cv.psi()[j] + 1.0).ln(),
                })
                .collect()
        })
        .collect();

    let coeff_models: Vec<GpModel> = targets
        .par_iter()
        .map(|column| GpModel::fit(designs, column, &config.gp))
        .collect::<Result<_, GpError>>()?;

    let negative_coeff_inputs: Vec<usize> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, cv)| !cv.nonnegative(0.0))
        .map(|(i, _)| i)
        .collect();
    let nonmonotone_projections: Vec<usize> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, cv)| !cv.reconstruct(&basis).is_monotone(0.0))
        .map(|(i, _)| i)
        .collect();
    if !negative_coeff_inputs.is_empty() {
        log::debug!(
            "{} of {} learning projections leave the nonnegative coefficient set",
            negative_coeff_inputs.len(),
            coeffs.len()
        );
    }
    if !nonmonotone_projections.is_empty() {
        log::warn!(
            "{} of {} projected learning curves are not monotone",
            nonmonotone_projections.len(),
            coeffs.len()
        );
    }

    let fit_report = MetamodelFitReport {
        projection_error_learning: mmp::projection_error(curves, &basis)?,
        negative_coeff_inputs,
        nonmonotone_projections,
        gp_theta: coeff_models.iter().map(|g| g.theta().to_vec()).collect(),
        gp_sigma2: coeff_models.iter().map(GpModel::sigma2).collect(),
        gp_nugget: coeff_models.iter().map(GpModel::nugget).collect(),
        gp_nll: coeff_models.iter().map(GpModel::nll).collect(),
    };

    Ok(QuantileMetamodel {
        grid: curves[0].grid().clone(),
        basis,
        coeff_models,
        transform: config.transform,
        design: designs.to_vec(),
        learning_curves: curves.to_vec(),
        coeffs,
        fit_report,
    })
}

impl QuantileMetamodel {
    /// Kriging means of the (transformed-back) coefficients at `x`.
    fn predict_coeffs(&self, x: &InputPoint) -> Result<Vec<f64>, QmetaError> {
        self.coeff_models
            .iter()
            .map(|g| {
                let mean = g.predict(x)?.mean;
                Ok(match self.transform {
                    Transform::Identity => mean,
                    Transform::LogShift => mean.exp() - 1.0,
                })
            })
            .collect()
    }

    /// The predicted curve `sum_j psihat_j(x) R_j`. Non-monotone
    /// predictions are reported through a warning, not an error.
    pub fn predict_curve(&self, x: &InputPoint) -> Result<QuantileCurve, QmetaError> {
        let psi_hat = self.predict_coeffs(x)?;
        let curve = CoeffVector::new(psi_hat).reconstruct(&self.basis);
        if !curve.is_monotone(0.0) {
            log::warn!("predicted curve at {x} is not monotone");
        }
        Ok(curve)
    }

    /// The Gaussian law of the projected quantile at level `p`:
    /// mean `sum_j psihat_j(x) R_j(p)`, variance
    /// `sum_j R_j(p)^2 MSE_j(x)`. Identity transform only.
    pub fn predict_law(&self, x: &InputPoint, p: f64) -> Result<QuantileLaw, QmetaError> {
        if self.transform != Transform::Identity {
            return Err(QmetaError::TransformUnsupported);
        }
        if !p.is_finite() || p <= 0.0 || p >= 1.0 {
            return Err(QmetaError::ProbOutOfRange(p));
        }
        let r_at_p = self.basis.eval_at(p)?;
        let mut mean = 0.0;
        let mut variance = 0.0;
        for (g, r) in self.coeff_models.iter().zip(&r_at_p) {
            let pred = g.predict(x)?;
            mean += pred.mean * r;
            variance += r * r * pred.variance;
        }
        Ok(QuantileLaw { mean, variance, level: p })
    }

    pub fn grid(&self) -> &Arc<ProbGrid> {
        &self.grid
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn coeff_models(&self) -> &[GpModel] {
        &self.coeff_models
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    pub fn design(&self) -> &[InputPoint] {
        &self.design
    }

    pub fn learning_curves(&self) -> &[QuantileCurve] {
        &self.learning_curves
    }

    /// Projection coefficients of the learning curves (untransformed).
    pub fn coeffs(&self) -> &[CoeffVector] {
        &self.coeffs
    }

    pub fn fit_report(&self) -> &MetamodelFitReport {
        &self.fit_report
    }

    /// Writes the bundle directory: top-level manifest, basis CSVs,
    /// per-coefficient GP manifests, and the learning curves.
    pub fn save_bundle<P: AsRef<Path>>(&self, dir: P) -> Result<(), QmetaError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let manifest = BundleManifest {
            k: self.k(),
            m: self.grid.len(),
            levels: self.grid.levels().to_vec(),
            transform: self.transform,
            input_ranges: self.coeff_models[0].normalization().to_vec(),
        };
        serde_json::to_writer_pretty(
            std::fs::File::create(dir.join("metamodel.json"))?,
            &manifest,
        )?;
        self.basis.save_dir(dir)?;
        for (j, g) in self.coeff_models.iter().enumerate() {
            g.save(
                dir.join(format!("gp_{:03}.json", j + 1)),
                dir.join(format!("gp_{:03}_data.csv", j + 1)),
            )?;
        }
        write_learning_curves(dir.join("learning_curves.csv"), &self.design, &self.learning_curves)?;
        serde_json::to_writer_pretty(
            std::fs::File::create(dir.join("fit_report.json"))?,
            &self.fit_report,
        )?;
        Ok(())
    }

    /// Reloads a bundle. Predictions reproduce the saved model's up to
    /// refactorization round-off.
    pub fn load_bundle<P: AsRef<Path>>(dir: P) -> Result<Self, QmetaError> {
        let dir = dir.as_ref();
        let manifest: BundleManifest =
            serde_json::from_reader(std::fs::File::open(dir.join("metamodel.json"))?)?;
        let basis = Basis::load_dir(dir)?;
        if basis.k() != manifest.k {
            return Err(QmetaError::BadBundle(format!(
                "manifest k = {} but basis has {} functions",
                manifest.k,
                basis.k()
            )));
        }
        let mut coeff_models = Vec::with_capacity(manifest.k);
        for j in 1..=manifest.k {
            coeff_models.push(GpModel::load(
                dir.join(format!("gp_{j:03}.json")),
                dir.join(format!("gp_{j:03}_data.csv")),
            )?);
        }
        let (design, learning_curves) =
            read_learning_curves(dir.join("learning_curves.csv"), basis.grid())?;
        let coeffs: Vec<CoeffVector> = learning_curves
            .iter()
            .map(|c| mmp::project(c, &basis))
            .collect::<Result<_, _>>()?;
        let fit_report: MetamodelFitReport =
            serde_json::from_reader(std::fs::File::open(dir.join("fit_report.json"))?)?;
        Ok(Self {
            grid: basis.grid().clone(),
            basis,
            coeff_models,
            transform: manifest.transform,
            design,
            learning_curves,
            coeffs,
            fit_report,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    k: usize,
    m: usize,
    levels: Vec<f64>,
    transform: Transform,
    input_ranges: Vec<(f64, f64)>,
}

fn write_learning_curves(
    path: std::path::PathBuf,
    design: &[InputPoint],
    curves: &[QuantileCurve],
) -> Result<(), QmetaError> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    let d = design[0].dim();
    let m = curves[0].len();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend((1..=m).map(|i| format!("q{i:03}")));
    w.write_record(&header)?;
    for (x, c) in design.iter().zip(curves) {
        let mut rec: Vec<String> = x.coords().iter().map(|v| format!("{v}")).collect();
        rec.extend(c.values().iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_learning_curves(
    path: std::path::PathBuf,
    grid: &Arc<ProbGrid>,
) -> Result<(Vec<InputPoint>, Vec<QuantileCurve>), QmetaError> {
    let mut r = csv::Reader::from_reader(std::fs::File::open(path)?);
    let m = grid.len();
    let width = r.headers()?.len();
    if width <= m {
        return Err(QmetaError::BadBundle(format!(
            "learning_curves.csv has {width} columns for grid size {m}"
        )));
    }
    let d = width - m;
    let mut design = Vec::new();
    let mut curves = Vec::new();
    for record in r.records() {
        let record = record?;
        let fields: Vec<f64> = record
            .iter()
            .map(crate::curves::parse_field)
            .collect::<Result<_, _>>()?;
        design.push(
            InputPoint::new(fields[..d].to_vec()).map_err(|e| QmetaError::BadBundle(e.to_string()))?,
        );
        curves.push(QuantileCurve::new(grid.clone(), fields[d..].to_vec())?);
    }
    Ok((design, curves))
}

/// Mean relative L2 prediction error over a truth set (the global metamodel
/// error).
pub fn global_error(
    meta: &QuantileMetamodel,
    truth: &[(InputPoint, QuantileCurve)],
) -> Result<f64, QmetaError> {
    if truth.is_empty() {
        return Err(QmetaError::EmptyTruth);
    }
    let mut total = 0.0;
    for (i, (x, q)) in truth.iter().enumerate() {
        let norm = q.l2_norm();
        if norm == 0.0 {
            return Err(QmetaError::ZeroNormCurve { index: i });
        }
        let pred = meta.predict_curve(x)?;
        total += q.l2_distance(&pred)? / norm;
    }
    Ok(total / truth.len() as f64)
}

/// Mean absolute error of the `p`-quantile over a truth set, normalized by
/// the range of the true values.
pub fn objective_error(
    meta: &QuantileMetamodel,
    truth: &[(InputPoint, QuantileCurve)],
    p: f64,
) -> Result<f64, QmetaError> {
    if truth.is_empty() {
        return Err(QmetaError::EmptyTruth);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut total = 0.0;
    for (x, q) in truth {
        let truth_q = q.eval_at(p)?;
        let pred_q = meta.predict_curve(x)?.eval_at(p)?;
        lo = lo.min(truth_q);
        hi = hi.max(truth_q);
        total += (truth_q - pred_q).abs();
    }
    let range = hi - lo;
    if range <= 0.0 {
        return Err(QmetaError::DegenerateObjective);
    }
    Ok(total / truth.len() as f64 / range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::{collect, empirical_quantile_curve};
    use crate::simulators::{Simulator, ToySimulator};

    fn pt(c: &[f64]) -> InputPoint {
        InputPoint::new(c.to_vec()).unwrap()
    }

    fn toy_sample(
        n_inputs: usize,
        n_mc: usize,
        m: usize,
        seed: u64,
    ) -> (Vec<InputPoint>, Vec<QuantileCurve>, Arc<ProbGrid>) {
        use rand::SeedableRng;
        let sim = ToySimulator::new();
        let grid = Arc::new(ProbGrid::uniform_midpoint(m).unwrap());
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let design = sim.input_space().sample_distinct(n_inputs, &[], &mut rng);
        let curves = design
            .iter()
            .map(|x| {
                let b = collect(&sim, x, n_mc, seed).unwrap();
                empirical_quantile_curve(&b, &grid).unwrap()
            })
            .collect();
        (design, curves, grid)
    }

    fn toy_config(k: usize) -> QmetaConfig {
        QmetaConfig {
            k,
            transform: Transform::Identity,
            gp: GpConfig {
                normalization: Some(vec![(0.1, 1.0); 3]),
                n_starts: 4,
                max_evals_per_start: 80,
                ..GpConfig::default()
            },
        }
    }

    #[test]
    fn constant_field_reproduces_the_common_curve() {
        let grid = Arc::new(ProbGrid::uniform_midpoint(21).unwrap());
        let values: Vec<f64> = (0..21).map(|i| i as f64 * 0.1 - 1.0).collect();
        let common = QuantileCurve::new(grid.clone(), values).unwrap();
        let design: Vec<InputPoint> = (0..8).map(|i| pt(&[i as f64 / 7.0, 0.3])).collect();
        let curves = vec![common.clone(); 8];
        let config = QmetaConfig {
            k: 1,
            transform: Transform::Identity,
            gp: GpConfig::default(),
        };
        let meta = fit_metamodel(&design, &curves, &config).unwrap();
        for x in [pt(&[0.11, 0.3]), pt(&[0.5, 0.3]), pt(&[0.93, 0.3])] {
            let c = meta.predict_curve(&x).unwrap();
            let gap = c.l2_distance(&common).unwrap();
            assert!(gap < 1e-8, "constant field gap {gap}");
            let law = meta.predict_law(&x, 0.5).unwrap();
            assert!(law.variance < 1e-12, "variance {}", law.variance);
        }
    }

    #[test]
    fn interpolates_learning_inputs() {
        let (design, curves, _) = toy_sample(40, 400, 41, 11);
        let meta = fit_metamodel(&design, &curves, &toy_config(3)).unwrap();
        // kriging interpolates the coefficients, so the predicted curve at a
        // learning input matches the projected curve there
        for i in [0, 17, 39] {
            let projected = meta.coeffs()[i].reconstruct(meta.basis());
            let predicted = meta.predict_curve(&design[i]).unwrap();
            let rel = projected.l2_distance(&predicted).unwrap() / projected.l2_norm();
            assert!(rel < 1e-4, "relative gap {rel} at learning input {i}");
        }
    }

    #[test]
    fn law_composes_the_gp_predictions() {
        let (design, curves, _) = toy_sample(30, 300, 31, 23);
        let meta = fit_metamodel(&design, &curves, &toy_config(3)).unwrap();
        let x = pt(&[0.35, 0.85, 0.15]);
        for p in [0.2, 0.5, 0.77] {
            let law = meta.predict_law(&x, p).unwrap();
            let r = meta.basis().eval_at(p).unwrap();
            let mut mean = 0.0;
            let mut var = 0.0;
            for (g, rj) in meta.coeff_models().iter().zip(&r) {
                let pred = g.predict(&x).unwrap();
                mean += rj * pred.mean;
                var += rj * rj * pred.variance;
            }
            assert!((law.mean - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
            assert!((law.variance - var).abs() <= 1e-12 * (1.0 + var.abs()));
        }
    }

    #[test]
    fn law_mean_matches_curve_at_grid_levels() {
        let (design, curves, grid) = toy_sample(30, 300, 31, 37);
        let meta = fit_metamodel(&design, &curves, &toy_config(3)).unwrap();
        let x = pt(&[0.62, 0.41, 0.98]);
        let curve = meta.predict_curve(&x).unwrap();
        for (i, &p) in grid.levels().iter().enumerate().step_by(7) {
            let law = meta.predict_law(&x, p).unwrap();
            assert!(
                (law.mean - curve.values()[i]).abs() < 1e-10,
                "law mean {} vs curve value {}",
                law.mean,
                curve.values()[i]
            );
        }
    }

    #[test]
    fn log_shift_rejects_negative_coefficients() {
        // two orthogonal ramps force a negative second coefficient for a
        // curve that dips below the span
        let grid = Arc::new(ProbGrid::uniform_midpoint(10).unwrap());
        let up: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut curves = Vec::new();
        let mut design = Vec::new();
        for i in 0..8 {
            let scale = 1.0 + 0.1 * i as f64;
            let mut v: Vec<f64> = up.iter().map(|u| u * scale).collect();
            if i % 2 == 1 {
                // subtract a chunk of the second pattern
                for (j, val) in v.iter_mut().enumerate() {
                    *val -= 0.3 * (j as f64).powi(2) / 10.0;
                }
            }
            curves.push(QuantileCurve::new(grid.clone(), v).unwrap());
            design.push(pt(&[i as f64 / 7.0, (i % 3) as f64 / 2.0]));
        }
        let config = QmetaConfig {
            k: 2,
            transform: Transform::LogShift,
            gp: GpConfig::default(),
        };
        match fit_metamodel(&design, &curves, &config) {
            Err(QmetaError::TransformDomain { value, .. }) => assert!(value < 0.0),
            Ok(meta) => {
                // if this synthetic set happens to project nonnegative,
                // the law must still be refused under the transform
                assert!(matches!(
                    meta.predict_law(&design[0], 0.5),
                    Err(QmetaError::TransformUnsupported)
                ));
            }
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn scaling_learning_curves_scales_predictions() {
        let (design, curves, grid) = toy_sample(30, 300, 31, 53);
        let meta1 = fit_metamodel(&design, &curves, &toy_config(3)).unwrap();
        let scaled: Vec<QuantileCurve> = curves
            .iter()
            .map(|c| {
                QuantileCurve::new(grid.clone(), c.values().iter().map(|v| 2.5 * v).collect())
                    .unwrap()
            })
            .collect();
        let meta2 = fit_metamodel(&design, &scaled, &toy_config(3)).unwrap();
        let x = pt(&[0.55, 0.25, 0.65]);
        let c1 = meta1.predict_curve(&x).unwrap();
        let c2 = meta2.predict_curve(&x).unwrap();
        for (a, b) in c1.values().iter().zip(c2.values()) {
            assert!(
                (2.5 * a - b).abs() <= 1e-6 * (1.0 + b.abs()),
                "scaling equivariance: {a} vs {b}"
            );
        }
    }

    #[test]
    fn global_error_zero_on_projected_truth() {
        let (design, curves, _) = toy_sample(30, 300, 31, 71);
        let meta = fit_metamodel(&design, &curves, &toy_config(3)).unwrap();
        // truth = learning inputs with curves replaced by their projections
        let truth: Vec<(InputPoint, QuantileCurve)> = design
            .iter()
            .take(10)
            .zip(meta.coeffs())
            .map(|(x, cv)| (x.clone(), cv.reconstruct(meta.basis())))
            .collect();
        let err = global_error(&meta, &truth).unwrap();
        assert!(err <= 1e-4, "projected-truth error {err}");
    }

    #[test]
    fn objective_error_hand_case_and_degenerate_range() {
        let (design, curves, _) = toy_sample(30, 300, 31, 89);
        let meta = fit_metamodel(&design, &curves, &toy_config(3)).unwrap();
        // perfect predictions: truth = predicted curves
        let truth: Vec<(InputPoint, QuantileCurve)> = design
            .iter()
            .take(6)
            .map(|x| (x.clone(), meta.predict_curve(x).unwrap()))
            .collect();
        let err = objective_error(&meta, &truth, 0.5).unwrap();
        assert!(err < 1e-12, "perfect-prediction error {err}");

        let constant: Vec<(InputPoint, QuantileCurve)> = truth
            .iter()
            .map(|(x, _)| (x.clone(), truth[0].1.clone()))
            .collect();
        assert!(matches!(
            objective_error(&meta, &constant, 0.5),
            Err(QmetaError::DegenerateObjective)
        ));
    }

    #[test]
    fn bundle_roundtrip_reproduces_predictions() {
        let (design, curves, _) = toy_sample(25, 300, 21, 97);
        let meta = fit_metamodel(&design, &curves, &toy_config(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        meta.save_bundle(dir.path()).unwrap();
        let back = QuantileMetamodel::load_bundle(dir.path()).unwrap();
        assert_eq!(back.k(), meta.k());
        assert_eq!(back.transform(), meta.transform());
        for x in [pt(&[0.12, 0.47, 0.93]), pt(&[0.7, 0.7, 0.1])] {
            let a = meta.predict_curve(&x).unwrap();
            let b = back.predict_curve(&x).unwrap();
            let gap = a.l2_distance(&b).unwrap();
            assert!(gap <= 1e-12 * (1.0 + a.l2_norm()), "reload gap {gap}");
            let la = meta.predict_law(&x, 0.4).unwrap();
            let lb = back.predict_law(&x, 0.4).unwrap();
            assert!((la.mean - lb.mean).abs() <= 1e-12 * (1.0 + la.mean.abs()));
            assert!((la.variance - lb.variance).abs() <= 1e-12 * (1.0 + la.variance));
        }
    }
}
