//! Greedy selection of representative quantile curves and L2 projection
//! onto their span (the "modified magic points" construction).
//!
//! The basis is built from the learning outputs themselves: the first
//! function is the curve most correlated (mean Pearson correlation over grid
//! values) with all the others; each subsequent function is the curve whose
//! projection onto the current span leaves the largest L2 residual. Ties go
//! to the smallest source index so selection is deterministic.
//!
//! Coefficients come from unconstrained least squares (the k-by-k Gram
//! normal equations). Nonnegative coefficients would guarantee monotone
//! reconstructions, but the constraint would break the Gaussianity the
//! adaptive optimizer relies on, so it is only checked and reported:
//! [`CoeffVector::nonnegative`] flags violations and callers verify
//! monotonicity after the fact.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{CurveError, ProbGrid, QuantileCurve};

/// Residual norms at or below `DEPENDENCE_TOL * (1 + |curve|)` count as
/// "already in the span" during selection.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MmpError {
    #[error("need at least one curve")]
    EmptyInput,
    #[error("k = {k} exceeds the {n} curves available")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error(
        "only {achievable} linearly independent curves available, {requested} requested"
    )]
    RankDeficient { requested: usize, achievable: usize },
    #[error("curve {index} has zero norm; relative errors are undefined")]
    ZeroNormCurve { index: usize },
    #[error("gram matrix is numerically singular")]
    SingularGram,
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("basis file: {0}")]
    Io(#[from] std::io::Error),
    #[error("basis file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("basis file: {0}")]
    BadManifest(String),
}

/// Projection coefficients of one curve on a [`Basis`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    psi: Vec<f64>,
}

impl CoeffVector {
    pub fn new(psi: Vec<f64>) -> Self {
        Self { psi }
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// True iff every coefficient is at least `-tol` (membership of the
    /// monotonicity-sufficient constraint set).
    pub fn nonnegative(&self, tol: f64) -> bool {
        self.psi.iter().all(|&p| p >= -tol)
    }

    /// The linear combination `sum_j psi_j R_j` as a curve.
    pub fn reconstruct(&self, basis: &Basis) -> QuantileCurve {
        assert_eq!(self.psi.len(), basis.k(), "coefficient/basis size mismatch");
        let m = basis.grid().len();
        let mut values = vec![0.0; m];
        for (w, f) in self.psi.iter().zip(basis.functions()) {
            for (v, fv) in values.iter_mut().zip(f.values()) {
                *v += w * fv;
            }
        }
        QuantileCurve::new(basis.grid().clone(), values).expect("finite combination")
    }
}

/// An ordered set of k quantile curves spanning the projection space,
/// with the factorized Gram matrix of their L2 inner products.
#[derive(Debug, Clone)]
pub struct Basis {
    functions: Vec<QuantileCurve>,
    source_ids: Vec<usize>,
    gram_chol: Cholesky<f64, Dyn>,
}

impl Basis {
    fn build(functions: Vec<QuantileCurve>, source_ids: Vec<usize>) -> Result<Self, MmpError> {
        let k = functions.len();
        let mut gram = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = functions[i].inner(&functions[j])?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let gram_chol = gram.cholesky().ok_or(MmpError::SingularGram)?;
        Ok(Self {
            functions,
            source_ids,
            gram_chol,
        })
    }

    pub fn k(&self) -> usize {
        self.functions.len()
    }

    pub fn functions(&self) -> &[QuantileCurve] {
        &self.functions
    }

    /// Indices into the learning-curve list each basis function came from.
    pub fn source_ids(&self) -> &[usize] {
        &self.source_ids
    }

    pub fn grid(&self) -> &Arc<ProbGrid> {
        self.functions[0].grid()
    }

    /// `R_j(p)` for all j, interpolating off-grid levels.
    pub fn eval_at(&self, p: f64) -> Result<Vec<f64>, CurveError> {
        self.functions.iter().map(|f| f.eval_at(p)).collect()
    }

    /// Persists the basis as one curve CSV per function plus a JSON manifest
    /// listing k and the source ids.
    pub fn save_dir<P: AsRef<Path>>(&self, dir: P) -> Result<(), MmpError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let manifest = BasisManifest {
            k: self.k(),
            source_ids: self.source_ids.clone(),
        };
        let file = std::fs::File::create(dir.join("basis.json"))?;
        serde_json::to_writer_pretty(file, &manifest)?;
        for (j, f) in self.functions.iter().enumerate() {
            f.save_csv(dir.join(format!("basis_{:03}.csv", j + 1)))?;
        }
        Ok(())
    }

    pub fn load_dir<P: AsRef<Path>>(dir: P) -> Result<Self, MmpError> {
        let dir = dir.as_ref();
        let manifest: BasisManifest =
            serde_json::from_reader(std::fs::File::open(dir.join("basis.json"))?)?;
        if manifest.k == 0 || manifest.source_ids.len() != manifest.k {
            return Err(MmpError::BadManifest(format!(
                "k = {} with {} source ids",
                manifest.k,
                manifest.source_ids.len()
            )));
        }
        let mut functions = Vec::with_capacity(manifest.k);
        let first = QuantileCurve::load_csv(dir.join("basis_001.csv"))?;
        let grid = first.grid().clone();
        functions.push(first);
        for j in 2..=manifest.k {
            let raw = QuantileCurve::load_csv(dir.join(format!("basis_{j:03}.csv")))?;
            // re-anchor on a shared grid instance
            if raw.grid() != &grid {
                return Err(MmpError::BadManifest(format!(
                    "basis function {j} is on a different grid"
                )));
            }
            functions.push(QuantileCurve::new(grid.clone(), raw.values().to_vec())?);
        }
        Self::build(functions, manifest.source_ids)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisManifest {
    k: usize,
    source_ids: Vec<usize>,
}

fn check_shared_grid(curves: &[QuantileCurve]) -> Result<(), MmpError> {
    let grid = curves[0].grid();
    for c in &curves[1..] {
        if c.grid() != grid {
            return Err(MmpError::Curve(CurveError::GridMismatch));
        }
    }
    Ok(())
}

/// Mean Pearson correlation between each curve's grid values and every other
/// curve's. Near-constant curves correlate with nothing (0 by convention).
fn mean_correlations(curves: &[QuantileCurve]) -> Vec<f64> {
    let n = curves.len();
    let m = curves[0].len() as f64;
    let stats: Vec<(f64, f64, &[f64])> = curves
        .iter()
        .map(|c| {
            let mean = c.values().iter().sum::<f64>() / m;
            let var = c.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            (mean, var, c.values())
        })
        .collect();
    let scale: f64 = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let tiny = 1e-14 * (1.0 + scale);
    (0..n)
        .map(|i| {
            if n == 1 {
                return 0.0;
            }
            let mut total = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (mi, vi, xs) = stats[i];
                let (mj, vj, ys) = stats[j];
                if vi <= tiny || vj <= tiny {
                    continue; // correlation with a constant curve: 0
                }
                let cov = xs
                    .iter()
                    .zip(ys)
                    .map(|(a, b)| (a - mi) * (b - mj))
                    .sum::<f64>()
                    / m;
                total += cov / (vi * vj).sqrt();
            }
            total / (n - 1) as f64
        })
        .collect()
}

/// Greedy basis selection.
///
/// `R_1` maximizes the mean correlation with the other curves; each later
/// `R_j` maximizes the L2 distance between itself and its projection on the
/// span selected so far. Fails with [`MmpError::RankDeficient`] when fewer
/// than `k` numerically independent curves exist.
pub fn select_basis(curves: &[QuantileCurve], k: usize) -> Result<Basis, MmpError> {
    if curves.is_empty() {
        return Err(MmpError::EmptyInput);
    }
    if k == 0 {
        return Err(MmpError::KZero);
    }
    if k > curves.len() {
        return Err(MmpError::KTooLarge {
            k,
            n: curves.len(),
        });
    }
    check_shared_grid(curves)?;

    let corr = mean_correlations(curves);
    let first = corr
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .expect("nonempty");

    let mut selected = vec![first];
    let mut basis = Basis::build(vec![curves[first].clone()], vec![first])?;
    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, curve) in curves.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            let coeffs = project(curve, &basis)?;
            let resid = curve.l2_distance(&coeffs.reconstruct(&basis))?;
            if best.is_none_or(|(_, b)| resid > b) {
                best = Some((i, resid));
            }
        }
        let (idx, resid) = best.ok_or(MmpError::RankDeficient {
            requested: k,
            achievable: selected.len(),
        })?;
        if resid <= DEPENDENCE_TOL * (1.0 + curves[idx].l2_norm()) {
            return Err(MmpError::RankDeficient {
                requested: k,
                achievable: selected.len(),
            });
        }
        selected.push(idx);
        basis = Basis::build(
            selected.iter().map(|&i| curves[i].clone()).collect(),
            selected.clone(),
        )?;
    }
    Ok(basis)
}

/// Least-squares coefficients of `curve` on the basis span: solves the
/// Gram normal equations `G psi = <curve, R_.>`.
pub fn project(curve: &QuantileCurve, basis: &Basis) -> Result<CoeffVector, MmpError> {
    let b = DVector::from_iterator(
        basis.k(),
        basis
            .functions()
            .iter()
            .map(|f| curve.inner(f))
            .collect::<Result<Vec<f64>, CurveError>>()?,
    );
    let psi = basis.gram_chol.solve(&b);
    Ok(CoeffVector::new(psi.iter().copied().collect()))
}

/// Mean relative L2 reconstruction error of `curves` on the basis span,
/// as a fraction.
pub fn projection_error(curves: &[QuantileCurve], basis: &Basis) -> Result<f64, MmpError> {
    if curves.is_empty() {
        return Err(MmpError::EmptyInput);
    }
    let mut total = 0.0;
    for (i, curve) in curves.iter().enumerate() {
        let norm = curve.l2_norm();
        if norm == 0.0 {
            return Err(MmpError::ZeroNormCurve { index: i });
        }
        let recon = project(curve, basis)?.reconstruct(basis);
        total += curve.l2_distance(&recon)? / norm;
    }
    Ok(total / curves.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize) -> Arc<ProbGrid> {
        Arc::new(ProbGrid::uniform_midpoint(m).unwrap())
    }

    fn curve(g: &Arc<ProbGrid>, values: Vec<f64>) -> QuantileCurve {
        QuantileCurve::new(g.clone(), values).unwrap()
    }

    #[test]
    fn identical_curves_select_the_common_curve() {
        let g = grid(8);
        let c = curve(&g, (0..8).map(|i| i as f64).collect());
        let basis = select_basis(&[c.clone(), c.clone(), c.clone()], 1).unwrap();
        assert_eq!(basis.k(), 1);
        assert_eq!(basis.functions()[0], c);
        assert_eq!(basis.source_ids(), &[0]);
    }

    #[test]
    fn orthogonal_pair_is_fully_selected() {
        let g = grid(4);
        let f = curve(&g, vec![1.0, 1.0, 0.0, 0.0]);
        let h = curve(&g, vec![0.0, 0.0, 1.0, 1.0]);
        let basis = select_basis(&[f.clone(), h.clone()], 2).unwrap();
        let picked: Vec<&QuantileCurve> = basis.functions().iter().collect();
        assert!(picked.contains(&&f) && picked.contains(&&h));
    }

    #[test]
    fn rank_error_names_achievable_k() {
        let g = grid(6);
        let f = curve(&g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let double = curve(&g, f.values().iter().map(|v| 2.0 * v).collect());
        match select_basis(&[f, double], 2) {
            Err(MmpError::RankDeficient {
                requested: 2,
                achievable: 1,
            }) => {}
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn basis_element_projects_to_unit_vector() {
        let g = grid(16);
        let curves: Vec<QuantileCurve> = (0..5)
            .map(|s| {
                curve(
                    &g,
                    (0..16)
                        .map(|i| ((i as f64) * 0.3 + s as f64).sin() + i as f64 * 0.1)
                        .collect(),
                )
            })
            .collect();
        let basis = select_basis(&curves, 3).unwrap();
        let r1 = &basis.functions()[0];
        let psi = project(r1, &basis).unwrap();
        assert!((psi.psi()[0] - 1.0).abs() < 1e-10);
        for &p in &psi.psi()[1..] {
            assert!(p.abs() < 1e-10);
        }
    }

    #[test]
    fn span_member_recovers_exact_coefficients() {
        let g = grid(12);
        let curves: Vec<QuantileCurve> = (0..6)
            .map(|s| {
                curve(
                    &g,
                    (0..12)
                        .map(|i| ((i + s) as f64 * 0.37).cos() + 0.05 * (i as f64))
                        .collect(),
                )
            })
            .collect();
        let basis = select_basis(&curves, 2).unwrap();
        let (r1, r2) = (&basis.functions()[0], &basis.functions()[1]);
        let combo_values: Vec<f64> = r1
            .values()
            .iter()
            .zip(r2.values())
            .map(|(a, b)| 2.0 * a + 3.0 * b)
            .collect();
        let combo = curve(&g, combo_values);
        let psi = project(&combo, &basis).unwrap();
        assert!((psi.psi()[0] - 2.0).abs() < 1e-10, "psi {:?}", psi.psi());
        assert!((psi.psi()[1] - 3.0).abs() < 1e-10, "psi {:?}", psi.psi());
    }

    #[test]
    fn residual_is_orthogonal_to_every_basis_function() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let g = grid(24);
        let curves: Vec<QuantileCurve> = (0..8)
            .map(|_| curve(&g, (0..24).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()))
            .collect();
        let basis = select_basis(&curves, 4).unwrap();
        let probe = curve(&g, (0..24).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
        let recon = project(&probe, &basis).unwrap().reconstruct(&basis);
        let resid_values: Vec<f64> = probe
            .values()
            .iter()
            .zip(recon.values())
            .map(|(a, b)| a - b)
            .collect();
        let resid = curve(&g, resid_values);
        for f in basis.functions() {
            let ip = resid.inner(f).unwrap();
            assert!(
                ip.abs() <= 1e-8 * probe.l2_norm() * f.l2_norm(),
                "residual not orthogonal: <resid, R> = {ip}"
            );
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let g = grid(20);
        let curves: Vec<QuantileCurve> = (0..6)
            .map(|s| {
                curve(
                    &g,
                    (0..20)
                        .map(|i| (i as f64 * 0.23 + s as f64 * 0.71).sin())
                        .collect(),
                )
            })
            .collect();
        let basis = select_basis(&curves, 3).unwrap();
        let probe = &curves[4];
        let psi1 = project(probe, &basis).unwrap();
        let recon = psi1.reconstruct(&basis);
        let psi2 = project(&recon, &basis).unwrap();
        for (a, b) in psi1.psi().iter().zip(psi2.psi()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_error_zero_inside_span_and_detects_zero_norm() {
        let g = grid(10);
        let f = curve(&g, (0..10).map(|i| 1.0 + i as f64).collect());
        let h = curve(&g, (0..10).map(|i| (i as f64 * 0.4).cos()).collect());
        let basis = select_basis(&[f.clone(), h.clone()], 2).unwrap();
        let err = projection_error(&[f.clone(), h], &basis).unwrap();
        assert!(err < 1e-10, "in-span error {err}");
        let zero = curve(&g, vec![0.0; 10]);
        assert!(matches!(
            projection_error(&[f, zero], &basis),
            Err(MmpError::ZeroNormCurve { index: 1 })
        ));
    }

    #[test]
    fn k_validation() {
        let g = grid(5);
        let f = curve(&g, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(select_basis(&[f.clone()], 0), Err(MmpError::KZero)));
        assert!(matches!(
            select_basis(&[f], 2),
            Err(MmpError::KTooLarge { k: 2, n: 1 })
        ));
        assert!(matches!(select_basis(&[], 1), Err(MmpError::EmptyInput)));
    }

    #[test]
    fn basis_persistence_roundtrip() {
        let g = grid(14);
        let curves: Vec<QuantileCurve> = (0..5)
            .map(|s| {
                curve(
                    &g,
                    (0..14)
                        .map(|i| (i as f64 * 0.19 + s as f64).sin() * 0.5 + i as f64 * 0.01)
                        .collect(),
                )
            })
            .collect();
        let basis = select_basis(&curves, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        basis.save_dir(dir.path()).unwrap();
        let back = Basis::load_dir(dir.path()).unwrap();
        assert_eq!(back.k(), basis.k());
        assert_eq!(back.source_ids(), basis.source_ids());
        for (a, b) in back.functions().iter().zip(basis.functions()) {
            assert_eq!(a.values(), b.values());
        }
        // projections agree bit for bit after reload
        let psi_a = project(&curves[4], &basis).unwrap();
        let psi_b = project(&curves[4], &back).unwrap();
        assert_eq!(psi_a.psi(), psi_b.psi());
    }
}
