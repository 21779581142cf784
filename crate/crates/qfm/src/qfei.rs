//! Adaptive quantile optimization by expected improvement on the projected
//! quantile process.
//!
//! With identity-transformed coefficients, the projected `p`-quantile
//! `U_x = sum_j psi_j(x) R_j(p)` is itself a Gaussian process, so the
//! classic expected-improvement machinery applies: score every unevaluated
//! candidate with `E[(U_x - max U_D)^+]` under the current metamodel, run
//! the simulator at the argmax, then rebuild the basis and re-estimate the
//! coefficient GPs on the enlarged design. The final estimate is the design
//! point with the largest projected quantile under the final basis.
//!
//! `max(U_D)` is taken over projected observed quantiles (values of the
//! process at design points), not raw empirical ones; a flag switches to the
//! raw reading for comparison. Because each refit can reshape the basis,
//! recorded best-so-far values may regress across iterations; the trajectory
//! flags those events. No convergence guarantee is claimed.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::curves::{CurveError, QuantileCurve};
use crate::empirical::{collect, empirical_quantile_curve, EmpiricalError};
use crate::gp::{GpConfig, InputPoint};
use crate::mmp::{self, Basis, CoeffVector, MmpError};
use crate::qmeta::{fit_metamodel, QmetaConfig, QmetaError, QuantileLaw, QuantileMetamodel, Transform};
use crate::simulators::Simulator;

#[derive(Debug, Error)]
pub enum QfeiError {
    #[error("negative variance {0} in expected improvement")]
    NegativeVariance(f64),
    #[error("duplicate design input {0}")]
    DuplicateDesignInput(String),
    #[error("design entry {index} has {got} coefficients, basis has {want}")]
    CoeffSizeMismatch {
        index: usize,
        got: usize,
        want: usize,
    },
    #[error("quantile level {0} is outside the open interval (0,1)")]
    LevelOutOfRange(f64),
    #[error("candidate set does not contain design input {0}")]
    CandidateSetMissingDesign(String),
    #[error("the adaptive loop needs the identity transform (Gaussian coefficients)")]
    TransformUnsupported,
    #[error("initial design is empty")]
    EmptyDesign,
    #[error(transparent)]
    Mmp(#[from] MmpError),
    #[error(transparent)]
    Qmeta(#[from] QmetaError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Empirical(#[from] EmpiricalError),
}

/// One evaluated input: its empirical curve and projection coefficients
/// under the current basis.
#[derive(Debug, Clone)]
pub struct DesignEntry {
    pub input: InputPoint,
    pub curve: QuantileCurve,
    pub coeffs: CoeffVector,
}

/// The evolving design D with the observed objective values
/// `U_D = projected p-quantile at each design point`.
#[derive(Debug, Clone)]
pub struct Design {
    entries: Vec<DesignEntry>,
    observed_obj: Vec<f64>,
    level: f64,
    use_raw_observed: bool,
}

impl Design {
    /// Builds the design from evaluated entries, projecting observed
    /// objectives with `basis`. `use_raw_observed` switches `U_D` to raw
    /// empirical quantiles.
    pub fn new(
        entries: Vec<DesignEntry>,
        basis: &Basis,
        level: f64,
        use_raw_observed: bool,
    ) -> Result<Self, QfeiError> {
        if entries.is_empty() {
            return Err(QfeiError::EmptyDesign);
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(QfeiError::LevelOutOfRange(level));
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.input.bit_key()) {
                return Err(QfeiError::DuplicateDesignInput(e.input.to_string()));
            }
        }
        let mut design = Self {
            entries,
            observed_obj: Vec::new(),
            level,
            use_raw_observed,
        };
        design.reproject(basis)?;
        Ok(design)
    }

    /// Builds the design straight from a fitted metamodel (its learning
    /// inputs, curves, and coefficients).
    pub fn from_metamodel(
        meta: &QuantileMetamodel,
        level: f64,
        use_raw_observed: bool,
    ) -> Result<Self, QfeiError> {
        let entries = meta
            .design()
            .iter()
            .zip(meta.learning_curves())
            .zip(meta.coeffs())
            .map(|((x, c), cv)| DesignEntry {
                input: x.clone(),
                curve: c.clone(),
                coeffs: cv.clone(),
            })
            .collect();
        Self::new(entries, meta.basis(), level, use_raw_observed)
    }

    /// Recomputes every entry's coefficients and observed objective under a
    /// new basis (called after each refit).
    pub fn reproject(&mut self, basis: &Basis) -> Result<(), QfeiError> {
        for e in &mut self.entries {
            e.coeffs = mmp::project(&e.curve, basis)?;
        }
        let r_at_p = basis.eval_at(self.level)?;
        self.observed_obj = self
            .entries
            .iter()
            .map(|e| {
                if self.use_raw_observed {
                    e.curve.eval_at(self.level)
                } else {
                    Ok(dot(e.coeffs.psi(), &r_at_p))
                }
            })
            .collect::<Result<_, CurveError>>()?;
        Ok(())
    }

    pub fn entries(&self) -> &[DesignEntry] {
        &self.entries
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed_obj
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &InputPoint> {
        self.entries.iter().map(|e| &e.input)
    }

    pub fn contains(&self, x: &InputPoint) -> bool {
        let key = x.bit_key();
        self.entries.iter().any(|e| e.input.bit_key() == key)
    }

    /// Index and value of the best observed objective (ties to the
    /// lexicographically smallest input).
    pub fn best(&self) -> (usize, f64) {
        let mut best = 0;
        for i in 1..self.entries.len() {
            let better = self.observed_obj[i] > self.observed_obj[best]
                || (self.observed_obj[i] == self.observed_obj[best]
                    && self.entries[i].input.lex_cmp(&self.entries[best].input)
                        == std::cmp::Ordering::Less);
            if better {
                best = i;
            }
        }
        (best, self.observed_obj[best])
    }

    fn push(&mut self, entry: DesignEntry, observed: f64) {
        self.entries.push(entry);
        self.observed_obj.push(observed);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A scored candidate: its Gaussian law under the metamodel and its
/// expected improvement over the current best.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub input: InputPoint,
    pub ei: f64,
    pub law: QuantileLaw,
}

/// Loop configuration.
#[derive(Debug, Clone)]
pub struct QfeiConfig {
    /// Quantile level p to maximize.
    pub level: f64,
    /// Simulator-call budget (enrichment steps); 0 reduces the run to the
    /// initial-design argmax.
    pub iterations: usize,
    /// Replications per new design point.
    pub n_mc: usize,
    /// Basis size used at every refit.
    pub k: usize,
    /// The finite search set E; must contain every initial design input.
    pub candidate_set: Vec<InputPoint>,
    /// Master seed for the simulator streams.
    pub seed: u64,
    /// Refit basis + GPs every `refit_every` iterations (1 = every step).
    pub refit_every: usize,
    /// Optional stabilization stop: end the loop when the maximal EI falls
    /// under `rel_tol * (max U_D - min U_D)`.
    pub stop_rel_tol: Option<f64>,
    /// Use raw empirical quantiles for `U_D` instead of projected ones.
    pub use_raw_observed: bool,
    /// GP configuration for refits (a warm start from the previous
    /// iteration's correlation lengths is added automatically).
    pub gp: GpConfig,
}

impl QfeiConfig {
    pub fn new(level: f64, candidate_set: Vec<InputPoint>) -> Self {
        Self {
            level,
            iterations: 20,
            n_mc: 10_000,
            k: 4,
            candidate_set,
            seed: 0,
            refit_every: 1,
            stop_rel_tol: None,
            use_raw_observed: false,
            gp: GpConfig::default(),
        }
    }
}

/// Closed-form expected improvement `E[(Z - best)^+]` for
/// `Z ~ N(law.mean, law.variance)`: `sigma (u Phi(u) + phi(u))` with
/// `u = (mean - best)/sigma`, and `max(mean - best, 0)` when the variance
/// vanishes.
pub fn expected_improvement(law: &QuantileLaw, best: f64) -> Result<f64, QfeiError> {
    if law.variance < 0.0 {
        return Err(QfeiError::NegativeVariance(law.variance));
    }
    if law.variance == 0.0 {
        return Ok((law.mean - best).max(0.0));
    }
    let sigma = law.variance.sqrt();
    let u = (law.mean - best) / sigma;
    let std_normal = Normal::standard();
    let phi = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    Ok((sigma * (u * std_normal.cdf(u) + phi)).max(0.0))
}

/// Outcome of one enrichment step.
#[derive(Debug)]
pub enum StepOutcome {
    /// A point was added; design and metamodel were re-estimated.
    Stepped {
        design: Design,
        meta: QuantileMetamodel,
        candidate: Candidate,
    },
    /// Every candidate is already in the design; the design is handed back
    /// untouched.
    Exhausted(Design),
}

/// One enrichment step: score EI over the unevaluated candidates, simulate
/// at the argmax, append, and re-estimate basis and coefficient GPs.
pub fn step(
    design: Design,
    meta: &QuantileMetamodel,
    cfg: &QfeiConfig,
    sim: &dyn Simulator,
) -> Result<StepOutcome, QfeiError> {
    let Some(candidate) = score_candidates(&design, meta, cfg)? else {
        return Ok(StepOutcome::Exhausted(design));
    };
    let (design, meta) = advance(design, meta, cfg, sim, &candidate, true)?;
    Ok(StepOutcome::Stepped {
        design,
        meta,
        candidate,
    })
}

fn score_candidates(
    design: &Design,
    meta: &QuantileMetamodel,
    cfg: &QfeiConfig,
) -> Result<Option<Candidate>, QfeiError> {
    let evaluated: BTreeSet<Vec<u64>> = design.inputs().map(InputPoint::bit_key).collect();
    let open: Vec<&InputPoint> = cfg
        .candidate_set
        .iter()
        .filter(|x| !evaluated.contains(&x.bit_key()))
        .collect();
    if open.is_empty() {
        return Ok(None);
    }
    let (_, best) = design.best();
    let scored: Vec<Candidate> = open
        .par_iter()
        .map(|x| -> Result<Candidate, QfeiError> {
            let law = meta.predict_law(x, cfg.level)?;
            let ei = expected_improvement(&law, best)?;
            Ok(Candidate {
                input: (*x).clone(),
                ei,
                law,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut winner = 0;
    for i in 1..scored.len() {
        let better = scored[i].ei > scored[winner].ei
            || (scored[i].ei == scored[winner].ei
                && scored[i].input.lex_cmp(&scored[winner].input) == std::cmp::Ordering::Less);
        if better {
            winner = i;
        }
    }
    Ok(Some(scored.into_iter().nth(winner).expect("winner exists")))
}

fn refit(
    design: &mut Design,
    cfg: &QfeiConfig,
    warm: Option<Vec<Vec<f64>>>,
) -> Result<QuantileMetamodel, QfeiError> {
    let inputs: Vec<InputPoint> = design.inputs().cloned().collect();
    let curves: Vec<QuantileCurve> = design.entries().iter().map(|e| e.curve.clone()).collect();
    let mut gp = cfg.gp.clone();
    if let Some(thetas) = warm {
        // per-coefficient warm starts are not expressible through one
        // GpConfig; use the first GP's lengths, the columns share geometry
        gp.warm_start = thetas.into_iter().next();
    }
    let meta = fit_metamodel(
        &inputs,
        &curves,
        &QmetaConfig {
            k: cfg.k,
            transform: Transform::Identity,
            gp,
        },
    )?;
    design.reproject(meta.basis())?;
    Ok(meta)
}

/// Simulates at the selected candidate, appends it, and (optionally)
/// re-estimates the basis and coefficient GPs on the enlarged design.
fn advance(
    mut design: Design,
    meta: &QuantileMetamodel,
    cfg: &QfeiConfig,
    sim: &dyn Simulator,
    candidate: &Candidate,
    refit_now: bool,
) -> Result<(Design, QuantileMetamodel), QfeiError> {
    let batch = collect(sim, &candidate.input, cfg.n_mc, cfg.seed)?;
    let curve = empirical_quantile_curve(&batch, meta.grid())?;
    let coeffs = mmp::project(&curve, meta.basis())?;
    let r_at_p = meta.basis().eval_at(cfg.level)?;
    let observed = if cfg.use_raw_observed {
        curve.eval_at(cfg.level)?
    } else {
        dot(coeffs.psi(), &r_at_p)
    };
    design.push(
        DesignEntry {
            input: candidate.input.clone(),
            curve,
            coeffs,
        },
        observed,
    );
    let new_meta = if refit_now {
        let warm = meta.fit_report().gp_theta.clone();
        refit(&mut design, cfg, Some(warm))?
    } else {
        meta.clone()
    };
    Ok((design, new_meta))
}

/// One trajectory row: the point selected at `iteration`, its EI score, its
/// observed objective (under the basis current at recording time), and the
/// best observed objective after the iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub input: Vec<f64>,
    pub ei: f64,
    pub observed: f64,
    pub best_so_far: f64,
    /// True when a basis refit lowered the recorded best below the previous
    /// iteration's (possible because observed values are re-projected).
    pub regressed: bool,
}

/// Everything a finished run reports. Serializable and free of wall-clock
/// data so repeated runs with one seed serialize identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QfeiReport {
    pub level: f64,
    pub seed: u64,
    pub iterations_requested: usize,
    pub iterations_run: usize,
    pub exhausted: bool,
    pub stopped_on_stabilization: bool,
    pub simulator_draws: u64,
    pub initial_best_input: Vec<f64>,
    pub initial_best_observed: f64,
    pub best_input: Vec<f64>,
    pub best_observed: f64,
    pub best_curve: Vec<f64>,
    pub trajectory: Vec<IterationRecord>,
}

/// A finished run: the report plus the final fitted artifacts and per-
/// iteration wall-clock seconds (kept separate from the report so data
/// outputs stay byte-reproducible).
#[derive(Debug)]
pub struct QfeiRun {
    pub report: QfeiReport,
    pub design: Design,
    pub meta: QuantileMetamodel,
    pub iteration_seconds: Vec<f64>,
}

/// Runs the adaptive loop for `cfg.iterations` steps (or until exhaustion or
/// stabilization) and returns the final estimate
/// `argmax over D of the projected p-quantile`.
pub fn run(
    cfg: &QfeiConfig,
    sim: &dyn Simulator,
    initial_meta: QuantileMetamodel,
) -> Result<QfeiRun, QfeiError> {
    if initial_meta.transform() != Transform::Identity {
        return Err(QfeiError::TransformUnsupported);
    }
    let mut design = Design::from_metamodel(&initial_meta, cfg.level, cfg.use_raw_observed)?;
    let candidate_keys: BTreeSet<Vec<u64>> =
        cfg.candidate_set.iter().map(InputPoint::bit_key).collect();
    for x in design.inputs() {
        if !candidate_keys.contains(&x.bit_key()) {
            return Err(QfeiError::CandidateSetMissingDesign(x.to_string()));
        }
    }

    let (i0, initial_best) = design.best();
    let initial_best_input = design.entries()[i0].input.coords().to_vec();
    let mut meta = initial_meta;
    let mut trajectory = Vec::new();
    let mut iteration_seconds = Vec::new();
    let mut exhausted = false;
    let mut stopped = false;
    let mut draws: u64 = 0;
    let mut best_so_far = initial_best;

    for it in 1..=cfg.iterations {
        let t0 = Instant::now();
        let Some(candidate) = score_candidates(&design, &meta, cfg)? else {
            exhausted = true;
            break;
        };
        // stabilization check precedes simulation so a run never spends a
        // call on a candidate that cannot improve anything
        if let Some(rel_tol) = cfg.stop_rel_tol {
            let (lo, hi) = design
                .observed()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if candidate.ei < rel_tol * (hi - lo) {
                stopped = true;
                break;
            }
        }
        let refit_now = cfg.refit_every <= 1 || it % cfg.refit_every == 0 || it == cfg.iterations;
        let (d, m) = advance(design, &meta, cfg, sim, &candidate, refit_now)?;
        design = d;
        meta = m;
        draws += cfg.n_mc as u64;
        let (_, best) = design.best();
        let regressed = best < best_so_far;
        best_so_far = best;
        trajectory.push(IterationRecord {
            iteration: it,
            input: candidate.input.coords().to_vec(),
            ei: candidate.ei,
            observed: *design.observed().last().expect("just pushed"),
            best_so_far: best,
            regressed,
        });
        iteration_seconds.push(t0.elapsed().as_secs_f64());
    }

    let (ibest, best_observed) = design.best();
    let best_entry = &design.entries()[ibest];
    let report = QfeiReport {
        level: cfg.level,
        seed: cfg.seed,
        iterations_requested: cfg.iterations,
        iterations_run: trajectory.len(),
        exhausted,
        stopped_on_stabilization: stopped,
        simulator_draws: draws,
        initial_best_input,
        initial_best_observed: initial_best,
        best_input: best_entry.input.coords().to_vec(),
        best_observed,
        best_curve: best_entry.curve.values().to_vec(),
        trajectory,
    };
    Ok(QfeiRun {
        report,
        design,
        meta,
        iteration_seconds,
    })
}
