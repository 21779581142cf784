//! Quantile-function metamodeling of expensive stochastic simulators.
//!
//! A stochastic simulator maps an input `x` to a random output; its
//! distribution at `x` is summarized here by the quantile function on a fixed
//! probability grid. This crate builds a metamodel of the map
//! `x -> quantile function` from a small number of simulator runs and uses it
//! to maximize a chosen output quantile with few additional runs:
//!
//! 1. [`empirical`] turns raw Monte Carlo replications into empirical
//!    quantile curves ([`curves`] holds the grid and L2 geometry).
//! 2. [`mmp`] greedily selects a small set of representative curves from the
//!    learning outputs and projects every curve onto their span.
//! 3. [`gp`] fits one Gaussian-process regression per projection coefficient;
//!    [`qmeta`] assembles the per-coefficient predictions back into predicted
//!    curves and per-level Gaussian laws.
//! 4. [`qfei`] runs the adaptive expected-improvement loop on the induced
//!    scalar process `U_x = sum_j psi_j(x) R_j(p)`, enriching the design one
//!    simulator call at a time and re-estimating everything after each call.
//!
//! Simulators are pluggable through [`simulators::Simulator`]: a built-in toy
//! function, a replay simulator backed by stored sample tables, and a
//! line-delimited JSON protocol for external processes.

pub mod curves;
pub mod empirical;
pub mod gp;
pub mod mmp;
pub mod qfei;
pub mod qmeta;
pub mod simulators;

pub use curves::{CurveError, ProbGrid, QuantileCurve};
pub use empirical::{EmpiricalError, SampleBatch};
pub use gp::{GaussianPrediction, GpConfig, GpError, GpModel, InputPoint, Kernel};
pub use mmp::{Basis, CoeffVector, MmpError};
pub use qfei::{Candidate, Design, DesignEntry, QfeiConfig, QfeiError, QfeiReport};
pub use qmeta::{QmetaConfig, QmetaError, QuantileLaw, QuantileMetamodel, Transform};
pub use simulators::{InputSpace, Simulator, SimulatorError};
