//! Sensitivity analysis for treatment effects when unconfoundedness is relaxed
//! to conditional c-dependence.
//!
//! The crate estimates sharp bounds on conditional quantile treatment effects,
//! CATE, ATE and ATT as functions of the sensitivity parameter `c`, computes
//! breakdown points, and provides the bootstrap machinery for pointwise and
//! uniform-in-`c` confidence bands. Inference uses analytical estimates of the
//! Hadamard directional derivatives of the bound functionals; the ordinary
//! nonparametric bootstrap is available where it is valid.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command-line
//! driver and parallel orchestration live in the companion `cdep` crate.
//!
//! Pipeline:
//!
//! 1. [`dataset`]: validated [`Sample`] and the design matrices `q(x, w)`, `r(w)`.
//! 2. [`first_stage`]: propensity score MLE and the quantile-regression process.
//! 3. [`bounds`]: bound functionals, bound curves over `c`, breakdown points.
//! 4. [`hdd`]: analytical directional-derivative estimators.
//! 5. [`inference`]: bootstrap draws, critical values, bands.
//! 6. [`diagnostics`]: leave-out-variable-k calibration, IPW baselines, overlap.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bounds;
pub mod dataset;
pub mod diagnostics;
mod error;
pub mod first_stage;
pub mod hdd;
pub mod inference;
pub mod linalg;
pub mod numeric;

pub use bounds::{BoundCurve, BoundEngine, BoundPair, BreakdownResult, Conclusion, Estimand};
pub use dataset::{build_design, DesignMatrices, DesignSpec, Sample, Term};
pub use error::{Error, ErrorCategory, Result};
pub use first_stage::{
    fit_propensity, fit_quantile_process, Link, PropensityFit, QuantileProcessFit, ThetaHat,
    TuningParams,
};
pub use hdd::{Direction, HddValue};
pub use inference::{BootstrapConfig, BootstrapDraws, BootstrapMode, ConfidenceBand, DevPair};
