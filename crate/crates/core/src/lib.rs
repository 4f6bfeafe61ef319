//! Calibration and refinement of probabilistic classifiers.
//!
//! - [`scores`]: proper losses, entropies, divergences and classification metrics.
//! - [`calibrate`]: temperature scaling and isotonic recalibration.
//! - [`decompose`]: risk = calibration + refinement estimators and ECE.
//! - [`stopping`]: epoch tracking and refinement-based early stopping.
//! - [`gaussian`]: closed-form errors of linear models under the two-class Gaussian model.
//! - [`highdim`]: asymptotics of ridge logistic regression with a Beta covariance spectrum.
//! - [`simulate`]: finite-sample counterpart of [`highdim`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod cli;
pub mod decompose;
pub mod error;
pub mod gaussian;
pub mod highdim;
pub mod io;
pub mod quadrature;
pub mod scores;
pub mod simulate;
pub mod special;
pub mod stopping;

pub use calibrate::{Calibrator, IsotonicCalibrator, TemperatureCalibrator};
pub use decompose::{Decomposition, Estimator};
pub use error::{Error, Result};
pub use gaussian::GaussianModelPoint;
pub use highdim::{SolverSolution, SpectralDist, TheoryProblem};
pub use scores::{LossKind, PredictionSet, ProbVector};
pub use stopping::{EpochTracker, Metric};
