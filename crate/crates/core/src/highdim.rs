//! Asymptotic theory of ridge-regularized logistic regression on the
//! two-class Gaussian model with diagonal covariance, when `n, p -> inf` with
//! `p / n -> r`.
//!
//! The fitted weights behave like
//! `N(eta (lambda I + tau Sigma)^-1 mu, gamma/n (lambda I + tau Sigma)^-1 Sigma (lambda I + tau Sigma)^-1)`
//! where `(eta, tau, gamma)` solve a fixed-point system. With `sigma ~ F`
//! (the covariance spectrum), the training margin of a sample behaves like
//! `h ~ N(m, v)` with
//!
//! ```text
//! m     = eta c^2 E[1 / (lambda + tau sigma)]
//! v     = eta^2 c^2 E[sigma / (lambda + tau sigma)^2] + gamma r E[sigma^2 / (lambda + tau sigma)^2]
//! kappa = r E[sigma / (lambda + tau sigma)]
//! ```
//!
//! and its fitted value is the proximal point `prox(h)` solving
//! `x - kappa * sigmoid(-x) = h`. The system closes with
//!
//! ```text
//! eta   = E[sigmoid(-prox(h))]
//! gamma = E[sigmoid(-prox(h))^2]
//! tau   = E[l''(prox(h)) / (1 + kappa l''(prox(h)))],   l''(x) = sigmoid(x) sigmoid(-x)
//! ```
//!
//! Spectral expectations are computed by adaptive quadrature of the
//! shifted-Beta density `sigma = eps + u`, `u ~ Beta(alpha, beta)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::gaussian::{
    calibration_error, error_rate, invert_estar, refinement_error, GaussianModelPoint,
    HERMITE_SCALE_LIMIT,
};
use crate::quadrature::{gauss_expect_pieces, integrate_adaptive, GaussHermite};
use crate::scores::LossKind;
use crate::special::sigmoid;

/// Relative tolerance of the spectral quadratures.
pub const SPECTRAL_REL_TOL: f64 = 1e-12;
/// Residual below which the fixed point is accepted.
pub const SOLVER_TOL: f64 = 1e-10;
/// Iteration cap of the fixed-point solver.
pub const SOLVER_MAX_ITER: usize = 10_000;
/// Damping of the fixed-point update.
pub const SOLVER_DAMPING: f64 = 0.5;
/// Default shift of the Beta spectrum.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Law of the covariance eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum SpectralDist {
    /// `sigma = epsilon + Beta(alpha, beta)`.
    Beta {
        alpha: f64,
        beta: f64,
        epsilon: f64,
    },
    /// `sigma` identically equal to `value`.
    Point { value: f64 },
}

impl SpectralDist {
    pub fn shifted_beta(alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && epsilon > 0.0)
            || !(alpha.is_finite() && beta.is_finite() && epsilon.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "spectrum needs alpha, beta, epsilon > 0, got ({alpha}, {beta}, {epsilon})"
            )));
        }
        Ok(SpectralDist::Beta {
            alpha,
            beta,
            epsilon,
        })
    }

    /// Uniform spectrum on `[1e-3, 1 + 1e-3]`.
    pub fn uniform() -> Self {
        SpectralDist::Beta {
            alpha: 1.0,
            beta: 1.0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn point(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "point spectrum needs a positive value, got {value}"
            )));
        }
        Ok(SpectralDist::Point { value })
    }

    /// Shift and the law of the remainder: `sigma = shift + u`.
    fn shift(&self) -> f64 {
        match *self {
            SpectralDist::Beta { epsilon, .. } => epsilon,
            SpectralDist::Point { value } => value,
        }
    }

    /// Bounds of the support.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            SpectralDist::Beta { epsilon, .. } => (epsilon, 1.0 + epsilon),
            SpectralDist::Point { value } => (value, value),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SpectralDist::Beta {
                alpha,
                beta,
                epsilon,
            } => epsilon + alpha / (alpha + beta),
            SpectralDist::Point { value } => value,
        }
    }

    /// `E[g(u)]` where `sigma = shift + u`.
    fn expect_u(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        let (alpha, beta) = match *self {
            SpectralDist::Beta { alpha, beta, .. } => (alpha, beta),
            SpectralDist::Point { .. } => return Ok(g(0.0)),
        };
        let norm = (-ln_beta(alpha, beta)).exp();
        // Split at 1/2. Near an endpoint whose exponent is below 1 substitute
        // u = t^(1/alpha) (resp. 1 - u = t^(1/beta)) to absorb the singularity.
        let left = if alpha < 1.0 {
            let f = |t: f64| {
                let u = t.powf(1.0 / alpha);
                g(u) * (1.0 - u).powf(beta - 1.0) / alpha
            };
            integrate_adaptive(&f, 0.0, 0.5f64.powf(alpha), SPECTRAL_REL_TOL, 0.0)?
        } else {
            let f = |u: f64| g(u) * u.powf(alpha - 1.0) * (1.0 - u).powf(beta - 1.0);
            integrate_adaptive(&f, 0.0, 0.5, SPECTRAL_REL_TOL, 0.0)?
        };
        let right = if beta < 1.0 {
            let f = |t: f64| {
                let u = 1.0 - t.powf(1.0 / beta);
                g(u) * u.powf(alpha - 1.0) / beta
            };
            integrate_adaptive(&f, 0.0, 0.5f64.powf(beta), SPECTRAL_REL_TOL, 0.0)?
        } else {
            let f = |u: f64| g(u) * u.powf(alpha - 1.0) * (1.0 - u).powf(beta - 1.0);
            integrate_adaptive(&f, 0.5, 1.0, SPECTRAL_REL_TOL, 0.0)?
        };
        Ok(norm * (left + right))
    }

    /// `E[f(sigma)]` by direct quadrature.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let shift = self.shift();
        self.expect_u(|u| f(shift + u))
    }
}

/// The spectral expectations the theory needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationKind {
    /// `E[1/sigma]`.
    InvSigma,
    /// `E[1/(lambda + tau sigma)]`.
    InvLin,
    /// `E[1/(lambda + tau sigma)^2]`.
    InvSq,
    /// `E[sigma/(lambda + tau sigma)^2]`.
    SigmaOverSq,
    /// `E[sigma^2/(lambda + tau sigma)^2]`.
    Sigma2OverSq,
    /// `E[sigma/(lambda - e sigma)]`; the second parameter is `e`.
    KappaKernel,
}

/// Checks that `lambda + t * sigma` stays positive over the support.
fn check_denominator(spectrum: &SpectralDist, lambda: f64, t: f64) -> Result<()> {
    let (lo, hi) = spectrum.support();
    let margin = (lambda + t * lo).min(lambda + t * hi);
    if !(margin > 0.0) {
        return Err(Error::PoleInSupport { margin });
    }
    Ok(())
}

/// `E[u^j / (lambda + t (shift + u))^m]`.
fn shifted_moment(spectrum: &SpectralDist, j: i32, m: i32, lambda: f64, t: f64) -> Result<f64> {
    let base = lambda + t * spectrum.shift();
    spectrum.expect_u(|u| u.powi(j) / (base + t * u).powi(m))
}

/// Spectral expectation of the requested kind. `t` is `tau` for the resolvent
/// kinds and `e` for [`ExpectationKind::KappaKernel`]; both are ignored by
/// [`ExpectationKind::InvSigma`].
///
/// The kinds with a `sigma` or `sigma^2` numerator are expanded in powers of
/// the shift, `sigma = eps + u`, and assembled from moments of `u`.
pub fn beta_expect(
    spectrum: &SpectralDist,
    kind: ExpectationKind,
    lambda: f64,
    t: f64,
) -> Result<f64> {
    let eps = spectrum.shift();
    match kind {
        ExpectationKind::InvSigma => {
            check_denominator(spectrum, 0.0, 1.0)?;
            shifted_moment(spectrum, 0, 1, 0.0, 1.0)
        }
        ExpectationKind::InvLin => {
            check_denominator(spectrum, lambda, t)?;
            shifted_moment(spectrum, 0, 1, lambda, t)
        }
        ExpectationKind::InvSq => {
            check_denominator(spectrum, lambda, t)?;
            shifted_moment(spectrum, 0, 2, lambda, t)
        }
        ExpectationKind::SigmaOverSq => {
            check_denominator(spectrum, lambda, t)?;
            Ok(eps * shifted_moment(spectrum, 0, 2, lambda, t)?
                + shifted_moment(spectrum, 1, 2, lambda, t)?)
        }
        ExpectationKind::Sigma2OverSq => {
            check_denominator(spectrum, lambda, t)?;
            Ok(shifted_moment(spectrum, 2, 2, lambda, t)?
                + 2.0 * eps * shifted_moment(spectrum, 1, 2, lambda, t)?
                + eps * eps * shifted_moment(spectrum, 0, 2, lambda, t)?)
        }
        ExpectationKind::KappaKernel => {
            check_denominator(spectrum, lambda, -t)?;
            Ok(shifted_moment(spectrum, 1, 1, lambda, -t)?
                + eps * shifted_moment(spectrum, 0, 1, lambda, -t)?)
        }
    }
}

/// Parameters of one point of the asymptotic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryProblem {
    /// Dimensions-to-samples ratio `p / n`.
    pub r: f64,
    /// Separability, `||mu|| -> c`.
    pub c: f64,
    pub spectrum: SpectralDist,
    /// Ridge strength.
    pub lambda: f64,
}

impl TheoryProblem {
    /// Builds a problem whose Bayes error rate is `estar`.
    pub fn new(r: f64, estar: f64, spectrum: SpectralDist, lambda: f64) -> Result<Self> {
        let c = invert_estar(estar, &spectrum)?;
        Self::with_separability(r, c, spectrum, lambda)
    }

    pub fn with_separability(r: f64, c: f64, spectrum: SpectralDist, lambda: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("r must be > 0, got {r}")));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("c must be >= 0, got {c}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        Ok(TheoryProblem {
            r,
            c,
            spectrum,
            lambda,
        })
    }

    pub fn at_lambda(&self, lambda: f64) -> Result<Self> {
        Self::with_separability(self.r, self.c, self.spectrum, lambda)
    }
}

/// `r E[sigma / (lambda - e sigma)]`.
pub fn kappa(problem: &TheoryProblem, e: f64, lambda: f64) -> Result<f64> {
    Ok(problem.r * beta_expect(&problem.spectrum, ExpectationKind::KappaKernel, lambda, e)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSolution {
    pub eta: f64,
    pub tau: f64,
    pub gamma: f64,
    /// `max |F(x) - x|` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `x - kappa * sigmoid(-x) = h` for `x`, with `kappa >= 0`.
pub fn logistic_prox(h: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        return h;
    }
    // f is increasing with f(h) <= 0 <= f(h + kappa)
    let (mut lo, mut hi) = (h, h + kappa);
    let mut x = h + kappa * sigmoid(-h) / (1.0 + kappa * sigmoid(h) * sigmoid(-h));
    let mut last_f = f64::INFINITY;
    for _ in 0..200 {
        let f = x - kappa * sigmoid(-x) - h;
        if f == 0.0 {
            return x;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let fp = 1.0 + kappa * sigmoid(x) * sigmoid(-x);
        let mut next = x - f / fp;
        // Newton can bounce across the bracket without shrinking it
        if !(next > lo && next < hi) || f.abs() > 0.5 * last_f {
            next = 0.5 * (lo + hi);
        }
        last_f = f.abs();
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Spectral quantities that depend on `tau` only.
struct Resolvent {
    inv_lin: f64,
    sigma_over_sq: f64,
    sigma2_over_sq: f64,
    kappa: f64,
}

impl Resolvent {
    fn new(problem: &TheoryProblem, tau: f64) -> Result<Self> {
        let spec = &problem.spectrum;
        let lambda = problem.lambda;
        Ok(Resolvent {
            inv_lin: beta_expect(spec, ExpectationKind::InvLin, lambda, tau)?,
            sigma_over_sq: beta_expect(spec, ExpectationKind::SigmaOverSq, lambda, tau)?,
            sigma2_over_sq: beta_expect(spec, ExpectationKind::Sigma2OverSq, lambda, tau)?,
            kappa: kappa(problem, -tau, lambda)?,
        })
    }
}

/// One application of the fixed-point map `(eta, tau, gamma) -> F(eta, tau, gamma)`.
pub fn system_map(problem: &TheoryProblem, x: [f64; 3]) -> Result<[f64; 3]> {
    let [eta, tau, gamma] = x;
    if !(tau >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::NonFinite(format!("iterate left the domain: {x:?}")));
    }
    let res = Resolvent::new(problem, tau)?;
    let c2 = problem.c * problem.c;
    let m = eta * c2 * res.inv_lin;
    let v = eta * eta * c2 * res.sigma_over_sq + gamma * problem.r * res.sigma2_over_sq;
    if !(v >= 0.0) {
        return Err(Error::NonFinite(format!("margin variance {v}")));
    }
    let sd = v.sqrt();
    let kappa = res.kappa;
    if sd <= HERMITE_SCALE_LIMIT {
        let gh = GaussHermite::standard();
        let (mut e_eta, mut e_gamma, mut e_tau) = (0.0, 0.0, 0.0);
        for (&z, &w) in gh.nodes.iter().zip(&gh.weights) {
            let x = logistic_prox(m + sd * z, kappa);
            let s = sigmoid(-x);
            let curv = sigmoid(x) * s;
            e_eta += w * s;
            e_gamma += w * s * s;
            e_tau += w * curv / (1.0 + kappa * curv);
        }
        return Ok([e_eta, e_tau, e_gamma]);
    }
    // The prox output moves through the logistic transition while the
    // margin crosses roughly [-kappa - 10, 10]; bracket that window.
    let breaks = [
        (-kappa - 10.0 - m) / sd,
        (-kappa - m) / sd,
        -m / sd,
        (10.0 - m) / sd,
    ];
    let e_eta = gauss_expect_pieces(|z| sigmoid(-logistic_prox(m + sd * z, kappa)), &breaks)?;
    let e_gamma = gauss_expect_pieces(
        |z| {
            let s = sigmoid(-logistic_prox(m + sd * z, kappa));
            s * s
        },
        &breaks,
    )?;
    let e_tau = gauss_expect_pieces(
        |z| {
            let x = logistic_prox(m + sd * z, kappa);
            let curv = sigmoid(x) * sigmoid(-x);
            curv / (1.0 + kappa * curv)
        },
        &breaks,
    )?;
    Ok([e_eta, e_tau, e_gamma])
}

fn max_abs_diff(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

fn solve3(j: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(j);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut m = j;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *o = det(m) / d;
    }
    Some(out)
}

/// Newton direction for `G(x) = F(x) - x` with a forward-difference Jacobian.
fn newton_direction(problem: &TheoryProblem, x: [f64; 3], fx: [f64; 3]) -> Option<[f64; 3]> {
    let g = [fx[0] - x[0], fx[1] - x[1], fx[2] - x[2]];
    let mut jac = [[0.0; 3]; 3];
    for col in 0..3 {
        let h = 1e-6 * x[col].abs().max(1e-6);
        let mut xp = x;
        xp[col] += h;
        let fp = system_map(problem, xp).ok()?;
        for row in 0..3 {
            let gp = fp[row] - xp[row];
            jac[row][col] = (gp - g[row]) / h;
        }
    }
    let step = solve3(jac, [-g[0], -g[1], -g[2]])?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn in_domain(x: [f64; 3]) -> bool {
    x[1] >= 0.0 && x[2] >= 0.0 && x.iter().all(|v| v.is_finite())
}

/// Solves the fixed-point system from `(eta, tau, gamma) = (1, 1, 1)`.
pub fn solve_system(problem: &TheoryProblem) -> Result<SolverSolution> {
    solve_system_from(problem, [1.0, 1.0, 1.0])
}

/// Damped fixed-point iteration from `init`.
///
/// The damping factor starts at [`SOLVER_DAMPING`] and is halved whenever the
/// residual grows (the plain map can oscillate). After a burn-in, Newton
/// steps with backtracking on the residual are tried first.
pub fn solve_system_from(problem: &TheoryProblem, init: [f64; 3]) -> Result<SolverSolution> {
    const NEWTON_AFTER: usize = 30;
    const MIN_DAMPING: f64 = 1e-3;
    let mut x = init;
    let mut fx = system_map(problem, x)?;
    let mut residual = max_abs_diff(fx, x);
    let mut omega = SOLVER_DAMPING;
    for it in 0..SOLVER_MAX_ITER {
        if residual < SOLVER_TOL {
            return Ok(SolverSolution {
                eta: x[0],
                tau: x[1],
                gamma: x[2],
                residual,
                iterations: it,
            });
        }
        if it >= NEWTON_AFTER {
            let mut accepted = None;
            if let Some(step) = newton_direction(problem, x, fx) {
                let mut t = 1.0;
                for _ in 0..8 {
                    let next = [x[0] + t * step[0], x[1] + t * step[1], x[2] + t * step[2]];
                    if in_domain(next) {
                        if let Ok(f_next) = system_map(problem, next) {
                            let r = max_abs_diff(f_next, next);
                            if r < residual {
                                accepted = Some((next, f_next, r));
                                break;
                            }
                        }
                    }
                    t *= 0.5;
                }
            }
            if let Some((next, f_next, r)) = accepted {
                x = next;
                fx = f_next;
                residual = r;
                continue;
            }
        }
        let next = [
            x[0] + omega * (fx[0] - x[0]),
            x[1] + omega * (fx[1] - x[1]),
            x[2] + omega * (fx[2] - x[2]),
        ];
        let f_next = system_map(problem, next)?;
        let r = max_abs_diff(f_next, next);
        if r > residual {
            omega = (0.5 * omega).max(MIN_DAMPING);
        }
        x = next;
        fx = f_next;
        residual = r;
    }
    Err(Error::NonConvergence {
        iterations: SOLVER_MAX_ITER,
        residual,
    })
}

/// Limits of `<w, w*>_Sigma` and `||w||_Sigma^2` for the solved system,
/// returned as the (alignment, norm) summary of the Gaussian model.
pub fn alignment_and_norm(
    problem: &TheoryProblem,
    sol: &SolverSolution,
) -> Result<GaussianModelPoint> {
    let (inner, norm2) = inner_and_norm2(problem, sol)?;
    if norm2 < 0.0 || !norm2.is_finite() {
        return Err(Error::NonFinite(format!("squared norm {norm2}")));
    }
    if norm2 == 0.0 {
        return GaussianModelPoint::new(0.0, 0.0);
    }
    let s = norm2.sqrt();
    GaussianModelPoint::new((inner / s).max(0.0), s)
}

/// `(E[2 eta c^2 / (lambda + tau sigma)], E[(gamma r sigma^2 + eta^2 c^2 sigma) / (lambda + tau sigma)^2])`.
pub fn inner_and_norm2(problem: &TheoryProblem, sol: &SolverSolution) -> Result<(f64, f64)> {
    let spec = &problem.spectrum;
    let (lambda, tau) = (problem.lambda, sol.tau);
    let c2 = problem.c * problem.c;
    let inner = 2.0 * sol.eta * c2 * beta_expect(spec, ExpectationKind::InvLin, lambda, tau)?;
    let norm2 = sol.eta * sol.eta * c2
        * beta_expect(spec, ExpectationKind::SigmaOverSq, lambda, tau)?
        + sol.gamma * problem.r * beta_expect(spec, ExpectationKind::Sigma2OverSq, lambda, tau)?;
    Ok((inner, norm2))
}

/// Log-spaced grid with `steps` points from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min) || steps < 2 {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < min < max and >= 2 steps, got ({min}, {max}, {steps})"
        )));
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..steps)
        .map(|i| {
            if i + 1 == steps {
                max
            } else {
                (a + (b - a) * i as f64 / (steps - 1) as f64).exp()
            }
        })
        .collect())
}

/// Default lambda grid: `10^-3 .. 10^2`, 60 points.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-3, 1e2, 60).expect("valid default grid")
}

/// Theory at one value of lambda (logloss).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub eta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alignment: f64,
    pub norm: f64,
    pub risk: f64,
    pub calibration: f64,
    pub refinement: f64,
    pub error_rate: f64,
    pub converged: bool,
}

impl SweepPoint {
    fn failed(lambda: f64) -> Self {
        SweepPoint {
            lambda,
            eta: f64::NAN,
            tau: f64::NAN,
            gamma: f64::NAN,
            alignment: f64::NAN,
            norm: f64::NAN,
            risk: f64::NAN,
            calibration: f64::NAN,
            refinement: f64::NAN,
            error_rate: f64::NAN,
            converged: false,
        }
    }
}

/// Solves the system at one lambda and evaluates the logloss decomposition.
pub fn theory_point(problem: &TheoryProblem) -> Result<SweepPoint> {
    let sol = solve_system(problem)?;
    let point = alignment_and_norm(problem, &sol)?;
    let calibration = calibration_error(point, LossKind::Logloss)?;
    let refinement = refinement_error(point, LossKind::Logloss)?;
    Ok(SweepPoint {
        lambda: problem.lambda,
        eta: sol.eta,
        tau: sol.tau,
        gamma: sol.gamma,
        alignment: point.alignment,
        norm: point.norm,
        risk: calibration + refinement,
        calibration,
        refinement,
        error_rate: error_rate(point),
        converged: true,
    })
}

/// Grid minimizer of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridArgmin {
    pub index: usize,
    pub lambda: f64,
    pub value: f64,
    /// The minimizer sits on the first or last grid point.
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub points: Vec<SweepPoint>,
}

impl LambdaSweep {
    fn argmin_by(&self, f: impl Fn(&SweepPoint) -> f64) -> Option<GridArgmin> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            let v = f(p);
            if p.converged && !v.is_nan() && best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        best.map(|(index, value)| GridArgmin {
            index,
            lambda: self.points[index].lambda,
            value,
            at_boundary: index == 0 || index + 1 == self.points.len(),
        })
    }

    pub fn argmin_risk(&self) -> Option<GridArgmin> {
        self.argmin_by(|p| p.risk)
    }

    pub fn argmin_calibration(&self) -> Option<GridArgmin> {
        self.argmin_by(|p| p.calibration)
    }

    pub fn argmin_refinement(&self) -> Option<GridArgmin> {
        self.argmin_by(|p| p.refinement)
    }

    /// Relative loss decrease from stopping at the refinement minimizer and
    /// zeroing calibration, `1 - min R / min (R + K)`.
    pub fn refine_then_calibrate_gain(&self) -> Option<f64> {
        let r = self.argmin_refinement()?.value;
        let l = self.argmin_risk()?.value;
        Some(1.0 - r / l)
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| !p.converged).count()
    }
}

/// Learning curve over lambda. Solver failures are kept as non-converged points.
pub fn lambda_sweep(base: &TheoryProblem, grid: &[f64]) -> Result<LambdaSweep> {
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) || grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidParameter(
            "lambda grid must be positive and strictly increasing".into(),
        ));
    }
    let points = grid
        .par_iter()
        .map(|&lambda| {
            base.at_lambda(lambda)
                .and_then(|p| theory_point(&p))
                .unwrap_or_else(|_| SweepPoint::failed(lambda))
        })
        .collect();
    Ok(LambdaSweep { points })
}

/// One cell of the (r, e*) heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub r: f64,
    pub estar: f64,
    pub lambda_cal: f64,
    pub lambda_ref: f64,
    pub lambda_loss: f64,
    /// `log10(lambda_cal / lambda_ref)`.
    pub log10_gap: f64,
    /// `100 (1 - min R / min (R + K))`.
    pub gain_percent: f64,
    pub cal_at_boundary: bool,
    pub ref_at_boundary: bool,
    pub failed_points: usize,
    pub ok: bool,
}

fn heatmap_cell(spectrum: &SpectralDist, r: f64, estar: f64, grid: &[f64]) -> HeatmapCell {
    let mut cell = HeatmapCell {
        r,
        estar,
        lambda_cal: f64::NAN,
        lambda_ref: f64::NAN,
        lambda_loss: f64::NAN,
        log10_gap: f64::NAN,
        gain_percent: f64::NAN,
        cal_at_boundary: false,
        ref_at_boundary: false,
        failed_points: grid.len(),
        ok: false,
    };
    let Ok(base) = TheoryProblem::new(r, estar, *spectrum, grid[0]) else {
        return cell;
    };
    let Ok(sweep) = lambda_sweep(&base, grid) else {
        return cell;
    };
    cell.failed_points = sweep.failures();
    if let (Some(cal), Some(rf), Some(loss)) = (
        sweep.argmin_calibration(),
        sweep.argmin_refinement(),
        sweep.argmin_risk(),
    ) {
        cell.lambda_cal = cal.lambda;
        cell.lambda_ref = rf.lambda;
        cell.lambda_loss = loss.lambda;
        cell.log10_gap = (cal.lambda / rf.lambda).log10();
        cell.gain_percent = 100.0 * (1.0 - rf.value / loss.value);
        cell.cal_at_boundary = cal.at_boundary;
        cell.ref_at_boundary = rf.at_boundary;
        cell.ok = true;
    }
    cell
}

/// Minimizer gap and refine-then-calibrate gain over an `(r, e*)` grid,
/// row-major in `r` then `e*`.
pub fn minimizer_gap_and_gain(
    spectrum: &SpectralDist,
    r_grid: &[f64],
    estar_grid: &[f64],
    lambda_grid: &[f64],
) -> Result<Vec<HeatmapCell>> {
    if r_grid.is_empty() || estar_grid.is_empty() {
        return Err(Error::InvalidParameter("empty r or e* grid".into()));
    }
    if let Some(bad) = r_grid.iter().find(|&&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter(format!("r must be > 0, got {bad}")));
    }
    if let Some(bad) = estar_grid.iter().find(|&&e| !(e > 0.0 && e < 0.5)) {
        return Err(Error::InvalidParameter(format!("e* must lie in (0, 0.5), got {bad}")));
    }
    if lambda_grid.len() < 2 || lambda_grid.windows(2).any(|w| !(w[0] > 0.0 && w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "lambda grid must be positive and strictly increasing".into(),
        ));
    }
    let cells: Vec<(f64, f64)> = r_grid
        .iter()
        .flat_map(|&r| estar_grid.iter().map(move |&e| (r, e)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(r, e)| heatmap_cell(spectrum, r, e, lambda_grid))
        .collect())
}
