//! Finite-sample counterpart of [`crate::highdim`]: sample the two-class
//! Gaussian model with a diagonal covariance, fit ridge logistic regression by
//! Newton's method, and average the resulting errors over seeds.

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{calibration_error, refinement_error, GaussianModelPoint};
use crate::highdim::{lambda_sweep, SpectralDist, SweepPoint, TheoryProblem};
use crate::scores::{LossKind, PredictionSet};
use crate::special::{sigmoid, softplus};

/// Stop once the gradient max-norm falls below this.
pub const GRAD_TOL: f64 = 1e-9;
pub const MAX_NEWTON_ITER: usize = 500;
/// Weight norm beyond which an unregularized fit is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Relative predicted decrease below which the objective is flat to round-off.
const FLAT_DECREASE: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// `n x p` design matrix.
    pub features: Mat<f64>,
    /// Labels in `{-1, +1}`.
    pub labels: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma_diag: Vec<f64>,
}

impl SyntheticDataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }
}

fn sample_sigma(spectrum: &SpectralDist, rng: &mut ChaCha8Rng) -> Result<f64> {
    match *spectrum {
        SpectralDist::Beta {
            alpha,
            beta,
            epsilon,
        } => {
            let b = Beta::new(alpha, beta)
                .map_err(|e| Error::InvalidParameter(format!("beta spectrum: {e}")))?;
            Ok(epsilon + b.sample(rng))
        }
        SpectralDist::Point { value } => Ok(value),
    }
}

/// Draws `sigma_i ~ F`, `mu_i ~ N(0, c^2 / p)`, balanced labels `y` and
/// `x = y mu + Sigma^(1/2) z`. Deterministic in `seed`.
pub fn sample_dataset(
    n: usize,
    p: usize,
    c: f64,
    spectrum: &SpectralDist,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidParameter(format!(
            "dataset needs n, p >= 1, got ({n}, {p})"
        )));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("c must be >= 0, got {c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_diag = (0..p)
        .map(|_| sample_sigma(spectrum, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mu_sd = c / (p as f64).sqrt();
    let mu: Vec<f64> = (0..p)
        .map(|_| mu_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let sd: Vec<f64> = sigma_diag.iter().map(|s| s.sqrt()).collect();

    let mut features = Mat::<f64>::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        labels.push(y);
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            features[(i, j)] = y * mu[j] + sd[j] * z;
        }
    }
    Ok(SyntheticDataset {
        features,
        labels,
        mu,
        sigma_diag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogregFit {
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the gradient at `weights`.
    pub grad_norm: f64,
    pub objective: f64,
}

fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn mat_vec(a: MatRef<'_, f64>, v: &Mat<f64>) -> Vec<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), 1);
    matmul(out.as_mut(), Accum::Replace, a, v.as_ref(), 1.0, Par::Seq);
    (0..a.nrows()).map(|i| out[(i, 0)]).collect()
}

/// Objective, gradient and margins `y_i w^T x_i` at `w`.
struct Evaluation {
    objective: f64,
    grad: Vec<f64>,
    margins: Vec<f64>,
}

fn evaluate(data: &SyntheticDataset, lambda: f64, w: &[f64]) -> Evaluation {
    let n = data.n() as f64;
    let xw = mat_vec(data.features.as_ref(), &col(w));
    let margins: Vec<f64> = xw.iter().zip(&data.labels).map(|(v, y)| v * y).collect();
    let w2: f64 = w.iter().map(|v| v * v).sum();
    let objective = margins.iter().map(|&m| softplus(-m)).sum::<f64>() / n + 0.5 * lambda * w2;
    let resid: Vec<f64> = margins
        .iter()
        .zip(&data.labels)
        .map(|(&m, y)| -y * sigmoid(-m) / n)
        .collect();
    let mut grad = mat_vec(data.features.transpose(), &col(&resid));
    for (g, wi) in grad.iter_mut().zip(w) {
        *g += lambda * wi;
    }
    Evaluation {
        objective,
        grad,
        margins,
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton direction `-H^-1 g` with `H = X^T D X / n + lambda I`.
fn newton_direction(data: &SyntheticDataset, lambda: f64, eval: &Evaluation) -> Option<Vec<f64>> {
    let (n, p) = (data.n(), data.p());
    let scale: Vec<f64> = eval
        .margins
        .iter()
        .map(|&m| (sigmoid(m) * sigmoid(-m) / n as f64).sqrt())
        .collect();
    let xs = Mat::from_fn(n, p, |i, j| scale[i] * data.features[(i, j)]);
    let mut h = Mat::<f64>::zeros(p, p);
    triangular::matmul(
        h.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        xs.transpose(),
        BlockStructure::Rectangular,
        xs.as_ref(),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    for j in 0..p {
        h[(j, j)] += lambda;
    }
    let llt = h.llt(Side::Lower).ok()?;
    let step = llt.solve(col(&eval.grad));
    let d: Vec<f64> = (0..p).map(|i| -step[(i, 0)]).collect();
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Minimizes `(1/n) sum log(1 + exp(-y_i w^T x_i)) + (lambda/2) ||w||^2` from `w = 0`.
pub fn fit_logreg(data: &SyntheticDataset, lambda: f64) -> Result<LogregFit> {
    fit_logreg_from(data, lambda, None)
}

/// Damped Newton with Armijo backtracking, started from `init` (zero if `None`).
pub fn fit_logreg_from(
    data: &SyntheticDataset,
    lambda: f64,
    init: Option<&[f64]>,
) -> Result<LogregFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let p = data.p();
    let mut w = match init {
        Some(w0) if w0.len() != p => {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: w0.len(),
            })
        }
        Some(w0) => w0.to_vec(),
        None => vec![0.0; p],
    };
    let mut eval = evaluate(data, lambda, &w);
    for it in 0..MAX_NEWTON_ITER {
        let gnorm = max_norm(&eval.grad);
        if gnorm < GRAD_TOL {
            if lambda == 0.0 && eval.margins.iter().all(|&m| m > 0.0) {
                // separable: scaling w up keeps lowering the loss
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                return Err(Error::DivergingNorm { norm });
            }
            return Ok(LogregFit {
                weights: w,
                iterations: it,
                grad_norm: gnorm,
                objective: eval.objective,
            });
        }
        let wnorm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if wnorm > DIVERGENCE_NORM {
            return Err(Error::DivergingNorm { norm: wnorm });
        }
        let Some(d) = newton_direction(data, lambda, &eval) else {
            if lambda == 0.0 {
                return Err(Error::DivergingNorm { norm: wnorm });
            }
            return Err(Error::NonFinite("singular Newton system".into()));
        };
        let slope: f64 = d.iter().zip(&eval.grad).map(|(a, b)| a * b).sum();
        let (next, next_eval) = if -slope <= FLAT_DECREASE * (1.0 + eval.objective.abs()) {
            // the predicted decrease is below the objective's round-off, so the
            // line search cannot tell steps apart; inside the quadratic region
            // the full step is safe as long as the gradient shrinks
            let trial: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + b).collect();
            let te = evaluate(data, lambda, &trial);
            if max_norm(&te.grad) >= gnorm {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residual: gnorm,
                });
            }
            (trial, te)
        } else {
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let te = evaluate(data, lambda, &trial);
                if te.objective <= eval.objective + ARMIJO * t * slope
                    && te.objective < eval.objective
                {
                    accepted = Some((trial, te));
                    break;
                }
                t *= 0.5;
            }
            accepted.ok_or(Error::NonConvergence {
                iterations: it,
                residual: gnorm,
            })?
        };
        w = next;
        eval = next_eval;
    }
    let gnorm = max_norm(&eval.grad);
    if gnorm < GRAD_TOL {
        return Ok(LogregFit {
            weights: w,
            iterations: MAX_NEWTON_ITER,
            grad_norm: gnorm,
            objective: eval.objective,
        });
    }
    Err(Error::NonConvergence {
        iterations: MAX_NEWTON_ITER,
        residual: gnorm,
    })
}

/// `(a, s)` with `a = 2 w^T mu / ||w||_Sigma` and `s = ||w||_Sigma`. A zero `w`
/// gives `(0, 0)`; anti-aligned weights are rejected.
pub fn empirical_alignment_norm(w: &[f64], data: &SyntheticDataset) -> Result<GaussianModelPoint> {
    if w.len() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: data.p(),
            got: w.len(),
        });
    }
    let inner: f64 = 2.0 * w.iter().zip(&data.mu).map(|(a, b)| a * b).sum::<f64>();
    let norm2: f64 = w
        .iter()
        .zip(&data.sigma_diag)
        .map(|(a, s)| s * a * a)
        .sum();
    if norm2 == 0.0 {
        return GaussianModelPoint::new(0.0, 0.0);
    }
    let s = norm2.sqrt();
    if inner < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "weights are anti-aligned with the Bayes direction (alignment {})",
            inner / s
        )));
    }
    GaussianModelPoint::new(inner / s, s)
}

/// Mean and normal-approximation 95% interval across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SeedSummary {
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        if xs.len() < 2 {
            return SeedSummary {
                mean,
                lo: mean,
                hi: mean,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let half = 1.96 * (var / m).sqrt();
        SeedSummary {
            mean,
            lo: mean - half,
            hi: mean + half,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPoint {
    pub lambda: f64,
    pub risk: SeedSummary,
    pub calibration: SeedSummary,
    pub refinement: SeedSummary,
    pub alignment: SeedSummary,
    pub norm: SeedSummary,
    pub theory: SweepPoint,
}

impl EmpiricalPoint {
    /// Theory calibration and refinement both inside the empirical intervals.
    pub fn theory_covered(&self) -> bool {
        self.theory.converged
            && self.calibration.contains(self.theory.calibration)
            && self.refinement.contains(self.theory.refinement)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub n: usize,
    pub p: usize,
    pub points: Vec<EmpiricalPoint>,
    pub seeds_used: usize,
    /// Seeds whose fits failed, with the reason.
    pub dropped: Vec<(u64, String)>,
}

impl Replication {
    /// Fraction of grid points where the theory lies inside both intervals.
    pub fn theory_coverage(&self) -> f64 {
        let hits = self.points.iter().filter(|p| p.theory_covered()).count();
        hits as f64 / self.points.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct SeedPoint {
    calibration: f64,
    refinement: f64,
    alignment: f64,
    norm: f64,
}

/// Fits one seed along the grid, from the largest lambda down, warm-starting
/// each fit from the previous solution.
fn run_seed(
    base: &TheoryProblem,
    grid: &[f64],
    n: usize,
    p: usize,
    seed: u64,
) -> Result<Vec<SeedPoint>> {
    let data = sample_dataset(n, p, base.c, &base.spectrum, seed)?;
    let mut out = vec![None; grid.len()];
    let mut warm: Option<Vec<f64>> = None;
    for (i, &lambda) in grid.iter().enumerate().rev() {
        let fit = fit_logreg_from(&data, lambda, warm.as_deref())?;
        let pt = empirical_alignment_norm(&fit.weights, &data)?;
        out[i] = Some(SeedPoint {
            calibration: calibration_error(pt, LossKind::Logloss)?,
            refinement: refinement_error(pt, LossKind::Logloss)?,
            alignment: pt.alignment,
            norm: pt.norm,
        });
        warm = Some(fit.weights);
    }
    Ok(out.into_iter().map(|p| p.expect("every grid point fitted")).collect())
}

/// Empirical learning curve over `seeds` datasets of size `n` with
/// `p = round(r n)`, next to the asymptotic prediction. Dataset `i` uses seed
/// `i + 1`; seeds whose fit fails are dropped and reported.
pub fn replicate_learning_curve(
    base: &TheoryProblem,
    grid: &[f64],
    n: usize,
    seeds: usize,
) -> Result<Replication> {
    if seeds == 0 {
        return Err(Error::InvalidParameter("at least one seed is required".into()));
    }
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) || grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidParameter(
            "lambda grid must be positive and strictly increasing".into(),
        ));
    }
    let p = (base.r * n as f64).round() as usize;
    if n == 0 || p == 0 {
        return Err(Error::InvalidParameter(format!(
            "n = {n} and r = {} give an empty design",
            base.r
        )));
    }
    let theory = lambda_sweep(base, grid)?;
    let runs: Vec<(u64, Result<Vec<SeedPoint>>)> = (1..=seeds as u64)
        .into_par_iter()
        .map(|seed| (seed, run_seed(base, grid, n, p, seed)))
        .collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (seed, run) in runs {
        match run {
            Ok(points) => kept.push(points),
            Err(e) => dropped.push((seed, e.to_string())),
        }
    }
    if kept.is_empty() {
        return Err(Error::NonFinite(format!("all {seeds} seeds failed")));
    }
    let points = grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let col = |f: fn(&SeedPoint) -> f64| {
                let xs: Vec<f64> = kept.iter().map(|run| f(&run[i])).collect();
                SeedSummary::from_samples(&xs)
            };
            EmpiricalPoint {
                lambda,
                risk: col(|s| s.calibration + s.refinement),
                calibration: col(|s| s.calibration),
                refinement: col(|s| s.refinement),
                alignment: col(|s| s.alignment),
                norm: col(|s| s.norm),
                theory: theory.points[i],
            }
        })
        .collect();
    Ok(Replication {
        n,
        p,
        points,
        seeds_used: kept.len(),
        dropped,
    })
}

/// Fresh draws `(z, label)` of the reduced Gaussian model. The same draws
/// can be rendered as predictions of any model point, which mimics evaluating
/// successive checkpoints on one fixed validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSample {
    pub z: Vec<f64>,
    /// Class labels in `{0, 1}`, balanced in expectation.
    pub labels: Vec<usize>,
}

impl ModelSample {
    pub fn draw(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyData);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(usize::from(rng.random::<bool>()));
            z.push(rng.sample::<f64, _>(StandardNormal));
        }
        Ok(ModelSample { z, labels })
    }

    /// Binary predictions whose class-1 logit is `+-s (z + a/2)`, the sign
    /// following the label.
    pub fn predictions(&self, point: GaussianModelPoint) -> Result<PredictionSet> {
        let (a, s) = (point.alignment, point.norm);
        let mut probs = Vec::with_capacity(2 * self.z.len());
        for (&z, &y) in self.z.iter().zip(&self.labels) {
            let margin = s * (z + 0.5 * a);
            let logit = if y == 1 { margin } else { -margin };
            probs.push(sigmoid(-logit));
            probs.push(sigmoid(logit));
        }
        PredictionSet::new(probs, self.labels.clone(), 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(seed: u64) -> SyntheticDataset {
        sample_dataset(200, 20, 1.5, &SpectralDist::uniform(), seed).unwrap()
    }

    #[test]
    fn model_sample_error_rate() {
        let sample = ModelSample::draw(200_000, 3).unwrap();
        assert_eq!(sample, ModelSample::draw(200_000, 3).unwrap());
        let pt = GaussianModelPoint::new(2.0, 5.0).unwrap();
        let acc = crate::scores::accuracy(&sample.predictions(pt).unwrap()).unwrap();
        // Phi(1) = 0.8413; sd of the estimate ~ 8e-4
        assert_abs_diff_eq!(acc, crate::special::norm_cdf(1.0), epsilon = 4e-3);
        assert!(ModelSample::draw(0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let (a, b) = (small(7), small(7));
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.mu, b.mu);
        assert!(a.features == b.features);
        assert_ne!(small(8).mu, a.mu);
    }

    #[test]
    fn spectrum_in_support() {
        let d = small(1);
        assert!(d.sigma_diag.iter().all(|&s| (1e-3..=1.001).contains(&s)));
        assert!(d.labels.iter().all(|&y| y == 1.0 || y == -1.0));
    }

    #[test]
    fn zero_separability_gives_zero_means() {
        let d = sample_dataset(10, 4, 0.0, &SpectralDist::uniform(), 3).unwrap();
        assert!(d.mu.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(sample_dataset(0, 4, 1.0, &SpectralDist::uniform(), 0).is_err());
        assert!(sample_dataset(4, 0, 1.0, &SpectralDist::uniform(), 0).is_err());
        assert!(sample_dataset(4, 4, -1.0, &SpectralDist::uniform(), 0).is_err());
    }

    #[test]
    fn fit_is_stationary() {
        let d = small(2);
        let fit = fit_logreg(&d, 0.1).unwrap();
        assert!(fit.grad_norm < GRAD_TOL);
        let again = evaluate(&d, 0.1, &fit.weights);
        assert!(max_norm(&again.grad) < GRAD_TOL);
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let fit = fit_logreg(&small(3), 1e6).unwrap();
        let norm = fit.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-4);
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let d = small(4);
        let cold = fit_logreg(&d, 0.05).unwrap();
        let seed = fit_logreg(&d, 0.5).unwrap();
        let warm = fit_logreg_from(&d, 0.05, Some(&seed.weights)).unwrap();
        for (a, b) in cold.weights.iter().zip(&warm.weights) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn separable_unregularized_fit_diverges() {
        let features = Mat::from_fn(4, 1, |i, _| [-2.0, -1.0, 1.0, 2.0][i]);
        let d = SyntheticDataset {
            features,
            labels: vec![-1.0, -1.0, 1.0, 1.0],
            mu: vec![1.0],
            sigma_diag: vec![1.0],
        };
        assert!(matches!(fit_logreg(&d, 0.0), Err(Error::DivergingNorm { .. })));
    }

    #[test]
    fn alignment_examples() {
        let d = small(5);
        let wstar: Vec<f64> = d.mu.iter().zip(&d.sigma_diag).map(|(m, s)| 2.0 * m / s).collect();
        let pt = empirical_alignment_norm(&wstar, &d).unwrap();
        let q: f64 = d.mu.iter().zip(&d.sigma_diag).map(|(m, s)| m * m / s).sum();
        assert_abs_diff_eq!(pt.alignment, 2.0 * q.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(pt.norm, 2.0 * q.sqrt(), epsilon = 1e-12);

        let zero = empirical_alignment_norm(&vec![0.0; d.p()], &d).unwrap();
        assert_eq!((zero.alignment, zero.norm), (0.0, 0.0));

        let w: Vec<f64> = (0..d.p()).map(|i| ((i * 7 % 5) as f64) - 1.0 + d.mu[i].signum()).collect();
        let w10: Vec<f64> = w.iter().map(|v| 10.0 * v).collect();
        if let (Ok(a), Ok(b)) = (empirical_alignment_norm(&w, &d), empirical_alignment_norm(&w10, &d)) {
            assert_abs_diff_eq!(a.alignment, b.alignment, epsilon = 1e-12);
            assert_abs_diff_eq!(b.norm, 10.0 * a.norm, epsilon = 1e-10);
        }
    }

    #[test]
    fn one_seed_interval_is_degenerate() {
        let s = SeedSummary::from_samples(&[0.25]);
        assert_eq!((s.lo, s.mean, s.hi), (0.25, 0.25, 0.25));
    }

    #[test]
    fn zero_seeds_rejected() {
        let base = TheoryProblem::new(0.5, 0.1, SpectralDist::uniform(), 1.0).unwrap();
        assert!(replicate_learning_curve(&base, &[0.1, 1.0], 50, 0).is_err());
    }
}
