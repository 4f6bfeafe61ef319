//! Post-hoc calibrators.
//!
//! Temperature scaling maps `p` to `softmax(beta * log p)`. The inverse
//! temperature is fitted by bisection on the derivative of the empirical loss
//! with respect to `b = log beta` over `b in [-16, 16]`. Isotonic regression
//! (binary only) is fitted with pool-adjacent-violators.
//!
//! Both calibrators optionally mix their output with the uniform distribution
//! at weight `1 / (N + 1)`, where `N` is the size of the fitting set.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{LossKind, PredictionSet, ProbVector, LOG_CLIP};

/// Half-width of the search interval for `log beta`.
pub const LOG_BETA_BOUND: f64 = 16.0;
/// Number of bisection steps.
pub const BISECTION_STEPS: usize = 30;
/// `|dL/dbeta|` below this everywhere on the scan grid means a flat objective.
pub const DERIVATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureCalibrator {
    pub beta: f64,
    /// Size of the fitting set for Laplace smoothing; 0 disables smoothing.
    pub smoothing_n: usize,
}

impl TemperatureCalibrator {
    pub fn new(beta: f64, smoothing_n: usize) -> Result<Self> {
        let (lo, hi) = ((-LOG_BETA_BOUND).exp(), LOG_BETA_BOUND.exp());
        // beta = 0 is accepted as the degenerate "forget everything" map
        if !(beta == 0.0 || (lo * (1.0 - 1e-12)..=hi * (1.0 + 1e-12)).contains(&beta)) {
            return Err(Error::InvalidParameter(format!(
                "beta = {beta} outside [e^-16, e^16]"
            )));
        }
        Ok(TemperatureCalibrator { beta, smoothing_n })
    }

    pub fn identity() -> Self {
        TemperatureCalibrator {
            beta: 1.0,
            smoothing_n: 0,
        }
    }

    /// Applies the map to one row without validation.
    pub fn apply_row(&self, p: &[f64]) -> Vec<f64> {
        let k = p.len();
        let mut out: Vec<f64> = p.iter().map(|&v| self.beta * v.max(LOG_CLIP).ln()).collect();
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        out.iter_mut().for_each(|v| *v /= sum);
        laplace_smooth(&mut out, self.smoothing_n, k);
        out
    }

    pub fn apply(&self, p: &ProbVector) -> ProbVector {
        ProbVector::from_vec_unchecked(self.apply_row(p))
    }

    pub fn apply_set(&self, data: &PredictionSet) -> PredictionSet {
        data.map_rows(|p| self.apply_row(p))
    }
}

fn laplace_smooth(p: &mut [f64], n_cal: usize, k: usize) {
    if n_cal == 0 {
        return;
    }
    let w = 1.0 / (n_cal as f64 + 1.0);
    let u = 1.0 / k as f64;
    p.iter_mut().for_each(|v| *v = (1.0 - w) * *v + w * u);
}

/// Empirical loss of temperature-scaled predictions as a function of beta.
struct TemperatureObjective<'a> {
    log_p: Vec<f64>,
    data: &'a PredictionSet,
    loss: LossKind,
}

impl<'a> TemperatureObjective<'a> {
    fn new(data: &'a PredictionSet, loss: LossKind) -> Self {
        let log_p = data.probs().iter().map(|v| v.max(LOG_CLIP).ln()).collect();
        TemperatureObjective { log_p, data, loss }
    }

    /// Returns `(L(beta), dL/dbeta)`.
    fn eval(&self, beta: f64) -> (f64, f64) {
        self.eval_parts(beta, true)
    }

    /// As [`Self::eval`]; the loss is left at zero unless `with_loss`.
    fn eval_parts(&self, beta: f64, with_loss: bool) -> (f64, f64) {
        let k = self.data.k();
        let mut q = vec![0.0; k];
        let (mut total, mut grad) = (0.0, 0.0);
        for (z, &y) in self.log_p.chunks_exact(k).zip(self.data.labels()) {
            let max = z.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (qj, zj) in q.iter_mut().zip(z) {
                *qj = (beta * zj - max).exp();
                s += *qj;
            }
            q.iter_mut().for_each(|v| *v /= s);
            let zbar: f64 = q.iter().zip(z).map(|(a, b)| a * b).sum();
            match self.loss {
                LossKind::Logloss => {
                    // -log softmax(beta z)_y = logsumexp(beta z) - beta z_y
                    if with_loss {
                        total += max + s.ln() - beta * z[y];
                    }
                    grad += zbar - z[y];
                }
                LossKind::Brier => {
                    for j in 0..k {
                        let e = if j == y { 1.0 } else { 0.0 };
                        total += (q[j] - e) * (q[j] - e);
                        grad += 2.0 * (q[j] - e) * q[j] * (z[j] - zbar);
                    }
                }
            }
        }
        let n = self.data.n() as f64;
        (total / n, grad / n)
    }

    fn loss_at(&self, beta: f64) -> f64 {
        self.eval(beta).0
    }

    /// Derivative with respect to `b = log beta`.
    fn dlog(&self, b: f64) -> f64 {
        let beta = b.exp();
        beta * self.eval_parts(beta, false).1
    }
}

/// Empirical loss of `softmax(beta log p)` on `data`, without smoothing.
pub fn temperature_loss(data: &PredictionSet, loss: LossKind, beta: f64) -> f64 {
    TemperatureObjective::new(data, loss).loss_at(beta)
}

/// Analytic `dL/dbeta` of [`temperature_loss`].
pub fn temperature_loss_derivative(data: &PredictionSet, loss: LossKind, beta: f64) -> f64 {
    TemperatureObjective::new(data, loss).eval(beta).1
}

/// Fits the inverse temperature by bisection on `dL/db`, `b = log beta`.
///
/// Log loss is convex in `b`, so one bisection over `[-16, 16]` suffices. The
/// Brier objective is not convex and flattens out in both tails, so `dL/db`
/// is first evaluated on a unit-spaced grid; every sign change from negative
/// to positive is refined by bisection, the interval ends count as candidates
/// when the loss is still falling (resp. rising) there, and the candidate with
/// the lowest loss wins. An identically flat objective gives `beta = 1`.
pub fn fit_temperature(
    data: &PredictionSet,
    loss: LossKind,
    smoothing: bool,
) -> Result<TemperatureCalibrator> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let obj = TemperatureObjective::new(data, loss);
    let b = match loss {
        LossKind::Logloss => convex_search(&obj),
        LossKind::Brier => grid_search(&obj),
    };
    if !b.is_finite() {
        return Err(Error::NonFinite("temperature bisection".into()));
    }
    Ok(TemperatureCalibrator {
        beta: b.exp(),
        smoothing_n: if smoothing { data.n() } else { 0 },
    })
}

fn convex_search(obj: &TemperatureObjective<'_>) -> f64 {
    let (lo, hi) = (-LOG_BETA_BOUND, LOG_BETA_BOUND);
    let g_lo = obj.eval_parts(lo.exp(), false).1;
    let g_hi = obj.eval_parts(hi.exp(), false).1;
    // dL/dbeta is nondecreasing, so small at both ends means flat throughout
    if g_lo.abs() < DERIVATIVE_TOL && g_hi.abs() < DERIVATIVE_TOL {
        0.0
    } else if g_lo >= 0.0 {
        lo
    } else if g_hi <= 0.0 {
        hi
    } else {
        bisect(obj, lo, hi)
    }
}

fn grid_search(obj: &TemperatureObjective<'_>) -> f64 {
    let steps = (2.0 * LOG_BETA_BOUND) as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| -LOG_BETA_BOUND + i as f64).collect();
    let grads: Vec<f64> = grid.iter().map(|&b| obj.eval_parts(b.exp(), false).1).collect();
    if grads.iter().all(|g| g.abs() < DERIVATIVE_TOL) {
        return 0.0;
    }
    let d: Vec<f64> = grid.iter().zip(&grads).map(|(&b, g)| b.exp() * g).collect();
    let mut candidates = Vec::new();
    if d[0] >= 0.0 {
        candidates.push(grid[0]);
    }
    if d[steps] <= 0.0 {
        candidates.push(grid[steps]);
    }
    for i in 0..=steps {
        if d[i] == 0.0 {
            candidates.push(grid[i]);
        } else if i > 0 && d[i - 1] < 0.0 && d[i] > 0.0 {
            candidates.push(bisect(obj, grid[i - 1], grid[i]));
        }
    }
    candidates
        .into_iter()
        .map(|b| (obj.loss_at(b.exp()), b))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map_or(0.0, |(_, b)| b)
}

/// Root of `dL/db` in `[lo, hi]`, where it goes from negative to positive.
fn bisect(obj: &TemperatureObjective<'_>, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let d = obj.dlog(mid);
        if d == 0.0 {
            return mid;
        }
        if d > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A binary monotone step map on the class-1 score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicCalibrator {
    /// Left end of each step, strictly increasing.
    pub breakpoints: Vec<f64>,
    /// Calibrated class-1 probability on each step, nondecreasing.
    pub values: Vec<f64>,
    pub smoothing_n: usize,
}

impl IsotonicCalibrator {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, smoothing_n: usize) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::InvalidParameter(
                "isotonic breakpoints and values must be nonempty and of equal length".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "isotonic breakpoints must be strictly increasing".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] > w[1]) || values.iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidParameter(
                "isotonic values must be nondecreasing in [0, 1]".into(),
            ));
        }
        Ok(IsotonicCalibrator {
            breakpoints,
            values,
            smoothing_n,
        })
    }

    /// Step value for a class-1 score, using left-closed intervals.
    pub fn step_value(&self, score: f64) -> f64 {
        // number of breakpoints <= score
        let idx = self.breakpoints.partition_point(|&b| b <= score);
        self.values[idx.saturating_sub(1)]
    }

    pub fn apply_row(&self, p: &[f64]) -> Vec<f64> {
        let mut v = self.step_value(p[1]);
        if self.smoothing_n > 0 {
            let w = 1.0 / (self.smoothing_n as f64 + 1.0);
            v = (1.0 - w) * v + w * 0.5;
        }
        vec![1.0 - v, v]
    }

    pub fn apply(&self, p: &ProbVector) -> Result<ProbVector> {
        if p.k() != 2 {
            return Err(Error::UnsupportedMulticlass { k: p.k() });
        }
        Ok(ProbVector::from_vec_unchecked(self.apply_row(p)))
    }

    pub fn apply_set(&self, data: &PredictionSet) -> Result<PredictionSet> {
        if data.k() != 2 {
            return Err(Error::UnsupportedMulticlass { k: data.k() });
        }
        Ok(data.map_rows(|p| self.apply_row(p)))
    }
}

/// Weighted pool-adjacent-violators. Returns `(first index, value)` per block.
pub fn pool_adjacent_violators(y: &[f64], w: &[f64]) -> Vec<(usize, f64)> {
    // stack of (start, weighted sum, weight)
    let mut blocks: Vec<(usize, f64, f64)> = Vec::with_capacity(y.len());
    for (i, (&yi, &wi)) in y.iter().zip(w).enumerate() {
        blocks.push((i, yi * wi, wi));
        while blocks.len() > 1 {
            let (_, s1, w1) = blocks[blocks.len() - 1];
            let (start0, s0, w0) = blocks[blocks.len() - 2];
            if s0 / w0 > s1 / w1 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (start0, s0 + s1, w0 + w1);
            } else {
                break;
            }
        }
    }
    blocks.into_iter().map(|(s, sum, wt)| (s, sum / wt)).collect()
}

/// Fits a binary isotonic calibrator on the class-1 probabilities.
pub fn fit_isotonic(data: &PredictionSet, smoothing: bool) -> Result<IsotonicCalibrator> {
    if data.k() != 2 {
        return Err(Error::UnsupportedMulticlass { k: data.k() });
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut pts: Vec<(f64, f64)> = data
        .rows()
        .map(|(p, y)| (p[1], if y == 1 { 1.0 } else { 0.0 }))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // pool tied scores first
    let mut scores = Vec::new();
    let mut means = Vec::new();
    let mut weights = Vec::new();
    for (s, y) in pts {
        if scores.last() == Some(&s) {
            let j = scores.len() - 1;
            means[j] += y;
            weights[j] += 1.0;
        } else {
            scores.push(s);
            means.push(y);
            weights.push(1.0);
        }
    }
    for (m, w) in means.iter_mut().zip(&weights) {
        *m /= w;
    }

    let blocks = pool_adjacent_violators(&means, &weights);
    let breakpoints = blocks.iter().map(|&(i, _)| scores[i]).collect();
    let values = blocks.iter().map(|&(_, v)| v.clamp(0.0, 1.0)).collect();
    Ok(IsotonicCalibrator {
        breakpoints,
        values,
        smoothing_n: if smoothing { data.n() } else { 0 },
    })
}

/// A fitted calibrator of either kind, as serialized by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Calibrator {
    Temperature(TemperatureCalibrator),
    Isotonic(IsotonicCalibrator),
}

impl Calibrator {
    pub fn apply_set(&self, data: &PredictionSet) -> Result<PredictionSet> {
        match self {
            Calibrator::Temperature(t) => Ok(t.apply_set(data)),
            Calibrator::Isotonic(iso) => iso.apply_set(data),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binary(scores: &[f64], labels: &[usize]) -> PredictionSet {
        let probs = scores.iter().flat_map(|&s| [1.0 - s, s]).collect();
        PredictionSet::new(probs, labels.to_vec(), 2).unwrap()
    }

    #[test]
    fn uniform_input_gives_unit_beta() {
        let data = PredictionSet::new(vec![1.0 / 3.0; 12], vec![0, 1, 2, 2], 3).unwrap();
        for loss in [LossKind::Logloss, LossKind::Brier] {
            let cal = fit_temperature(&data, loss, false).unwrap();
            assert_eq!(cal.beta, 1.0);
        }
    }

    #[test]
    fn monotone_objective_returns_upper_bound() {
        let data = PredictionSet::new(vec![0.9, 0.1], vec![0], 2).unwrap();
        let cal = fit_temperature(&data, LossKind::Logloss, false).unwrap();
        assert_eq!(cal.beta, LOG_BETA_BOUND.exp());
    }

    #[test]
    fn brier_with_flat_tails() {
        // Brier tends to 0.5 at both ends of the beta range
        let data = binary(&[0.2, 0.2, 0.2, 0.2, 0.7, 0.7, 0.7, 0.7], &[0, 0, 0, 1, 1, 1, 1, 0]);
        let cal = fit_temperature(&data, LossKind::Brier, false).unwrap();
        let fitted = temperature_loss(&data, LossKind::Brier, cal.beta);
        assert!(fitted <= temperature_loss(&data, LossKind::Brier, 1.0));
        let grid_best = (0..=4000)
            .map(|i| temperature_loss(&data, LossKind::Brier, (-4.0 + 0.002 * i as f64).exp()))
            .fold(f64::INFINITY, f64::min);
        assert!(fitted <= grid_best + 1e-12);
    }

    #[test]
    fn empty_rejected() {
        let data = PredictionSet::new(vec![], vec![], 2).unwrap();
        assert_eq!(fit_temperature(&data, LossKind::Logloss, true), Err(Error::EmptyData));
    }

    #[test]
    fn smoothing_records_fit_size() {
        let data = binary(&[0.2, 0.7, 0.9], &[0, 1, 0]);
        assert_eq!(fit_temperature(&data, LossKind::Logloss, true).unwrap().smoothing_n, 3);
        assert_eq!(fit_temperature(&data, LossKind::Logloss, false).unwrap().smoothing_n, 0);
    }

    #[test]
    fn apply_temperature_examples() {
        let p = ProbVector::new(vec![0.8, 0.2]).unwrap();
        let id = TemperatureCalibrator::identity().apply(&p);
        assert_abs_diff_eq!(id[0], 0.8, epsilon = 1e-15);
        let flat = TemperatureCalibrator::new(0.0, 0).unwrap().apply(&p);
        assert_eq!(&*flat, &[0.5, 0.5]);
        let sharp = TemperatureCalibrator::new(2.0, 0).unwrap().apply(&p);
        assert_abs_diff_eq!(sharp[0], 0.64 / 0.68, epsilon = 1e-15);
        assert_abs_diff_eq!(sharp[0], 0.941176, epsilon = 1e-6);
        assert_abs_diff_eq!(sharp[1], 0.058824, epsilon = 1e-6);
    }

    #[test]
    fn smoothing_mixes_with_uniform() {
        let p = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let out = TemperatureCalibrator::new(1.0, 3).unwrap().apply(&p);
        assert_abs_diff_eq!(out[1], 0.25 * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn analytic_derivative_matches_finite_differences() {
        let data = PredictionSet::new(
            vec![0.7, 0.2, 0.1, 0.1, 0.3, 0.6, 0.25, 0.25, 0.5, 0.05, 0.9, 0.05],
            vec![0, 2, 0, 1],
            3,
        )
        .unwrap();
        for loss in [LossKind::Logloss, LossKind::Brier] {
            for beta in [0.3, 1.0, 2.5] {
                let h = 1e-6;
                let fd = (temperature_loss(&data, loss, beta + h)
                    - temperature_loss(&data, loss, beta - h))
                    / (2.0 * h);
                let an = temperature_loss_derivative(&data, loss, beta);
                assert_abs_diff_eq!(fd, an, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn isotonic_examples() {
        let up = fit_isotonic(&binary(&[0.1, 0.9], &[0, 1]), false).unwrap();
        assert_eq!(up.values, vec![0.0, 1.0]);
        let pooled = fit_isotonic(&binary(&[0.1, 0.9], &[1, 0]), false).unwrap();
        assert_eq!(pooled.values, vec![0.5]);
        let iso = fit_isotonic(&binary(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1]), false).unwrap();
        let fitted: Vec<f64> = [0.1, 0.2, 0.3, 0.4].iter().map(|&s| iso.step_value(s)).collect();
        assert_eq!(fitted, vec![0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn isotonic_ties_pooled_first() {
        let iso = fit_isotonic(&binary(&[0.3, 0.3, 0.6], &[0, 1, 1]), false).unwrap();
        assert_eq!(iso.breakpoints, vec![0.3, 0.6]);
        assert_eq!(iso.values, vec![0.5, 1.0]);
    }

    #[test]
    fn isotonic_application_rules() {
        let iso = IsotonicCalibrator::new(vec![0.2, 0.5], vec![0.1, 0.7], 0).unwrap();
        assert_eq!(iso.step_value(0.0), 0.1);
        assert_eq!(iso.step_value(0.5), 0.7);
        assert_eq!(iso.step_value(0.49), 0.1);
        assert_eq!(iso.step_value(1.0), 0.7);
        let smoothed = IsotonicCalibrator::new(vec![0.0], vec![1.0], 1).unwrap();
        assert_eq!(smoothed.apply_row(&[0.5, 0.5]), vec![0.25, 0.75]);
        let p = ProbVector::uniform(3);
        assert_eq!(iso.apply(&p), Err(Error::UnsupportedMulticlass { k: 3 }));
    }

    #[test]
    fn identity_isotonic_leaves_input() {
        let scores = [0.1, 0.4, 0.8];
        let iso = IsotonicCalibrator::new(scores.to_vec(), scores.to_vec(), 0).unwrap();
        for s in scores {
            assert_eq!(iso.apply_row(&[1.0 - s, s])[1], s);
        }
    }

    #[test]
    fn isotonic_rejects_multiclass() {
        let data = PredictionSet::new(vec![1.0 / 3.0; 3], vec![0], 3).unwrap();
        assert_eq!(fit_isotonic(&data, false), Err(Error::UnsupportedMulticlass { k: 3 }));
    }

    #[test]
    fn calibrator_json_shape() {
        let c = Calibrator::Temperature(TemperatureCalibrator::new(2.0, 5).unwrap());
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"type":"temperature","beta":2.0,"smoothing_n":5}"#);
        let back: Calibrator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let iso = Calibrator::Isotonic(IsotonicCalibrator::new(vec![0.1], vec![0.4], 0).unwrap());
        let s = serde_json::to_string(&iso).unwrap();
        assert!(s.starts_with(r#"{"type":"isotonic","breakpoints":[0.1]"#));
    }
}
