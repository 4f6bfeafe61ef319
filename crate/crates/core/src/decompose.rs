//! Calibration-refinement decomposition estimators.
//!
//! The refinement estimate is the empirical risk left after the best post-hoc
//! map of a class `G` has been applied; the calibration estimate is what that
//! map removed. With `G` the set of all maps on a finite set of prediction
//! values, the minimizer is the conditional mean of the labels, which gives the
//! brute-force decomposition used as an oracle throughout the tests.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{fit_isotonic, fit_temperature};
use crate::error::{Error, Result};
use crate::scores::{argmax, empirical_risk, LossKind, PredictionSet};

/// Number of equal-width confidence bins used by [`binned_ece`].
pub const ECE_BINS: usize = 15;
/// Default number of folds for [`cv_refinement`].
pub const CV_FOLDS: usize = 5;
/// Default shuffle seed for [`cv_refinement`].
pub const CV_SEED: u64 = 0;

/// The post-hoc class over which the refinement estimate minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Temperature scaling, fitted and evaluated on the same data.
    Ts,
    /// Binary isotonic regression.
    Isotonic,
    /// All maps of the distinct prediction values (conditional means).
    #[serde(rename = "bruteforce")]
    BruteForce,
    /// Temperature scaling with out-of-fold evaluation.
    CvTs,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ts => "ts",
            Estimator::Isotonic => "isotonic",
            Estimator::BruteForce => "bruteforce",
            Estimator::CvTs => "cv-ts",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ts" | "temperature" => Ok(Estimator::Ts),
            "isotonic" => Ok(Estimator::Isotonic),
            "bruteforce" | "brute-force" => Ok(Estimator::BruteForce),
            "cv-ts" | "cvts" => Ok(Estimator::CvTs),
            other => Err(Error::InvalidParameter(format!("unknown estimator `{other}`"))),
        }
    }
}

/// `risk = calibration + refinement`, with calibration defined as the difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub risk: f64,
    pub calibration: f64,
    pub refinement: f64,
    pub loss: LossKind,
    pub estimator: Estimator,
}

impl Decomposition {
    fn from_risk_and_refinement(
        risk: f64,
        refinement: f64,
        loss: LossKind,
        estimator: Estimator,
    ) -> Self {
        Decomposition {
            risk,
            calibration: risk - refinement,
            refinement,
            loss,
            estimator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub uncertainty: f64,
    pub sharpness: f64,
}

/// Validation loss after fitting the chosen calibrator on the same data.
pub fn refinement_estimate(
    data: &PredictionSet,
    loss: LossKind,
    estimator: Estimator,
    smoothing: bool,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    match estimator {
        Estimator::Ts => {
            let cal = fit_temperature(data, loss, smoothing)?;
            empirical_risk(loss, &cal.apply_set(data))
        }
        Estimator::Isotonic => {
            let cal = fit_isotonic(data, smoothing)?;
            empirical_risk(loss, &cal.apply_set(data)?)
        }
        Estimator::BruteForce => Ok(bruteforce_decomposition(data, loss)?.refinement),
        Estimator::CvTs => cv_refinement(data, loss, CV_FOLDS, CV_SEED, smoothing),
    }
}

pub fn calibration_estimate(
    data: &PredictionSet,
    loss: LossKind,
    estimator: Estimator,
    smoothing: bool,
) -> Result<f64> {
    Ok(decompose_risk(data, loss, estimator, smoothing)?.calibration)
}

pub fn decompose_risk(
    data: &PredictionSet,
    loss: LossKind,
    estimator: Estimator,
    smoothing: bool,
) -> Result<Decomposition> {
    let refinement = refinement_estimate(data, loss, estimator, smoothing)?;
    let risk = empirical_risk(loss, data)?;
    Ok(Decomposition::from_risk_and_refinement(
        risk, refinement, loss, estimator,
    ))
}

/// Rows grouped by bitwise-identical prediction. Each group carries the
/// prediction, the row count and the conditional mean of the one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGroup {
    pub prediction: Vec<f64>,
    pub count: usize,
    pub conditional_mean: Vec<f64>,
}

/// Groups rows by exact prediction value, in order of first appearance.
pub fn group_predictions(data: &PredictionSet) -> Vec<PredictionGroup> {
    let k = data.k();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<PredictionGroup> = Vec::new();
    for (p, y) in data.rows() {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(PredictionGroup {
                prediction: p.to_vec(),
                count: 0,
                conditional_mean: vec![0.0; k],
            });
            groups.len() - 1
        });
        groups[g].count += 1;
        groups[g].conditional_mean[y] += 1.0;
    }
    for g in &mut groups {
        let c = g.count as f64;
        g.conditional_mean.iter_mut().for_each(|v| *v /= c);
    }
    groups
}

/// Oracle decomposition with the conditional-mean recalibration.
pub fn bruteforce_decomposition(data: &PredictionSet, loss: LossKind) -> Result<Decomposition> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = data.n() as f64;
    let refinement = group_predictions(data)
        .iter()
        .map(|g| g.count as f64 * loss.entropy_of(&g.conditional_mean))
        .sum::<f64>()
        / n;
    let risk = empirical_risk(loss, data)?;
    Ok(Decomposition::from_risk_and_refinement(
        risk,
        refinement,
        loss,
        Estimator::BruteForce,
    ))
}

/// Mean divergence between each prediction and its group's conditional mean.
/// Equals the brute-force calibration term.
pub fn bruteforce_calibration_divergence(data: &PredictionSet, loss: LossKind) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let total: f64 = group_predictions(data)
        .iter()
        .map(|g| g.count as f64 * loss.divergence_of(&g.prediction, &g.conditional_mean))
        .sum();
    Ok(total / data.n() as f64)
}

pub fn sharpness_report(data: &PredictionSet, loss: LossKind) -> Result<SharpnessReport> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let uncertainty = loss.entropy_of(&data.label_marginal());
    let refinement = bruteforce_decomposition(data, loss)?.refinement;
    Ok(SharpnessReport {
        uncertainty,
        sharpness: uncertainty - refinement,
    })
}

/// Top-label expected calibration error with [`ECE_BINS`] equal-width bins.
pub fn binned_ece(data: &PredictionSet) -> Result<f64> {
    binned_ece_with_bins(data, ECE_BINS)
}

pub fn binned_ece_with_bins(data: &PredictionSet, bins: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    for (p, y) in data.rows() {
        let top = argmax(p);
        let c = p[top];
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        if top == y {
            hits[b] += 1.0;
        }
    }
    let n = data.n() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (conf[b] - hits[b]).abs() / n)
        .sum())
}

/// Mean over folds of the held-out loss after temperature scaling fitted on
/// the remaining folds. Folds are contiguous blocks of a seeded shuffle.
pub fn cv_refinement(
    data: &PredictionSet,
    loss: LossKind,
    folds: usize,
    seed: u64,
    smoothing: bool,
) -> Result<f64> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    let n = data.n();
    if n < folds {
        return Err(Error::InvalidParameter(format!(
            "{n} rows cannot be split into {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut total = 0.0;
    for f in 0..folds {
        let (start, end) = (f * n / folds, (f + 1) * n / folds);
        let held_out = data.subset(&order[start..end]);
        let train_idx: Vec<usize> = order[..start].iter().chain(&order[end..]).copied().collect();
        let cal = fit_temperature(&data.subset(&train_idx), loss, smoothing)?;
        total += empirical_risk(loss, &cal.apply_set(&held_out))?;
    }
    Ok(total / folds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Group A: four rows at (0.8, 0.2) with labels [0,0,0,1];
    /// group B: four rows at (0.3, 0.7) with labels [1,1,1,0].
    fn eight_rows() -> PredictionSet {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| if i < 4 { vec![0.8, 0.2] } else { vec![0.3, 0.7] })
            .collect();
        PredictionSet::from_rows(&rows, vec![0, 0, 0, 1, 1, 1, 1, 0]).unwrap()
    }

    /// Hand computation: C_A = (0.75, 0.25), C_B = (0.25, 0.75).
    fn eight_row_oracle() -> (f64, f64, f64) {
        let h = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let kl_a = 0.75 * (0.75f64 / 0.8).ln() + 0.25 * (0.25f64 / 0.2).ln();
        let kl_b = 0.25 * (0.25f64 / 0.3).ln() + 0.75 * (0.75f64 / 0.7).ln();
        let risk = -(3.0 * 0.8f64.ln() + 0.2f64.ln() + 3.0 * 0.7f64.ln() + 0.3f64.ln()) / 8.0;
        (risk, 0.5 * (kl_a + kl_b), h)
    }

    #[test]
    fn eight_row_example() {
        let (risk, cal, refn) = eight_row_oracle();
        assert_abs_diff_eq!(risk, 0.569109, epsilon = 1e-6);
        assert_abs_diff_eq!(cal, 0.006773, epsilon = 1e-6);
        assert_abs_diff_eq!(refn, 0.562335, epsilon = 1e-6);

        let d = bruteforce_decomposition(&eight_rows(), LossKind::Logloss).unwrap();
        assert_abs_diff_eq!(d.risk, risk, epsilon = 1e-14);
        assert_abs_diff_eq!(d.refinement, refn, epsilon = 1e-14);
        assert_abs_diff_eq!(d.calibration, cal, epsilon = 1e-14);
        let div = bruteforce_calibration_divergence(&eight_rows(), LossKind::Logloss).unwrap();
        assert_abs_diff_eq!(div, d.calibration, epsilon = 1e-14);

        let s = sharpness_report(&eight_rows(), LossKind::Logloss).unwrap();
        assert_abs_diff_eq!(s.uncertainty, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.sharpness, 0.130812, epsilon = 1e-6);
    }

    #[test]
    fn onehot_correct_is_all_zero() {
        let d = PredictionSet::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2).unwrap();
        for est in [Estimator::BruteForce, Estimator::Ts, Estimator::Isotonic] {
            let dec = decompose_risk(&d, LossKind::Brier, est, false).unwrap();
            assert_abs_diff_eq!(dec.risk, 0.0);
            assert_abs_diff_eq!(dec.refinement, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dec.calibration, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_marginal_predictor() {
        let labels = vec![0, 1, 1, 2, 2, 2];
        let marginal = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        let d = PredictionSet::new(marginal.repeat(6), labels, 3).unwrap();
        let dec = bruteforce_decomposition(&d, LossKind::Logloss).unwrap();
        assert_abs_diff_eq!(dec.calibration, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.refinement, LossKind::Logloss.entropy_of(&marginal), epsilon = 1e-12);
        let s = sharpness_report(&d, LossKind::Logloss).unwrap();
        assert_abs_diff_eq!(s.sharpness, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_prediction_value() {
        let d = PredictionSet::new([0.6, 0.4].repeat(4), vec![0, 1, 1, 1], 2).unwrap();
        let dec = bruteforce_decomposition(&d, LossKind::Brier).unwrap();
        let freq = [0.25, 0.75];
        assert_abs_diff_eq!(dec.refinement, LossKind::Brier.entropy_of(&freq), epsilon = 1e-15);
        assert_abs_diff_eq!(
            dec.calibration,
            LossKind::Brier.divergence_of(&[0.6, 0.4], &freq),
            epsilon = 1e-15
        );
    }

    #[test]
    fn separable_isotonic_has_zero_refinement() {
        let probs = [0.1, 0.2, 0.35, 0.6, 0.7, 0.9]
            .iter()
            .flat_map(|&s| [1.0 - s, s])
            .collect();
        let d = PredictionSet::new(probs, vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let r = refinement_estimate(&d, LossKind::Logloss, Estimator::Isotonic, false).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn uniform_predictions_unchanged_by_ts() {
        let d = PredictionSet::new(vec![0.25; 12], vec![0, 1, 3], 4).unwrap();
        let r = refinement_estimate(&d, LossKind::Logloss, Estimator::Ts, false).unwrap();
        assert_abs_diff_eq!(r, empirical_risk(LossKind::Logloss, &d).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn isotonic_rejects_multiclass() {
        let d = PredictionSet::new(vec![0.25; 4], vec![0], 4).unwrap();
        assert_eq!(
            refinement_estimate(&d, LossKind::Logloss, Estimator::Isotonic, false),
            Err(Error::UnsupportedMulticlass { k: 4 })
        );
    }

    #[test]
    fn ece_examples() {
        let correct = PredictionSet::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2).unwrap();
        assert_eq!(binned_ece(&correct).unwrap(), 0.0);

        let d = PredictionSet::new([0.8, 0.2].repeat(4), vec![0, 0, 1, 1], 2).unwrap();
        assert_abs_diff_eq!(binned_ece(&d).unwrap(), 0.3, epsilon = 1e-12);

        // bin of confidence 0.9 (3 rows, 2 correct) and of 0.6 (3 rows, 3 correct):
        // 3/6 * |0.9 - 2/3| + 3/6 * |0.6 - 1| = 0.116667 + 0.2
        let probs = [[0.9, 0.1]; 3]
            .iter()
            .chain([[0.4, 0.6]; 3].iter())
            .flatten()
            .copied()
            .collect();
        let d = PredictionSet::new(probs, vec![0, 0, 1, 1, 1, 1], 2).unwrap();
        let expected = 0.5 * (0.9f64 - 2.0 / 3.0).abs() + 0.5 * (0.6f64 - 1.0).abs();
        assert_abs_diff_eq!(binned_ece(&d).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn cv_rejects_bad_folds() {
        let d = eight_rows();
        assert!(cv_refinement(&d, LossKind::Logloss, 1, 0, false).is_err());
        assert!(cv_refinement(&d, LossKind::Logloss, 9, 0, false).is_err());
    }

    #[test]
    fn cv_matches_risk_when_ts_is_identity() {
        // uniform rows: beta = 1 on every fold
        let d = PredictionSet::new(vec![0.5; 20], vec![0, 1, 0, 1, 1, 0, 0, 1, 1, 0], 2).unwrap();
        let cv = cv_refinement(&d, LossKind::Logloss, 5, 0, false).unwrap();
        assert_abs_diff_eq!(cv, empirical_risk(LossKind::Logloss, &d).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn cv_is_deterministic_in_seed() {
        let probs: Vec<f64> = (0..30)
            .flat_map(|i| {
                let s = (i as f64 * 0.37).fract() * 0.9 + 0.05;
                [1.0 - s, s]
            })
            .collect();
        let labels = (0..30).map(|i| (i * 7 % 3 == 0) as usize).collect();
        let d = PredictionSet::new(probs, labels, 2).unwrap();
        let a = cv_refinement(&d, LossKind::Logloss, 5, 3, false).unwrap();
        let b = cv_refinement(&d, LossKind::Logloss, 5, 3, false).unwrap();
        assert_eq!(a, b);
    }
}
