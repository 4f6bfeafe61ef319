//! Calibration, refinement and error rate of a linear model `sigmoid(w^T x)`
//! under the balanced two-class Gaussian model `x ~ N(y mu, Sigma)`.
//!
//! Everything depends on `w` only through two scalars: the alignment
//! `a = <w, w*>_Sigma / ||w||_Sigma` with the Bayes direction `w* = 2 Sigma^-1 mu`,
//! and the norm `s = ||w||_Sigma`. Given the label, the logit of a fresh sample
//! is `s (z + a / 2)` with `z ~ N(0, 1)`, while the calibrated logit is
//! `a (z + a / 2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::highdim::{beta_expect, ExpectationKind, SpectralDist};
use crate::quadrature::{gauss_expect, gauss_expect_split};
use crate::scores::LossKind;
use crate::special::{norm_cdf, norm_ppf, sigmoid, sigmoid_entropy, sigmoid_kl, softplus};

/// Above this alignment or norm the integrands are too sharp for the fixed
/// Hermite rule and the split adaptive rule is used instead.
pub const HERMITE_SCALE_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianModelPoint {
    /// Expertise level `a_w`.
    pub alignment: f64,
    /// Confidence level `||w||_Sigma`.
    pub norm: f64,
}

impl GaussianModelPoint {
    pub fn new(alignment: f64, norm: f64) -> Result<Self> {
        if !(alignment >= 0.0 && norm >= 0.0) || !alignment.is_finite() || !norm.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "model point needs finite alignment >= 0 and norm >= 0, got ({alignment}, {norm})"
            )));
        }
        Ok(GaussianModelPoint { alignment, norm })
    }
}

fn expect_sharp(h: impl Fn(f64) -> f64, scale: f64, split: f64) -> Result<f64> {
    if scale <= HERMITE_SCALE_LIMIT {
        gauss_expect(h)
    } else {
        gauss_expect_split(h, split)
    }
}

/// Expected entropy of the calibrated probability `sigmoid(a (z + a/2))`.
pub fn refinement_error(point: GaussianModelPoint, loss: LossKind) -> Result<f64> {
    let a = point.alignment;
    let h = move |z: f64| {
        let u = a * (z + 0.5 * a);
        match loss {
            LossKind::Logloss => sigmoid_entropy(u),
            LossKind::Brier => 2.0 * sigmoid(u) * sigmoid(-u),
        }
    };
    expect_sharp(h, a, -0.5 * a)
}

/// Expected divergence between the prediction `sigmoid(s (z + a/2))` and the
/// calibrated probability `sigmoid(a (z + a/2))`.
pub fn calibration_error(point: GaussianModelPoint, loss: LossKind) -> Result<f64> {
    let (a, s) = (point.alignment, point.norm);
    let h = move |z: f64| {
        let t = z + 0.5 * a;
        let (u, v) = (a * t, s * t);
        match loss {
            LossKind::Logloss => sigmoid_kl(u, v),
            LossKind::Brier => {
                let d = sigmoid(v) - sigmoid(u);
                2.0 * d * d
            }
        }
    };
    expect_sharp(h, a.max(s), -0.5 * a)
}

/// Population risk computed directly from the label-conditional logit law
/// `N(s a / 2, s^2)`, independently of the decomposition.
pub fn mixture_risk(point: GaussianModelPoint, loss: LossKind) -> Result<f64> {
    let (a, s) = (point.alignment, point.norm);
    let h = move |z: f64| {
        let t = s * (z + 0.5 * a);
        match loss {
            LossKind::Logloss => softplus(-t),
            LossKind::Brier => {
                let m = sigmoid(-t);
                2.0 * m * m
            }
        }
    };
    expect_sharp(h, s, -0.5 * a)
}

/// Misclassification rate `Phi(-a / 2)`.
pub fn error_rate(point: GaussianModelPoint) -> f64 {
    norm_cdf(-0.5 * point.alignment)
}

/// Temperature scaling in the Gaussian model: rescales `w` so that its norm
/// equals its alignment. Refinement is unchanged and calibration vanishes.
pub fn optimal_rescale(point: GaussianModelPoint) -> GaussianModelPoint {
    GaussianModelPoint {
        alignment: point.alignment,
        norm: point.alignment,
    }
}

fn check_positive_spectrum(spectrum: &SpectralDist) -> Result<()> {
    if spectrum.support().0 <= 0.0 {
        return Err(Error::InvalidParameter(
            "spectral distribution must be bounded away from zero".into(),
        ));
    }
    Ok(())
}

/// Bayes error rate `Phi(-c sqrt(E[1/sigma]))` for separability `c`.
pub fn optimal_error_rate(c: f64, spectrum: &SpectralDist) -> Result<f64> {
    check_positive_spectrum(spectrum)?;
    let inv = beta_expect(spectrum, ExpectationKind::InvSigma, 0.0, 0.0)?;
    Ok(norm_cdf(-c * inv.sqrt()))
}

/// Separability `c` whose Bayes error rate is `estar`.
pub fn invert_estar(estar: f64, spectrum: &SpectralDist) -> Result<f64> {
    if !(estar > 0.0 && estar < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "optimal error rate must lie in (0, 0.5), got {estar}"
        )));
    }
    check_positive_spectrum(spectrum)?;
    let inv = beta_expect(spectrum, ExpectationKind::InvSigma, 0.0, 0.0)?;
    Ok(-norm_ppf(estar) / inv.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(a: f64, s: f64) -> GaussianModelPoint {
        GaussianModelPoint::new(a, s).unwrap()
    }

    #[test]
    fn refinement_limits() {
        assert_abs_diff_eq!(
            refinement_error(pt(0.0, 1.0), LossKind::Logloss).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            refinement_error(pt(0.0, 1.0), LossKind::Brier).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert!(refinement_error(pt(50.0, 1.0), LossKind::Logloss).unwrap() < 1e-8);
    }

    #[test]
    fn calibrated_point_has_zero_calibration() {
        for a in [0.0, 0.3, 1.0, 4.0, 12.0] {
            for loss in [LossKind::Logloss, LossKind::Brier] {
                assert!(calibration_error(pt(a, a), loss).unwrap() <= 1e-10);
            }
        }
        assert!(calibration_error(pt(1.0, 2.0), LossKind::Logloss).unwrap() > 0.0);
    }

    #[test]
    fn risk_consistency() {
        for &(a, s) in &[(0.5, 0.2), (1.0, 2.0), (2.5, 1.0), (3.0, 15.0), (0.0, 1.0)] {
            for loss in [LossKind::Logloss, LossKind::Brier] {
                let total = calibration_error(pt(a, s), loss).unwrap()
                    + refinement_error(pt(a, s), loss).unwrap();
                assert_abs_diff_eq!(total, mixture_risk(pt(a, s), loss).unwrap(), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn hermite_and_split_agree_near_the_switch() {
        let h = |s: f64| {
            let t = move |z: f64| sigmoid_kl(2.0 * (z + 1.0), s * (z + 1.0));
            (gauss_expect(t).unwrap(), gauss_expect_split(t, -1.0).unwrap())
        };
        let (gh, split) = h(HERMITE_SCALE_LIMIT);
        assert_abs_diff_eq!(gh, split, epsilon = 1e-11);
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(error_rate(pt(0.0, 0.0)), 0.5);
        assert!(error_rate(pt(50.0, 1.0)) < 1e-100);
        let a = 2.0 * norm_ppf(0.9);
        assert_abs_diff_eq!(error_rate(pt(a, 1.0)), 0.1, epsilon = 1e-14);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(optimal_rescale(pt(1.0, 3.0)), pt(1.0, 1.0));
        assert_eq!(optimal_rescale(pt(2.0, 2.0)), pt(2.0, 2.0));
        assert_eq!(optimal_rescale(pt(0.0, 0.0)), pt(0.0, 0.0));
        let before = refinement_error(pt(1.3, 4.0), LossKind::Logloss).unwrap();
        let after = refinement_error(optimal_rescale(pt(1.3, 4.0)), LossKind::Logloss).unwrap();
        assert_abs_diff_eq!(before, after, epsilon = 1e-12);
    }

    #[test]
    fn invalid_point_rejected() {
        assert!(GaussianModelPoint::new(-1.0, 1.0).is_err());
        assert!(GaussianModelPoint::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn bayes_error_for_unit_spectrum() {
        let unit = SpectralDist::point(1.0).unwrap();
        assert_abs_diff_eq!(optimal_error_rate(1.2816, &unit).unwrap(), 0.1, epsilon = 1e-4);
        assert_eq!(optimal_error_rate(0.0, &unit).unwrap(), 0.5);
        assert_abs_diff_eq!(invert_estar(0.1, &unit).unwrap(), 1.281552, epsilon = 1e-6);
        assert!(invert_estar(0.5, &unit).is_err());
        assert!(invert_estar(0.0, &unit).is_err());
    }

    #[test]
    fn estar_round_trip() {
        let spec = SpectralDist::shifted_beta(2.0, 3.0, 1e-3).unwrap();
        for estar in [0.01, 0.1, 0.25, 0.45] {
            let c = invert_estar(estar, &spec).unwrap();
            assert_abs_diff_eq!(optimal_error_rate(c, &spec).unwrap(), estar, epsilon = 1e-10);
        }
    }
}
