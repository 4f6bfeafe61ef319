//! Scalar helpers: sigmoid, softplus and the standard normal CDF/quantile.

use statrs::distribution::{ContinuousCDF, Normal};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary Shannon entropy (nats) of `sigmoid(x)`.
#[inline]
pub fn sigmoid_entropy(x: f64) -> f64 {
    // -log sigmoid(x) = softplus(-x)
    sigmoid(x) * softplus(-x) + sigmoid(-x) * softplus(x)
}

/// `KL(sigmoid(u) || sigmoid(v))` for two Bernoulli laws given by their logits.
#[inline]
pub fn sigmoid_kl(u: f64, v: f64) -> f64 {
    let kl = sigmoid(u) * (softplus(-v) - softplus(-u)) + sigmoid(-u) * (softplus(v) - softplus(u));
    kl.max(0.0)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Standard normal CDF, accurate to a few ulps including the tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile; `p` must lie in `(0, 1)`.
pub fn norm_ppf(p: f64) -> f64 {
    let mut x = standard_normal().inverse_cdf(p);
    // the library quantile is good to ~1e-10; two Newton steps on the CDF
    // bring it to round-off
    for _ in 0..2 {
        if !x.is_finite() {
            break;
        }
        let pdf = norm_pdf(x);
        if pdf <= 0.0 {
            break;
        }
        x -= (norm_cdf(x) - p) / pdf;
    }
    x
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_abs_diff_eq!(sigmoid(2.0) + sigmoid(-2.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn softplus_limits() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2);
    }

    #[test]
    fn entropy_and_kl_match_direct_formulas() {
        for &x in &[-3.0, -0.2, 0.0, 1.5] {
            let q: f64 = sigmoid(x);
            let direct = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
            assert_abs_diff_eq!(sigmoid_entropy(x), direct, epsilon = 1e-14);
            let p = sigmoid(0.7 * x + 0.3);
            let kl = q * (q / p).ln() + (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
            assert_abs_diff_eq!(sigmoid_kl(x, 0.7 * x + 0.3), kl, epsilon = 1e-14);
        }
        assert_eq!(sigmoid_kl(2.0, 2.0), 0.0);
    }

    #[test]
    fn normal_quantile_round_trip() {
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-16);
        assert_abs_diff_eq!(norm_cdf(-1.2815515655446004), 0.1, epsilon = 1e-16);
        assert_abs_diff_eq!(norm_ppf(0.9), 1.2815515655446004, epsilon = 1e-14);
        for &p in &[1e-8, 0.01, 0.1, 0.3, 0.5, 0.77, 0.999] {
            assert_abs_diff_eq!(norm_cdf(norm_ppf(p)), p, epsilon = 1e-14);
        }
    }
}
