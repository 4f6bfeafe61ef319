//! Numerical integration kernels: Gauss-Hermite expectations under a standard
//! normal, and adaptive Gauss-Kronrod (7/15) on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::special::norm_pdf;

/// Number of Gauss-Hermite nodes.
pub const HERMITE_NODES: usize = 200;

/// Nodes `z_i` and weights `w_i` with `sum_i w_i h(z_i) ~ E[h(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Computes the `n`-point rule. Nodes are seeded with the eigenvalues of
    /// the symmetric Jacobi matrix and polished by Newton iteration on the
    /// orthonormal Hermite recurrence, which also yields the weights.
    pub fn new(n: usize) -> Self {
        let jacobi = Mat::<f64>::from_fn(n, n, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let seeds = jacobi
            .self_adjoint_eigenvalues(Side::Lower)
            .expect("symmetric tridiagonal eigenvalues");
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for mut z in seeds {
            let mut pp = 0.0;
            for _ in 0..20 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            // physicists' rule rescaled to the standard normal
            nodes.push(std::f64::consts::SQRT_2 * z);
            weights.push(2.0 / (pp * pp) / sqrt_pi);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| nodes[a].total_cmp(&nodes[b]));
        GaussHermite {
            nodes: order.iter().map(|&i| nodes[i]).collect(),
            weights: order.iter().map(|&i| weights[i]).collect(),
        }
    }

    /// The shared 200-node rule.
    pub fn standard() -> &'static GaussHermite {
        static RULE: OnceLock<GaussHermite> = OnceLock::new();
        RULE.get_or_init(|| GaussHermite::new(HERMITE_NODES))
    }

    pub fn expect(&self, mut h: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * h(z))
            .sum()
    }
}

/// `E[h(Z)]` for `Z ~ N(0, 1)` with the 200-node Gauss-Hermite rule.
pub fn gauss_expect(h: impl FnMut(f64) -> f64) -> Result<f64> {
    let v = GaussHermite::standard().expect(h);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("integrand at a Gauss-Hermite node".into()))
    }
}

/// Half-width of the truncated normal support used by [`gauss_expect_split`].
const NORMAL_TAIL: f64 = 39.0;

/// `E[h(Z)]` by adaptive Gauss-Kronrod on `[-39, 39]`, split at `split`
/// where `h` varies sharply.
pub fn gauss_expect_split(h: impl Fn(f64) -> f64, split: f64) -> Result<f64> {
    gauss_expect_pieces(h, &[split])
}

/// Like [`gauss_expect_split`] with several break points.
pub fn gauss_expect_pieces(h: impl Fn(f64) -> f64, breaks: &[f64]) -> Result<f64> {
    let f = |z: f64| norm_pdf(z) * h(z);
    let mut pts: Vec<f64> = breaks
        .iter()
        .map(|b| b.clamp(-NORMAL_TAIL, NORMAL_TAIL))
        .collect();
    pts.push(-NORMAL_TAIL);
    pts.push(NORMAL_TAIL);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        total += integrate_adaptive(&f, w[0], w[1], 1e-12, 1e-15)?;
    }
    Ok(total)
}

// Gauss-Kronrod 7/15 abscissae and weights (QUADPACK qk15).
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One 15-point Kronrod panel: `(integral, error estimate)`.
fn kronrod15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (f1, f2) = (f(c - dx), f(c + dx));
        resk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    (resk * h, ((resk - resg) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

const MAX_PANELS: usize = 4000;

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`. Stops once the
/// total error estimate is below `max(rel_tol * |I|, abs_tol)`.
pub fn integrate_adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (value, err) = kronrod15(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, err });
    let (mut total, mut total_err) = (value, err);
    while total_err > (rel_tol * total.abs()).max(abs_tol) {
        if heap.len() >= MAX_PANELS {
            break;
        }
        let worst = heap.pop().unwrap();
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // cannot split further in floating point
            heap.push(worst);
            break;
        }
        let (v1, e1) = kronrod15(f, worst.a, mid);
        let (v2, e2) = kronrod15(f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
    }
    // re-sum to shed accumulated round-off from the running updates
    let total: f64 = heap.iter().map(|p| p.value).sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("adaptive quadrature".into()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hermite_weights_sum_to_one() {
        let gh = GaussHermite::standard();
        assert_eq!(gh.nodes.len(), HERMITE_NODES);
        assert_abs_diff_eq!(gh.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn hermite_moments() {
        assert_abs_diff_eq!(gauss_expect(|_| 1.0).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(gauss_expect(|z| z).unwrap(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(gauss_expect(|z| z * z).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gauss_expect(|z| z.powi(4)).unwrap(), 3.0, epsilon = 1e-11);
        assert_abs_diff_eq!(gauss_expect(crate::special::sigmoid).unwrap(), 0.5, epsilon = 1e-14);
        // E[exp(Z)] = exp(1/2)
        assert_abs_diff_eq!(gauss_expect(f64::exp).unwrap(), 0.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn hermite_rejects_non_finite() {
        assert!(gauss_expect(|z| if z > 0.0 { f64::INFINITY } else { 0.0 }).is_err());
    }

    #[test]
    fn split_expectation_agrees() {
        // E[max(Z, 0)] = 1 / sqrt(2 pi)
        let v = gauss_expect_split(|z| z.max(0.0), 0.0).unwrap();
        assert_abs_diff_eq!(v, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(gauss_expect_split(|z| z * z, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        let h = |z: f64| crate::special::softplus(1.5 * (z + 0.3));
        assert_abs_diff_eq!(gauss_expect_split(h, -0.3).unwrap(), gauss_expect(h).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn kronrod_polynomials_and_singularities() {
        let v = integrate_adaptive(&|x: f64| x.powi(5), 0.0, 2.0, 1e-13, 0.0).unwrap();
        assert_abs_diff_eq!(v, 64.0 / 6.0, epsilon = 1e-12);
        let v = integrate_adaptive(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-12, 1e-15).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-11);
        let v = integrate_adaptive(&|x: f64| 1.0 / (1e-3 + x), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert_abs_diff_eq!(v, (1.001f64 / 1e-3).ln(), epsilon = 1e-11);
    }
}
