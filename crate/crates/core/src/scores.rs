//! Proper losses (logloss and Brier), their entropies and divergences, and
//! empirical risk, accuracy and AUROC over a set of predictions.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum(p) - 1|` when ingesting probability rows.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_CLIP: f64 = 1e-15;

/// The two strictly proper, symmetric losses supported throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Logloss,
    Brier,
}

impl LossKind {
    /// Loss of prediction `p` against class `y`. No validation.
    #[inline]
    pub fn eval(self, p: &[f64], y: usize) -> f64 {
        match self {
            LossKind::Logloss => -p[y].max(LOG_CLIP).ln(),
            LossKind::Brier => p
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let t = if j == y { 1.0 - pj } else { pj };
                    t * t
                })
                .sum(),
        }
    }

    /// Expected loss `l(p, q) = E_{Y~q} l(p, Y)`.
    pub fn expected(self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            LossKind::Logloss => q
                .iter()
                .zip(p)
                .filter(|(&qj, _)| qj > 0.0)
                .map(|(&qj, &pj)| -qj * pj.max(LOG_CLIP).ln())
                .sum(),
            LossKind::Brier => self.entropy_of(q) + self.divergence_of(p, q),
        }
    }

    /// `e(q) = l(q, q)`. No validation.
    pub fn entropy_of(self, q: &[f64]) -> f64 {
        match self {
            LossKind::Logloss => q
                .iter()
                .filter(|&&qj| qj > 0.0)
                .map(|&qj| -qj * qj.max(LOG_CLIP).ln())
                .sum(),
            LossKind::Brier => q.iter().map(|&qj| qj * (1.0 - qj)).sum(),
        }
    }

    /// `d(p, q) = l(p, q) - l(q, q)`: KL(q || p) or squared distance. No validation.
    pub fn divergence_of(self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            LossKind::Logloss => q
                .iter()
                .zip(p)
                .filter(|(&qj, _)| qj > 0.0)
                .map(|(&qj, &pj)| qj * (qj.max(LOG_CLIP).ln() - pj.max(LOG_CLIP).ln()))
                .sum(),
            LossKind::Brier => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logloss => "logloss",
            LossKind::Brier => "brier",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logloss" | "log" | "cross-entropy" => Ok(LossKind::Logloss),
            "brier" => Ok(LossKind::Brier),
            other => Err(Error::InvalidParameter(format!("unknown loss `{other}`"))),
        }
    }
}

fn check_row(p: &[f64], row: usize) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::InvalidProbability {
            row,
            reason: format!("need at least 2 classes, got {}", p.len()),
        });
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidProbability {
            row,
            reason: format!("entry {bad} outside [0, 1]"),
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidProbability {
            row,
            reason: format!("entries sum to {sum}"),
        });
    }
    Ok(())
}

/// A validated point of the probability simplex with at least two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_row(&p, 0)?;
        Ok(ProbVector(p))
    }

    pub fn uniform(k: usize) -> Self {
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn onehot(k: usize, y: usize) -> Self {
        let mut p = vec![0.0; k];
        p[y] = 1.0;
        ProbVector(p)
    }

    pub(crate) fn from_vec_unchecked(p: Vec<f64>) -> Self {
        ProbVector(p)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Numerically stable softmax of a logit row.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// An `n x k` matrix of predicted probabilities (row-major) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Vec<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl PredictionSet {
    /// Builds a prediction set from row-major probabilities, rejecting rows that
    /// are not on the simplex.
    pub fn new(probs: Vec<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        Self::check_shape(&probs, &labels, k)?;
        for (i, row) in probs.chunks_exact(k).enumerate() {
            check_row(row, i)?;
        }
        Ok(PredictionSet { probs, labels, k })
    }

    /// Like [`PredictionSet::new`], but divides every row by its sum first.
    pub fn new_renormalized(mut probs: Vec<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        Self::check_shape(&probs, &labels, k)?;
        for (i, row) in probs.chunks_exact_mut(k).enumerate() {
            let s: f64 = row.iter().sum();
            if !(s > 0.0) || row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidProbability {
                    row: i,
                    reason: "cannot renormalize".into(),
                });
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Self::new(probs, labels, k)
    }

    /// Builds a prediction set from row-major logits through a softmax.
    pub fn from_logits(logits: &[f64], labels: Vec<usize>, k: usize) -> Result<Self> {
        Self::check_shape(logits, &labels, k)?;
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidProbability {
                row: i / k,
                reason: "non-finite logit".into(),
            });
        }
        let probs = logits.chunks_exact(k).flat_map(softmax).collect();
        Self::new(probs, labels, k)
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let k = rows.first().map(|r| r.len()).unwrap_or(2);
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: bad.len(),
            });
        }
        Self::new(rows.concat(), labels, k)
    }

    fn check_shape(probs: &[f64], labels: &[usize], k: usize) -> Result<()> {
        if k < 2 {
            return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
        }
        if probs.len() != labels.len() * k {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * k,
                got: probs.len(),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
            return Err(Error::LabelOutOfRange { row, label, k });
        }
        Ok(())
    }

    /// Used for outputs of maps that are on the simplex by construction.
    pub(crate) fn from_parts_unchecked(probs: Vec<f64>, labels: Vec<usize>, k: usize) -> Self {
        debug_assert_eq!(probs.len(), labels.len() * k);
        PredictionSet { probs, labels, k }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.probs.chunks_exact(self.k).zip(self.labels.iter().copied())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> PredictionSet {
        let probs = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        PredictionSet::from_parts_unchecked(probs, labels, self.k)
    }

    /// Applies `f` to every row, producing a new prediction set with the same labels.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> PredictionSet {
        let probs = self.probs.chunks_exact(self.k).flat_map(&mut f).collect();
        PredictionSet::from_parts_unchecked(probs, self.labels.clone(), self.k)
    }

    /// Empirical label frequencies.
    pub fn label_marginal(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.k];
        for &y in &self.labels {
            c[y] += 1.0;
        }
        let n = self.n() as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}

fn check_same_k(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(())
}

pub fn loss_pointwise(loss: LossKind, p: &ProbVector, y: usize) -> Result<f64> {
    if y >= p.k() {
        return Err(Error::LabelOutOfRange {
            row: 0,
            label: y,
            k: p.k(),
        });
    }
    Ok(loss.eval(p, y))
}

pub fn entropy(loss: LossKind, q: &ProbVector) -> f64 {
    loss.entropy_of(q)
}

pub fn divergence(loss: LossKind, p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_k(p, q)?;
    Ok(loss.divergence_of(p, q))
}

/// Mean pointwise loss.
pub fn empirical_risk(loss: LossKind, data: &PredictionSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(data.rows().map(|(p, y)| loss.eval(p, y)).sum::<f64>() / data.n() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy(data: &PredictionSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let hits = data.rows().filter(|(p, y)| argmax(p) == *y).count();
    Ok(hits as f64 / data.n() as f64)
}

/// Binary AUC of `scores` against boolean `positive`, with midranks for ties.
/// Returns `None` when one of the two groups is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let n_pos = positive.iter().filter(|&&b| b).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&o| positive[o]).count() as f64 * midrank;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Macro-averaged one-vs-rest AUROC. Classes absent from the labels are skipped.
pub fn auroc_ovr(data: &PredictionSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let k = data.k();
    let mut total = 0.0;
    let mut count = 0usize;
    let classes: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    for c in classes {
        let scores: Vec<f64> = data.rows().map(|(p, _)| p[c]).collect();
        let positive: Vec<bool> = data.labels().iter().map(|&y| y == c).collect();
        if let Some(auc) = binary_auc(&scores, &positive) {
            total += auc;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn pointwise_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(
            loss_pointwise(LossKind::Logloss, &pv(&[0.5, 0.5]), 0).unwrap(),
            ln2,
            epsilon = 1e-15
        );
        assert_eq!(loss_pointwise(LossKind::Brier, &pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            loss_pointwise(LossKind::Brier, &pv(&[0.8, 0.2]), 0).unwrap(),
            0.08,
            epsilon = 1e-15
        );
        assert!(loss_pointwise(LossKind::Brier, &pv(&[0.8, 0.2]), 2).is_err());
    }

    #[test]
    fn clipped_logloss_is_finite() {
        let v = LossKind::Logloss.eval(&[1.0, 0.0], 1);
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -(1e-15f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy(LossKind::Logloss, &pv(&[0.5, 0.5])), std::f64::consts::LN_2);
        assert_abs_diff_eq!(entropy(LossKind::Brier, &pv(&[0.5, 0.5])), 0.5);
        assert_eq!(entropy(LossKind::Logloss, &pv(&[1.0, 0.0])), 0.0);
    }

    #[test]
    fn divergence_examples() {
        let p = pv(&[0.8, 0.2]);
        let q = pv(&[0.75, 0.25]);
        let same = pv(&[0.3, 0.7]);
        for loss in [LossKind::Logloss, LossKind::Brier] {
            assert_eq!(divergence(loss, &same, &same).unwrap(), 0.0);
        }
        assert_abs_diff_eq!(divergence(LossKind::Brier, &p, &q).unwrap(), 0.005, epsilon = 1e-15);
        let kl = 0.75 * (0.75f64 / 0.8).ln() + 0.25 * (0.25f64 / 0.2).ln();
        assert_abs_diff_eq!(divergence(LossKind::Logloss, &p, &q).unwrap(), kl, epsilon = 1e-15);
        assert_abs_diff_eq!(kl, 0.0073820, epsilon = 1e-7);
        assert!(divergence(LossKind::Brier, &p, &ProbVector::uniform(3)).is_err());
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![1.2, -0.2]).is_err());
        assert!(PredictionSet::new(vec![0.5, 0.5], vec![2], 2).is_err());
        assert!(PredictionSet::new(vec![0.5, 0.5, 0.5], vec![0], 2).is_err());
        let r = PredictionSet::new_renormalized(vec![1.0, 3.0], vec![0], 2).unwrap();
        assert_eq!(r.row(0), &[0.25, 0.75]);
    }

    #[test]
    fn risk_examples() {
        let d = PredictionSet::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2).unwrap();
        assert_eq!(empirical_risk(LossKind::Brier, &d).unwrap(), 0.0);
        let d = PredictionSet::new(vec![0.5, 0.5], vec![1], 2).unwrap();
        assert_abs_diff_eq!(empirical_risk(LossKind::Logloss, &d).unwrap(), std::f64::consts::LN_2);
        let empty = PredictionSet::new(vec![], vec![], 2).unwrap();
        assert_eq!(empirical_risk(LossKind::Logloss, &empty), Err(Error::EmptyData));
    }

    #[test]
    fn accuracy_examples() {
        let correct = PredictionSet::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2).unwrap();
        assert_eq!(accuracy(&correct).unwrap(), 1.0);
        let wrong = PredictionSet::new(vec![1.0, 0.0, 0.0, 1.0], vec![1, 0], 2).unwrap();
        assert_eq!(accuracy(&wrong).unwrap(), 0.0);
        let half =
            PredictionSet::new(vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.5, 0.5], vec![0, 1, 1, 1], 2)
                .unwrap();
        // the tie (0.5, 0.5) goes to class 0
        assert_eq!(accuracy(&half).unwrap(), 0.5);
    }

    #[test]
    fn auroc_examples() {
        let mk = |s: &[f64], y: &[usize]| {
            let probs = s.iter().flat_map(|&v| [1.0 - v, v]).collect();
            PredictionSet::new(probs, y.to_vec(), 2).unwrap()
        };
        assert_eq!(auroc_ovr(&mk(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(auroc_ovr(&mk(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            auroc_ovr(&mk(&[0.1, 0.4, 0.4, 0.8], &[0, 0, 1, 1])).unwrap(),
            0.875,
            epsilon = 1e-15
        );
        assert_eq!(
            auroc_ovr(&mk(&[0.1, 0.4], &[1, 1])),
            Err(Error::DegenerateLabels)
        );
    }

    #[test]
    fn auroc_skips_absent_classes() {
        // class 2 never appears; the average is over classes 0 and 1
        let probs = vec![0.7, 0.2, 0.1, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1, 0.3, 0.6, 0.1];
        let d = PredictionSet::new(probs, vec![0, 1, 0, 1], 3).unwrap();
        assert_eq!(auroc_ovr(&d).unwrap(), 1.0);
    }

    #[test]
    fn softmax_logits_match_probs() {
        let d = PredictionSet::from_logits(&[0.0, (4.0f64).ln()], vec![1], 2).unwrap();
        assert_abs_diff_eq!(d.row(0)[1], 0.8, epsilon = 1e-15);
    }
}
