//! Offline early stopping: record validation predictions epoch by epoch,
//! keep a registry of stopping metrics, and pick the best epoch per metric.
//!
//! All stored metrics are "lower is better"; accuracy and AUROC are negated
//! on the way in. Ties resolve to the earliest epoch.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibrate::fit_temperature;
use crate::decompose::{binned_ece, cv_refinement, refinement_estimate, Estimator, CV_FOLDS, CV_SEED};
use crate::error::{Error, Result};
use crate::scores::{accuracy, auroc_ovr, empirical_risk, LossKind, PredictionSet};

/// Stopping metrics computed for every recorded epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Logloss,
    Brier,
    /// Stored negated.
    Accuracy,
    /// Stored negated.
    Auroc,
    /// Logloss after temperature scaling.
    TsRefinement,
    /// Brier score after temperature scaling.
    TsRefinementBrier,
    /// Logloss after temperature scaling, evaluated out of fold.
    CvTsRefinement,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Logloss,
        Metric::Brier,
        Metric::Accuracy,
        Metric::Auroc,
        Metric::TsRefinement,
        Metric::TsRefinementBrier,
        Metric::CvTsRefinement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Logloss => "logloss",
            Metric::Brier => "brier",
            Metric::Accuracy => "accuracy",
            Metric::Auroc => "auroc",
            Metric::TsRefinement => "ts-refinement",
            Metric::TsRefinementBrier => "ts-refinement-brier",
            Metric::CvTsRefinement => "cv-ts-refinement",
        }
    }

    /// Whether the raw metric is "higher is better" and thus stored negated.
    pub fn is_negated(self) -> bool {
        matches!(self, Metric::Accuracy | Metric::Auroc)
    }

    /// Canonical (lower is better) value on `data`. AUROC on single-class
    /// labels and the cross-validated metric on fewer rows than folds are
    /// undefined and reported as NaN.
    pub fn evaluate(self, data: &PredictionSet) -> Result<f64> {
        Ok(match self {
            Metric::Logloss => empirical_risk(LossKind::Logloss, data)?,
            Metric::Brier => empirical_risk(LossKind::Brier, data)?,
            Metric::Accuracy => -accuracy(data)?,
            Metric::Auroc => match auroc_ovr(data) {
                Ok(v) => -v,
                Err(Error::DegenerateLabels) => f64::NAN,
                Err(e) => return Err(e),
            },
            Metric::TsRefinement => {
                refinement_estimate(data, LossKind::Logloss, Estimator::Ts, true)?
            }
            Metric::TsRefinementBrier => {
                refinement_estimate(data, LossKind::Brier, Estimator::Ts, true)?
            }
            Metric::CvTsRefinement if data.n() < CV_FOLDS => f64::NAN,
            Metric::CvTsRefinement => {
                cv_refinement(data, LossKind::Logloss, CV_FOLDS, CV_SEED, true)?
            }
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let s = s.strip_prefix("neg-").unwrap_or(&s);
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metrics: BTreeMap<Metric, f64>,
}

impl EpochRecord {
    pub fn get(&self, metric: Metric) -> f64 {
        self.metrics.get(&metric).copied().unwrap_or(f64::NAN)
    }
}

/// Test-set metrics at a chosen epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub logloss: f64,
    pub brier: f64,
    pub accuracy: f64,
    pub ece: f64,
}

impl EvalMetrics {
    pub fn compute(data: &PredictionSet) -> Result<Self> {
        Ok(EvalMetrics {
            logloss: empirical_risk(LossKind::Logloss, data)?,
            brier: empirical_risk(LossKind::Brier, data)?,
            accuracy: accuracy(data)?,
            ece: binned_ece(data)?,
        })
    }
}

/// One row of the policy comparison: stop on `metric`, then evaluate on test
/// data, raw and after temperature scaling fitted on that epoch's validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub metric: Metric,
    pub epoch: usize,
    /// Canonical validation value at the chosen epoch.
    pub value: f64,
    pub beta: f64,
    pub test_raw: EvalMetrics,
    pub test_ts: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingReport {
    pub rows: Vec<PolicyRow>,
}

impl StoppingReport {
    pub fn row(&self, metric: Metric) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

/// Records validation metrics per epoch. Epochs must be strictly increasing
/// and every epoch must have the same shape.
#[derive(Debug, Clone, Default)]
pub struct EpochTracker {
    records: Vec<EpochRecord>,
    shape: Option<(usize, usize)>,
    retain: bool,
    retained: Vec<PredictionSet>,
}

impl EpochTracker {
    /// A tracker that discards predictions after computing metrics.
    pub fn new() -> Self {
        Self::default()
    }

    /// A tracker that keeps validation predictions, as needed by
    /// [`EpochTracker::compare_policies`].
    pub fn retaining_predictions() -> Self {
        EpochTracker {
            retain: true,
            ..Self::default()
        }
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn record_epoch(&mut self, epoch: usize, data: &PredictionSet) -> Result<&EpochRecord> {
        if let Some(last) = self.records.last() {
            if epoch <= last.epoch {
                return Err(Error::OutOfOrderEpoch {
                    epoch,
                    last: last.epoch,
                });
            }
        }
        match self.shape {
            Some((_, k)) if k != data.k() => {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: data.k(),
                })
            }
            Some((n, _)) if n != data.n() => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: data.n(),
                })
            }
            _ => {}
        }
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        let metrics = Metric::ALL
            .iter()
            .map(|&m| Ok((m, m.evaluate(data)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        self.shape = Some((data.n(), data.k()));
        if self.retain {
            self.retained.push(data.clone());
        }
        self.records.push(EpochRecord { epoch, metrics });
        Ok(self.records.last().unwrap())
    }

    /// Records externally computed metric values (e.g. a loss curve that was
    /// logged during training). Missing metrics are stored as NaN.
    pub fn record_values(
        &mut self,
        epoch: usize,
        values: impl IntoIterator<Item = (Metric, f64)>,
    ) -> Result<&EpochRecord> {
        if let Some(last) = self.records.last() {
            if epoch <= last.epoch {
                return Err(Error::OutOfOrderEpoch {
                    epoch,
                    last: last.epoch,
                });
            }
        }
        self.records.push(EpochRecord {
            epoch,
            metrics: values.into_iter().collect(),
        });
        Ok(self.records.last().unwrap())
    }

    fn best_index(&self, metric: Metric) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.records.iter().enumerate() {
            let v = r.get(metric);
            if v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, _)) => Ok(i),
            None if self.records.is_empty() => Err(Error::EmptyData),
            None => Err(Error::UndefinedMetric(metric.name().to_string())),
        }
    }

    /// Epoch minimizing the canonical metric; earliest on ties.
    pub fn best_epoch(&self, metric: Metric) -> Result<usize> {
        Ok(self.records[self.best_index(metric)?].epoch)
    }

    /// Like [`EpochTracker::best_epoch`], taking the metric by name.
    pub fn best_epoch_by_name(&self, metric: &str) -> Result<usize> {
        self.best_epoch(metric.parse()?)
    }

    /// For every stopping metric, evaluates test predictions at the chosen
    /// epoch. `test[i]` belongs to the `i`-th recorded epoch. Metrics that are
    /// undefined at every epoch get no row.
    pub fn compare_policies(&self, test: &[PredictionSet]) -> Result<StoppingReport> {
        if !self.retain {
            return Err(Error::InvalidParameter(
                "compare_policies needs a tracker that retains predictions".into(),
            ));
        }
        if test.len() != self.records.len() {
            return Err(Error::DimensionMismatch {
                expected: self.records.len(),
                got: test.len(),
            });
        }
        let mut rows = Vec::with_capacity(Metric::ALL.len());
        for metric in Metric::ALL {
            let i = match self.best_index(metric) {
                Ok(i) => i,
                Err(Error::UndefinedMetric(_)) => continue,
                Err(e) => return Err(e),
            };
            let ts = fit_temperature(&self.retained[i], LossKind::Logloss, true)?;
            rows.push(PolicyRow {
                metric,
                epoch: self.records[i].epoch,
                value: self.records[i].get(metric),
                beta: ts.beta,
                test_raw: EvalMetrics::compute(&test[i])?,
                test_ts: EvalMetrics::compute(&ts.apply_set(&test[i]))?,
            });
        }
        Ok(StoppingReport { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> EpochTracker {
        let mut t = EpochTracker::new();
        for (e, &v) in values.iter().enumerate() {
            t.record_values(e, [(Metric::Logloss, v)]).unwrap();
        }
        t
    }

    fn data(scores: &[f64], labels: &[usize]) -> PredictionSet {
        let probs = scores.iter().flat_map(|&s| [1.0 - s, s]).collect();
        PredictionSet::new(probs, labels.to_vec(), 2).unwrap()
    }

    #[test]
    fn best_epoch_examples() {
        assert_eq!(series(&[0.5, 0.4, 0.45]).best_epoch(Metric::Logloss).unwrap(), 1);
        assert_eq!(series(&[0.4, 0.4]).best_epoch(Metric::Logloss).unwrap(), 0);
        assert_eq!(series(&[]).best_epoch(Metric::Logloss), Err(Error::EmptyData));
    }

    #[test]
    fn unknown_metric_name() {
        let t = series(&[0.1]);
        assert_eq!(
            t.best_epoch_by_name("f1"),
            Err(Error::UnknownMetric("f1".into()))
        );
        assert_eq!(t.best_epoch_by_name("logloss").unwrap(), 0);
    }

    #[test]
    fn records_every_metric() {
        let mut t = EpochTracker::new();
        let r = t.record_epoch(0, &data(&[0.2, 0.7, 0.6, 0.9], &[0, 1, 0, 1])).unwrap();
        assert_eq!(r.metrics.len(), 7);
        assert!(r.get(Metric::Accuracy) <= 0.0);
    }

    #[test]
    fn out_of_order_and_shape_errors() {
        let mut t = EpochTracker::new();
        let d = data(&[0.2, 0.7, 0.6, 0.9, 0.1], &[0, 1, 0, 1, 0]);
        t.record_epoch(3, &d).unwrap();
        assert_eq!(
            t.record_epoch(3, &d).unwrap_err(),
            Error::OutOfOrderEpoch { epoch: 3, last: 3 }
        );
        let smaller = data(&[0.2, 0.7, 0.6, 0.9, 0.3, 0.4], &[0, 1, 0, 1, 0, 1]);
        assert!(matches!(
            t.record_epoch(4, &smaller),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn negated_accuracy_picks_highest() {
        let mut t = EpochTracker::new();
        for (e, acc) in [0.6, 0.9, 0.9, 0.7].iter().enumerate() {
            t.record_values(e, [(Metric::Accuracy, -acc)]).unwrap();
        }
        assert_eq!(t.best_epoch(Metric::Accuracy).unwrap(), 1);
    }

    #[test]
    fn degenerate_auroc_is_skipped() {
        let mut t = EpochTracker::new();
        let d = data(&[0.2, 0.7, 0.6, 0.9, 0.1], &[1, 1, 1, 1, 1]);
        let r = t.record_epoch(0, &d).unwrap();
        assert!(r.get(Metric::Auroc).is_nan());
        assert!(t.best_epoch(Metric::Auroc).is_err());
    }

    #[test]
    fn compare_requires_retention_and_all_epochs() {
        let d = data(&[0.2, 0.7, 0.6, 0.9, 0.1], &[0, 1, 0, 1, 0]);
        let mut t = EpochTracker::new();
        t.record_epoch(0, &d).unwrap();
        assert!(t.compare_policies(std::slice::from_ref(&d)).is_err());
        let mut t = EpochTracker::retaining_predictions();
        t.record_epoch(0, &d).unwrap();
        t.record_epoch(1, &d).unwrap();
        assert!(matches!(
            t.compare_policies(std::slice::from_ref(&d)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constant_epochs_all_choose_zero() {
        let d = data(&[0.2, 0.7, 0.6, 0.9, 0.1, 0.4], &[0, 1, 0, 1, 0, 1]);
        let mut t = EpochTracker::retaining_predictions();
        for e in 0..3 {
            t.record_epoch(e, &d).unwrap();
        }
        let report = t.compare_policies(&[d.clone(), d.clone(), d.clone()]).unwrap();
        assert_eq!(report.rows.len(), 7);
        for row in &report.rows {
            assert_eq!(row.epoch, 0);
            assert_eq!(row.test_raw, report.rows[0].test_raw);
            assert_eq!(row.test_ts, report.rows[0].test_ts);
        }
    }

    #[test]
    fn single_epoch_report() {
        let d = data(&[0.2, 0.7, 0.6, 0.9, 0.1, 0.4], &[0, 1, 0, 1, 0, 1]);
        let mut t = EpochTracker::retaining_predictions();
        t.record_epoch(0, &d).unwrap();
        let report = t.compare_policies(std::slice::from_ref(&d)).unwrap();
        let row = report.row(Metric::Logloss).unwrap();
        assert_eq!(row.test_raw, EvalMetrics::compute(&d).unwrap());
        assert_eq!(row.value, empirical_risk(LossKind::Logloss, &d).unwrap());
    }
}
