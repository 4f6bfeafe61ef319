//! Early stopping on a synthetic training run whose ranking ability keeps
//! improving while its confidence grows too fast. Stopping on validation loss
//! halts early; stopping on refinement (loss after temperature scaling) waits
//! for the better ranking and recalibrates afterwards.

use calref::gaussian::GaussianModelPoint;
use calref::simulate::ModelSample;
use calref::{EpochTracker, Metric};

const EPOCHS: usize = 40;

/// Alignment saturates, the norm grows linearly.
fn checkpoint(t: usize) -> calref::Result<GaussianModelPoint> {
    let t = t as f64;
    GaussianModelPoint::new(2.5 * (1.0 - (-t / 6.0).exp()), 0.3 + 0.15 * t)
}

fn main() -> calref::Result<()> {
    let val = ModelSample::draw(5000, 11)?;
    let test = ModelSample::draw(5000, 12)?;

    let mut tracker = EpochTracker::retaining_predictions();
    let mut test_sets = Vec::with_capacity(EPOCHS);
    for t in 0..EPOCHS {
        let pt = checkpoint(t)?;
        tracker.record_epoch(t, &val.predictions(pt)?)?;
        test_sets.push(test.predictions(pt)?);
    }

    println!("{:>5} {:>9} {:>14}", "epoch", "logloss", "ts-refinement");
    for r in tracker.records().iter().step_by(4) {
        println!("{:>5} {:>9.5} {:>14.5}", r.epoch, r.get(Metric::Logloss), r.get(Metric::TsRefinement));
    }

    let report = tracker.compare_policies(&test_sets)?;
    println!();
    println!(
        "{:<20} {:>5} {:>8} {:>12} {:>11} {:>12}",
        "stop on", "epoch", "beta", "test loss", "loss + TS", "accuracy"
    );
    for row in &report.rows {
        println!(
            "{:<20} {:>5} {:>8.4} {:>12.5} {:>11.5} {:>12.4}",
            row.metric.name(),
            row.epoch,
            row.beta,
            row.test_raw.logloss,
            row.test_ts.logloss,
            row.test_ts.accuracy
        );
    }
    Ok(())
}
