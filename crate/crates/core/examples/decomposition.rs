//! Splits the validation loss of a small discrete prediction set into
//! calibration and refinement with every estimator.

use calref::decompose::{binned_ece, decompose_risk, group_predictions, sharpness_report};
use calref::{Estimator, LossKind, PredictionSet};

fn main() -> calref::Result<()> {
    // two prediction values, each seen four times
    let rows = [
        vec![0.8, 0.2],
        vec![0.8, 0.2],
        vec![0.8, 0.2],
        vec![0.8, 0.2],
        vec![0.3, 0.7],
        vec![0.3, 0.7],
        vec![0.3, 0.7],
        vec![0.3, 0.7],
    ];
    let data = PredictionSet::from_rows(&rows, vec![0, 0, 0, 1, 1, 1, 1, 0])?;

    for g in group_predictions(&data) {
        println!("prediction {:?}: {} rows, label frequencies {:?}", g.prediction, g.count, g.conditional_mean);
    }
    println!();
    println!("{:<8} {:<11} {:>10} {:>12} {:>11}", "loss", "estimator", "risk", "calibration", "refinement");
    for loss in [LossKind::Logloss, LossKind::Brier] {
        for est in [Estimator::BruteForce, Estimator::Ts, Estimator::Isotonic, Estimator::CvTs] {
            let d = decompose_risk(&data, loss, est, false)?;
            println!(
                "{:<8} {:<11} {:>10.6} {:>12.6} {:>11.6}",
                loss, est, d.risk, d.calibration, d.refinement
            );
        }
    }
    let sharp = sharpness_report(&data, LossKind::Logloss)?;
    println!();
    println!("uncertainty {:.6}, sharpness {:.6}", sharp.uncertainty, sharp.sharpness);
    println!("binned ECE {:.6}", binned_ece(&data)?);
    Ok(())
}
