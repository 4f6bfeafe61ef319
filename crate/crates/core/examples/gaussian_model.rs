//! Calibration and refinement of a linear classifier on the two-class Gaussian
//! model as a function of its alignment with the Bayes direction and its norm.

use calref::gaussian::{
    calibration_error, error_rate, mixture_risk, optimal_rescale, refinement_error,
    GaussianModelPoint,
};
use calref::LossKind;

fn main() -> calref::Result<()> {
    let a = 2.0;
    println!("alignment a = {a}: error rate {:.5}", error_rate(GaussianModelPoint::new(a, 1.0)?));
    println!("{:>6} {:>10} {:>12} {:>11}", "norm", "risk", "calibration", "refinement");
    for s in [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0] {
        let pt = GaussianModelPoint::new(a, s)?;
        println!(
            "{:>6.2} {:>10.6} {:>12.6} {:>11.6}",
            s,
            mixture_risk(pt, LossKind::Logloss)?,
            calibration_error(pt, LossKind::Logloss)?,
            refinement_error(pt, LossKind::Logloss)?
        );
    }

    let pt = GaussianModelPoint::new(a, 7.0)?;
    let fixed = optimal_rescale(pt);
    println!();
    println!(
        "rescaling norm {} -> {}: calibration {:.2e} -> {:.2e}, refinement unchanged at {:.6}",
        pt.norm,
        fixed.norm,
        calibration_error(pt, LossKind::Logloss)?,
        calibration_error(fixed, LossKind::Logloss)?,
        refinement_error(fixed, LossKind::Logloss)?
    );
    Ok(())
}
