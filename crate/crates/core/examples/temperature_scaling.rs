//! Fits temperature scaling to overconfident binary predictions and shows that
//! it fixes calibration without touching accuracy.

use calref::calibrate::{fit_temperature, temperature_loss};
use calref::decompose::binned_ece;
use calref::gaussian::GaussianModelPoint;
use calref::scores::{accuracy, empirical_risk};
use calref::simulate::ModelSample;
use calref::LossKind;

fn main() -> calref::Result<()> {
    // the calibrated logit scale is 2; predictions use 5, i.e. overconfident
    let fit_set = ModelSample::draw(5000, 1)?.predictions(GaussianModelPoint::new(2.0, 5.0)?)?;
    let test_set = ModelSample::draw(5000, 2)?.predictions(GaussianModelPoint::new(2.0, 5.0)?)?;

    let cal = fit_temperature(&fit_set, LossKind::Logloss, false)?;
    println!("fitted inverse temperature beta = {:.5} (ideal 0.4)", cal.beta);
    for beta in [0.25, 0.4, 1.0] {
        println!("  fit-set logloss at beta {beta:<4}: {:.5}", temperature_loss(&fit_set, LossKind::Logloss, beta));
    }

    let scaled = cal.apply_set(&test_set);
    println!();
    println!("{:<7} {:>9} {:>9} {:>9} {:>9}", "test", "logloss", "brier", "accuracy", "ECE");
    for (name, d) in [("raw", &test_set), ("scaled", &scaled)] {
        println!(
            "{:<7} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            name,
            empirical_risk(LossKind::Logloss, d)?,
            empirical_risk(LossKind::Brier, d)?,
            accuracy(d)?,
            binned_ece(d)?
        );
    }
    Ok(())
}
