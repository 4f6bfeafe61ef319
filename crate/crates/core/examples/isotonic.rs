//! Isotonic (pool-adjacent-violators) recalibration of binary predictions,
//! compared with temperature scaling.

use calref::calibrate::{fit_isotonic, fit_temperature, pool_adjacent_violators};
use calref::gaussian::GaussianModelPoint;
use calref::scores::empirical_risk;
use calref::simulate::ModelSample;
use calref::LossKind;

fn main() -> calref::Result<()> {
    let y = [0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let blocks = pool_adjacent_violators(&y, &[1.0; 8]);
    println!("PAV on {y:?}:");
    for (start, value) in &blocks {
        println!("  block starting at {start} -> {value:.4}");
    }

    let fit_set = ModelSample::draw(4000, 7)?.predictions(GaussianModelPoint::new(1.5, 0.6)?)?;
    let test_set = ModelSample::draw(4000, 8)?.predictions(GaussianModelPoint::new(1.5, 0.6)?)?;
    let iso = fit_isotonic(&fit_set, true)?;
    let ts = fit_temperature(&fit_set, LossKind::Logloss, false)?;
    println!();
    let mut levels = iso.values.clone();
    levels.dedup();
    println!("isotonic map: {} blocks, {} distinct levels", iso.values.len(), levels.len());
    for (b, v) in iso.breakpoints.iter().zip(&iso.values).step_by((iso.values.len() / 8).max(1)) {
        println!("  score >= {b:.4} -> {v:.4}");
    }
    println!();
    println!("test logloss raw       {:.5}", empirical_risk(LossKind::Logloss, &test_set)?);
    println!("test logloss isotonic  {:.5}", empirical_risk(LossKind::Logloss, &iso.apply_set(&test_set)?)?);
    println!("test logloss TS        {:.5} (beta {:.4})", empirical_risk(LossKind::Logloss, &ts.apply_set(&test_set))?, ts.beta);
    Ok(())
}
