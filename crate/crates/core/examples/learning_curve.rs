//! Asymptotic cross-entropy, calibration and refinement of ridge logistic
//! regression along a lambda grid, with the refine-then-calibrate gain.

use calref::highdim::{lambda_sweep, log_grid, SpectralDist, TheoryProblem};

fn main() -> calref::Result<()> {
    let spectrum = SpectralDist::uniform();
    let base = TheoryProblem::new(0.5, 0.1, spectrum, 1.0)?;
    let sweep = lambda_sweep(&base, &log_grid(1e-3, 1e2, 25)?)?;

    println!("{:>12} {:>10} {:>10} {:>10} {:>8}", "lambda", "risk", "calib", "refine", "error");
    for p in &sweep.points {
        println!(
            "{:>12.4e} {:>10.5} {:>10.5} {:>10.5} {:>8.4}",
            p.lambda, p.risk, p.calibration, p.refinement, p.error_rate
        );
    }
    let cal = sweep.argmin_calibration().unwrap();
    let loss = sweep.argmin_risk().unwrap();
    let refi = sweep.argmin_refinement().unwrap();
    println!("argmin lambda: calibration {:.4e}, loss {:.4e}, refinement {:.4e}", cal.lambda, loss.lambda, refi.lambda);
    println!("refine-then-calibrate gain: {:.2}%", 100.0 * sweep.refine_then_calibrate_gain().unwrap());
    Ok(())
}
