//! Finite-sample learning curve of ridge logistic regression next to its
//! asymptotic prediction. Pass `n` and the number of seeds as arguments
//! (defaults: 400 samples, 10 seeds).

use calref::highdim::{log_grid, SpectralDist, TheoryProblem};
use calref::simulate::replicate_learning_curve;

fn main() -> calref::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(400);
    let seeds = args.next().unwrap_or(10);

    let base = TheoryProblem::new(0.5, 0.1, SpectralDist::uniform(), 1.0)?;
    let rep = replicate_learning_curve(&base, &log_grid(1e-3, 1e2, 25)?, n, seeds)?;

    println!("n = {}, p = {}, seeds used = {}", rep.n, rep.p, rep.seeds_used);
    println!(
        "{:>10} {:>9} {:>21} {:>9} {:>21}",
        "lambda", "cal(th)", "cal 95% CI", "ref(th)", "ref 95% CI"
    );
    for p in &rep.points {
        println!(
            "{:>10.3e} {:>9.5} [{:>9.5}, {:>9.5}] {:>9.5} [{:>9.5}, {:>9.5}]{}",
            p.lambda,
            p.theory.calibration,
            p.calibration.lo,
            p.calibration.hi,
            p.theory.refinement,
            p.refinement.lo,
            p.refinement.hi,
            if p.theory_covered() { "" } else { "  *" }
        );
    }
    println!("theory inside both intervals at {:.0}% of grid points", 100.0 * rep.theory_coverage());
    for (seed, why) in &rep.dropped {
        println!("dropped seed {seed}: {why}");
    }
    Ok(())
}
