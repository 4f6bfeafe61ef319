//! Gain of tuning the ridge penalty for refinement and recalibrating afterwards,
//! over a grid of dimension ratios and Bayes error rates. Pass the Beta
//! spectrum parameters as arguments (default 1 1).

use calref::highdim::{log_grid, minimizer_gap_and_gain, SpectralDist, DEFAULT_EPSILON};

fn main() -> calref::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>().expect("numeric argument"));
    let alpha = args.next().unwrap_or(1.0);
    let beta = args.next().unwrap_or(1.0);
    let spectrum = SpectralDist::shifted_beta(alpha, beta, DEFAULT_EPSILON)?;

    let r_grid = log_grid(0.1, 10.0, 5)?;
    let estar_grid = [0.01, 0.05, 0.1, 0.2, 0.3];
    let cells = minimizer_gap_and_gain(&spectrum, &r_grid, &estar_grid, &log_grid(1e-5, 1e2, 40)?)?;

    println!("gain (%) for Beta({alpha}, {beta}) spectrum; rows r, columns e*");
    print!("{:>7}", "r \\ e*");
    for e in estar_grid {
        print!(" {e:>6}");
    }
    println!();
    for (i, r) in r_grid.iter().enumerate() {
        print!("{r:>7.3}");
        for cell in &cells[i * estar_grid.len()..(i + 1) * estar_grid.len()] {
            print!(" {:>6.2}", cell.gain_percent);
        }
        println!();
    }
    let best = cells.iter().max_by(|a, b| a.gain_percent.total_cmp(&b.gain_percent)).unwrap();
    println!(
        "max gain {:.2}% at r = {:.3}, e* = {} (log10 lambda_cal/lambda_ref = {:.2})",
        best.gain_percent, best.r, best.estar, best.log10_gap
    );
    Ok(())
}
