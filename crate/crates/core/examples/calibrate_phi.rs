//! Fit the volatility surrogate `phi` of the premium payoff by stochastic
//! gradient descent on the martingale loss, and print a thinned trace.
//!
//! ```text
//! cargo run --release --example calibrate_phi -- 0.8 2000
//! ```

use optstop::market::MarketParams;
use optstop::premium::{calibrate_phi, CalibrationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let phi0 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.8);
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let config = CalibrationConfig {
        phi0,
        steps,
        ..Default::default()
    };
    let trace = calibrate_phi(&MarketParams::default(), &config)?;
    let every = (steps / 20).max(1);
    println!("{:>6} {:>10} {:>12}", "step", "phi", "loss");
    for row in trace.rows.iter().filter(|r| r.step % every == 0 || r.step == steps) {
        println!("{:>6} {:>10.5} {:>12.5}", row.step, row.phi, row.loss);
    }
    println!("last iterate = {:.5}", trace.last_phi());
    println!("calibrated phi (tail average) = {:.5}", trace.final_phi());
    Ok(())
}
