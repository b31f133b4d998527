//! Solve the penalized put problem on a log-price grid and print the price
//! at `x0` together with a few points of the free boundary.
//!
//! ```text
//! cargo run --release --example fd_oracle -- 2000 2000 1e6
//! ```

use optstop::fd::{solve, FdConfig, FdGridSpec};
use optstop::market::MarketParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let num_space = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let num_time = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let penalty = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e6);
    let params = MarketParams::default();
    let config = FdConfig {
        grid: FdGridSpec {
            num_space,
            num_time,
            ..Default::default()
        },
        penalty,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let sol = solve(&params, &config)?;
    println!(
        "price at x0 = {:.6}  ({:.2} s, at most {} Newton iterations per row)",
        sol.price_at(0.0, params.x0)?,
        start.elapsed().as_secs_f64(),
        sol.max_newton_iters()
    );
    println!("{:>6} {:>10}", "t", "X_f(t)");
    for k in 0..=10 {
        let t = k as f64 / 10.0 * params.horizon;
        match sol.boundary().at_time(t) {
            Some(x) => println!("{t:>6.2} {x:>10.4}"),
            None => println!("{t:>6.2} {:>10}", "absent"),
        }
    }
    Ok(())
}
