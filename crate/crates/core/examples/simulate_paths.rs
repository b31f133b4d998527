//! Euler paths of the benchmark GBM: terminal moments against the exact
//! lognormal law, and the European put priced on the same paths.
//!
//! `cargo run --release --example simulate_paths -- [paths] [intervals] [seed]`

use optstop::market::{payoff_put, sample_terminal_exact, simulate_paths, MarketParams, TimeGrid};
use optstop::policy::mean_and_se;
use optstop::premium::{european_put_value, PutContract};

fn main() -> optstop::error::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let paths = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1 << 16);
    let intervals = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let params = MarketParams::default();
    let grid = TimeGrid::new(params.horizon, intervals)?;
    let batch = simulate_paths(&params, &grid, paths, seed)?;

    let terminal = batch.column(intervals);
    let (mean, se) = mean_and_se(terminal);
    println!("E[X_T]   euler {mean:.4} +/- {se:.4}   exact {:.4}", params.x0 * params.rate.exp());
    let exact = sample_terminal_exact(&params, paths, seed);
    let (mean_exact, se_exact) = mean_and_se(exact.view());
    println!("         lognormal sampler {mean_exact:.4} +/- {se_exact:.4}");

    let disc = (-params.rate * params.horizon).exp();
    let put = terminal.mapv(|x| disc * payoff_put(x, params.strike));
    let (p, p_se) = mean_and_se(put.view());
    let bs = european_put_value(0.0, params.x0, params.sigma, &PutContract::from_market(&params))?;
    println!("European put  mc {p:.4} +/- {p_se:.4}   closed form {bs:.4}");
    println!("floored steps: {}", batch.floored_steps());
    Ok(())
}
