//! Two-obstacle game for the put with a constant upper obstacle `U`.
//!
//! A large `U` recovers the single-obstacle oracle. `U` has to stay above
//! the put payoff on the whole grid (so above about the strike); smaller
//! values are rejected as crossing obstacles.
//!
//! `cargo run --release --example dynkin_game -- [U] [K] [lambda]`

use optstop::dynkin::{solve_penalized_game, ObstacleSpec};
use optstop::fd::{solve_penalized_vi, FdGrid, FdGridSpec};
use optstop::market::MarketParams;

fn main() -> optstop::error::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let upper: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e9);
    let k: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e4);
    let lambda: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let params = MarketParams::default();
    let spec_grid = FdGridSpec {
        num_space: 800,
        num_time: 400,
        ..Default::default()
    };
    let grid = FdGrid::new(&spec_grid, &params)?;
    let spec = ObstacleSpec::american_put(params.rate, params.sigma, params.strike, upper);
    let game = solve_penalized_game(&spec, &grid, k, lambda, 1e-10, 100)?;
    let single = solve_penalized_vi(&params, &spec_grid, k, 1e-10)?;
    let gap = (&game.values - single.values()).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    println!("U = {upper:e}, K = {k:e}, lambda = {lambda}");
    println!("max |w - u_single| = {gap:.3e}, sandwich violation {:.3e}", game.sandwich_violation(&spec));
    println!("{:>8} {:>10} {:>10} {:>10}", "x", "w(0,x)", "nu", "mu");
    for j in (0..=grid.num_space).step_by(grid.num_space / 40) {
        let x = grid.x(j);
        if (20.0..=70.0).contains(&x) {
            println!(
                "{x:>8.3} {:>10.5} {:>10.3e} {:>10.3e}",
                game.values[[0, j]],
                game.policies.nu[[0, j]],
                game.policies.mu[[0, j]]
            );
        }
    }
    Ok(())
}
