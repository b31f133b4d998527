mod common;

use common::{binomial_american_put, binomial_european_put};
use optstop::fd::{self, FdGridSpec};
use optstop::market::{simulate_paths, MarketParams, TimeGrid};
use optstop::policy::mean_and_se;
use optstop::premium::{european_put_value, PutContract};

#[test]
fn tree_reproduces_european_closed_form() {
    let p = MarketParams::default();
    let tree = binomial_european_put(&p, 2000);
    let exact = european_put_value(0.0, p.x0, p.sigma, &PutContract::from_market(&p)).unwrap();
    assert!((tree - exact).abs() < 5e-3, "tree {tree} vs closed form {exact}");
}

#[test]
fn fd_oracle_agrees_with_binomial_tree() {
    let p = MarketParams::default();
    let spec = FdGridSpec {
        num_space: 800,
        num_time: 400,
        ..FdGridSpec::default()
    };
    let fd_price = fd::solve_penalized_vi(&p, &spec, 1e6, 1e-8).unwrap().price_at(0.0, p.x0).unwrap();
    let tree = binomial_american_put(&p, 5000);
    assert!((fd_price - tree).abs() / tree <= 0.005, "fd {fd_price} tree {tree}");
}

#[test]
fn fd_oracle_tracks_tree_off_the_money() {
    for x0 in [32.0, 36.0, 44.0, 48.0] {
        let p = MarketParams { x0, ..MarketParams::default() };
        let spec = FdGridSpec {
            num_space: 800,
            num_time: 400,
            ..FdGridSpec::default()
        };
        let fd_price = fd::solve_penalized_vi(&p, &spec, 1e6, 1e-8).unwrap().price_at(0.0, x0).unwrap();
        let tree = binomial_american_put(&p, 2000);
        assert!((fd_price - tree).abs() < 0.01, "x0 {x0}: fd {fd_price} tree {tree}");
    }
}

#[test]
fn euler_terminal_mean_matches_gbm_moment() {
    let p = MarketParams::default();
    let grid = TimeGrid::new(p.horizon, 50).unwrap();
    let batch = simulate_paths(&p, &grid, 1 << 18, 5).unwrap();
    let (mean, se) = mean_and_se(batch.column(50));
    let exact = p.x0 * (p.rate * p.horizon).exp();
    assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} exact {exact} se {se}");
}
