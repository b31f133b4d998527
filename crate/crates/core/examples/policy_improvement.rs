//! One round of policy improvement from a randomly initialized ensemble.
//!
//! The random ensemble defines `pi`; its value `J^pi` comes from the
//! fixed-policy finite-difference solver; the improved policy is read off
//! `J^pi`. Both policies are then evaluated by Monte Carlo on the same paths.
//!
//! `cargo run --release --example policy_improvement -- [seed] [K] [lambda]`

use ndarray::{Array1, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use optstop::ensemble::{FeatureMode, Standardizer, ValueEnsemble};
use optstop::error::Result;
use optstop::fd::{solve_policy_value, FdGrid, FdGridSpec, FdSolution};
use optstop::market::{payoff_put, simulate_paths, MarketParams, TimeGrid};
use optstop::mlp::{MlpSpec, Mode};
use optstop::policy::{evaluate_policy_mc, improve_policy, StoppingPolicy, ValueFunction};
use optstop::premium::Payoff;

struct Tabulated<'a> {
    sol: &'a FdSolution,
    grid: TimeGrid,
    strike: f64,
}

impl ValueFunction for Tabulated<'_> {
    fn value(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        x.iter().map(|&x| self.sol.price_at(self.grid.time(l), x)).collect()
    }

    fn payoff(&self, _: usize, x: ArrayView1<f64>) -> Array1<f64> {
        x.mapv(|x| payoff_put(x, self.strike))
    }
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let k: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let lambda: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let params = MarketParams::default();
    let grid = TimeGrid::new(params.horizon, 50)?;
    let steps = grid.num_intervals();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ensemble = ValueEnsemble::new(
        grid.clone(),
        Payoff::Put { strike: params.strike },
        FeatureMode::StatePlusPayoff,
        &MlpSpec::value_net(2),
        &mut rng,
    )?;
    let sample = simulate_paths(&params, &grid, 1024, seed + 1)?;
    let blocks: Vec<_> = (0..steps).map(|l| ensemble.raw_features(l, sample.column(l))).collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    ensemble.set_standardizer(Standardizer::fit(&pooled))?;
    ensemble.set_mode(Mode::Eval);
    let policy = StoppingPolicy::new(&ensemble, k, lambda)?;

    let fd_spec = FdGridSpec {
        num_space: 1000,
        num_time: 1000,
        ..Default::default()
    };
    let fd_grid = FdGrid::new(&fd_spec, &params)?;
    let nodes = Array1::from_iter((0..=fd_grid.num_space).map(|j| fd_grid.x(j)));
    let table = (0..steps)
        .map(|l| policy.probabilities(l, nodes.view()))
        .collect::<Result<Vec<_>>>()?;
    let pi = |t: f64, x: f64| {
        let l = ((t / grid.dt()) + 1e-9).floor().min((steps - 1) as f64) as usize;
        let j = ((x.ln() - fd_grid.y_min) / fd_grid.dy).round().clamp(0.0, fd_grid.num_space as f64) as usize;
        table[l][j]
    };
    let value = solve_policy_value(&params, &fd_spec, k, lambda, &pi)?;
    let source = Tabulated {
        sol: &value,
        grid: grid.clone(),
        strike: params.strike,
    };
    let improved = improve_policy(&source, k, lambda)?;

    let put = |_: f64, x: f64| payoff_put(x, params.strike);
    let before = evaluate_policy_mc(&policy, &put, &params, &grid, k, lambda, 1 << 14, 99)?;
    let after = evaluate_policy_mc(&improved, &put, &params, &grid, k, lambda, 1 << 14, 99)?;
    println!("J^pi  (pde)  {:.4}", value.price_at(0.0, params.x0)?);
    println!("J^pi  (mc)   {:.4} +/- {:.4}", before.mean, before.std_error);
    println!("J^pi~ (mc)   {:.4} +/- {:.4}", after.mean, after.std_error);
    Ok(())
}
