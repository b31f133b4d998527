//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use optstop::market::MarketParams;

/// Cox-Ross-Rubinstein tree value of the American put at `(0, x0)`.
pub fn binomial_american_put(p: &MarketParams, steps: usize) -> f64 {
    let dt = p.horizon / steps as f64;
    let u = (p.sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let growth = (p.rate * dt).exp();
    let q = (growth - d) / (u - d);
    let disc = 1.0 / growth;
    let payoff = |i: usize, n: usize| {
        let x = p.x0 * u.powi(i as i32) * d.powi((n - i) as i32);
        (p.strike - x).max(0.0)
    };
    let mut v: Vec<f64> = (0..=steps).map(|i| payoff(i, steps)).collect();
    for n in (0..steps).rev() {
        for i in 0..=n {
            let cont = disc * (q * v[i + 1] + (1.0 - q) * v[i]);
            v[i] = cont.max(payoff(i, n));
        }
    }
    v[0]
}

/// Same tree for the European put, for sanity checks of the tree itself.
pub fn binomial_european_put(p: &MarketParams, steps: usize) -> f64 {
    let dt = p.horizon / steps as f64;
    let u = (p.sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let growth = (p.rate * dt).exp();
    let q = (growth - d) / (u - d);
    let mut v: Vec<f64> = (0..=steps)
        .map(|i| (p.strike - p.x0 * u.powi(i as i32) * d.powi((steps - i) as i32)).max(0.0))
        .collect();
    for n in (0..steps).rev() {
        for i in 0..=n {
            v[i] = (q * v[i + 1] + (1.0 - q) * v[i]) / growth;
        }
    }
    v[0]
}

/// `1 / (1 + e^{-z})`, written out separately from the library.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        z.exp() / (1.0 + z.exp())
    }
}
