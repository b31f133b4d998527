//! Entropy-regularized Bernoulli stopping policy.
//!
//! With penalty `K` and temperature `lambda` the optimal stopping intensity
//! factor is `pi* = 1 / (1 + exp(K (v - g) / lambda))`; the regularizer is
//! `H(pi) = pi ln pi + (1 - pi) ln(1 - pi)` (the negative entropy).

use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::market::{derive_seed, simulate_paths, step_discount, MarketParams, TimeGrid};

/// Probabilities are kept in `[PROB_CLIP, 1 - PROB_CLIP]`.
pub const PROB_CLIP: f64 = 1e-9;

/// `1 / (1 + e^{-z})` without overflow.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn stopping_probability(v: f64, g: f64, penalty: f64, lambda: f64) -> f64 {
    logistic(penalty * (g - v) / lambda).clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// `pi ln pi + (1 - pi) ln(1 - pi)` with `0 ln 0 = 0`.
#[inline]
pub fn bernoulli_entropy(pi: f64) -> f64 {
    let xlogx = |p: f64| if p <= 0.0 { 0.0 } else { p * p.ln() };
    xlogx(pi) + xlogx(1.0 - pi)
}

/// 1 = stop, 0 = continue.
pub fn sample_action<R: Rng + ?Sized>(pi: f64, rng: &mut R) -> u8 {
    if pi <= 0.0 {
        0
    } else if pi >= 1.0 {
        1
    } else {
        u8::from(rng.random::<f64>() < pi)
    }
}

/// A value estimate on the decision grid, paired with its payoff.
pub trait ValueFunction {
    /// `V(t_l, x)` for a batch of prices; `l = L` is the terminal value.
    fn value(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>>;

    /// Payoff `g(t_l, x)` the value is compared against.
    fn payoff(&self, l: usize, x: ArrayView1<f64>) -> Array1<f64>;
}

/// Policy induced by a value function via the closed-form map.
pub struct StoppingPolicy<'a> {
    source: &'a dyn ValueFunction,
    penalty: f64,
    lambda: f64,
}

impl<'a> StoppingPolicy<'a> {
    pub fn new(source: &'a dyn ValueFunction, penalty: f64, lambda: f64) -> Result<Self> {
        if !(penalty > 0.0 && lambda > 0.0) {
            return Err(Error::config(format!(
                "policy needs K > 0 and lambda > 0, got K = {penalty}, lambda = {lambda}"
            )));
        }
        Ok(Self { source, penalty, lambda })
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn probabilities(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let v = self.source.value(l, x)?;
        let g = self.source.payoff(l, x);
        Ok(ndarray::Zip::from(&v)
            .and(&g)
            .map_collect(|&v, &g| stopping_probability(v, g, self.penalty, self.lambda)))
    }
}

/// The improved policy `pi~ = 1 / (1 + exp(K (J - g) / lambda))` built from a
/// value estimate `J` of the current policy.
pub fn improve_policy<'a>(value: &'a dyn ValueFunction, penalty: f64, lambda: f64) -> Result<StoppingPolicy<'a>> {
    StoppingPolicy::new(value, penalty, lambda)
}

/// Bernoulli probabilities per decision index, batch-evaluated.
pub trait BatchPolicy {
    fn probabilities(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>>;
}

impl BatchPolicy for StoppingPolicy<'_> {
    fn probabilities(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        StoppingPolicy::probabilities(self, l, x)
    }
}

impl<F> BatchPolicy for F
where
    F: Fn(usize, ArrayView1<f64>) -> Result<Array1<f64>>,
{
    fn probabilities(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self(l, x)
    }
}

/// Monte Carlo value of a randomized policy at `(0, x0)`.
#[derive(Clone, Debug)]
pub struct PolicyEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub per_path: Array1<f64>,
}

/// `J^pi(0, x0) = E[sum_l e^{-rho t_l} R_l (K g pi_l - lambda H(pi_l)) dt + e^{-rho T} R_L g(X_T)]`
/// with `R_{l+1} = R_l (1 - K pi_l dt)`, on Euler paths drawn from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy_mc(
    policy: &dyn BatchPolicy,
    payoff: &dyn Fn(f64, f64) -> f64,
    params: &MarketParams,
    grid: &TimeGrid,
    penalty: f64,
    lambda: f64,
    num_paths: usize,
    seed: u64,
) -> Result<PolicyEstimate> {
    crate::market::check_penalty_step(penalty, grid.dt())?;
    let batch = simulate_paths(params, grid, num_paths, derive_seed(seed, 0))?;
    let steps = grid.num_intervals();
    let dt = grid.dt();
    let mut r = Array1::<f64>::ones(num_paths);
    let mut total = Array1::<f64>::zeros(num_paths);
    for l in 0..steps {
        let t = grid.time(l);
        let disc = (-params.rate * t).exp();
        let x = batch.column(l);
        let pi = policy.probabilities(l, x)?;
        for m in 0..num_paths {
            let g = payoff(t, x[m]);
            total[m] += disc * r[m] * (penalty * g * pi[m] - lambda * bernoulli_entropy(pi[m])) * dt;
            r[m] = step_discount(r[m], pi[m], penalty, dt);
        }
    }
    let disc_t = (-params.rate * grid.horizon()).exp();
    let xt = batch.column(steps);
    for m in 0..num_paths {
        total[m] += disc_t * r[m] * payoff(grid.horizon(), xt[m]);
    }
    let (mean, std_error) = mean_and_se(total.view());
    Ok(PolicyEstimate {
        mean,
        std_error,
        per_path: total,
    })
}

pub fn mean_and_se(v: ArrayView1<f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stopping_probability_examples() {
        assert_eq!(stopping_probability(3.0, 3.0, 10.0, 1.0), 0.5);
        assert_eq!(stopping_probability(1e6, 0.0, 50.0, 0.1), PROB_CLIP);
        assert_eq!(stopping_probability(0.0, 1e6, 50.0, 0.1), 1.0 - PROB_CLIP);
        // 1 / (1 + e^{-1}) to 15 digits
        assert!((stopping_probability(0.0, 0.1, 10.0, 1.0) - 0.731_058_578_630_005).abs() < 1e-14);
    }

    #[test]
    fn entropy_examples() {
        assert!((bernoulli_entropy(0.5) + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(bernoulli_entropy(0.0), 0.0);
        assert_eq!(bernoulli_entropy(1.0), 0.0);
        assert_eq!(bernoulli_entropy(0.2), bernoulli_entropy(0.8));
    }

    proptest! {
        #[test]
        fn probability_is_decreasing_and_symmetric(d in -5.0f64..5.0, e in 1e-3f64..1.0, k in 0.5f64..50.0, lam in 0.1f64..10.0) {
            let p = stopping_probability(d, 0.0, k, lam);
            let q = stopping_probability(d + e, 0.0, k, lam);
            prop_assert!(q <= p);
            let mirrored = stopping_probability(-d, 0.0, k, lam);
            prop_assert!((p + mirrored - 1.0).abs() < 1e-12);
        }

        #[test]
        fn probability_increases_with_k_below_payoff(d in -5.0f64..-1e-3, k in 0.5f64..20.0, lam in 0.1f64..10.0) {
            prop_assert!(stopping_probability(d, 0.0, 2.0 * k, lam) >= stopping_probability(d, 0.0, k, lam));
        }

        #[test]
        fn decision_depends_only_on_sign(d in -5.0f64..5.0, k in 0.5f64..50.0, lam in 0.1f64..10.0) {
            let stop = stopping_probability(d, 0.0, k, lam) >= 0.5;
            prop_assert_eq!(stop, d <= 0.0);
        }

        #[test]
        fn higher_temperature_contracts_to_half(d in -5.0f64..5.0, k in 0.5f64..50.0, lam in 0.1f64..10.0, f in 1.0f64..10.0) {
            let a = (stopping_probability(d, 0.0, k, lam * f) - 0.5).abs();
            let b = (stopping_probability(d, 0.0, k, lam) - 0.5).abs();
            prop_assert!(a <= b + 1e-15);
        }

        #[test]
        fn entropy_range(p in 0.0f64..=1.0) {
            let h = bernoulli_entropy(p);
            prop_assert!((-std::f64::consts::LN_2 - 1e-15..=0.0).contains(&h));
        }
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..1000).all(|_| sample_action(0.0, &mut rng) == 0));
        assert!((0..1000).all(|_| sample_action(1.0, &mut rng) == 1));
        let n = 1_000_000;
        let hits: usize = (0..n).map(|_| sample_action(0.3, &mut rng) as usize).sum();
        let freq = hits as f64 / n as f64;
        let band = 3.0 * (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((freq - 0.3).abs() <= band, "frequency {freq}");
    }

    struct Flat;
    impl ValueFunction for Flat {
        fn value(&self, _: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
            Ok(x.mapv(|x| (40.0 - x).max(0.0)))
        }
        fn payoff(&self, _: usize, x: ArrayView1<f64>) -> Array1<f64> {
            x.mapv(|x| (40.0 - x).max(0.0))
        }
    }

    #[test]
    fn value_equal_to_payoff_gives_half() {
        let pol = improve_policy(&Flat, 10.0, 1.0).unwrap();
        let x = Array1::linspace(10.0, 70.0, 13);
        for l in [0, 10, 49] {
            assert!(pol.probabilities(l, x.view()).unwrap().iter().all(|&p| p == 0.5));
        }
    }
}
