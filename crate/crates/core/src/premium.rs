//! European put valuation, the early-exercise-premium payoff and calibration
//! of the volatility surrogate `phi`.
//!
//! The learner does not know `sigma`, so the premium payoff
//! `g~(t, x) = (K - x)^+ - V_E(t, x)` is built from a Black-Scholes put priced
//! with `phi` in place of `sigma`. `phi` is fitted by stochastic gradient
//! descent on the martingale loss of the discounted European value process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{derive_seed, payoff_put, simulate_paths, MarketParams, PathBatch, TimeGrid};

/// Smallest admissible `phi`; calibration clamps to this.
pub const PHI_FLOOR: f64 = 1e-6;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn std_normal_cdf(y: f64) -> f64 {
    0.5 * libm::erfc(-y * INV_SQRT_2)
}

pub fn std_normal_pdf(y: f64) -> f64 {
    (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Strike, rate and maturity of a put; volatility is supplied separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PutContract {
    pub strike: f64,
    pub rate: f64,
    pub horizon: f64,
}

impl PutContract {
    pub fn from_market(params: &MarketParams) -> Self {
        Self {
            strike: params.strike,
            rate: params.rate,
            horizon: params.horizon,
        }
    }
}

fn check_point(t: f64, x: f64, phi: f64, contract: &PutContract) -> Result<()> {
    if !(t >= 0.0) || t > contract.horizon * (1.0 + 1e-12) {
        return Err(Error::domain(format!("t = {t} outside [0, {}]", contract.horizon)));
    }
    if !(x > 0.0) {
        return Err(Error::domain(format!("price must be positive, got {x}")));
    }
    if !(phi > 0.0) {
        return Err(Error::domain(format!("phi must be positive, got {phi}")));
    }
    Ok(())
}

fn d_plus_minus(tau: f64, x: f64, phi: f64, c: &PutContract) -> (f64, f64) {
    let s = phi * tau.sqrt();
    let d_plus = ((x / c.strike).ln() + (c.rate + 0.5 * phi * phi) * tau) / s;
    (d_plus, d_plus - s)
}

/// Unchecked Black-Scholes put; `t` is clamped to the horizon.
pub(crate) fn put_value_raw(t: f64, x: f64, phi: f64, c: &PutContract) -> f64 {
    let tau = (c.horizon - t).max(0.0);
    if tau <= 0.0 {
        return payoff_put(x, c.strike);
    }
    if x <= 0.0 {
        return c.strike * (-c.rate * tau).exp();
    }
    let (dp, dm) = d_plus_minus(tau, x, phi, c);
    c.strike * (-c.rate * tau).exp() * std_normal_cdf(-dm) - x * std_normal_cdf(-dp)
}

pub(crate) fn put_vega_raw(t: f64, x: f64, phi: f64, c: &PutContract) -> f64 {
    let tau = (c.horizon - t).max(0.0);
    if tau <= 0.0 || x <= 0.0 {
        return 0.0;
    }
    let (dp, _) = d_plus_minus(tau, x, phi, c);
    x * std_normal_pdf(dp) * tau.sqrt()
}

/// `V_E = K e^{-rho (T-t)} N(-d_-) - x N(-d_+)`.
pub fn european_put_value(t: f64, x: f64, phi: f64, contract: &PutContract) -> Result<f64> {
    check_point(t, x, phi, contract)?;
    Ok(put_value_raw(t, x, phi, contract))
}

/// `dV_E / dphi = x N'(d_+) sqrt(T - t)`.
pub fn european_put_vega(t: f64, x: f64, phi: f64, contract: &PutContract) -> Result<f64> {
    check_point(t, x, phi, contract)?;
    Ok(put_vega_raw(t, x, phi, contract))
}

/// `g~^phi(t, x) = (K - x)^+ - V_E^phi(t, x)`.
pub fn premium_payoff(t: f64, x: f64, phi: f64, contract: &PutContract) -> Result<f64> {
    check_point(t, x, phi, contract)?;
    Ok(payoff_put(x, contract.strike) - put_value_raw(t, x, phi, contract))
}

/// Reward signal used by the learner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    /// Plain put `(K - x)^+`.
    Put { strike: f64 },
    /// Early-exercise premium `g~^phi`.
    Premium { phi: f64, contract: PutContract },
}

impl Payoff {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match self {
            Payoff::Put { strike } => payoff_put(x, *strike),
            Payoff::Premium { phi, contract } => payoff_put(x, contract.strike) - put_value_raw(t, x, *phi, contract),
        }
    }

    pub fn strike(&self) -> f64 {
        match self {
            Payoff::Put { strike } => *strike,
            Payoff::Premium { contract, .. } => contract.strike,
        }
    }

    /// The value the learner's `V` must be shifted by to become an American
    /// put value: zero for the plain put, `V_E^phi` for the premium.
    pub fn european_offset(&self, t: f64, x: f64) -> f64 {
        match self {
            Payoff::Put { .. } => 0.0,
            Payoff::Premium { phi, contract } => put_value_raw(t, x, *phi, contract),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Payoff::Put { strike } if !(*strike > 0.0) => Err(Error::config("payoff strike must be positive")),
            Payoff::Premium { phi, contract } if !(*phi > 0.0 && contract.strike > 0.0 && contract.horizon > 0.0) => {
                Err(Error::config("premium payoff needs phi, strike and horizon > 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub phi0: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_intervals: usize,
    pub seed: u64,
    /// Report the average of the second half of the iterates instead of the
    /// last one.
    pub tail_average: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            phi0: 0.8,
            steps: 2000,
            batch_size: 1 << 10,
            learning_rate: 0.01,
            num_intervals: 50,
            seed: 7,
            tail_average: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub step: usize,
    pub phi: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrace {
    /// Raw iterates.
    pub rows: Vec<CalibrationRow>,
    /// Steps at which `phi` had to be clamped to [`PHI_FLOOR`].
    pub clamped_steps: Vec<usize>,
    pub tail_average: bool,
}

impl CalibrationTrace {
    pub fn last_phi(&self) -> f64 {
        self.rows.last().map(|r| r.phi).unwrap_or(f64::NAN)
    }

    /// Mean of the iterates after step `n/2` (Polyak-Ruppert); `phi0` when no
    /// step was taken.
    pub fn tail_mean_phi(&self) -> f64 {
        let n = self.rows.len() - 1;
        if n == 0 {
            return self.rows[0].phi;
        }
        let tail = &self.rows[n / 2 + 1..];
        tail.iter().map(|r| r.phi).sum::<f64>() / tail.len() as f64
    }

    /// The calibrated estimate.
    pub fn final_phi(&self) -> f64 {
        if self.tail_average {
            self.tail_mean_phi()
        } else {
            self.last_phi()
        }
    }
}

/// `ML(phi) = 1/2 E[sum_l (e^{-rho T} g(X_T) - e^{-rho t_l} V_E^phi(t_l, X_l))^2 dt]`
/// on a fixed batch, with its derivative in `phi`.
pub fn phi_loss_and_gradient(phi: f64, batch: &PathBatch, contract: &PutContract) -> (f64, f64) {
    let grid = batch.grid();
    let dt = grid.dt();
    let steps = grid.num_intervals();
    let rate = contract.rate;
    let disc_t: f64 = (-rate * grid.horizon()).exp();
    let disc: Vec<f64> = (0..steps).map(|l| (-rate * grid.time(l)).exp()).collect();
    let mut loss = 0.0;
    let mut grad = 0.0;
    for path in batch.prices().rows() {
        let terminal = disc_t * payoff_put(path[steps], contract.strike);
        for l in 0..steps {
            let t = grid.time(l);
            let x = path[l];
            let diff = terminal - disc[l] * put_value_raw(t, x, phi, contract);
            loss += diff * diff;
            grad -= diff * disc[l] * put_vega_raw(t, x, phi, contract);
        }
    }
    let m = batch.num_paths() as f64;
    (0.5 * loss * dt / m, grad * dt / m)
}

/// Stochastic gradient descent on `ML(phi)` over fresh Euler batches.
///
/// Row 0 holds `phi0` and its loss on the first batch; row `k` holds `phi`
/// after `k` updates and the loss that drove the `k`-th update.
pub fn calibrate_phi(params: &MarketParams, config: &CalibrationConfig) -> Result<CalibrationTrace> {
    params.validate()?;
    if !(config.phi0 > 0.0) {
        return Err(Error::config(format!("phi0 must be positive, got {}", config.phi0)));
    }
    if !(config.learning_rate >= 0.0) {
        return Err(Error::config("calibration learning rate must be >= 0"));
    }
    let grid = TimeGrid::new(params.horizon, config.num_intervals)?;
    let contract = PutContract::from_market(params);
    let batch = |k: usize| simulate_paths(params, &grid, config.batch_size, derive_seed(config.seed, k as u64));
    let mut phi = config.phi0;
    let (loss0, _) = phi_loss_and_gradient(phi, &batch(0)?, &contract);
    let mut rows = vec![CalibrationRow { step: 0, phi, loss: loss0 }];
    let mut clamped_steps = Vec::new();
    for k in 1..=config.steps {
        let (loss, grad) = phi_loss_and_gradient(phi, &batch(k)?, &contract);
        if !grad.is_finite() {
            return Err(Error::Training(format!("non-finite phi gradient at step {k}")));
        }
        phi -= config.learning_rate * grad;
        if phi <= PHI_FLOOR {
            log::warn!("phi driven to {phi} at step {k}; clamped to {PHI_FLOOR}");
            phi = PHI_FLOOR;
            clamped_steps.push(k);
        }
        rows.push(CalibrationRow { step: k, phi, loss });
    }
    Ok(CalibrationTrace {
        rows,
        clamped_steps,
        tail_average: config.tail_average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::sample_terminal_exact;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bench() -> PutContract {
        PutContract {
            strike: 40.0,
            rate: 0.06,
            horizon: 1.0,
        }
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(40.0), 1.0);
        // reference values from a 30-digit evaluation of 0.5 * erfc(-y / sqrt 2)
        assert_abs_diff_eq!(std_normal_cdf(1.96), 0.975_002_104_851_780, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal_cdf(-3.0), 0.001_349_898_031_630_095, epsilon = 1e-14);
        assert_abs_diff_eq!(std_normal_cdf(0.5), 0.691_462_461_274_013_1, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn normal_cdf_symmetry(y in -8.0f64..8.0) {
            prop_assert!((std_normal_cdf(y) + std_normal_cdf(-y) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn normal_cdf_monotone(a in -8.0f64..8.0, d in 1e-3f64..1.0) {
            prop_assert!(std_normal_cdf(a + d) >= std_normal_cdf(a));
        }

        #[test]
        fn put_within_no_arbitrage_bounds(t in 0.0f64..1.0, x in 1.0f64..200.0, phi in 0.05f64..1.5) {
            let c = bench();
            let v = european_put_value(t, x, phi, &c).unwrap();
            let disc_k = c.strike * (-c.rate * (c.horizon - t)).exp();
            prop_assert!(v >= (disc_k - x).max(0.0) - 1e-10);
            prop_assert!(v <= disc_k + 1e-10);
        }

        #[test]
        fn premium_identity(t in 0.0f64..1.0, x in 1.0f64..200.0, phi in 0.05f64..1.5) {
            let c = bench();
            let g = premium_payoff(t, x, phi, &c).unwrap();
            let v = european_put_value(t, x, phi, &c).unwrap();
            prop_assert_eq!(g + v, payoff_put(x, c.strike) - v + v);
            prop_assert!(g <= payoff_put(x, c.strike));
        }

        #[test]
        fn vega_positive_in_interior(t in 0.0f64..0.99, x in 10.0f64..120.0, phi in 0.2f64..1.5) {
            prop_assert!(european_put_vega(t, x, phi, &bench()).unwrap() > 0.0);
        }
    }

    #[test]
    fn terminal_and_boundary_values() {
        let c = bench();
        assert_eq!(european_put_value(1.0, 30.0, 0.4, &c).unwrap(), 10.0);
        assert_eq!(premium_payoff(1.0, 30.0, 0.4, &c).unwrap(), 0.0);
        assert_eq!(premium_payoff(1.0, 55.0, 0.4, &c).unwrap(), 0.0);
        let tiny = european_put_value(0.0, 1e-9, 0.4, &c).unwrap();
        assert_abs_diff_eq!(tiny, 40.0 * (-0.06f64).exp(), epsilon = 1e-8);
        assert!(premium_payoff(0.5, 80.0, 0.4, &c).unwrap() < 0.0);
        assert!(matches!(european_put_value(1.5, 40.0, 0.4, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn benchmark_put_matches_monte_carlo() {
        let params = MarketParams::default();
        let c = PutContract::from_market(&params);
        let n = 1 << 22;
        let xt = sample_terminal_exact(&params, n, 2024);
        let disc = (-params.rate).exp();
        let vals: Vec<f64> = xt.iter().map(|&x| disc * payoff_put(x, 40.0)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let bs = european_put_value(0.0, 40.0, 0.4, &c).unwrap();
        assert!((bs - mean).abs() <= 3.0 * se, "bs {bs} mc {mean} se {se}");
    }

    #[test]
    fn vega_matches_central_difference() {
        let c = bench();
        for &(t, x, phi) in &[(0.0, 40.0, 0.4), (0.5, 30.0, 0.8), (0.9, 55.0, 0.2)] {
            let h = 1e-6;
            let fd = (european_put_value(t, x, phi + h, &c).unwrap() - european_put_value(t, x, phi - h, &c).unwrap())
                / (2.0 * h);
            let an = european_put_vega(t, x, phi, &c).unwrap();
            assert!((fd - an).abs() <= 1e-7 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn calibration_gradient_matches_finite_difference() {
        let params = MarketParams::default();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let batch = simulate_paths(&params, &grid, 256, 3).unwrap();
        let c = PutContract::from_market(&params);
        for phi in [0.3, 0.4, 0.8] {
            let h = 1e-5;
            let (_, g) = phi_loss_and_gradient(phi, &batch, &c);
            let fd = (phi_loss_and_gradient(phi + h, &batch, &c).0 - phi_loss_and_gradient(phi - h, &batch, &c).0)
                / (2.0 * h);
            assert!((fd - g).abs() <= 1e-5 * g.abs(), "phi {phi}: {fd} vs {g}");
        }
    }

    #[test]
    fn zero_steps_gives_initial_row_only() {
        let cfg = CalibrationConfig {
            steps: 0,
            ..Default::default()
        };
        let trace = calibrate_phi(&MarketParams::default(), &cfg).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].phi, 0.8);
    }

    #[test]
    fn calibration_stays_at_true_sigma() {
        let cfg = CalibrationConfig {
            phi0: 0.4,
            ..Default::default()
        };
        let trace = calibrate_phi(&MarketParams::default(), &cfg).unwrap();
        assert!((trace.final_phi() - 0.4).abs() <= 0.01, "estimate {}", trace.final_phi());
        // raw iterates carry the SGD noise floor (std about 0.015 at M = 1024, lr = 0.01)
        let worst = trace.rows.iter().map(|r| (r.phi - 0.4).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.08, "phi wandered {worst} from 0.4");
    }
}
