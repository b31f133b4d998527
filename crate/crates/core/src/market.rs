//! Time grid, diffusion path simulation and contract payoffs.
//!
//! Prices are advanced with the forward Euler scheme on price levels,
//! `X_{l+1} = X_l + b(t_l, X_l) dt + s(t_l, X_l) dW`, which for geometric
//! Brownian motion reads `X_{l+1} = X_l (1 + rho dt + sigma dW)`.
//!
//! Every path draws its normals from its own ChaCha stream (`seed`, stream =
//! path index), so a batch is reproducible regardless of how rows are
//! scheduled.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking `K * dt <= 1`, so that e.g. `50 * (1/50)` passes.
pub const PENALTY_STEP_SLACK: f64 = 1e-12;

/// Fraction of `x0` below which an Euler step is floored.
pub const PRICE_FLOOR_FRACTION: f64 = 1e-12;

/// Equally spaced decision times `t_l = l * dt`, `l = 0..=L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    num_intervals: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, num_intervals: usize) -> Result<Self> {
        if num_intervals == 0 {
            return Err(Error::config("time grid needs at least one interval (L >= 1)"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            horizon,
            num_intervals,
            dt: horizon / num_intervals as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of intervals `L`.
    pub fn num_intervals(&self) -> usize {
        self.num_intervals
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t_l`; the last node is pinned to the horizon exactly.
    pub fn time(&self, l: usize) -> f64 {
        if l >= self.num_intervals {
            self.horizon
        } else {
            l as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.num_intervals).map(|l| self.time(l)).collect()
    }
}

/// Diffusion and contract primitives of the put benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    pub x0: f64,
    /// Risk-free rate; used both as drift and as discount rate.
    pub rate: f64,
    pub sigma: f64,
    pub strike: f64,
    pub horizon: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            x0: 40.0,
            rate: 0.06,
            sigma: 0.4,
            strike: 40.0,
            horizon: 1.0,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("x0", self.x0),
            ("sigma", self.sigma),
            ("strike", self.strike),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("market.{name} must be positive, got {v}")));
            }
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::config(format!(
                "market.rate must be non-negative, got {}",
                self.rate
            )));
        }
        Ok(())
    }

    pub fn gbm(&self) -> Gbm {
        Gbm {
            drift: self.rate,
            volatility: self.sigma,
        }
    }
}

/// One-dimensional diffusion `dX = b(t, X) dt + s(t, X) dW`.
pub trait Diffusion: Sync {
    fn drift(&self, t: f64, x: f64) -> f64;
    fn diffusion(&self, t: f64, x: f64) -> f64;
}

/// Geometric Brownian motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gbm {
    pub drift: f64,
    pub volatility: f64,
}

impl Diffusion for Gbm {
    #[inline]
    fn drift(&self, _t: f64, x: f64) -> f64 {
        self.drift * x
    }

    #[inline]
    fn diffusion(&self, _t: f64, x: f64) -> f64 {
        self.volatility * x
    }
}

/// `M` simulated trajectories on an `(L+1)`-point grid.
#[derive(Clone, Debug)]
pub struct PathBatch {
    prices: Array2<f64>,
    seed: u64,
    grid: TimeGrid,
    floored: usize,
}

impl PathBatch {
    /// `M x (L+1)` price array; column 0 is `x0`.
    pub fn prices(&self) -> &Array2<f64> {
        &self.prices
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn num_paths(&self) -> usize {
        self.prices.nrows()
    }

    /// Number of Euler steps that crossed zero and were floored.
    pub fn floored_steps(&self) -> usize {
        self.floored
    }

    /// Prices of all paths at decision time `t_l`.
    pub fn column(&self, l: usize) -> ArrayView1<'_, f64> {
        self.prices.column(l)
    }

    pub fn path(&self, m: usize) -> ArrayView1<'_, f64> {
        self.prices.row(m)
    }

    /// Builds a batch from externally produced prices (e.g. fixed test fixtures).
    pub fn from_prices(prices: Array2<f64>, grid: TimeGrid, seed: u64) -> Result<Self> {
        if prices.ncols() != grid.num_intervals() + 1 {
            return Err(Error::usage(format!(
                "price array has {} columns, grid needs {}",
                prices.ncols(),
                grid.num_intervals() + 1
            )));
        }
        if prices.nrows() == 0 {
            return Err(Error::usage("empty price array"));
        }
        Ok(Self {
            prices,
            seed,
            grid,
            floored: 0,
        })
    }
}

/// Deterministic generator for path `index` of the batch seeded by `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finaliser; used to derive independent per-step seeds.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn simulate_paths(
    params: &MarketParams,
    grid: &TimeGrid,
    batch_size: usize,
    seed: u64,
) -> Result<PathBatch> {
    params.validate()?;
    if (grid.horizon() - params.horizon).abs() > 1e-12 * params.horizon.max(1.0) {
        return Err(Error::config(format!(
            "grid horizon {} does not match market horizon {}",
            grid.horizon(),
            params.horizon
        )));
    }
    simulate_with(&params.gbm(), params.x0, grid, batch_size, seed)
}

/// Euler simulation for an arbitrary one-dimensional diffusion.
pub fn simulate_with<D: Diffusion>(
    diffusion: &D,
    x0: f64,
    grid: &TimeGrid,
    batch_size: usize,
    seed: u64,
) -> Result<PathBatch> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let steps = grid.num_intervals();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let floor = PRICE_FLOOR_FRACTION * x0.abs().max(f64::MIN_POSITIVE);
    let mut prices = Array2::<f64>::zeros((batch_size, steps + 1));
    let mut floored = 0usize;
    for (m, mut row) in prices.rows_mut().into_iter().enumerate() {
        let mut rng = path_rng(seed, m as u64);
        let mut x = x0;
        row[0] = x;
        for l in 0..steps {
            let t = grid.time(l);
            let z: f64 = StandardNormal.sample(&mut rng);
            x += diffusion.drift(t, x) * dt + diffusion.diffusion(t, x) * sqrt_dt * z;
            if x <= floor {
                x = floor;
                floored += 1;
            }
            row[l + 1] = x;
        }
    }
    Ok(PathBatch {
        prices,
        seed,
        grid: grid.clone(),
        floored,
    })
}

/// Exact lognormal samples of `X_T` (used only by test oracles and calibration).
pub fn sample_terminal_exact(params: &MarketParams, batch_size: usize, seed: u64) -> Array1<f64> {
    let t = params.horizon;
    let drift = (params.rate - 0.5 * params.sigma * params.sigma) * t;
    let vol = params.sigma * t.sqrt();
    (0..batch_size)
        .map(|m| {
            let mut rng = path_rng(seed, m as u64);
            let z: f64 = StandardNormal.sample(&mut rng);
            params.x0 * (drift + vol * z).exp()
        })
        .collect()
}

pub fn check_penalty_step(penalty: f64, dt: f64) -> Result<()> {
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(Error::config(format!("penalty K must be non-negative, got {penalty}")));
    }
    if penalty * dt > 1.0 + PENALTY_STEP_SLACK {
        return Err(Error::config(format!(
            "K * dt = {} exceeds 1; the discount process would turn negative (K <= {})",
            penalty * dt,
            1.0 / dt
        )));
    }
    Ok(())
}

/// One step of `R_{l+1} = R_l (1 - K pi dt)`.
pub fn evolve_discount(r_prev: f64, pi: f64, penalty: f64, dt: f64) -> Result<f64> {
    check_penalty_step(penalty, dt)?;
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::usage(format!("stopping probability {pi} outside [0, 1]")));
    }
    Ok(step_discount(r_prev, pi, penalty, dt))
}

/// Unchecked form of [`evolve_discount`] for inner loops whose inputs were
/// validated at configuration time.
#[inline]
pub fn step_discount(r_prev: f64, pi: f64, penalty: f64, dt: f64) -> f64 {
    (r_prev * (1.0 - penalty * pi * dt)).max(0.0)
}

/// `(strike - x)^+`.
#[inline]
pub fn payoff_put(x: f64, strike: f64) -> f64 {
    (strike - x).max(0.0)
}
