//! Offline martingale-loss training and online TD(0) training of a
//! [`ValueEnsemble`].
//!
//! Along each simulated path, with `pi_l` from the closed-form policy and
//! `R_{l+1} = R_l (1 - K pi_l dt)`,
//!
//! ```text
//! G_l = e^{-rho T} R_L g(T, X_T) - e^{-rho t_l} R_l V_l(X_l)
//!     + sum_{j >= l} e^{-rho t_j} R_j [K g(t_j, X_j) pi_j - lambda H(pi_j)] dt
//! ML  = 1/2 mean_paths sum_l G_l^2 dt
//! ```
//!
//! `pi` and `R` are computed from the current networks and then held fixed
//! while differentiating (semi-gradient). The online rule updates `theta_l`
//! along `dV_l/dtheta * delta_l` with
//!
//! ```text
//! delta_l = (1 - K pi_l dt) V_{l+1}(X_{l+1}) - V_l(X_l) + [K g pi_l - lambda H(pi_l)] dt - rho V_l(X_l) dt
//! ```
//!
//! averaged over the batch.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csvout::{opt_sig17, sig17, write_csv};
use crate::ensemble::{FeatureMode, Standardizer, ValueEnsemble};
use crate::error::{Error, Result};
use crate::fd::FreeBoundary;
use crate::market::{check_penalty_step, derive_seed, simulate_paths, MarketParams, PathBatch, TimeGrid};
use crate::mlp::{AdamConfig, AdamState, Gradients, MlpSpec, Optimizer};
use crate::policy::{bernoulli_entropy, stopping_probability, PROB_CLIP};
use crate::premium::{calibrate_phi, CalibrationConfig, Payoff, PutContract};
use crate::pricing::{price_report, PriceReport};

const INIT_TAG: u64 = 0x1a17;
const CALIBRATION_TAG: u64 = 0xca1b;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    OfflineMl,
    OnlineTd0,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline_ml" => Ok(TrainMode::OfflineMl),
            "online_td0" => Ok(TrainMode::OnlineTd0),
            other => Err(Error::config(format!("unknown mode '{other}' (offline_ml | online_td0)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Put,
    Premium,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_intervals: usize,
    pub penalty: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub test_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub mode: TrainMode,
    pub discounting: bool,
    pub seed: u64,
    pub test_seed: u64,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    /// Multiply the `-rho V` term of the online rule by `dt`.
    pub td_rate_times_dt: bool,
    /// Differentiate through the policy as well (ablation of the semi-gradient).
    pub full_gradient: bool,
    pub standardize: bool,
    pub feature_mode: FeatureMode,
    pub payoff: PayoffKind,
    /// `phi` of the premium payoff; calibrated first when absent.
    pub phi: Option<f64>,
    pub calibration: CalibrationConfig,
    pub hidden: Vec<usize>,
    pub batchnorm: bool,
    pub oracle_price: f64,
    /// Write measured seconds into records; off gives byte-identical reruns.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_intervals: 50,
            penalty: 10.0,
            lambda: 1.0,
            learning_rate: 0.01,
            batch_size: 1 << 10,
            test_size: 1 << 18,
            steps: 1000,
            eval_every: 10,
            mode: TrainMode::OfflineMl,
            discounting: true,
            seed: 1,
            test_seed: 0x7e57,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
            td_rate_times_dt: true,
            full_gradient: false,
            standardize: true,
            feature_mode: FeatureMode::StatePlusPayoff,
            payoff: PayoffKind::Premium,
            phi: None,
            calibration: CalibrationConfig::default(),
            hidden: vec![21, 21],
            batchnorm: true,
            oracle_price: 5.317,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, params: &MarketParams) -> Result<()> {
        params.validate()?;
        let grid = TimeGrid::new(params.horizon, self.num_intervals)?;
        check_penalty_step(self.penalty, grid.dt())?;
        if !(self.penalty > 0.0) {
            return Err(Error::config("train.penalty must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("train.lambda must be positive"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("train.learning_rate must be >= 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size must be >= 2 (batch statistics)"));
        }
        if self.test_size == 0 {
            return Err(Error::config("train.test_size must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every must be >= 1"));
        }
        if !(self.oracle_price > 0.0) {
            return Err(Error::config("train.oracle_price must be positive"));
        }
        if let Some(phi) = self.phi {
            if !(phi > 0.0) {
                return Err(Error::config("train.phi must be positive"));
            }
        }
        Ok(())
    }

    pub fn grid(&self, params: &MarketParams) -> Result<TimeGrid> {
        TimeGrid::new(params.horizon, self.num_intervals)
    }

    fn effective_rate(&self, params: &MarketParams) -> f64 {
        if self.discounting {
            params.rate
        } else {
            0.0
        }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.feature_mode.input_dim(),
            hidden: self.hidden.clone(),
            batchnorm: self.batchnorm,
            ..MlpSpec::value_net(self.feature_mode.input_dim())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    /// Martingale loss (offline) or half the mean squared TD error (online).
    pub loss: f64,
    pub p_stopping: f64,
    pub p_control: f64,
    pub rel_err_stopping: f64,
    pub rel_err_control: f64,
    pub min_accuracy: Option<f64>,
    pub elapsed_s: f64,
}

pub const LEARNING_CURVE_HEADER: [&str; 8] = [
    "step",
    "loss",
    "p_stopping",
    "p_control",
    "rel_err_stopping",
    "rel_err_control",
    "min_accuracy",
    "elapsed_s",
];

pub fn write_learning_curve(path: &Path, records: &[TrainRecord]) -> Result<()> {
    write_csv(
        path,
        &LEARNING_CURVE_HEADER,
        records.iter().map(|r| {
            vec![
                r.step.to_string(),
                sig17(r.loss),
                sig17(r.p_stopping),
                sig17(r.p_control),
                sig17(r.rel_err_stopping),
                sig17(r.rel_err_control),
                opt_sig17(r.min_accuracy),
                sig17(r.elapsed_s),
            ]
        }),
    )
}

/// Path-wise quantities entering the martingale loss.
#[derive(Clone, Debug)]
pub struct MartingaleTerms {
    /// `G_l`, `M x L`.
    pub g: Array2<f64>,
    /// `pi_l`, `M x L`.
    pub pi: Array2<f64>,
    /// `R_l`, `M x (L+1)`.
    pub discount: Array2<f64>,
    /// `e^{-rho t_l}`, `l = 0..=L`.
    pub time_discount: Vec<f64>,
}

/// `G_l` for every path and decision index.
///
/// `values` is `M x L` (`V_l(X_l)`), `payoffs` is `M x (L+1)` (`g(t_l, X_l)`,
/// terminal column included).
pub fn martingale_terms(
    values: ArrayView2<f64>,
    payoffs: ArrayView2<f64>,
    grid: &TimeGrid,
    penalty: f64,
    lambda: f64,
    rate: f64,
) -> Result<MartingaleTerms> {
    let pi = Array2::from_shape_fn(values.raw_dim(), |(p, l)| {
        stopping_probability(values[[p, l]], payoffs[[p, l]], penalty, lambda)
    });
    martingale_terms_with_policy(values, payoffs, pi, grid, penalty, lambda, rate)
}

/// [`martingale_terms`] with the policy supplied instead of derived from `values`.
pub fn martingale_terms_with_policy(
    values: ArrayView2<f64>,
    payoffs: ArrayView2<f64>,
    pi: Array2<f64>,
    grid: &TimeGrid,
    penalty: f64,
    lambda: f64,
    rate: f64,
) -> Result<MartingaleTerms> {
    let (m, steps) = values.dim();
    if steps != grid.num_intervals() || payoffs.dim() != (m, steps + 1) || pi.dim() != (m, steps) {
        return Err(Error::usage("value/payoff/policy arrays do not match the grid"));
    }
    let dt = grid.dt();
    let time_discount: Vec<f64> = (0..=steps).map(|l| (-rate * grid.time(l)).exp()).collect();
    let mut discount = Array2::<f64>::zeros((m, steps + 1));
    let mut g = Array2::<f64>::zeros((m, steps));
    for p in 0..m {
        let mut r = 1.0;
        discount[[p, 0]] = 1.0;
        for l in 0..steps {
            r *= 1.0 - penalty * pi[[p, l]] * dt;
            discount[[p, l + 1]] = r;
        }
        let mut acc = time_discount[steps] * discount[[p, steps]] * payoffs[[p, steps]];
        for l in (0..steps).rev() {
            let q = pi[[p, l]];
            let w = time_discount[l] * discount[[p, l]];
            acc += w * (penalty * payoffs[[p, l]] * q - lambda * bernoulli_entropy(q)) * dt;
            g[[p, l]] = acc - w * values[[p, l]];
        }
    }
    Ok(MartingaleTerms {
        g,
        pi,
        discount,
        time_discount,
    })
}

/// `d ML / d V_l(X_l)` per path, `M x L`.
///
/// The semi-gradient holds `pi` and `R` fixed. With `full` the dependence of
/// `pi_k` on `V_k` (and through it of `R_j`, `j > k`) is differentiated too.
pub fn loss_value_gradient(
    terms: &MartingaleTerms,
    payoffs: ArrayView2<f64>,
    dt: f64,
    penalty: f64,
    lambda: f64,
    full: bool,
) -> Array2<f64> {
    let (m, steps) = terms.g.dim();
    let scale = dt / m as f64;
    let e = &terms.time_discount;
    let mut out = Array2::<f64>::zeros((m, steps));
    for p in 0..m {
        for l in 0..steps {
            out[[p, l]] = -terms.g[[p, l]] * e[l] * terms.discount[[p, l]] * scale;
        }
        if !full {
            continue;
        }
        // tail[k] = e_L R_L g_L + sum_{j >= k} e_j R_j c_j dt
        let mut tail = vec![0.0; steps + 1];
        tail[steps] = e[steps] * terms.discount[[p, steps]] * payoffs[[p, steps]];
        for j in (0..steps).rev() {
            let q = terms.pi[[p, j]];
            let c = penalty * payoffs[[p, j]] * q - lambda * bernoulli_entropy(q);
            tail[j] = tail[j + 1] + e[j] * terms.discount[[p, j]] * c * dt;
        }
        // l <= k see pi_k through c_k and R_{j > k}; l > k only through R_l
        let mut later: f64 = terms.g.row(p).iter().map(|g| g * g).sum();
        let mut head = 0.0;
        for k in 0..steps {
            head += terms.g[[p, k]];
            later -= terms.g[[p, k]] * terms.g[[p, k]];
            let q = terms.pi[[p, k]];
            if q <= PROB_CLIP || q >= 1.0 - PROB_CLIP {
                continue;
            }
            let dq_dv = -(penalty / lambda) * q * (1.0 - q);
            let shrink = penalty * dt / (1.0 - penalty * q * dt);
            let entropy_slope = (q / (1.0 - q)).ln();
            let local = e[k] * terms.discount[[p, k]] * (penalty * payoffs[[p, k]] - lambda * entropy_slope) * dt
                - shrink * tail[k + 1];
            let d_pi = head * local - shrink * later;
            out[[p, k]] += d_pi * dq_dv * scale;
        }
    }
    out
}

/// `G_l` along a single path.
pub fn glk_component(
    l: usize,
    values: &[f64],
    payoffs: &[f64],
    grid: &TimeGrid,
    penalty: f64,
    lambda: f64,
    rate: f64,
) -> Result<f64> {
    let v = ArrayView2::from_shape((1, values.len()), values).map_err(|e| Error::usage(e.to_string()))?;
    let g = ArrayView2::from_shape((1, payoffs.len()), payoffs).map_err(|e| Error::usage(e.to_string()))?;
    let terms = martingale_terms(v, g, grid, penalty, lambda, rate)?;
    if l >= grid.num_intervals() {
        return Err(Error::usage(format!("index {l} is not a decision time")));
    }
    Ok(terms.g[[0, l]])
}

/// `1/2 mean_paths sum_l G_l^2 dt`.
pub fn martingale_loss(terms: &MartingaleTerms, dt: f64) -> f64 {
    let m = terms.g.nrows() as f64;
    0.5 * terms.g.iter().map(|g| g * g).sum::<f64>() * dt / m
}

/// One-step TD error of the online rule; `rate_term` multiplies `-V`
/// (`rho dt` by default, `rho` without the `dt` factor).
pub fn td_error(v: f64, v_next: f64, g: f64, penalty: f64, lambda: f64, dt: f64, rate_term: f64) -> f64 {
    let q = stopping_probability(v, g, penalty, lambda);
    (1.0 - penalty * q * dt) * v_next - v + (penalty * g * q - lambda * bernoulli_entropy(q)) * dt - rate_term * v
}

/// Shared inputs for periodic evaluation.
pub struct EvalContext {
    pub test_batch: PathBatch,
    pub boundary: Option<FreeBoundary>,
    pub oracle_price: f64,
}

impl EvalContext {
    pub fn new(
        params: &MarketParams,
        config: &TrainConfig,
        boundary: Option<FreeBoundary>,
    ) -> Result<Self> {
        let grid = config.grid(params)?;
        Ok(Self {
            test_batch: simulate_paths(params, &grid, config.test_size, config.test_seed)?,
            boundary,
            oracle_price: config.oracle_price,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
}

pub struct Trainer {
    params: MarketParams,
    config: TrainConfig,
    grid: TimeGrid,
    ensemble: ValueEnsemble,
    optimizers: Vec<Optimizer>,
    steps_done: usize,
    records: Vec<TrainRecord>,
    phi: Option<f64>,
    last_loss: f64,
    started: Instant,
}

impl Trainer {
    pub fn new(params: &MarketParams, config: &TrainConfig) -> Result<Self> {
        config.validate(params)?;
        let grid = config.grid(params)?;
        let (payoff, phi) = match config.payoff {
            PayoffKind::Put => (Payoff::Put { strike: params.strike }, None),
            PayoffKind::Premium => {
                let phi = match config.phi {
                    Some(phi) => phi,
                    None => {
                        let cal = CalibrationConfig {
                            seed: derive_seed(config.seed, CALIBRATION_TAG),
                            ..config.calibration.clone()
                        };
                        calibrate_phi(params, &cal)?.final_phi()
                    }
                };
                let contract = PutContract::from_market(params);
                (Payoff::Premium { phi, contract }, Some(phi))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, INIT_TAG));
        let ensemble = ValueEnsemble::new(grid.clone(), payoff, config.feature_mode, &config.mlp_spec(), &mut rng)?;
        let optimizers = (0..grid.num_intervals())
            .map(|_| match config.optimizer {
                OptimizerKind::Sgd => Optimizer::Sgd,
                OptimizerKind::Adam => Optimizer::Adam(AdamState::new(config.adam)),
            })
            .collect();
        Ok(Self {
            params: *params,
            config: config.clone(),
            grid,
            ensemble,
            optimizers,
            steps_done: 0,
            records: Vec::new(),
            phi,
            last_loss: f64::NAN,
            started: Instant::now(),
        })
    }

    pub fn ensemble(&self) -> &ValueEnsemble {
        &self.ensemble
    }

    pub fn ensemble_mut(&mut self) -> &mut ValueEnsemble {
        &mut self.ensemble
    }

    pub fn into_ensemble(self) -> ValueEnsemble {
        self.ensemble
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn phi(&self) -> Option<f64> {
        self.phi
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Paths for the next step; also used to fit the frozen standardizer.
    pub fn next_batch(&self) -> Result<PathBatch> {
        simulate_paths(
            &self.params,
            &self.grid,
            self.config.batch_size,
            derive_seed(self.config.seed, self.steps_done as u64 + 1),
        )
    }

    fn fit_standardizer(&mut self, batch: &PathBatch) -> Result<()> {
        let steps = self.grid.num_intervals();
        let blocks: Vec<Array2<f64>> = (0..steps)
            .map(|l| self.ensemble.raw_features(l, batch.column(l)))
            .collect();
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let pooled = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::usage(e.to_string()))?;
        self.ensemble.set_standardizer(Standardizer::fit(&pooled))
    }

    fn payoff_matrix(&self, batch: &PathBatch) -> Array2<f64> {
        let steps = self.grid.num_intervals();
        let mut g = Array2::<f64>::zeros((batch.num_paths(), steps + 1));
        for l in 0..=steps {
            g.column_mut(l).assign(&self.ensemble.payoff_at(l, batch.column(l)));
        }
        g
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let batch = self.next_batch()?;
        if self.steps_done == 0 && self.config.standardize {
            self.fit_standardizer(&batch)?;
        }
        let metrics = match self.config.mode {
            TrainMode::OfflineMl => self.offline_ml_step(&batch)?,
            TrainMode::OnlineTd0 => self.online_td0_step(&batch)?,
        };
        self.steps_done += 1;
        self.last_loss = metrics.loss;
        Ok(metrics)
    }

    /// Forward every network in train mode on `batch`; `(values, payoffs)`.
    fn forward_values(&mut self, batch: &PathBatch) -> Result<(Array2<f64>, Array2<f64>)> {
        let steps = self.grid.num_intervals();
        let payoffs = self.payoff_matrix(batch);
        let mut values = Array2::<f64>::zeros((batch.num_paths(), steps));
        for l in 0..steps {
            let f = self.ensemble.features_with_payoff(batch.column(l), payoffs.column(l));
            let w = self.ensemble.network_mut(l).forward(f.view())?;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("non-finite network output at l = {l}")));
            }
            values.column_mut(l).assign(&(&w + &payoffs.column(l)));
        }
        Ok((values, payoffs))
    }

    /// Martingale loss on `batch` and its gradient for every network. The
    /// forward pass runs in train mode, so running statistics move.
    pub fn loss_gradients(&mut self, batch: &PathBatch) -> Result<(f64, MartingaleTerms, Vec<Gradients>)> {
        let (values, payoffs) = self.forward_values(batch)?;
        let rate = self.config.effective_rate(&self.params);
        let (k, lambda, dt) = (self.config.penalty, self.config.lambda, self.grid.dt());
        let terms = martingale_terms(values.view(), payoffs.view(), &self.grid, k, lambda, rate)?;
        let loss = martingale_loss(&terms, dt);
        let dv = loss_value_gradient(&terms, payoffs.view(), dt, k, lambda, self.config.full_gradient);
        let grads = (0..self.grid.num_intervals())
            .map(|l| self.ensemble.network(l).backward(&dv.column(l).to_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, terms, grads))
    }

    /// Martingale loss with batch-statistics arithmetic and the policy `pi`
    /// held fixed; touches no state. Used for finite-difference checks.
    pub fn loss_with_policy(&self, batch: &PathBatch, pi: &Array2<f64>) -> Result<f64> {
        let steps = self.grid.num_intervals();
        let payoffs = self.payoff_matrix(batch);
        let mut values = Array2::<f64>::zeros((batch.num_paths(), steps));
        for l in 0..steps {
            let f = self.ensemble.features_with_payoff(batch.column(l), payoffs.column(l));
            let w = self.ensemble.network(l).predict_batch_stats(f.view())?;
            values.column_mut(l).assign(&(&w + &payoffs.column(l)));
        }
        let rate = self.config.effective_rate(&self.params);
        let terms = martingale_terms_with_policy(
            values.view(),
            payoffs.view(),
            pi.clone(),
            &self.grid,
            self.config.penalty,
            self.config.lambda,
            rate,
        )?;
        Ok(martingale_loss(&terms, self.grid.dt()))
    }

    /// One gradient step of every network on the martingale loss of `batch`.
    pub fn offline_ml_step(&mut self, batch: &PathBatch) -> Result<StepMetrics> {
        let (loss, _, grads) = self.loss_gradients(batch)?;
        let lr = self.config.learning_rate;
        for (l, g) in grads.iter().enumerate() {
            self.optimizers[l].step(self.ensemble.network_mut(l), g, lr)?;
        }
        Ok(StepMetrics { loss })
    }

    /// Sequential TD(0) updates `l = 0..L-1` on the paths of `batch`.
    pub fn online_td0_step(&mut self, batch: &PathBatch) -> Result<StepMetrics> {
        let steps = self.grid.num_intervals();
        let m = batch.num_paths() as f64;
        let dt = self.grid.dt();
        let k = self.config.penalty;
        let lambda = self.config.lambda;
        let rate = self.config.effective_rate(&self.params);
        let rate_factor = if self.config.td_rate_times_dt { dt } else { 1.0 };
        let payoffs = self.payoff_matrix(batch);
        let mut sq = 0.0;
        for l in 0..steps {
            let x = batch.column(l);
            let g = payoffs.column(l);
            let f = self.ensemble.features_with_payoff(x, g);
            let w = self.ensemble.network_mut(l).forward(f.view())?;
            let v = &w + &g;
            let x_next = batch.column(l + 1);
            let g_next = payoffs.column(l + 1);
            let v_next = if l + 1 == steps {
                g_next.to_owned()
            } else {
                let f_next = self.ensemble.features_with_payoff(x_next, g_next);
                self.ensemble.network(l + 1).predict_batch_stats(f_next.view())? + g_next
            };
            let delta: Array1<f64> = (0..x.len())
                .map(|p| td_error(v[p], v_next[p], g[p], k, lambda, dt, rate * rate_factor))
                .collect();
            if delta.iter().any(|d| !d.is_finite()) {
                return Err(Error::Training(format!("non-finite TD error at l = {l}")));
            }
            sq += delta.iter().map(|d| d * d).sum::<f64>() / m;
            let upstream = delta.mapv(|d| -d / m);
            let grads = self.ensemble.network(l).backward(&upstream)?;
            let lr = self.config.learning_rate;
            self.optimizers[l].step(self.ensemble.network_mut(l), &grads, lr)?;
        }
        Ok(StepMetrics {
            loss: 0.5 * sq / steps as f64,
        })
    }

    pub fn evaluate(&self, ctx: &EvalContext) -> Result<PriceReport> {
        price_report(
            &self.ensemble,
            &ctx.test_batch,
            &self.params,
            self.config.penalty,
            ctx.oracle_price,
            ctx.boundary.as_ref(),
        )
    }

    fn record(&mut self, ctx: &EvalContext) -> Result<()> {
        let report = self.evaluate(ctx)?;
        let elapsed_s = if self.config.record_wall_clock {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        self.records.push(TrainRecord {
            step: self.steps_done,
            loss: self.last_loss,
            p_stopping: report.p_stopping,
            p_control: report.p_control,
            rel_err_stopping: report.rel_err_stopping,
            rel_err_control: report.rel_err_control,
            min_accuracy: report.min_accuracy(),
            elapsed_s,
        });
        Ok(())
    }

    /// Run the configured number of steps, appending a record every
    /// `eval_every` steps when `ctx` is given. On error the records collected
    /// so far stay available.
    pub fn run(&mut self, ctx: Option<&EvalContext>) -> Result<()> {
        self.started = Instant::now();
        while self.steps_done < self.config.steps {
            self.step()?;
            if let Some(ctx) = ctx {
                if self.steps_done.is_multiple_of(self.config.eval_every) {
                    self.record(ctx)?;
                }
            }
        }
        Ok(())
    }
}

/// Train from scratch and return the ensemble with its learning curve.
pub fn train(
    params: &MarketParams,
    config: &TrainConfig,
    ctx: Option<&EvalContext>,
) -> Result<(ValueEnsemble, Vec<TrainRecord>)> {
    let mut trainer = Trainer::new(params, config)?;
    trainer.run(ctx)?;
    let records = trainer.records.clone();
    Ok((trainer.into_ensemble(), records))
}
