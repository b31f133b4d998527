//! Deterministic execution of a learned rule and the two price estimators.
//!
//! A rule is anything that produces a signal `w(t_l, x)` with the convention
//! "stop iff `w <= 0`". For an ensemble `w` is the network output
//! `V_l - g~(t_l, .)`.
//!
//! * `P_stopping = E[e^{-rho tau} g(X_tau)]` with `tau` the first decision time
//!   at which the rule fires, or `T` if it never does.
//! * `P_control = E[sum_l K R_l e^{-rho t_l} g(X_l) u_l dt + e^{-rho T} R_L g(X_T)]`
//!   with `u_l = 1{w_l <= 0}` and `R_{l+1} = R_l (1 - K u_l dt)`.
//!
//! Both use the plain put payoff `g`, whichever payoff the learner was trained on.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::ensemble::ValueEnsemble;
use crate::error::{Error, Result};
use crate::fd::{FdSolution, FreeBoundary};
use crate::market::{check_penalty_step, payoff_put, step_discount, MarketParams, PathBatch, TimeGrid};
use crate::policy::mean_and_se;

pub trait ExerciseSignal {
    /// Signal at decision index `l < L`; the rule stops where it is `<= 0`.
    fn signal(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>>;
}

impl ExerciseSignal for ValueEnsemble {
    fn signal(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.evaluate_w(l, x)
    }
}

impl<F> ExerciseSignal for F
where
    F: Fn(usize, ArrayView1<f64>) -> Result<Array1<f64>>,
{
    fn signal(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self(l, x)
    }
}

/// `u(t_l, x) - g(x)` read off an oracle solution.
pub struct OracleSignal<'a> {
    pub solution: &'a FdSolution,
    pub grid: TimeGrid,
}

impl ExerciseSignal for OracleSignal<'_> {
    fn signal(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let t = self.grid.time(l);
        let strike = self.solution.params().strike;
        x.iter()
            .map(|&x| Ok(self.solution.price_at(t, x)? - payoff_put(x, strike)))
            .collect()
    }
}

/// `M x L` matrix of stop decisions at the decision times `t_0 .. t_{L-1}`.
pub fn stop_decisions(signal: &dyn ExerciseSignal, batch: &PathBatch) -> Result<Array2<bool>> {
    let steps = batch.grid().num_intervals();
    let mut out = Array2::from_elem((batch.num_paths(), steps), false);
    for l in 0..steps {
        let w = signal.signal(l, batch.column(l))?;
        if w.len() != batch.num_paths() {
            return Err(Error::usage("signal returned the wrong number of values"));
        }
        if let Some(bad) = w.iter().find(|v| v.is_nan()) {
            return Err(Error::Training(format!("signal is {bad} at decision index {l}")));
        }
        out.column_mut(l).iter_mut().zip(w.iter()).for_each(|(d, &w)| *d = w <= 0.0);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub mean: f64,
    pub std_error: f64,
}

fn estimate(per_path: &Array1<f64>) -> PriceEstimate {
    let (mean, std_error) = mean_and_se(per_path.view());
    PriceEstimate { mean, std_error }
}

pub fn stopping_values(decisions: &Array2<bool>, batch: &PathBatch, params: &MarketParams) -> Array1<f64> {
    let grid = batch.grid();
    let steps = grid.num_intervals();
    let prices = batch.prices();
    decisions
        .rows()
        .into_iter()
        .enumerate()
        .map(|(m, row)| {
            let l = row.iter().position(|&s| s).unwrap_or(steps);
            (-params.rate * grid.time(l)).exp() * payoff_put(prices[[m, l]], params.strike)
        })
        .collect()
}

pub fn control_values(
    decisions: &Array2<bool>,
    batch: &PathBatch,
    params: &MarketParams,
    penalty: f64,
) -> Result<Array1<f64>> {
    let grid = batch.grid();
    let dt = grid.dt();
    check_penalty_step(penalty, dt)?;
    let steps = grid.num_intervals();
    let prices = batch.prices();
    let disc: Vec<f64> = (0..=steps).map(|l| (-params.rate * grid.time(l)).exp()).collect();
    Ok(decisions
        .rows()
        .into_iter()
        .enumerate()
        .map(|(m, row)| {
            let mut r = 1.0;
            let mut total = 0.0;
            for l in 0..steps {
                if row[l] {
                    total += penalty * r * disc[l] * payoff_put(prices[[m, l]], params.strike) * dt;
                    r = step_discount(r, 1.0, penalty, dt);
                }
            }
            total + disc[steps] * r * payoff_put(prices[[m, steps]], params.strike)
        })
        .collect())
}

pub fn price_by_stopping(signal: &dyn ExerciseSignal, batch: &PathBatch, params: &MarketParams) -> Result<PriceEstimate> {
    let d = stop_decisions(signal, batch)?;
    Ok(estimate(&stopping_values(&d, batch, params)))
}

pub fn price_by_control(
    signal: &dyn ExerciseSignal,
    batch: &PathBatch,
    params: &MarketParams,
    penalty: f64,
) -> Result<PriceEstimate> {
    let d = stop_decisions(signal, batch)?;
    Ok(estimate(&control_values(&d, batch, params, penalty)?))
}

/// Per decision index, the fraction of paths whose decision agrees with
/// `x <= X_f(t_l)`; `None` where the oracle boundary is absent.
pub fn accuracy_from_decisions(decisions: &Array2<bool>, boundary: &FreeBoundary, batch: &PathBatch) -> Vec<Option<f64>> {
    let grid = batch.grid();
    (0..grid.num_intervals())
        .map(|l| {
            let xf = boundary.at_time(grid.time(l))?;
            let x = batch.column(l);
            let hits = decisions
                .column(l)
                .iter()
                .zip(x.iter())
                .filter(|(&stop, &x)| stop == (x <= xf))
                .count();
            Some(hits as f64 / batch.num_paths() as f64)
        })
        .collect()
}

pub fn classification_accuracy(
    signal: &dyn ExerciseSignal,
    boundary: &FreeBoundary,
    batch: &PathBatch,
) -> Result<Vec<Option<f64>>> {
    let d = stop_decisions(signal, batch)?;
    Ok(accuracy_from_decisions(&d, boundary, batch))
}

pub fn relative_error(p: f64, oracle: f64) -> Result<f64> {
    if !(oracle > 0.0) {
        return Err(Error::domain(format!("oracle price must be positive, got {oracle}")));
    }
    Ok((p - oracle).abs() / oracle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceReport {
    pub p_stopping: f64,
    pub se_stopping: f64,
    pub p_control: f64,
    pub se_control: f64,
    pub rel_err_stopping: f64,
    pub rel_err_control: f64,
    pub oracle_price: f64,
    pub penalty: f64,
    pub num_paths: usize,
    /// Per-slice accuracy; empty when no boundary was supplied.
    pub accuracy: Vec<Option<f64>>,
}

impl PriceReport {
    /// Smallest accuracy over the slices that have a boundary.
    pub fn min_accuracy(&self) -> Option<f64> {
        self.accuracy.iter().flatten().copied().reduce(f64::min)
    }
}

/// Both estimators plus (optionally) accuracy, sharing one pass of decisions.
pub fn price_report(
    signal: &dyn ExerciseSignal,
    batch: &PathBatch,
    params: &MarketParams,
    penalty: f64,
    oracle_price: f64,
    boundary: Option<&FreeBoundary>,
) -> Result<PriceReport> {
    let d = stop_decisions(signal, batch)?;
    let stop = estimate(&stopping_values(&d, batch, params));
    let ctrl = estimate(&control_values(&d, batch, params, penalty)?);
    Ok(PriceReport {
        p_stopping: stop.mean,
        se_stopping: stop.std_error,
        p_control: ctrl.mean,
        se_control: ctrl.std_error,
        rel_err_stopping: relative_error(stop.mean, oracle_price)?,
        rel_err_control: relative_error(ctrl.mean, oracle_price)?,
        oracle_price,
        penalty,
        num_paths: batch.num_paths(),
        accuracy: boundary.map(|b| accuracy_from_decisions(&d, b, batch)).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::simulate_paths;
    use crate::premium::{european_put_value, PutContract};

    fn never(_: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(Array1::from_elem(x.len(), 1.0))
    }

    fn always(_: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(Array1::from_elem(x.len(), f64::NEG_INFINITY))
    }

    fn batch(m: usize, seed: u64) -> PathBatch {
        simulate_paths(&MarketParams::default(), &TimeGrid::new(1.0, 50).unwrap(), m, seed).unwrap()
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(5.317, 5.317).unwrap(), 0.0);
        assert_eq!(relative_error(0.0, 5.317).unwrap(), 1.0);
        assert!((relative_error(5.37, 5.317).unwrap() - 0.009_968).abs() < 1e-5);
        assert!(matches!(relative_error(1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn never_stopping_prices_the_european_put() {
        let p = MarketParams::default();
        let b = batch(1 << 16, 1);
        let s = price_by_stopping(&never, &b, &p).unwrap();
        let c = price_by_control(&never, &b, &p, 10.0).unwrap();
        assert_eq!(s.mean, c.mean);
        let bs = european_put_value(0.0, 40.0, 0.4, &PutContract::from_market(&p)).unwrap();
        assert!((s.mean - bs).abs() < 3.0 * s.std_error + 0.02, "{} vs {bs}", s.mean);
    }

    #[test]
    fn immediate_exercise_at_the_money_is_worthless() {
        let p = MarketParams::default();
        let b = batch(64, 2);
        let s = price_by_stopping(&always, &b, &p).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.std_error, 0.0);
    }

    #[test]
    fn absorbing_discount_at_full_penalty() {
        let p = MarketParams::default();
        let b = batch(32, 3);
        // stop only at l = 3 with K dt = 1: the path pays K g(X_3) dt = g(X_3) and nothing after
        let at3 = |l: usize, x: ArrayView1<f64>| -> Result<Array1<f64>> {
            Ok(Array1::from_elem(x.len(), if l == 3 { -1.0 } else { 1.0 }))
        };
        let d = stop_decisions(&at3, &b).unwrap();
        let vals = control_values(&d, &b, &p, 50.0).unwrap();
        for m in 0..32 {
            let expected = (-0.06 * 0.06f64).exp() * payoff_put(b.prices()[[m, 3]], 40.0);
            assert!((vals[m] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_stop() {
        let zero = |_: usize, x: ArrayView1<f64>| -> Result<Array1<f64>> { Ok(Array1::zeros(x.len())) };
        let d = stop_decisions(&zero, &batch(4, 4)).unwrap();
        assert!(d.iter().all(|&s| s));
    }

    #[test]
    fn oracle_rule_classifies_its_own_boundary() {
        use crate::fd::{solve_penalized_vi, FdGridSpec};
        let p = MarketParams::default();
        let spec = FdGridSpec {
            num_space: 2000,
            num_time: 1000,
            ..Default::default()
        };
        let sol = solve_penalized_vi(&p, &spec, 1e6, 1e-8).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let b = batch(4096, 5);
        let rule = OracleSignal { solution: &sol, grid };
        let acc = classification_accuracy(&rule, sol.boundary(), &b).unwrap();
        for (l, a) in acc.iter().enumerate() {
            // disagreements only from interpolating between grid nodes next to the boundary
            assert!(a.unwrap() >= 0.99, "slice {l}: {a:?}");
        }
    }
}
