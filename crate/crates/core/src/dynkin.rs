//! Penalized two-obstacle (Dynkin) games in one state variable.
//!
//! The maximizer may stop to collect `L(y)`, the minimizer may stop paying
//! `U(y)`, and `H(y)` is paid at the horizon. The penalized value solves
//!
//! ```text
//! -w_t - A w - K (L - w)^+ + K (w - U)^+ = 0,   w(T) = H
//! A w = m(y) w_y + 1/2 s(y)^2 w_yy - r w
//! ```
//!
//! discretized exactly like [`crate::fd`]: fully implicit, central
//! differences, Newton on both penalty terms with their active sets, Dirichlet
//! edges `clamp(H, L, U)`.
//!
//! Entropy-regularized randomized stopping gives the closed-form pair
//! `nu = logistic(K (L - w) / lambda)`, `mu = logistic(K (w - U) / lambda)`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fd::{thomas, FdGrid};
use crate::policy::{bernoulli_entropy, logistic, PROB_CLIP};

type Field = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Obstacles and generator of a one-dimensional game, all functions of the
/// grid variable `y`.
pub struct ObstacleSpec {
    pub lower: Field,
    pub upper: Field,
    pub terminal: Field,
    pub drift: Field,
    pub diffusion: Field,
    pub discount: f64,
    /// Proportional cost rate carried for reference; unused by the solver.
    pub cost_rate: Option<f64>,
}

impl std::fmt::Debug for ObstacleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObstacleSpec")
            .field("discount", &self.discount)
            .field("cost_rate", &self.cost_rate)
            .finish_non_exhaustive()
    }
}

impl ObstacleSpec {
    /// Put in log-price with the upper obstacle pushed to `upper`.
    pub fn american_put(rate: f64, sigma: f64, strike: f64, upper: f64) -> Self {
        let put = move |y: f64| (strike - y.exp()).max(0.0);
        Self {
            lower: Box::new(put),
            upper: Box::new(move |_| upper),
            terminal: Box::new(put),
            drift: Box::new(move |_| rate - 0.5 * sigma * sigma),
            diffusion: Box::new(move |_| sigma),
            discount: rate,
            cost_rate: None,
        }
    }

    /// `(lower, upper, terminal)` at every node; errors where `L > U` or the
    /// terminal value leaves `[L, U]`.
    fn sample(&self, grid: &FdGrid) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = grid.num_space;
        let mut lo = Vec::with_capacity(n + 1);
        let mut up = Vec::with_capacity(n + 1);
        let mut h = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let y = grid.y(j);
            let (l, u, t) = ((self.lower)(y), (self.upper)(y), (self.terminal)(y));
            if !(l <= u) {
                return Err(Error::config(format!("obstacles cross at y = {y}: L = {l} > U = {u}")));
            }
            if !(l <= t && t <= u) {
                return Err(Error::config(format!(
                    "terminal value {t} at y = {y} is outside [L, U] = [{l}, {u}]"
                )));
            }
            lo.push(l);
            up.push(u);
            h.push(t);
        }
        Ok((lo, up, h))
    }
}

/// Maximizer and minimizer stop probabilities at `(t_i, y_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GamePolicies {
    pub nu: Array2<f64>,
    pub mu: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct GameSolution {
    pub values: Array2<f64>,
    pub policies: GamePolicies,
    pub grid: FdGrid,
    pub penalty: f64,
    pub lambda: f64,
    pub max_newton_iters: usize,
}

/// `(nu*, mu*)` for one node, clipped away from 0 and 1.
pub fn optimal_probabilities(w: f64, lower: f64, upper: f64, penalty: f64, lambda: f64) -> (f64, f64) {
    let clip = |p: f64| p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    (
        clip(logistic(penalty * (lower - w) / lambda)),
        clip(logistic(penalty * (w - upper) / lambda)),
    )
}

/// Regularized Hamiltonian `K nu (L - w) + K mu (U - w) - lambda H(nu) + lambda H(mu)`;
/// `nu` maximizes it and `mu` minimizes it.
pub fn game_hamiltonian(nu: f64, mu: f64, w: f64, lower: f64, upper: f64, penalty: f64, lambda: f64) -> f64 {
    penalty * nu * (lower - w) + penalty * mu * (upper - w) - lambda * bernoulli_entropy(nu)
        + lambda * bernoulli_entropy(mu)
}

struct Coeffs {
    lower: Vec<f64>,
    upper: Vec<f64>,
    centre: Vec<f64>,
}

fn coefficients(spec: &ObstacleSpec, grid: &FdGrid) -> Coeffs {
    let n = grid.num_space;
    let mut c = Coeffs {
        lower: vec![0.0; n + 1],
        upper: vec![0.0; n + 1],
        centre: vec![0.0; n + 1],
    };
    for j in 1..n {
        let y = grid.y(j);
        let s = (spec.diffusion)(y);
        let diff = s * s / (2.0 * grid.dy * grid.dy);
        let adv = (spec.drift)(y) / (2.0 * grid.dy);
        c.lower[j] = diff - adv;
        c.upper[j] = diff + adv;
        c.centre[j] = c.lower[j] + c.upper[j] + spec.discount;
    }
    c
}

fn penalty_terms(w: f64, lo: f64, up: f64, k: f64) -> (f64, f64) {
    let mut r = 0.0;
    let mut dr = 0.0;
    if lo - w > 0.0 {
        r += k * (lo - w);
        dr -= k;
    }
    if w - up > 0.0 {
        r -= k * (w - up);
        dr -= k;
    }
    (r, dr)
}

pub fn solve_penalized_game(
    spec: &ObstacleSpec,
    grid: &FdGrid,
    penalty: f64,
    lambda: f64,
    eps: f64,
    max_iters: usize,
) -> Result<GameSolution> {
    if !(penalty > 0.0 && penalty.is_finite()) {
        return Err(Error::config("game penalty K must be positive and finite"));
    }
    if !(lambda > 0.0) {
        return Err(Error::config("game lambda must be positive"));
    }
    if !(eps > 0.0) {
        return Err(Error::config("game eps must be positive"));
    }
    if grid.num_space < 3 || grid.num_time < 1 {
        return Err(Error::config("game grid needs num_space >= 3 and num_time >= 1"));
    }
    let (lo, up, h) = spec.sample(grid)?;
    let ny = grid.num_space;
    let nt = grid.num_time;
    let c = coefficients(spec, grid);
    let edge = |j: usize| h[j].clamp(lo[j], up[j]);

    let mut w = Array2::<f64>::zeros((nt + 1, ny + 1));
    w.row_mut(nt).iter_mut().zip(&h).for_each(|(v, hv)| *v = *hv);
    let n = ny - 1;
    let sub: Vec<f64> = (1..ny).map(|j| -c.lower[j]).collect();
    let sup: Vec<f64> = (1..ny).map(|j| -c.upper[j]).collect();
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut worst = 0;

    for i in (0..nt).rev() {
        let next: Vec<f64> = w.row(i + 1).to_vec();
        let mut cur = next.clone();
        cur[0] = edge(0);
        cur[ny] = edge(ny);
        let mut converged = false;
        let mut last_delta = f64::INFINITY;
        for iter in 1..=max_iters {
            for k in 0..n {
                let j = k + 1;
                let (r, dr) = penalty_terms(cur[j], lo[j], up[j], penalty);
                diag[k] = 1.0 / grid.dt + c.centre[j] - dr;
                rhs[k] = next[j] / grid.dt + r - dr * cur[j];
            }
            rhs[0] += c.lower[1] * cur[0];
            rhs[n - 1] += c.upper[ny - 1] * cur[ny];
            let sol = thomas(&sub, &diag, &sup, &rhs)?;
            let scale = cur.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            last_delta = sol.iter().zip(&cur[1..ny]).fold(0.0f64, |m, (s, c)| m.max((s - c).abs()));
            cur[1..ny].copy_from_slice(&sol);
            if last_delta < eps * scale {
                converged = true;
                worst = worst.max(iter);
                break;
            }
        }
        if !converged {
            return Err(Error::Solver(format!(
                "game Newton iteration did not converge at time row {i} after {max_iters} iterations; \
                 last update {last_delta:e}, Ny = {ny}, Nt = {nt}"
            )));
        }
        w.row_mut(i).iter_mut().zip(&cur).for_each(|(v, c)| *v = *c);
    }

    let policies = policies_for(&w, &lo, &up, penalty, lambda);
    Ok(GameSolution {
        values: w,
        policies,
        grid: *grid,
        penalty,
        lambda,
        max_newton_iters: worst,
    })
}

fn policies_for(w: &Array2<f64>, lo: &[f64], up: &[f64], penalty: f64, lambda: f64) -> GamePolicies {
    let mut nu = Array2::<f64>::zeros(w.raw_dim());
    let mut mu = Array2::<f64>::zeros(w.raw_dim());
    for ((i, j), &v) in w.indexed_iter() {
        let (a, b) = optimal_probabilities(v, lo[j], up[j], penalty, lambda);
        nu[[i, j]] = a;
        mu[[i, j]] = b;
    }
    GamePolicies { nu, mu }
}

/// Pointwise residual of the discretized penalized equation at interior
/// nodes of rows `0..Nt`; zero on edges and the terminal row.
pub fn penalized_game_residual(w: &Array2<f64>, spec: &ObstacleSpec, grid: &FdGrid, penalty: f64) -> Result<Array2<f64>> {
    if w.dim() != (grid.num_time + 1, grid.num_space + 1) {
        return Err(Error::usage("value field does not match the grid"));
    }
    let (lo, up, _) = spec.sample(grid)?;
    let c = coefficients(spec, grid);
    let mut res = Array2::<f64>::zeros(w.raw_dim());
    for i in 0..grid.num_time {
        for j in 1..grid.num_space {
            let v = w[[i, j]];
            let (r, _) = penalty_terms(v, lo[j], up[j], penalty);
            res[[i, j]] = (v - w[[i + 1, j]]) / grid.dt + c.centre[j] * v - c.lower[j] * w[[i, j - 1]]
                - c.upper[j] * w[[i, j + 1]]
                - r;
        }
    }
    Ok(res)
}

impl GameSolution {
    /// `w` at `(t_i, y_j)` bracketed by the obstacles up to `slack`.
    pub fn sandwich_violation(&self, spec: &ObstacleSpec) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..=self.grid.num_space {
            let y = self.grid.y(j);
            let (lo, up) = ((spec.lower)(y), (spec.upper)(y));
            for v in self.values.column(j) {
                worst = worst.max(lo - v).max(v - up);
            }
        }
        worst
    }
}
