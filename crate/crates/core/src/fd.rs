//! Fully implicit finite differences for the penalized put problem in
//! log-price `y = ln x`.
//!
//! Each time row solves
//!
//! ```text
//! (1/dt + a + b + rho) u_j - a u_{j-1} - b u_{j+1} - R(u_j) = u^{next}_j / dt
//! a = s^2/(2 dy^2) - (rho - s^2/2)/(2 dy),   b = s^2/(2 dy^2) + (rho - s^2/2)/(2 dy)
//! ```
//!
//! by Newton iteration on the reaction term `R`, with a tridiagonal (Thomas)
//! solve per iterate. Three reactions are available:
//!
//! * penalized: `R(u) = K (g - u)^+`, linearized with the active set `1{g - u > 0}`;
//! * exploratory: `R(u) = lambda * softplus(K (g - u) / lambda)`, the value of
//!   the entropy-regularized problem under its optimal Bernoulli policy;
//! * fixed policy: `R(u) = K pi (g - u) - lambda H(pi)` for a given `pi(t, x)`.
//!
//! Both edges carry the Dirichlet value `g`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{payoff_put, MarketParams};
use crate::policy::{bernoulli_entropy, logistic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridCentering {
    /// `y in [ln K - N, ln K + N]`.
    Strike,
    /// `y in [-N, N]`.
    Origin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdGridSpec {
    pub num_space: usize,
    pub num_time: usize,
    pub half_width: f64,
    pub centering: GridCentering,
}

impl Default for FdGridSpec {
    fn default() -> Self {
        Self {
            num_space: 2000,
            num_time: 2000,
            half_width: 6.0,
            centering: GridCentering::Strike,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdGrid {
    pub y_min: f64,
    pub num_space: usize,
    pub num_time: usize,
    pub dy: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl FdGrid {
    pub fn new(spec: &FdGridSpec, params: &MarketParams) -> Result<Self> {
        params.validate()?;
        if spec.num_space < 3 {
            return Err(Error::config(format!("oracle.num_space must be >= 3, got {}", spec.num_space)));
        }
        if spec.num_time < 1 {
            return Err(Error::config("oracle.num_time must be >= 1"));
        }
        if !(spec.half_width > 0.0) {
            return Err(Error::config("oracle.half_width must be positive"));
        }
        let center = match spec.centering {
            GridCentering::Strike => params.strike.ln(),
            GridCentering::Origin => 0.0,
        };
        let dy = 2.0 * spec.half_width / spec.num_space as f64;
        let drift = params.rate - 0.5 * params.sigma * params.sigma;
        if drift.abs() > 0.0 && dy > params.sigma * params.sigma / drift.abs() {
            return Err(Error::config(format!(
                "dy = {dy} too coarse: need dy <= sigma^2 / |rho - sigma^2/2| = {} for a monotone scheme",
                params.sigma * params.sigma / drift.abs()
            )));
        }
        Ok(Self {
            y_min: center - spec.half_width,
            num_space: spec.num_space,
            num_time: spec.num_time,
            dy,
            dt: params.horizon / spec.num_time as f64,
            horizon: params.horizon,
        })
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.dy
    }

    pub fn x(&self, j: usize) -> f64 {
        self.y(j).exp()
    }

    pub fn t(&self, i: usize) -> f64 {
        if i >= self.num_time {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.num_space)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FdMode {
    Penalized,
    Exploratory { lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    pub grid: FdGridSpec,
    pub penalty: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub mode: FdMode,
    /// Tolerance on `u - g` when reading off the stop region.
    pub boundary_tol: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            grid: FdGridSpec::default(),
            penalty: 1e6,
            eps: 1e-8,
            max_iters: 100,
            mode: FdMode::Penalized,
            boundary_tol: 1e-6,
        }
    }
}

/// Free boundary per time row; `None` where the stop region is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundary {
    pub times: Vec<f64>,
    pub x_f: Vec<Option<f64>>,
}

impl FreeBoundary {
    /// Boundary at `t`, exact on rows and linear between two present rows.
    pub fn at_time(&self, t: f64) -> Option<f64> {
        let n = self.times.len();
        if n == 0 {
            return None;
        }
        let dt = if n > 1 { self.times[1] - self.times[0] } else { 1.0 };
        let pos = (t - self.times[0]) / dt;
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            return self.x_f.get(nearest.max(0.0) as usize).copied().flatten();
        }
        let i = pos.floor().max(0.0) as usize;
        match (self.x_f.get(i).copied().flatten(), self.x_f.get(i + 1).copied().flatten()) {
            (Some(a), Some(b)) => {
                let w = pos - i as f64;
                Some(a + w * (b - a))
            }
            _ => None,
        }
    }

    pub fn present_rows(&self) -> usize {
        self.x_f.iter().filter(|x| x.is_some()).count()
    }
}

#[derive(Clone, Debug)]
pub struct FdSolution {
    u: Array2<f64>,
    grid: FdGrid,
    params: MarketParams,
    penalty: f64,
    mode: Option<FdMode>,
    boundary: FreeBoundary,
    max_newton_iters: usize,
}

/// Solve `a_j x_{j-1} + b_j x_j + c_j x_{j+1} = d_j`; `a_0` and `c_{n-1}` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n || n == 0 {
        return Err(Error::usage("tridiagonal system with inconsistent lengths"));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::Solver("zero pivot in tridiagonal solve".into()));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for j in 1..n {
        denom = diag[j] - lower[j] * c[j - 1];
        if denom == 0.0 {
            return Err(Error::Solver(format!("zero pivot in tridiagonal solve at row {j}")));
        }
        c[j] = upper[j] / denom;
        d[j] = (rhs[j] - lower[j] * d[j - 1]) / denom;
    }
    for j in (0..n - 1).rev() {
        d[j] -= c[j] * d[j + 1];
    }
    Ok(d)
}

/// Overflow-safe `ln(1 + e^z)`.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

enum Reaction<'a> {
    Penalized { k: f64 },
    Exploratory { k: f64, lambda: f64 },
    Policy { k: f64, lambda: f64, pi: &'a dyn Fn(f64, f64) -> f64 },
}

impl Reaction<'_> {
    /// `(R(u), dR/du)` at node value `u` with payoff `g`.
    fn eval(&self, u: f64, g: f64, t: f64, x: f64) -> (f64, f64) {
        match *self {
            Reaction::Penalized { k } => {
                if g - u > 0.0 {
                    (k * (g - u), -k)
                } else {
                    (0.0, 0.0)
                }
            }
            Reaction::Exploratory { k, lambda } => {
                let z = k * (g - u) / lambda;
                (lambda * softplus(z), -k * logistic(z))
            }
            Reaction::Policy { k, lambda, pi } => {
                let p = pi(t, x);
                (k * p * (g - u) - lambda * bernoulli_entropy(p), -k * p)
            }
        }
    }
}

fn coefficients(params: &MarketParams, grid: &FdGrid) -> (f64, f64) {
    let s2 = params.sigma * params.sigma;
    let drift = params.rate - 0.5 * s2;
    let diff = s2 / (2.0 * grid.dy * grid.dy);
    let adv = drift / (2.0 * grid.dy);
    (diff - adv, diff + adv)
}

fn march(params: &MarketParams, grid: FdGrid, reaction: &Reaction, eps: f64, max_iters: usize) -> Result<(Array2<f64>, usize)> {
    let ny = grid.num_space;
    let nt = grid.num_time;
    let (a, b) = coefficients(params, &grid);
    let xs: Vec<f64> = (0..=ny).map(|j| grid.x(j)).collect();
    let g: Vec<f64> = xs.iter().map(|&x| payoff_put(x, params.strike)).collect();
    let mut u = Array2::<f64>::zeros((nt + 1, ny + 1));
    u.row_mut(nt).iter_mut().zip(&g).for_each(|(v, gv)| *v = *gv);

    let n = ny - 1;
    let base_diag = 1.0 / grid.dt + a + b + params.rate;
    let lower = vec![-a; n];
    let upper = vec![-b; n];
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut worst_iters = 0;

    for i in (0..nt).rev() {
        let t = grid.t(i);
        let next: Vec<f64> = u.row(i + 1).to_vec();
        let mut cur = next.clone();
        cur[0] = g[0];
        cur[ny] = g[ny];
        let mut converged = false;
        let mut last_delta = f64::INFINITY;
        for iter in 1..=max_iters {
            for k in 0..n {
                let j = k + 1;
                let (r, dr) = reaction.eval(cur[j], g[j], t, xs[j]);
                diag[k] = base_diag - dr;
                rhs[k] = next[j] / grid.dt + r - dr * cur[j];
            }
            rhs[0] += a * g[0];
            rhs[n - 1] += b * g[ny];
            let sol = thomas(&lower, &diag, &upper, &rhs)?;
            let scale = cur.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            last_delta = sol.iter().zip(&cur[1..ny]).fold(0.0f64, |m, (s, c)| m.max((s - c).abs()));
            cur[1..ny].copy_from_slice(&sol);
            if last_delta < eps * scale {
                converged = true;
                worst_iters = worst_iters.max(iter);
                break;
            }
        }
        if !converged {
            return Err(Error::Solver(format!(
                "Newton iteration did not converge at time row {i} (t = {t}) after {max_iters} iterations; \
                 last update {last_delta:e}, grid Ny = {ny}, Nt = {nt}, dy = {}, dt = {}",
                grid.dy, grid.dt
            )));
        }
        u.row_mut(i).iter_mut().zip(&cur).for_each(|(v, c)| *v = *c);
    }
    Ok((u, worst_iters))
}

pub fn solve(params: &MarketParams, config: &FdConfig) -> Result<FdSolution> {
    if !(config.penalty >= 0.0 && config.penalty.is_finite()) {
        return Err(Error::config("oracle penalty K must be finite and >= 0"));
    }
    if !(config.eps > 0.0) {
        return Err(Error::config("oracle eps must be positive"));
    }
    let grid = FdGrid::new(&config.grid, params)?;
    let reaction = match config.mode {
        FdMode::Penalized => Reaction::Penalized { k: config.penalty },
        FdMode::Exploratory { lambda } => {
            if !(lambda > 0.0) {
                return Err(Error::config("exploratory oracle needs lambda > 0"));
            }
            Reaction::Exploratory {
                k: config.penalty,
                lambda,
            }
        }
    };
    let (u, iters) = march(params, grid, &reaction, config.eps, config.max_iters)?;
    let mut sol = FdSolution {
        u,
        grid,
        params: *params,
        penalty: config.penalty,
        mode: Some(config.mode),
        boundary: FreeBoundary {
            times: Vec::new(),
            x_f: Vec::new(),
        },
        max_newton_iters: iters,
    };
    sol.boundary = extract_free_boundary(&sol, config.boundary_tol);
    Ok(sol)
}

/// Penalized variational inequality with default grid settings.
pub fn solve_penalized_vi(params: &MarketParams, grid: &FdGridSpec, penalty: f64, eps: f64) -> Result<FdSolution> {
    solve(
        params,
        &FdConfig {
            grid: *grid,
            penalty,
            eps,
            ..Default::default()
        },
    )
}

/// Value `J^pi` of the entropy-regularized problem under a fixed Bernoulli
/// policy `pi(t, x)`.
pub fn solve_policy_value(
    params: &MarketParams,
    grid: &FdGridSpec,
    penalty: f64,
    lambda: f64,
    pi: &dyn Fn(f64, f64) -> f64,
) -> Result<FdSolution> {
    let fd_grid = FdGrid::new(grid, params)?;
    let reaction = Reaction::Policy { k: penalty, lambda, pi };
    let (u, iters) = march(params, fd_grid, &reaction, 1e-10, 10)?;
    let mut sol = FdSolution {
        u,
        grid: fd_grid,
        params: *params,
        penalty,
        mode: None,
        boundary: FreeBoundary {
            times: Vec::new(),
            x_f: Vec::new(),
        },
        max_newton_iters: iters,
    };
    sol.boundary = extract_free_boundary(&sol, 1e-6);
    Ok(sol)
}

/// Largest `x` of the contiguous region `{g > 0, u - g <= tol}` grown from the
/// bottom edge, per time row; then made nondecreasing in `t` with
/// `X_f(T) = strike`.
pub fn extract_free_boundary(sol: &FdSolution, tol: f64) -> FreeBoundary {
    let grid = &sol.grid;
    let strike = sol.params.strike;
    let mut x_f: Vec<Option<f64>> = (0..=grid.num_time)
        .map(|i| {
            let row = sol.u.row(i);
            let mut last = None;
            for j in 1..grid.num_space {
                let x = grid.x(j);
                let g = payoff_put(x, strike);
                if g > 0.0 && row[j] - g <= tol {
                    last = Some(x);
                } else {
                    break;
                }
            }
            last
        })
        .collect();
    x_f[grid.num_time] = Some(strike);
    for i in (0..grid.num_time).rev() {
        if let (Some(x), Some(next)) = (x_f[i], x_f[i + 1]) {
            x_f[i] = Some(x.min(next));
        }
    }
    FreeBoundary {
        times: (0..=grid.num_time).map(|i| grid.t(i)).collect(),
        x_f,
    }
}

impl FdSolution {
    pub fn values(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn grid(&self) -> &FdGrid {
        &self.grid
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn mode(&self) -> Option<FdMode> {
        self.mode
    }

    pub fn boundary(&self) -> &FreeBoundary {
        &self.boundary
    }

    pub fn max_newton_iters(&self) -> usize {
        self.max_newton_iters
    }

    /// Bilinear interpolation in `(t, ln x)`.
    pub fn price_at(&self, t: f64, x: f64) -> Result<f64> {
        let g = &self.grid;
        if !(t >= 0.0 && t <= g.horizon * (1.0 + 1e-12)) {
            return Err(Error::domain(format!("t = {t} outside [0, {}]", g.horizon)));
        }
        if !(x > 0.0) {
            return Err(Error::domain(format!("price {x} below the oracle grid")));
        }
        let y = x.ln();
        let py = (y - g.y_min) / g.dy;
        if py < -1e-9 || py > g.num_space as f64 + 1e-9 {
            return Err(Error::domain(format!(
                "price {x} outside oracle coverage [{}, {}]",
                g.x(0),
                g.x(g.num_space)
            )));
        }
        let pt = (t / g.dt).min(g.num_time as f64);
        let (j, wy) = split(py, g.num_space);
        let (i, wt) = split(pt, g.num_time);
        let u = &self.u;
        let lo = u[[i, j]] * (1.0 - wy) + if wy > 0.0 { u[[i, j + 1]] * wy } else { 0.0 };
        if wt == 0.0 {
            return Ok(lo);
        }
        let hi = u[[i + 1, j]] * (1.0 - wy) + if wy > 0.0 { u[[i + 1, j + 1]] * wy } else { 0.0 };
        Ok(lo * (1.0 - wt) + hi * wt)
    }

    /// Maximum absolute residual of the discrete penalized equations over
    /// interior nodes, for the reaction the solution was computed with.
    pub fn residual(&self) -> f64 {
        let g = &self.grid;
        let (a, b) = coefficients(&self.params, g);
        let k = self.penalty;
        let mut worst = 0.0f64;
        for i in 0..g.num_time {
            for j in 1..g.num_space {
                let u = self.u[[i, j]];
                let payoff = payoff_put(g.x(j), self.params.strike);
                let r = match self.mode {
                    Some(FdMode::Penalized) => k * (payoff - u).max(0.0),
                    Some(FdMode::Exploratory { lambda }) => lambda * softplus(k * (payoff - u) / lambda),
                    None => continue,
                };
                let lhs = (1.0 / g.dt + a + b + self.params.rate) * u
                    - a * self.u[[i, j - 1]]
                    - b * self.u[[i, j + 1]]
                    - self.u[[i + 1, j]] / g.dt;
                worst = worst.max((lhs - r).abs());
            }
        }
        worst
    }
}

fn split(p: f64, max: usize) -> (usize, f64) {
    let p = p.clamp(0.0, max as f64);
    let i = p.floor() as usize;
    if i >= max {
        (max, 0.0)
    } else {
        let w = p - i as f64;
        if w < 1e-12 {
            (i, 0.0)
        } else {
            (i, w)
        }
    }
}
