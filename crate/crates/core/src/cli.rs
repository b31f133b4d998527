//! Experiment configuration and the subcommands of the `optstop` binary.
//!
//! Configuration is a TOML file whose tables mirror [`ExperimentConfig`];
//! every table and key is optional and falls back to the benchmark defaults.
//! Command-line flags override the file.
//!
//! ```toml
//! out_dir = "runs/bench"
//!
//! [market]
//! x0 = 40.0
//! sigma = 0.4
//!
//! [train]
//! mode = "online_td0"
//! steps = 5000
//! penalty = 10.0
//!
//! [oracle.grid]
//! num_space = 2000
//!
//! [sweep]
//! k_values = [1.0, 5.0, 10.0, 50.0]
//! ```

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csvout::{opt_sig17, sig17, write_csv};
use crate::dynkin::{solve_penalized_game, ObstacleSpec};
use crate::ensemble::ValueEnsemble;
use crate::error::{Error, Result};
use crate::fd::{solve, FdConfig, FdGridSpec, FdMode, FdSolution};
use crate::market::{check_penalty_step, simulate_paths, MarketParams, TimeGrid};
use crate::premium::calibrate_phi;
use crate::pricing::{price_report, PriceReport};
use crate::trainer::{write_learning_curve, EvalContext, TrainConfig, TrainMode, TrainRecord, Trainer};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "OPTSTOP_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub grid: FdGridSpec,
    pub penalty: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub boundary_tol: f64,
    /// Times at which `x,u` value slices are written.
    pub slice_times: Vec<f64>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        let fd = FdConfig::default();
        Self {
            grid: fd.grid,
            penalty: fd.penalty,
            eps: fd.eps,
            max_iters: fd.max_iters,
            boundary_tol: fd.boundary_tol,
            slice_times: vec![0.0, 0.5, 1.0],
        }
    }
}

impl OracleSettings {
    pub fn fd_config(&self) -> FdConfig {
        FdConfig {
            grid: self.grid,
            penalty: self.penalty,
            eps: self.eps,
            max_iters: self.max_iters,
            mode: FdMode::Penalized,
            boundary_tol: self.boundary_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_values: Vec<f64>,
    pub lambda_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_values: vec![1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            lambda_values: vec![0.1, 0.5, 1.0, 3.0, 5.0, 10.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynkinSettings {
    /// Constant upper obstacle; a huge value disables it.
    pub upper: f64,
    pub penalty: f64,
    pub lambda: f64,
    pub eps: f64,
    pub max_iters: usize,
}

impl Default for DynkinSettings {
    fn default() -> Self {
        Self {
            upper: 1e9,
            penalty: 1e6,
            lambda: 1.0,
            eps: 1e-8,
            max_iters: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: Option<PathBuf>,
    pub market: MarketParams,
    pub train: TrainConfig,
    pub oracle: OracleSettings,
    pub sweep: SweepConfig,
    pub dynkin: DynkinSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.train.validate(&self.market)?;
        let grid = self.train.grid(&self.market)?;
        for (axis, values) in [("sweep.k_values", &self.sweep.k_values), ("sweep.lambda_values", &self.sweep.lambda_values)] {
            if values.is_empty() {
                return Err(Error::config(format!("{axis} must not be empty")));
            }
            if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::config(format!("{axis} contains non-positive value {bad}")));
            }
        }
        for &k in &self.sweep.k_values {
            check_penalty_step(k, grid.dt()).map_err(|e| Error::config(format!("sweep.k_values: {e}")))?;
        }
        if !(self.oracle.penalty >= 0.0 && self.oracle.penalty.is_finite()) {
            return Err(Error::config("oracle.penalty must be finite and >= 0"));
        }
        if let Some(t) = self.oracle.slice_times.iter().find(|t| !(0.0..=self.market.horizon).contains(*t)) {
            return Err(Error::config(format!("oracle.slice_times entry {t} is outside [0, T]")));
        }
        if !(self.dynkin.penalty > 0.0 && self.dynkin.lambda > 0.0) {
            return Err(Error::config("dynkin.penalty and dynkin.lambda must be positive"));
        }
        Ok(())
    }

    fn out_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub git_describe: Option<String>,
    pub command: String,
    pub config_hash: String,
    pub train_seed: u64,
    pub test_seed: u64,
    pub calibration_seed: u64,
    pub files: Vec<String>,
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Writes `config.toml` and `manifest.json` next to the artifacts.
fn write_manifest(dir: &Path, command: &str, config: &ExperimentConfig, files: Vec<String>) -> Result<()> {
    std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_describe: git_describe(),
        command: command.into(),
        config_hash: config.hash()?,
        train_seed: config.train.seed,
        test_seed: config.train.test_seed,
        calibration_seed: config.train.calibration.seed,
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "optstop", version, about = "Exploratory penalty RL for optimal stopping")]
pub struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// Penalty (exercise intensity cap) K.
    #[arg(long = "K", global = true)]
    pub penalty: Option<f64>,
    /// Temperature lambda.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Training steps (calibration steps for `calibrate-phi`).
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `out_dir`, then $OPTSTOP_OUT, then `runs`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    #[value(name = "offline_ml")]
    OfflineMl,
    #[value(name = "online_td0")]
    OnlineTd0,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    #[value(name = "K")]
    K,
    #[value(name = "lambda")]
    Lambda,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an ensemble and write its learning curve and checkpoint.
    Train {
        /// Known premium volatility; calibrated first when omitted.
        #[arg(long)]
        phi: Option<f64>,
    },
    /// Price a saved ensemble on a fresh test batch and print JSON.
    Price {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also solve the oracle and report per-slice accuracy.
        #[arg(long)]
        accuracy: bool,
    },
    /// Solve the finite-difference oracle.
    Oracle,
    /// One training run per value of the chosen axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        phi: Option<f64>,
    },
    /// Fit the premium volatility by minimizing the martingale loss.
    CalibratePhi {
        #[arg(long)]
        phi0: Option<f64>,
    },
    /// Solve the two-obstacle game for the put with a constant upper obstacle.
    DynkinDemo {
        #[arg(long)]
        upper: Option<f64>,
    },
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig, command: &Command) {
        // --K goes to the penalty of the command at hand only
        if let Some(k) = self.penalty {
            match command {
                Command::DynkinDemo { .. } => config.dynkin.penalty = k,
                Command::Oracle => config.oracle.penalty = k,
                _ => config.train.penalty = k,
            }
        }
        if let Some(l) = self.lambda {
            config.train.lambda = l;
            config.dynkin.lambda = l;
        }
        if let Some(s) = self.steps {
            match command {
                Command::CalibratePhi { .. } => config.train.calibration.steps = s,
                _ => config.train.steps = s,
            }
        }
        if let Some(m) = self.mode {
            config.train.mode = match m {
                ModeArg::OfflineMl => TrainMode::OfflineMl,
                ModeArg::OnlineTd0 => TrainMode::OnlineTd0,
            };
        }
        if let Some(seed) = self.seed {
            match command {
                Command::CalibratePhi { .. } => config.train.calibration.seed = seed,
                _ => config.train.seed = seed,
            }
        }
        if let Some(out) = &self.out {
            config.out_dir = Some(out.clone());
        }
    }
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

/// Resolve configuration, run the subcommand, return the output directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cli.overrides.apply(&mut config, &cli.command);
    match cli.command {
        Command::Train { phi } => {
            if phi.is_some() {
                config.train.phi = phi;
            }
            run_train(&config)
        }
        Command::Price { checkpoint, accuracy } => run_price(&config, &checkpoint, accuracy).map(|(dir, report)| {
            emit(&serde_json::to_string_pretty(&report).unwrap_or_default());
            dir
        }),
        Command::Oracle => run_oracle(&config).map(|(dir, sol)| {
            emit(&format!("price {:.6}", sol.price_at(0.0, config.market.x0).unwrap_or(f64::NAN)));
            dir
        }),
        Command::Sweep { axis, values, phi } => {
            if let Some(v) = values {
                match axis {
                    SweepAxis::K => config.sweep.k_values = v,
                    SweepAxis::Lambda => config.sweep.lambda_values = v,
                }
            }
            if phi.is_some() {
                config.train.phi = phi;
            }
            run_sweep(&config, axis).map(|(dir, _)| dir)
        }
        Command::CalibratePhi { phi0 } => {
            if let Some(p) = phi0 {
                config.train.calibration.phi0 = p;
            }
            run_calibrate_phi(&config).map(|(dir, phi)| {
                emit(&format!("phi {phi:.6}"));
                dir
            })
        }
        Command::DynkinDemo { upper } => {
            if let Some(u) = upper {
                config.dynkin.upper = u;
            }
            run_dynkin_demo(&config).map(|(dir, demo)| {
                emit(&format!("game price {:.6}  single-obstacle gap {:.3e}", demo.price, demo.max_gap_to_oracle));
                dir
            })
        }
    }
}

fn prepare(config: &ExperimentConfig, sub: &str) -> Result<PathBuf> {
    config.validate()?;
    let dir = config.out_root(None).join(sub);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn oracle_boundary(config: &ExperimentConfig) -> Result<FdSolution> {
    solve(&config.market, &config.oracle.fd_config())
}

fn train_once(config: &ExperimentConfig, ctx: &EvalContext) -> (Option<Trainer>, Vec<TrainRecord>, Option<Error>) {
    let mut trainer = match Trainer::new(&config.market, &config.train) {
        Ok(t) => t,
        Err(e) => return (None, Vec::new(), Some(e)),
    };
    let outcome = trainer.run(Some(ctx));
    let records = trainer.records().to_vec();
    (Some(trainer), records, outcome.err())
}

/// Learning curve, checkpoint and manifest under `<out>/train`.
pub fn run_train(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = prepare(config, "train")?;
    let oracle = oracle_boundary(config)?;
    let ctx = EvalContext::new(&config.market, &config.train, Some(oracle.boundary().clone()))?;
    log::info!("training {:?} for {} steps", config.train.mode, config.train.steps);
    let (trainer, records, err) = train_once(config, &ctx);
    write_learning_curve(&dir.join("learning_curve.csv"), &records)?;
    let mut files = vec!["learning_curve.csv".to_string()];
    if let Some(e) = err {
        write_manifest(&dir, "train", config, files)?;
        return Err(e);
    }
    let trainer = trainer.expect("trainer exists when no error");
    trainer.ensemble().save_dir(&dir.join("checkpoint"))?;
    files.push("checkpoint/manifest.json".into());
    write_manifest(&dir, "train", config, files)?;
    Ok(dir)
}

/// Price a checkpoint on `train.test_size` fresh paths (`train.test_seed`).
pub fn run_price(config: &ExperimentConfig, checkpoint: &Path, accuracy: bool) -> Result<(PathBuf, PriceReport)> {
    let dir = prepare(config, "price")?;
    let ens = ValueEnsemble::load_dir(checkpoint)?;
    if (ens.grid().horizon() - config.market.horizon).abs() > 1e-12 {
        return Err(Error::config("checkpoint horizon differs from market.horizon"));
    }
    let grid: TimeGrid = ens.grid().clone();
    let batch = simulate_paths(&config.market, &grid, config.train.test_size, config.train.test_seed)?;
    let oracle = if accuracy { Some(oracle_boundary(config)?) } else { None };
    let report = price_report(
        &ens,
        &batch,
        &config.market,
        config.train.penalty,
        config.train.oracle_price,
        oracle.as_ref().map(|s| s.boundary()),
    )?;
    std::fs::write(dir.join("price.json"), serde_json::to_string_pretty(&report)?)?;
    write_manifest(&dir, "price", config, vec!["price.json".into()])?;
    Ok((dir, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSummary {
    pub price: f64,
    pub penalty: f64,
    pub num_space: usize,
    pub num_time: usize,
    pub max_newton_iters: usize,
    pub residual: f64,
}

/// Price, boundary and value slices under `<out>/oracle`.
pub fn run_oracle(config: &ExperimentConfig) -> Result<(PathBuf, FdSolution)> {
    let dir = prepare(config, "oracle")?;
    let sol = oracle_boundary(config)?;
    let summary = OracleSummary {
        price: sol.price_at(0.0, config.market.x0)?,
        penalty: sol.penalty(),
        num_space: sol.grid().num_space,
        num_time: sol.grid().num_time,
        max_newton_iters: sol.max_newton_iters(),
        residual: sol.residual(),
    };
    std::fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(&summary)?)?;
    let b = sol.boundary();
    write_csv(
        &dir.join("boundary.csv"),
        &["t", "x_f"],
        b.times
            .iter()
            .zip(&b.x_f)
            .filter_map(|(t, x)| x.map(|x| vec![sig17(*t), sig17(x)])),
    )?;
    let mut files = vec!["oracle.json".to_string(), "boundary.csv".to_string()];
    let g = sol.grid();
    for &t in &config.oracle.slice_times {
        let row = ((t / g.dt).round() as usize).min(g.num_time);
        let name = format!("value_row{row:05}.csv");
        write_csv(
            &dir.join(&name),
            &["x", "u"],
            (0..=g.num_space).map(|j| vec![sig17(g.x(j)), sig17(sol.values()[[row, j]])]),
        )?;
        files.push(name);
    }
    write_manifest(&dir, "oracle", config, files)?;
    Ok((dir, sol))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    /// `"ok"` or the error that stopped the cell.
    pub status: String,
    pub last: Option<TrainRecord>,
    /// First evaluated step with stopping-price error at most 5%.
    pub steps_to_5pct: Option<usize>,
}

/// One training run per sweep value with shared seeds and test batch.
pub fn run_sweep(config: &ExperimentConfig, axis: SweepAxis) -> Result<(PathBuf, Vec<SweepCell>)> {
    let (sub, values) = match axis {
        SweepAxis::K => ("sweep_K", config.sweep.k_values.clone()),
        SweepAxis::Lambda => ("sweep_lambda", config.sweep.lambda_values.clone()),
    };
    let dir = prepare(config, sub)?;
    let oracle = oracle_boundary(config)?;
    let ctx = EvalContext::new(&config.market, &config.train, Some(oracle.boundary().clone()))?;
    let mut cells = Vec::with_capacity(values.len());
    let mut files = vec!["sweep.csv".to_string()];
    for v in values {
        let mut cell_cfg = config.clone();
        match axis {
            SweepAxis::K => cell_cfg.train.penalty = v,
            SweepAxis::Lambda => cell_cfg.train.lambda = v,
        }
        log::info!("sweep {sub}: value {v}");
        let (_, records, err) = train_once(&cell_cfg, &ctx);
        let name = format!("curve_{v}.csv");
        write_learning_curve(&dir.join(&name), &records)?;
        files.push(name);
        cells.push(SweepCell {
            value: v,
            status: err.map_or_else(|| "ok".to_string(), |e| e.to_string()),
            steps_to_5pct: records.iter().find(|r| r.rel_err_stopping <= 0.05).map(|r| r.step),
            last: records.last().cloned(),
        });
    }
    write_csv(
        &dir.join("sweep.csv"),
        &[
            "value",
            "status",
            "p_stopping",
            "p_control",
            "rel_err_stopping",
            "rel_err_control",
            "min_accuracy",
            "steps_to_5pct",
        ],
        cells.iter().map(|c| {
            let r = c.last.as_ref();
            vec![
                sig17(c.value),
                c.status.clone(),
                opt_sig17(r.map(|r| r.p_stopping)),
                opt_sig17(r.map(|r| r.p_control)),
                opt_sig17(r.map(|r| r.rel_err_stopping)),
                opt_sig17(r.map(|r| r.rel_err_control)),
                opt_sig17(r.and_then(|r| r.min_accuracy)),
                c.steps_to_5pct.map(|s| s.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    write_manifest(&dir, sub, config, files)?;
    Ok((dir, cells))
}

/// `step,phi,loss` trace under `<out>/calibrate_phi`; returns the reported phi.
pub fn run_calibrate_phi(config: &ExperimentConfig) -> Result<(PathBuf, f64)> {
    config.market.validate()?;
    let dir = config.out_root(None).join("calibrate_phi");
    std::fs::create_dir_all(&dir)?;
    let trace = calibrate_phi(&config.market, &config.train.calibration)?;
    write_csv(
        &dir.join("phi_trace.csv"),
        &["step", "phi", "loss"],
        trace
            .rows
            .iter()
            .map(|r| vec![r.step.to_string(), sig17(r.phi), sig17(r.loss)]),
    )?;
    write_manifest(&dir, "calibrate-phi", config, vec!["phi_trace.csv".into()])?;
    Ok((dir, trace.final_phi()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DynkinDemo {
    pub price: f64,
    pub oracle_price: f64,
    pub max_gap_to_oracle: f64,
    pub upper: f64,
    pub penalty: f64,
    pub lambda: f64,
}

/// Put game with constant upper obstacle on the oracle grid; writes the `t = 0`
/// slices of `w`, `nu`, `mu` and the comparison with the single-obstacle oracle.
pub fn run_dynkin_demo(config: &ExperimentConfig) -> Result<(PathBuf, DynkinDemo)> {
    let dir = prepare(config, "dynkin_demo")?;
    let m = &config.market;
    let d = &config.dynkin;
    let fd_cfg = FdConfig {
        penalty: d.penalty,
        eps: d.eps,
        max_iters: d.max_iters,
        ..config.oracle.fd_config()
    };
    let single = solve(m, &fd_cfg)?;
    let spec = ObstacleSpec::american_put(m.rate, m.sigma, m.strike, d.upper);
    let game = solve_penalized_game(&spec, single.grid(), d.penalty, d.lambda, d.eps, d.max_iters)?;
    let g = single.grid();
    let gap = game
        .values
        .iter()
        .zip(single.values().iter())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    let y0 = m.x0.ln();
    let pos = ((y0 - g.y_min) / g.dy).clamp(0.0, g.num_space as f64);
    let j = (pos.floor() as usize).min(g.num_space - 1);
    let frac = pos - j as f64;
    let price = game.values[[0, j]] * (1.0 - frac) + game.values[[0, j + 1]] * frac;
    let demo = DynkinDemo {
        price,
        oracle_price: single.price_at(0.0, m.x0)?,
        max_gap_to_oracle: gap,
        upper: d.upper,
        penalty: d.penalty,
        lambda: d.lambda,
    };
    write_csv(
        &dir.join("game_t0.csv"),
        &["x", "w", "nu", "mu"],
        (0..=g.num_space).map(|j| {
            vec![
                sig17(g.x(j)),
                sig17(game.values[[0, j]]),
                sig17(game.policies.nu[[0, j]]),
                sig17(game.policies.mu[[0, j]]),
            ]
        }),
    )?;
    std::fs::write(dir.join("dynkin.json"), serde_json::to_string_pretty(&demo)?)?;
    write_manifest(&dir, "dynkin-demo", config, vec!["game_t0.csv".into(), "dynkin.json".into()])?;
    Ok((dir, demo))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ExperimentConfig::from_toml("[train]\nsteps = 5\nmode = \"online_td0\"\n").unwrap();
        assert_eq!(c.train.steps, 5);
        assert_eq!(c.train.mode, TrainMode::OnlineTd0);
        assert_eq!(c.train.batch_size, 1024);
        assert_eq!(c.market, MarketParams::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("[train]\nstepz = 5\n"), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.sweep.k_values.clear();
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("sweep.k_values"));
        let mut c = ExperimentConfig::default();
        c.sweep.k_values = vec![100.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.market.sigma = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("market.sigma"));
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = ExperimentConfig::default();
        let o = Overrides {
            penalty: Some(5.0),
            steps: Some(42),
            mode: Some(ModeArg::OnlineTd0),
            seed: Some(9),
            ..Default::default()
        };
        o.apply(&mut c, &Command::Train { phi: None });
        assert_eq!(c.train.penalty, 5.0);
        assert_eq!(c.train.steps, 42);
        assert_eq!(c.train.seed, 9);
        let mut c = ExperimentConfig::default();
        o.apply(&mut c, &Command::CalibratePhi { phi0: None });
        assert_eq!(c.train.calibration.steps, 42);
        assert_eq!(c.train.steps, 1000);
        let mut c = ExperimentConfig::default();
        o.apply(&mut c, &Command::Oracle);
        assert_eq!((c.oracle.penalty, c.train.penalty), (5.0, 10.0));
    }

    #[test]
    fn command_line_parses() {
        let cli = Cli::try_parse_from(["optstop", "train", "--mode", "online_td0", "--K", "5", "--steps", "3"]).unwrap();
        assert!(matches!(cli.command, Command::Train { .. }));
        assert_eq!(cli.overrides.penalty, Some(5.0));
        let cli = Cli::try_parse_from(["optstop", "sweep", "--axis", "K", "--values", "1,5"]).unwrap();
        match cli.command {
            Command::Sweep { axis, values, .. } => {
                assert_eq!(axis, SweepAxis::K);
                assert_eq!(values, Some(vec![1.0, 5.0]));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["optstop", "train", "--mode", "bogus"]).is_err());
    }
}
