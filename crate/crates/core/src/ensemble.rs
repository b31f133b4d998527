//! One network per decision time plus the exact terminal value.
//!
//! Network `l` outputs `w_l = V_l - g(t_l, .)`, so `V_l = w_l + g` and the
//! execution rule is `stop iff w_l <= 0`. At `l = L` the value is the payoff
//! itself and no network is consulted.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::TimeGrid;
use crate::mlp::{MlpNetwork, MlpSpec, Mode};
use crate::policy::ValueFunction;
use crate::premium::Payoff;

pub const MANIFEST_FORMAT: &str = "optstop-ensemble";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    RawState,
    #[default]
    StatePlusPayoff,
}

impl FeatureMode {
    pub fn input_dim(self) -> usize {
        match self {
            FeatureMode::RawState => 1,
            FeatureMode::StatePlusPayoff => 2,
        }
    }
}

/// Per-feature affine map `z = (f - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column statistics of `features`; a (near) constant column keeps scale 1.
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows() as f64;
        let mut mean = Vec::with_capacity(features.ncols());
        let mut scale = Vec::with_capacity(features.ncols());
        for col in features.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            scale.push(if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn encode(&self, features: &mut Array2<f64>) {
        for (k, mut col) in features.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[k], self.scale[k]);
            col.mapv_inplace(|v| (v - m) / s);
        }
    }

    pub fn decode(&self, features: &mut Array2<f64>) {
        for (k, mut col) in features.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[k], self.scale[k]);
            col.mapv_inplace(|v| v * s + m);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValueEnsemble {
    networks: Vec<MlpNetwork>,
    payoff: Payoff,
    grid: TimeGrid,
    feature_mode: FeatureMode,
    standardizer: Standardizer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    grid: TimeGrid,
    feature_mode: FeatureMode,
    standardizer: Standardizer,
    payoff: Payoff,
    networks: Vec<String>,
}

impl ValueEnsemble {
    pub fn new<R: Rng + ?Sized>(
        grid: TimeGrid,
        payoff: Payoff,
        feature_mode: FeatureMode,
        spec: &MlpSpec,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_spec(spec, feature_mode)?;
        let networks = (0..grid.num_intervals())
            .map(|l| MlpNetwork::new(Self::slot_spec(l, spec), rng))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(networks, grid, payoff, feature_mode)
    }

    /// Every network is the zero map, so `V = g` everywhere.
    pub fn zeros(grid: TimeGrid, payoff: Payoff, feature_mode: FeatureMode, spec: &MlpSpec) -> Result<Self> {
        Self::check_spec(spec, feature_mode)?;
        let networks = (0..grid.num_intervals())
            .map(|l| MlpNetwork::zeros(Self::slot_spec(l, spec)))
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(networks, grid, payoff, feature_mode)
    }

    /// Every path starts at `x0`, so the `t_0` network only ever sees one
    /// input point. Batch statistics of a constant batch have zero variance and
    /// eval mode would divide running-mean lag by `sqrt(eps)` at each site, so
    /// that slot is built without batchnorm.
    fn slot_spec(l: usize, spec: &MlpSpec) -> MlpSpec {
        MlpSpec {
            batchnorm: spec.batchnorm && l > 0,
            ..spec.clone()
        }
    }

    fn check_spec(spec: &MlpSpec, feature_mode: FeatureMode) -> Result<()> {
        if spec.input_dim != feature_mode.input_dim() {
            return Err(Error::config(format!(
                "network input_dim {} does not match feature mode {:?}",
                spec.input_dim, feature_mode
            )));
        }
        Ok(())
    }

    fn assemble(networks: Vec<MlpNetwork>, grid: TimeGrid, payoff: Payoff, feature_mode: FeatureMode) -> Result<Self> {
        payoff.validate()?;
        Ok(Self {
            networks,
            payoff,
            grid,
            feature_mode,
            standardizer: Standardizer::identity(feature_mode.input_dim()),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn payoff_fn(&self) -> &Payoff {
        &self.payoff
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.feature_mode
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) -> Result<()> {
        let dim = self.feature_mode.input_dim();
        if s.mean.len() != dim || s.scale.len() != dim || s.scale.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::usage("standardizer does not match the feature dimension"));
        }
        self.standardizer = s;
        Ok(())
    }

    pub fn network(&self, l: usize) -> &MlpNetwork {
        &self.networks[l]
    }

    pub fn network_mut(&mut self, l: usize) -> &mut MlpNetwork {
        &mut self.networks[l]
    }

    pub fn networks_mut(&mut self) -> &mut [MlpNetwork] {
        &mut self.networks
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.networks.iter_mut().for_each(|n| n.set_mode(mode));
    }

    fn check_index(&self, l: usize) -> Result<()> {
        if l > self.grid.num_intervals() {
            return Err(Error::usage(format!(
                "time index {l} out of range 0..={}",
                self.grid.num_intervals()
            )));
        }
        Ok(())
    }

    pub fn payoff_at(&self, l: usize, x: ArrayView1<f64>) -> Array1<f64> {
        let t = self.grid.time(l);
        x.mapv(|x| self.payoff.value(t, x))
    }

    /// Unstandardized network inputs for time index `l`.
    pub fn raw_features(&self, l: usize, x: ArrayView1<f64>) -> Array2<f64> {
        match self.feature_mode {
            FeatureMode::RawState => x.to_owned().insert_axis(ndarray::Axis(1)),
            FeatureMode::StatePlusPayoff => {
                let g = self.payoff_at(l, x);
                ndarray::stack![ndarray::Axis(1), x, g]
            }
        }
    }

    pub fn features(&self, l: usize, x: ArrayView1<f64>) -> Array2<f64> {
        let mut f = self.raw_features(l, x);
        self.standardizer.encode(&mut f);
        f
    }

    /// Same as [`ValueEnsemble::features`] with the payoff column already at hand.
    pub fn features_with_payoff(&self, x: ArrayView1<f64>, g: ArrayView1<f64>) -> Array2<f64> {
        let mut f = match self.feature_mode {
            FeatureMode::RawState => x.to_owned().insert_axis(ndarray::Axis(1)),
            FeatureMode::StatePlusPayoff => ndarray::stack![ndarray::Axis(1), x, g],
        };
        self.standardizer.encode(&mut f);
        f
    }

    /// Raw network output `w_l`; zero at `l = L`.
    pub fn evaluate_w(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_index(l)?;
        if l == self.grid.num_intervals() {
            return Ok(Array1::zeros(x.len()));
        }
        self.networks[l].predict(self.features(l, x).view())
    }

    /// `V_l = w_l + g(t_l, .)`; the payoff exactly at `l = L`.
    pub fn evaluate_value(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_index(l)?;
        if l == self.grid.num_intervals() {
            return Ok(self.payoff_at(l, x));
        }
        Ok(self.evaluate_w(l, x)? + self.payoff_at(l, x))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::with_capacity(self.networks.len());
        for (l, net) in self.networks.iter().enumerate() {
            let name = format!("net_{l:03}.json");
            net.save_json(&dir.join(&name))?;
            names.push(name);
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            grid: self.grid.clone(),
            feature_mode: self.feature_mode,
            standardizer: self.standardizer.clone(),
            payoff: self.payoff,
            networks: names,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Serde(format!("unsupported ensemble manifest {} v{}", m.format, m.version)));
        }
        if m.networks.len() != m.grid.num_intervals() {
            return Err(Error::Serde("manifest lists the wrong number of networks".into()));
        }
        let networks = m
            .networks
            .iter()
            .map(|name| MlpNetwork::load_json(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Self::assemble(networks, m.grid, m.payoff, m.feature_mode)?;
        ens.set_standardizer(m.standardizer)?;
        Ok(ens)
    }
}

impl ValueFunction for ValueEnsemble {
    fn value(&self, l: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.evaluate_value(l, x)
    }

    fn payoff(&self, l: usize, x: ArrayView1<f64>) -> Array1<f64> {
        self.payoff_at(l, x)
    }
}
