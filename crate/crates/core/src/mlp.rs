//! Small feed-forward networks with batch normalization and hand-written
//! reverse-mode derivatives.
//!
//! Layout for `hidden = [h1, h2]`:
//!
//! ```text
//! BN(d_in) -> Dense(d_in, h1) -> BN(h1) -> ReLU -> Dense(h1, h2) -> BN(h2) -> ReLU
//!          -> Dense(h2, 1) -> BN(1)
//! ```
//!
//! With `batchnorm = false` every `BN` is dropped.
//!
//! # Checkpoint format
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "format": "optstop-mlp",
//!   "version": 1,
//!   "spec":   { "input_dim", "hidden", "batchnorm", "momentum", "eps" },
//!   "params": [ { "shape": [..], "data": [..] }, ... ],   // parameter order below
//!   "running": [ { "mean": [..], "var": [..] }, ... ]     // one per BN site, input first
//! }
//! ```
//!
//! Parameter order: input BN `gamma`, `beta`; then for each dense layer its
//! weight (`fan_in x fan_out`, row-major), bias, and, when batch
//! normalization is on, that site's `gamma`, `beta`. Floats are written with
//! shortest round-trip formatting, so loading reproduces the network bit for
//! bit.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "optstop-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub batchnorm: bool,
    /// Running-statistics momentum.
    pub momentum: f64,
    /// Variance floor inside the normalization.
    pub eps: f64,
}

impl MlpSpec {
    /// Two hidden ReLU layers of width 21 with normalization around them.
    pub fn value_net(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![21, 21],
            batchnorm: true,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BatchNorm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Dense {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

struct BnCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    bn: Option<BnCache>,
    /// Post-normalization pre-activation, for the ReLU mask.
    pre_activation: Option<Array2<f64>>,
}

struct ForwardCache {
    input_bn: Option<BnCache>,
    layers: Vec<LayerCache>,
    batch: usize,
}

/// One value approximator.
pub struct MlpNetwork {
    spec: MlpSpec,
    input_bn: Option<BatchNorm>,
    dense: Vec<Dense>,
    bn: Vec<Option<BatchNorm>>,
    mode: Mode,
    cache: Option<ForwardCache>,
}

impl Clone for MlpNetwork {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            input_bn: self.input_bn.clone(),
            dense: self.dense.clone(),
            bn: self.bn.clone(),
            mode: self.mode,
            cache: None,
        }
    }
}

impl std::fmt::Debug for MlpNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MlpNetwork")
            .field("layer_dims", &self.spec.layer_dims())
            .field("batchnorm", &self.spec.batchnorm)
            .field("mode", &self.mode)
            .finish()
    }
}

/// Parameter gradients, one flat vector per parameter tensor in checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |a, g| a.max(g.abs()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= factor);
    }
}

/// Cache for backward plus the batch mean and variance.
type BnTrace = (BnCache, Array1<f64>, Array1<f64>);

fn bn_forward(
    bn: &BatchNorm,
    x: &Array2<f64>,
    batch_stats: bool,
    eps: f64,
) -> (Array2<f64>, Option<BnTrace>) {
    let width = x.ncols();
    let mut out = x.as_standard_layout().into_owned();
    let gamma = bn.gamma.as_slice().expect("contiguous");
    let beta = bn.beta.as_slice().expect("contiguous");
    if batch_stats {
        let b = x.nrows() as f64;
        let mut normalized = out.clone();
        let data = normalized.as_slice_mut().expect("standard layout");
        let mut mean = vec![0.0; width];
        for row in data.chunks_exact(width) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= b);
        let mut var = vec![0.0; width];
        for row in data.chunks_exact_mut(width) {
            for ((v, m), acc) in row.iter_mut().zip(&mean).zip(var.iter_mut()) {
                *v -= m;
                *acc += *v * *v;
            }
        }
        var.iter_mut().for_each(|v| *v /= b);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let dst = out.as_slice_mut().expect("standard layout");
        for (row, n) in dst.chunks_exact_mut(width).zip(data.chunks_exact_mut(width)) {
            for j in 0..width {
                n[j] *= inv_std[j];
                row[j] = n[j] * gamma[j] + beta[j];
            }
        }
        let cache = BnCache {
            normalized,
            inv_std: Array1::from(inv_std),
        };
        (out, Some((cache, Array1::from(mean), Array1::from(var))))
    } else {
        let scale: Vec<f64> = (0..width)
            .map(|j| gamma[j] / (bn.running_var[j] + eps).sqrt())
            .collect();
        let shift: Vec<f64> = (0..width).map(|j| beta[j] - bn.running_mean[j] * scale[j]).collect();
        for row in out.as_slice_mut().expect("standard layout").chunks_exact_mut(width) {
            for j in 0..width {
                row[j] = row[j] * scale[j] + shift[j];
            }
        }
        (out, None)
    }
}

fn bn_backward(bn: &BatchNorm, cache: &BnCache, dy: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let width = dy.ncols();
    let b = dy.nrows() as f64;
    let mut dx = dy.as_standard_layout().into_owned();
    let g = dx.as_slice_mut().expect("standard layout");
    let n = cache.normalized.as_slice().expect("standard layout");
    let mut dgamma = vec![0.0; width];
    let mut dbeta = vec![0.0; width];
    for (gr, nr) in g.chunks_exact(width).zip(n.chunks_exact(width)) {
        for j in 0..width {
            dgamma[j] += gr[j] * nr[j];
            dbeta[j] += gr[j];
        }
    }
    let coef: Vec<f64> = (0..width).map(|j| bn.gamma[j] * cache.inv_std[j] / b).collect();
    for (gr, nr) in g.chunks_exact_mut(width).zip(n.chunks_exact(width)) {
        for j in 0..width {
            gr[j] = (gr[j] * b - dbeta[j] - nr[j] * dgamma[j]) * coef[j];
        }
    }
    (dx, dgamma, dbeta)
}

fn update_running(bn: &mut BatchNorm, mean: &Array1<f64>, var: &Array1<f64>, batch: usize, momentum: f64) {
    let unbiased = if batch > 1 {
        var * (batch as f64 / (batch as f64 - 1.0))
    } else {
        var.clone()
    };
    bn.running_mean = &bn.running_mean * (1.0 - momentum) + mean * momentum;
    bn.running_var = &bn.running_var * (1.0 - momentum) + &unbiased * momentum;
}

impl MlpNetwork {
    /// Glorot-uniform weights, zero biases, identity normalization.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for d in &mut net.dense {
            let (fan_in, fan_out) = d.weight.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            d.weight.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    /// All weights and biases zero, identity normalization: the zero map.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::config("network input dimension must be positive"));
        }
        if spec.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(spec.eps > 0.0) || !(0.0..=1.0).contains(&spec.momentum) {
            return Err(Error::config("batchnorm eps must be > 0 and momentum in [0, 1]"));
        }
        let dims = spec.layer_dims();
        let dense: Vec<Dense> = dims
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        let bn = dims[1..]
            .iter()
            .map(|&w| spec.batchnorm.then(|| BatchNorm::identity(w)))
            .collect();
        let input_bn = spec.batchnorm.then(|| BatchNorm::identity(spec.input_dim));
        Ok(Self {
            spec,
            input_bn,
            dense,
            bn,
            mode: Mode::Train,
            cache: None,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.cache = None;
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Parameter tensors in checkpoint order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(bn) = &self.input_bn {
            out.push(bn.gamma.as_slice().unwrap());
            out.push(bn.beta.as_slice().unwrap());
        }
        for (d, bn) in self.dense.iter().zip(&self.bn) {
            out.push(d.weight.as_slice().unwrap());
            out.push(d.bias.as_slice().unwrap());
            if let Some(bn) = bn {
                out.push(bn.gamma.as_slice().unwrap());
                out.push(bn.beta.as_slice().unwrap());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(bn) = &mut self.input_bn {
            out.push(bn.gamma.as_slice_mut().unwrap());
            out.push(bn.beta.as_slice_mut().unwrap());
        }
        for (d, bn) in self.dense.iter_mut().zip(self.bn.iter_mut()) {
            out.push(d.weight.as_slice_mut().unwrap());
            out.push(d.bias.as_slice_mut().unwrap());
            if let Some(bn) = bn {
                out.push(bn.gamma.as_slice_mut().unwrap());
                out.push(bn.beta.as_slice_mut().unwrap());
            }
        }
        out
    }

    fn check_input(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::usage(format!(
                "network expects {} input features, got {}",
                self.spec.input_dim,
                inputs.ncols()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(Error::usage("empty input batch"));
        }
        Ok(())
    }

    /// Forward pass in the current mode. In train mode the batch statistics
    /// are used, running statistics are updated and activations are cached
    /// for [`MlpNetwork::backward`].
    pub fn forward(&mut self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&inputs)?;
        match self.mode {
            Mode::Eval => {
                self.cache = None;
                Ok(self.run(inputs, false))
            }
            Mode::Train => {
                if self.spec.batchnorm && inputs.nrows() < 2 {
                    return Err(Error::usage("train-mode forward needs a batch of at least 2 rows"));
                }
                let mut cache = ForwardCache {
                    input_bn: None,
                    layers: Vec::with_capacity(self.dense.len()),
                    batch: inputs.nrows(),
                };
                let mut stats = Vec::new();
                let out = self.run_cached(inputs, &mut cache, &mut stats);
                let momentum = self.spec.momentum;
                let batch = inputs.nrows();
                let sites = self.input_bn.iter_mut().chain(self.bn.iter_mut().flatten());
                for (bn, (mean, var)) in sites.zip(stats.iter()) {
                    update_running(bn, mean, var, batch, momentum);
                }
                self.cache = Some(cache);
                Ok(out)
            }
        }
    }

    /// Eval-mode output; pure and row-independent.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&inputs)?;
        Ok(self.run(inputs, false))
    }

    /// Train-mode arithmetic (batch statistics) without touching running
    /// statistics or the backward cache.
    pub fn predict_batch_stats(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&inputs)?;
        if self.spec.batchnorm && inputs.nrows() < 2 {
            return Err(Error::usage("batch-statistics forward needs at least 2 rows"));
        }
        Ok(self.run(inputs, true))
    }

    fn run(&self, inputs: ArrayView2<f64>, batch_stats: bool) -> Array1<f64> {
        let eps = self.spec.eps;
        let mut h = inputs.to_owned();
        if let Some(bn) = &self.input_bn {
            h = bn_forward(bn, &h, batch_stats, eps).0;
        }
        let last = self.dense.len() - 1;
        for (i, (d, bn)) in self.dense.iter().zip(&self.bn).enumerate() {
            let mut z = h.dot(&d.weight) + &d.bias;
            if let Some(bn) = bn {
                z = bn_forward(bn, &z, batch_stats, eps).0;
            }
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h.column(0).to_owned()
    }

    fn run_cached(
        &self,
        inputs: ArrayView2<f64>,
        cache: &mut ForwardCache,
        stats: &mut Vec<(Array1<f64>, Array1<f64>)>,
    ) -> Array1<f64> {
        let eps = self.spec.eps;
        let mut h = inputs.to_owned();
        if let Some(bn) = &self.input_bn {
            let (out, c) = bn_forward(bn, &h, true, eps);
            let (c, mean, var) = c.expect("batch stats");
            cache.input_bn = Some(c);
            stats.push((mean, var));
            h = out;
        }
        let last = self.dense.len() - 1;
        for (i, (d, bn)) in self.dense.iter().zip(&self.bn).enumerate() {
            let mut z = h.dot(&d.weight) + &d.bias;
            let mut bn_cache = None;
            if let Some(bn) = bn {
                let (out, c) = bn_forward(bn, &z, true, eps);
                let (c, mean, var) = c.expect("batch stats");
                bn_cache = Some(c);
                stats.push((mean, var));
                z = out;
            }
            let pre_activation = if i < last {
                let pre = z.clone();
                z.mapv_inplace(|v| v.max(0.0));
                Some(pre)
            } else {
                None
            };
            cache.layers.push(LayerCache {
                input: h,
                bn: bn_cache,
                pre_activation,
            });
            h = z;
        }
        h.column(0).to_owned()
    }

    /// Gradient of `sum_b output_b * upstream_b` with respect to every
    /// parameter, using the activations of the last train-mode forward pass.
    pub fn backward(&self, upstream: &Array1<f64>) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::usage("backward called without a cached train-mode forward pass"))?;
        if upstream.len() != cache.batch {
            return Err(Error::usage(format!(
                "upstream has {} rows, cached batch has {}",
                upstream.len(),
                cache.batch
            )));
        }
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.dense.len());
        let mut dy = upstream.clone().insert_axis(Axis(1));
        for i in (0..self.dense.len()).rev() {
            let lc = &cache.layers[i];
            if let Some(pre) = &lc.pre_activation {
                dy.zip_mut_with(pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let mut tensors = Vec::with_capacity(4);
            let mut bn_grads = None;
            if let (Some(bn), Some(bc)) = (&self.bn[i], &lc.bn) {
                let (dx, dg, db) = bn_backward(bn, bc, &dy);
                bn_grads = Some((dg, db));
                dy = dx;
            }
            let d = &self.dense[i];
            let dw = lc.input.t().dot(&dy);
            let dbias = dy.sum_axis(Axis(0));
            tensors.push(dw.as_standard_layout().iter().copied().collect());
            tensors.push(dbias.to_vec());
            if let Some((dg, db)) = bn_grads {
                tensors.push(dg);
                tensors.push(db);
            }
            per_layer.push(tensors);
            dy = dy.dot(&d.weight.t());
        }
        let mut out = Vec::new();
        if let (Some(bn), Some(bc)) = (&self.input_bn, &cache.input_bn) {
            let (_, dg, db) = bn_backward(bn, bc, &dy);
            out.push(dg);
            out.push(db);
        }
        for tensors in per_layer.into_iter().rev() {
            out.extend(tensors);
        }
        Ok(Gradients { tensors: out })
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    fn check_grads(&self, grads: &Gradients) -> Result<()> {
        let shapes_match = grads.tensors.len() == self.params().len()
            && grads.tensors.iter().zip(self.params()).all(|(g, p)| g.len() == p.len());
        if !shapes_match {
            return Err(Error::usage("gradient shapes do not match the network"));
        }
        if !grads.is_finite() {
            return Err(Error::Training("non-finite gradient".into()));
        }
        Ok(())
    }

    /// `theta <- theta - lr * grad`. Running statistics are left alone.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !(learning_rate >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        self.check_grads(grads)?;
        for (p, g) in self.params_mut().into_iter().zip(&grads.tensors) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= learning_rate * gv;
            }
        }
        Ok(())
    }

    pub fn adam_step(
        &mut self,
        grads: &Gradients,
        learning_rate: f64,
        state: &mut AdamState,
    ) -> Result<()> {
        if !(learning_rate >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        self.check_grads(grads)?;
        state.ensure_shape(grads);
        state.step += 1;
        let cfg = state.config;
        let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
        let params = self.params_mut();
        for (((p, g), m), v) in params
            .into_iter()
            .zip(&grads.tensors)
            .zip(state.first.iter_mut())
            .zip(state.second.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= learning_rate * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .params()
            .into_iter()
            .zip(self.param_shapes())
            .map(|(p, shape)| TensorRecord {
                shape,
                data: p.to_vec(),
            })
            .collect();
        let running = self
            .input_bn
            .iter()
            .chain(self.bn.iter().flatten())
            .map(|bn| RunningRecord {
                mean: bn.running_mean.to_vec(),
                var: bn.running_var.to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params,
            running,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!("unknown checkpoint format '{}'", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut net = Self::zeros(ck.spec.clone())?;
        let shapes = net.param_shapes();
        if shapes.len() != ck.params.len() {
            return Err(Error::Serde("checkpoint parameter count mismatch".into()));
        }
        for ((dst, shape), rec) in net.params_mut().into_iter().zip(shapes).zip(&ck.params) {
            if rec.shape != shape || rec.data.len() != dst.len() {
                return Err(Error::Serde(format!("tensor shape mismatch: {:?} vs {:?}", rec.shape, shape)));
            }
            dst.copy_from_slice(&rec.data);
        }
        let sites: Vec<&mut BatchNorm> = net.input_bn.iter_mut().chain(net.bn.iter_mut().flatten()).collect();
        if sites.len() != ck.running.len() {
            return Err(Error::Serde("checkpoint running-statistics count mismatch".into()));
        }
        for (bn, rec) in sites.into_iter().zip(&ck.running) {
            if rec.mean.len() != bn.running_mean.len() || rec.var.len() != bn.running_var.len() {
                return Err(Error::Serde("running-statistics width mismatch".into()));
            }
            bn.running_mean = Array1::from(rec.mean.clone());
            bn.running_var = Array1::from(rec.var.clone());
        }
        net.mode = Mode::Eval;
        Ok(net)
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ck)
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        if let Some(bn) = &self.input_bn {
            out.push(vec![bn.gamma.len()]);
            out.push(vec![bn.beta.len()]);
        }
        for (d, bn) in self.dense.iter().zip(&self.bn) {
            out.push(d.weight.shape().to_vec());
            out.push(vec![d.bias.len()]);
            if let Some(bn) = bn {
                out.push(vec![bn.gamma.len()]);
                out.push(vec![bn.beta.len()]);
            }
        }
        out
    }

    /// Running statistics per normalization site, input site first.
    pub fn running_stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.input_bn
            .iter()
            .chain(self.bn.iter().flatten())
            .map(|bn| (bn.running_mean.to_vec(), bn.running_var.to_vec()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningRecord {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: MlpSpec,
    pub params: Vec<TensorRecord>,
    pub running: Vec<RunningRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one network.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn ensure_shape(&mut self, grads: &Gradients) {
        if self.first.len() != grads.tensors.len() {
            self.first = grads.tensors.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
    }
}

/// Optimizer choice plus its per-network state.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn step(&mut self, net: &mut MlpNetwork, grads: &Gradients, learning_rate: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => net.sgd_step(grads, learning_rate),
            Optimizer::Adam(state) => net.adam_step(grads, learning_rate, state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, batchnorm: bool) -> MlpNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec {
            input_dim: 2,
            hidden: vec![5, 4],
            batchnorm,
            momentum: 0.1,
            eps: 1e-5,
        };
        let mut net = MlpNetwork::new(spec, &mut rng).unwrap();
        // non-trivial normalization parameters and biases
        for p in net.params_mut() {
            for v in p.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        net
    }

    fn random_inputs(seed: u64, rows: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, 2), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net = MlpNetwork::zeros(MlpSpec::value_net(2)).unwrap();
        let x = random_inputs(1, 6);
        assert!(net.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
        net.set_mode(Mode::Eval);
        assert!(net.forward(x.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_mode_rejects_single_row() {
        let mut net = random_net(2, true);
        let x = random_inputs(2, 1);
        assert!(matches!(net.forward(x.view()), Err(Error::Usage(_))));
        net.set_mode(Mode::Eval);
        assert!(net.forward(x.view()).is_ok());
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let net = random_net(3, true);
        assert!(matches!(net.backward(&Array1::zeros(4)), Err(Error::Usage(_))));
    }

    #[test]
    fn eval_rows_are_independent() {
        let net = random_net(4, true);
        let x = random_inputs(5, 5);
        let y = net.predict(x.view()).unwrap();
        let dup = ndarray::concatenate![Axis(0), x.view(), x.slice(ndarray::s![2..3, ..])];
        let yd = net.predict(dup.view()).unwrap();
        assert_eq!(yd[5], yd[2]);
        for i in 0..5 {
            assert_eq!(y[i], yd[i]);
        }
    }

    #[test]
    fn eval_matches_unrolled_arithmetic() {
        let mut net = random_net(6, true);
        // move running statistics away from identity
        for _ in 0..3 {
            net.forward(random_inputs(7, 9).view()).unwrap();
        }
        net.set_mode(Mode::Eval);
        let x = random_inputs(8, 4);
        let got = net.predict(x.view()).unwrap();
        let ck = net.to_checkpoint();
        let p: Vec<&Vec<f64>> = ck.params.iter().map(|t| &t.data).collect();
        let r = &ck.running;
        let eps = 1e-5;
        let bn = |v: f64, site: usize, k: usize, g: &Vec<f64>, b: &Vec<f64>| {
            (v - r[site].mean[k]) / (r[site].var[k] + eps).sqrt() * g[k] + b[k]
        };
        for row in 0..4 {
            let x0: Vec<f64> = (0..2).map(|k| bn(x[[row, k]], 0, k, p[0], p[1])).collect();
            // dense 1: weight p[2] (2x5), bias p[3], bn p[4], p[5]
            let mut h1 = [0.0; 5];
            for j in 0..5 {
                let mut z = p[3][j];
                for i in 0..2 {
                    z += x0[i] * p[2][i * 5 + j];
                }
                h1[j] = bn(z, 1, j, p[4], p[5]).max(0.0);
            }
            let mut h2 = [0.0; 4];
            for j in 0..4 {
                let mut z = p[7][j];
                for i in 0..5 {
                    z += h1[i] * p[6][i * 4 + j];
                }
                h2[j] = bn(z, 2, j, p[8], p[9]).max(0.0);
            }
            let mut z = p[11][0];
            for i in 0..4 {
                z += h2[i] * p[10][i];
            }
            let out = bn(z, 3, 0, p[12], p[13]);
            assert!((out - got[row]).abs() <= 1e-12, "{out} vs {}", got[row]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut net = random_net(9, true);
        net.forward(random_inputs(9, 7).view()).unwrap();
        let g = net.backward(&Array1::zeros(7)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_affine_layer_gradient() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![],
            batchnorm: false,
            momentum: 0.1,
            eps: 1e-5,
        };
        let mut net = MlpNetwork::zeros(spec).unwrap();
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]];
        let up = array![0.5, -2.0];
        net.forward(x.view()).unwrap();
        let g = net.backward(&up).unwrap();
        let expected = x.t().dot(&up);
        assert_eq!(g.tensors()[0], expected.to_vec());
        assert_eq!(g.tensors()[1], vec![-1.5]);
    }

    fn finite_difference_check(net: &mut MlpNetwork, x: &Array2<f64>, up: &Array1<f64>) -> f64 {
        net.forward(x.view()).unwrap();
        let grads = net.backward(up).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        for (ti, &len) in shapes.iter().enumerate() {
            for k in 0..len {
                let orig = net.params()[ti][k];
                net.params_mut()[ti][k] = orig + h;
                let fp = net.predict_batch_stats(x.view()).unwrap().dot(up);
                net.params_mut()[ti][k] = orig - h;
                let fm = net.predict_batch_stats(x.view()).unwrap().dot(up);
                net.params_mut()[ti][k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = grads.tensors()[ti][k];
                // parameters whose exact gradient is zero leave only rounding noise in fd
                let err = (fd - an).abs() / (1e-4_f64).max(fd.abs().max(an.abs()));
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..4 {
            for bn in [true, false] {
                let mut net = random_net(100 + seed, bn);
                let x = random_inputs(200 + seed, 8);
                let up = random_inputs(300 + seed, 8).column(0).to_owned();
                let err = finite_difference_check(&mut net, &x, &up);
                assert!(err <= 1e-4, "seed {seed} bn {bn}: rel err {err}");
            }
        }
    }

    #[test]
    fn sgd_examples() {
        let mut net = random_net(11, true);
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.to_vec()).collect();
        let zero = net.zero_gradients();
        net.sgd_step(&zero, 0.1).unwrap();
        let mut ones = net.zero_gradients();
        ones.tensors_mut().iter_mut().flatten().for_each(|g| *g = 1.0);
        net.sgd_step(&ones, 0.0).unwrap();
        let after: Vec<Vec<f64>> = net.params().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);

        let spec = MlpSpec {
            input_dim: 1,
            hidden: vec![],
            batchnorm: false,
            momentum: 0.1,
            eps: 1e-5,
        };
        let mut scalar = MlpNetwork::zeros(spec).unwrap();
        scalar.params_mut()[0][0] = 1.0;
        let mut g = scalar.zero_gradients();
        g.tensors_mut()[0][0] = 2.0;
        scalar.sgd_step(&g, 0.01).unwrap();
        assert!((scalar.params()[0][0] - 0.98).abs() < 1e-15);

        g.tensors_mut()[0][0] = f64::NAN;
        assert!(matches!(scalar.sgd_step(&g, 0.01), Err(Error::Training(_))));
    }

    #[test]
    fn sgd_leaves_running_stats() {
        let mut net = random_net(12, true);
        net.forward(random_inputs(1, 5).view()).unwrap();
        let stats = net.running_stats();
        let g = net.backward(&Array1::ones(5)).unwrap();
        net.sgd_step(&g, 0.1).unwrap();
        assert_eq!(stats, net.running_stats());
    }

    fn scalar_net(theta: f64) -> MlpNetwork {
        let spec = MlpSpec {
            input_dim: 1,
            hidden: vec![],
            batchnorm: false,
            momentum: 0.1,
            eps: 1e-5,
        };
        let mut n = MlpNetwork::zeros(spec).unwrap();
        n.params_mut()[0][0] = theta;
        n
    }

    #[test]
    fn adam_examples() {
        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(AdamConfig::default());
        net.adam_step(&net.zero_gradients(), 0.1, &mut st).unwrap();
        assert_eq!(net.params()[0][0], 1.0);

        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(AdamConfig::default());
        let mut g = net.zero_gradients();
        g.tensors_mut()[0][0] = 3.7;
        net.adam_step(&g, 0.1, &mut st).unwrap();
        assert!((net.params()[0][0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(theta) = theta^2, gradient 2 theta
        let mut net = scalar_net(1.0);
        let mut st = AdamState::new(AdamConfig::default());
        let mut trace = vec![1.0];
        for _ in 0..100 {
            let mut g = net.zero_gradients();
            g.tensors_mut()[0][0] = 2.0 * net.params()[0][0];
            net.adam_step(&g, 0.1, &mut st).unwrap();
            trace.push(net.params()[0][0]);
        }
        // |theta| shrinks steadily over the first phase, ends well below start
        let warm = 5;
        assert!(trace[warm..10].windows(2).all(|w| w[1].abs() < w[0].abs()));
        assert!(trace.last().unwrap().abs() < 0.1, "final {}", trace.last().unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut net = random_net(13, true);
        for s in 0..3 {
            net.forward(random_inputs(s, 6).view()).unwrap();
        }
        net.set_mode(Mode::Eval);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save_json(&path).unwrap();
        let back = MlpNetwork::load_json(&path).unwrap();
        let x = random_inputs(99, 10);
        let a = net.predict(x.view()).unwrap();
        let b = back.predict(x.view()).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }
}
