//! Multi-head Gaussian regressor.
//!
//! A shared feedforward trunk feeds one head per arm. Each head is a hidden
//! layer followed by a two-unit output `(mu, raw)`, with the predicted
//! variance `softplus(raw) + variance_floor`. Training minimizes the mean
//! Gaussian negative log-likelihood of the factual head only; gradients are
//! computed by an explicit reverse pass over the layer stack.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{shuffle, substream};
use crate::sim::{softplus, Observation};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub trunk_widths: Vec<usize>,
    pub activation: Activation,
    pub n_heads: usize,
    pub head_hidden: usize,
    pub variance_floor: f64,
    pub init_seed: u64,
}

impl NetConfig {
    pub fn new(input_dim: usize, n_heads: usize) -> Self {
        Self {
            input_dim,
            trunk_widths: vec![64, 64],
            activation: Activation::Softplus,
            n_heads,
            head_hidden: 32,
            variance_floor: 1e-4,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_heads == 0 || self.head_hidden == 0 {
            return Err(Error::Config("input_dim, n_heads and head_hidden must be >= 1".into()));
        }
        if self.trunk_widths.contains(&0) {
            return Err(Error::Config("trunk widths must be >= 1".into()));
        }
        if !(self.variance_floor.is_finite() && self.variance_floor > 0.0) {
            return Err(Error::Config("variance_floor must be finite and > 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("NetConfig serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn trunk_out(&self) -> usize {
        self.trunk_widths.last().copied().unwrap_or(self.input_dim)
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut fan_in = self.input_dim;
        for &w in &self.trunk_widths {
            n += w * fan_in + w;
            fan_in = w;
        }
        n + self.n_heads * (self.head_hidden * fan_in + self.head_hidden + 2 * self.head_hidden + 2)
    }
}

/// Named slice of the flat parameter vector (row-major `rows x cols`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Dense {
    fn forward(&self, p: &[f64], input: &[f64], out: &mut [f64]) {
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        let b = &p[self.b..self.b + self.n_out];
        for (o, z) in out.iter_mut().enumerate() {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *z = b[o] + row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>();
        }
    }

    /// Accumulates weight/bias gradients and writes the input gradient.
    fn backward(&self, p: &[f64], input: &[f64], dz: &[f64], grad: &mut [f64], d_input: &mut [f64]) {
        d_input.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let base = self.w + o * self.n_in;
            let gw = &mut grad[base..base + self.n_in];
            for (gwi, xi) in gw.iter_mut().zip(input) {
                *gwi += g * xi;
            }
            let row = &p[base..base + self.n_in];
            for (di, wi) in d_input.iter_mut().zip(row) {
                *di += g * wi;
            }
            grad[self.b + o] += g;
        }
    }
}

#[derive(Debug, Clone)]
struct Head {
    hidden: Dense,
    out: Dense,
}

#[derive(Debug, Clone)]
struct Architecture {
    trunk: Vec<Dense>,
    heads: Vec<Head>,
    layout: Vec<TensorSlot>,
    total: usize,
}

impl Architecture {
    fn new(config: &NetConfig) -> Self {
        let mut layout = Vec::new();
        let mut offset = 0;
        let mut dense = |name: String, n_in: usize, n_out: usize| {
            let w = offset;
            layout.push(TensorSlot { name: format!("{name}.weight"), offset, rows: n_out, cols: n_in });
            offset += n_in * n_out;
            let b = offset;
            layout.push(TensorSlot { name: format!("{name}.bias"), offset, rows: n_out, cols: 1 });
            offset += n_out;
            Dense { w, b, n_in, n_out }
        };
        let mut fan_in = config.input_dim;
        let mut trunk = Vec::new();
        for (l, &w) in config.trunk_widths.iter().enumerate() {
            trunk.push(dense(format!("trunk.{l}"), fan_in, w));
            fan_in = w;
        }
        let heads = (0..config.n_heads)
            .map(|h| Head {
                hidden: dense(format!("head.{h}.hidden"), fan_in, config.head_hidden),
                out: dense(format!("head.{h}.out"), config.head_hidden, 2),
            })
            .collect();
        Self { trunk, heads, layout, total: offset }
    }
}

/// Network parameters: config, layout and the flat value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: NetConfig,
    pub layout: Vec<TensorSlot>,
    pub values: Vec<f64>,
}

/// Predicted outcome distribution on the log-lesion scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mu: f64,
    pub var: f64,
}

impl GaussianPrediction {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Raw output bias giving an initial variance of one.
fn unit_variance_bias(floor: f64) -> f64 {
    let target = 1.0 - floor;
    target.exp_m1().ln()
}

pub fn init_params(config: &NetConfig) -> Result<Params> {
    config.validate()?;
    let arch = Architecture::new(config);
    let mut rng = substream(config.init_seed, "net/init", 0);
    let mut values = vec![0.0; arch.total];
    let layers = arch.trunk.iter().chain(arch.heads.iter().flat_map(|h| [&h.hidden, &h.out]));
    for layer in layers {
        let scale = (1.0 / layer.n_in as f64).sqrt();
        for v in &mut values[layer.w..layer.w + layer.n_in * layer.n_out] {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let raw_bias = unit_variance_bias(config.variance_floor);
    for head in &arch.heads {
        values[head.out.b + 1] = raw_bias;
        // small output weights keep the initial variance near one for any input
        for v in &mut values[head.out.w..head.out.w + 2 * head.out.n_in] {
            *v *= 0.1;
        }
    }
    Ok(Params { config: config.clone(), layout: arch.layout, values })
}

/// Reusable activation buffers for one forward/backward pass.
struct Workspace {
    trunk_z: Vec<Vec<f64>>,
    trunk_a: Vec<Vec<f64>>,
    head_z: Vec<f64>,
    head_a: Vec<f64>,
    out: [f64; 2],
    d_a: Vec<Vec<f64>>,
    d_head: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(config: &NetConfig) -> Self {
        let widths = &config.trunk_widths;
        let max_w = widths.iter().copied().chain([config.input_dim, config.head_hidden]).max().unwrap_or(1);
        Self {
            trunk_z: widths.iter().map(|&w| vec![0.0; w]).collect(),
            trunk_a: widths.iter().map(|&w| vec![0.0; w]).collect(),
            head_z: vec![0.0; config.head_hidden],
            head_a: vec![0.0; config.head_hidden],
            out: [0.0; 2],
            d_a: widths.iter().map(|&w| vec![0.0; w]).collect(),
            d_head: vec![0.0; config.head_hidden],
            scratch: vec![0.0; max_w],
        }
    }
}

/// Forward/backward driver bound to one `Params`.
pub struct Network<'p> {
    params: &'p Params,
    arch: Architecture,
}

impl<'p> Network<'p> {
    pub fn new(params: &'p Params) -> Result<Self> {
        params.config.validate()?;
        let arch = Architecture::new(&params.config);
        if arch.total != params.values.len() || arch.layout != params.layout {
            return Err(Error::Config("parameter layout does not match the network config".into()));
        }
        Ok(Self { params, arch })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.params.config.input_dim {
            return Err(Error::Dimension { expected: self.params.config.input_dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn run_trunk(&self, x: &[f64], ws: &mut Workspace) {
        let p = &self.params.values;
        let act = self.params.config.activation;
        for (l, layer) in self.arch.trunk.iter().enumerate() {
            let (before, rest) = ws.trunk_a.split_at_mut(l);
            let input = if l == 0 { x } else { before[l - 1].as_slice() };
            layer.forward(p, input, &mut ws.trunk_z[l]);
            for (a, &z) in rest[0].iter_mut().zip(&ws.trunk_z[l]) {
                *a = act.apply(z);
            }
        }
    }

    fn run_head(&self, h: usize, trunk_out: &[f64], ws: &mut Workspace) -> GaussianPrediction {
        let p = &self.params.values;
        let act = self.params.config.activation;
        let head = &self.arch.heads[h];
        head.hidden.forward(p, trunk_out, &mut ws.head_z);
        for (a, &z) in ws.head_a.iter_mut().zip(&ws.head_z) {
            *a = act.apply(z);
        }
        head.out.forward(p, &ws.head_a, &mut ws.out);
        GaussianPrediction { mu: ws.out[0], var: softplus(ws.out[1]) + self.params.config.variance_floor }
    }

    fn trunk_output<'w>(&self, x: &'w [f64], ws: &'w Workspace) -> &'w [f64] {
        ws.trunk_a.last().map_or(x, |v| v.as_slice())
    }

    /// Predictions of every head for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<GaussianPrediction>> {
        self.check_input(x)?;
        let mut ws = Workspace::new(&self.params.config);
        self.run_trunk(x, &mut ws);
        let trunk = self.trunk_output(x, &ws).to_vec();
        let preds: Vec<_> = (0..self.arch.heads.len()).map(|h| self.run_head(h, &trunk, &mut ws)).collect();
        if preds.iter().any(|p| !p.mu.is_finite() || !p.var.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(preds)
    }

    pub fn predict_all(&self, obs: &[Observation]) -> Result<Vec<Vec<GaussianPrediction>>> {
        obs.iter().map(|o| self.forward(&o.features)).collect()
    }

    fn check_obs(&self, o: &Observation) -> Result<()> {
        self.check_input(&o.features)?;
        if o.treatment >= self.arch.heads.len() {
            return Err(Error::InvalidArgument(format!("treatment {} has no head", o.treatment)));
        }
        if !o.outcome.is_finite() {
            return Err(Error::NonFinite("outcome".into()));
        }
        Ok(())
    }

    /// Mean factual-head NLL over `batch`.
    pub fn batch_nll<'a>(&self, batch: impl IntoIterator<Item = &'a Observation>) -> Result<f64> {
        let mut ws = Workspace::new(&self.params.config);
        let mut total = 0.0;
        let mut n = 0usize;
        for o in batch {
            self.check_obs(o)?;
            self.run_trunk(&o.features, &mut ws);
            let trunk = self.trunk_output(&o.features, &ws).to_vec();
            let pred = self.run_head(o.treatment, &trunk, &mut ws);
            total += nll_loss(&pred, o.outcome)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptySelection("empty batch".into()));
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(mean)
    }

    /// Mean factual-head NLL and its gradient over `batch`.
    pub fn loss_and_grad<'a, I>(&self, batch: I) -> Result<(f64, Vec<f64>)>
    where
        I: IntoIterator<Item = &'a Observation>,
        I::IntoIter: ExactSizeIterator,
    {
        let iter = batch.into_iter();
        let n = iter.len();
        if n == 0 {
            return Err(Error::EmptySelection("empty batch".into()));
        }
        let scale = 1.0 / n as f64;
        let cfg = &self.params.config;
        let p = &self.params.values;
        let act = cfg.activation;
        let mut grad = vec![0.0; p.len()];
        let mut ws = Workspace::new(cfg);
        let mut total = 0.0;
        let mut d_trunk_out = vec![0.0; cfg.trunk_out()];

        for o in iter {
            self.check_obs(o)?;
            let x = &o.features;
            self.run_trunk(x, &mut ws);
            let trunk = self.trunk_output(x, &ws).to_vec();
            let pred = self.run_head(o.treatment, &trunk, &mut ws);
            total += nll_loss(&pred, o.outcome)?;

            let r = o.outcome - pred.mu;
            let d_mu = -r / pred.var;
            let d_var = 0.5 / pred.var - 0.5 * r * r / (pred.var * pred.var);
            let d_out = [scale * d_mu, scale * d_var * sigmoid(ws.out[1])];

            let head = &self.arch.heads[o.treatment];
            head.out.backward(p, &ws.head_a, &d_out, &mut grad, &mut ws.d_head);
            for ((d, &z), &a) in ws.d_head.iter_mut().zip(&ws.head_z).zip(&ws.head_a) {
                *d *= act.derivative(z, a);
            }
            let d_head = ws.d_head.clone();
            head.hidden.backward(p, &trunk, &d_head, &mut grad, &mut d_trunk_out);

            let n_layers = self.arch.trunk.len();
            if n_layers > 0 {
                ws.d_a[n_layers - 1].copy_from_slice(&d_trunk_out);
            }
            for l in (0..n_layers).rev() {
                let mut dz = std::mem::take(&mut ws.d_a[l]);
                for ((d, &z), &a) in dz.iter_mut().zip(&ws.trunk_z[l]).zip(&ws.trunk_a[l]) {
                    *d *= act.derivative(z, a);
                }
                let layer = &self.arch.trunk[l];
                let input: &[f64] = if l == 0 { x } else { &ws.trunk_a[l - 1] };
                let d_input = &mut ws.scratch[..layer.n_in];
                layer.backward(p, input, &dz, &mut grad, d_input);
                if l > 0 {
                    let d_input = ws.scratch[..layer.n_in].to_vec();
                    ws.d_a[l - 1].copy_from_slice(&d_input);
                }
                ws.d_a[l] = dz;
            }
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            let slot = self.params.layout.iter().find(|s| s.range().contains(&i));
            return Err(Error::NonFinite(format!(
                "gradient of {}",
                slot.map_or("unknown tensor", |s| s.name.as_str())
            )));
        }
        Ok((loss, grad))
    }
}

impl Params {
    pub fn network(&self) -> Result<Network<'_>> {
        Network::new(self)
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.layout.iter().find(|s| s.name == name)
    }

    /// Contiguous index range covering every tensor of head `h`.
    pub fn head_range(&self, h: usize) -> Option<std::ops::Range<usize>> {
        let prefix = format!("head.{h}.");
        let slots: Vec<_> = self.layout.iter().filter(|s| s.name.starts_with(&prefix)).collect();
        let start = slots.iter().map(|s| s.offset).min()?;
        let end = slots.iter().map(|s| s.offset + s.len()).max()?;
        Some(start..end)
    }
}

pub fn forward(params: &Params, x: &[f64]) -> Result<Vec<GaussianPrediction>> {
    params.network()?.forward(x)
}

/// Gaussian negative log-likelihood `0.5 ln(2 pi var) + (y - mu)^2 / (2 var)`.
pub fn nll_loss(pred: &GaussianPrediction, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite("target".into()));
    }
    if !(pred.var > 0.0) || !pred.mu.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid prediction {pred:?}")));
    }
    let r = y - pred.mu;
    Ok(0.5 * (LN_2PI + pred.var.ln()) + r * r / (2.0 * pred.var))
}

pub fn grad(params: &Params, batch: &[Observation]) -> Result<Vec<f64>> {
    Ok(params.network()?.loss_and_grad(batch)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adam_betas: (f64, f64),
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 300,
            adam_betas: (0.9, 0.999),
            patience: 30,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("adam_betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, (beta1, beta2): (f64, f64)) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

/// Per-epoch history; epoch 0 is the untrained initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Params,
    pub report: TrainReport,
}

/// Stratified train/validation split of row indices.
pub fn split_train_val(data: &[Observation], n_arms: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = substream(seed, "train/split", 0);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for arm in 0..n_arms {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].treatment == arm).collect();
        shuffle(&mut idx, &mut rng);
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

pub fn train(data: &[Observation], net_config: &NetConfig, train_config: &TrainConfig) -> Result<TrainOutcome> {
    train_config.validate()?;
    net_config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySelection("training data is empty".into()));
    }
    for arm in 0..net_config.n_heads {
        if !data.iter().any(|o| o.treatment == arm) {
            return Err(Error::EmptySelection(format!("arm {arm} has no training samples")));
        }
    }
    let (train_idx, val_idx) = split_train_val(data, net_config.n_heads, train_config.val_fraction, train_config.seed);
    if val_idx.is_empty() {
        return Err(Error::EmptySelection("validation split is empty".into()));
    }
    let mut params = init_params(net_config)?;
    let mut adam = Adam::new(params.values.len(), train_config.learning_rate, train_config.adam_betas);
    let mut shuffle_rng = substream(train_config.seed, "train/shuffle", 0);

    let eval = |p: &Params| -> Result<(f64, f64)> {
        let net = p.network()?;
        Ok((net.batch_nll(train_idx.iter().map(|&i| &data[i]))?, net.batch_nll(val_idx.iter().map(|&i| &data[i]))?))
    };
    let (train_nll, val_nll) = eval(&params)?;
    let mut report = TrainReport {
        epochs: vec![EpochRecord { epoch: 0, train_nll, val_nll }],
        best_epoch: 0,
        best_val_nll: val_nll,
        stopped_early: false,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };
    let mut best = params.clone();
    let mut order = train_idx.clone();

    for epoch in 1..=train_config.max_epochs {
        let diverged = |reason: String, best: &Params, report: &TrainReport| Error::Diverged {
            epoch,
            reason,
            last_finite: Box::new(TrainOutcome { params: best.clone(), report: report.clone() }),
        };
        shuffle(&mut order, &mut shuffle_rng);
        for chunk in order.chunks(train_config.batch_size) {
            let step = params.network()?.loss_and_grad(chunk.iter().map(|&i| &data[i]));
            let (_, g) = step.map_err(|e| diverged(e.to_string(), &best, &report))?;
            adam.step(&mut params.values, &g);
        }
        let (train_nll, val_nll) = eval(&params).map_err(|e| diverged(e.to_string(), &best, &report))?;
        report.epochs.push(EpochRecord { epoch, train_nll, val_nll });
        if val_nll < report.best_val_nll {
            report.best_val_nll = val_nll;
            report.best_epoch = epoch;
            best.values.copy_from_slice(&params.values);
        } else if epoch - report.best_epoch >= train_config.patience {
            report.stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { params: best, report })
}

const BLOB_FORMAT: &str = "uncertain-ite/params";
const BLOB_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamsBlob {
    format: String,
    version: u32,
    config_hash: String,
    config: NetConfig,
    layout: Vec<TensorSlot>,
    values: Vec<f64>,
}

pub fn save_params(params: &Params, path: &Path) -> Result<()> {
    let blob = ParamsBlob {
        format: BLOB_FORMAT.into(),
        version: BLOB_VERSION,
        config_hash: params.config.hash(),
        config: params.config.clone(),
        layout: params.layout.clone(),
        values: params.values.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &blob)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Loads a parameter blob, refusing it unless its config hash matches `expected`.
pub fn load_params(path: &Path, expected: &NetConfig) -> Result<Params> {
    let blob: ParamsBlob = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
    let malformed = |reason: String| Error::Malformed { path: path.to_path_buf(), reason };
    if blob.format != BLOB_FORMAT || blob.version != BLOB_VERSION {
        return Err(malformed(format!("unsupported blob {} v{}", blob.format, blob.version)));
    }
    let expected_hash = expected.hash();
    if blob.config_hash != expected_hash || blob.config.hash() != expected_hash {
        return Err(Error::ConfigHashMismatch { expected: expected_hash, found: blob.config_hash });
    }
    if blob.values.iter().any(|v| !v.is_finite()) {
        return Err(malformed("non-finite parameter".into()));
    }
    let params = Params { config: blob.config, layout: blob.layout, values: blob.values };
    params.network().map_err(|e| malformed(e.to_string()))?;
    Ok(params)
}
