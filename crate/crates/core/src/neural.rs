//! Multilayer perceptron CATE models.
//!
//! The network's scalar output takes the place of `Xᵀθ` in the linear
//! estimator: with a surrogate head it is a loss-scale effect `τ̄(X)`, with
//! a direct-policy head it is a treatment score whose sigmoid (at a fixed
//! temperature) is the smoothed policy. Training is mini-batch SGD with
//! momentum, hand-written backpropagation and early stopping on a
//! validation split. Inputs are z-scored with training statistics.
//!
//! Every random choice (initial weights, split, shuffling, dropout) comes
//! from its own ChaCha8 stream keyed by [`MlpConfig::seed`], so a fixed
//! configuration reproduces its training log bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TransformedDataset;
use crate::error::{Error, Result};
use crate::special::logistic_cdf;
use crate::surrogate::SurrogateSpec;

const STREAM_INIT: u64 = 11;
const STREAM_SPLIT: u64 = 12;
const STREAM_SHUFFLE: u64 = 13;
const STREAM_DROPOUT: u64 = 14;
/// Columns per forward pass at inference.
const PREDICT_CHUNK: usize = 8192;
pub const MIN_TRAIN_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub grad_clip_norm: Option<f64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 64],
            activation: Activation::Relu,
            weight_decay: 1e-3,
            dropout_rate: 0.0,
            grad_clip_norm: Some(10.0),
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            max_epochs: 200,
            early_stop_patience: 20,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_sizes.contains(&0) {
            return fail("hidden layer sizes must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return fail(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.max_epochs == 0 || self.early_stop_patience == 0 {
            return fail("max_epochs and early_stop_patience must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return fail(format!(
                "validation_fraction must be in (0, 0.5], got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectPolicyConfig {
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Start from a least-squares network fitted with the same settings,
    /// shifted so its output is `τ̂(x) − c`.
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
}

fn default_warm_start() -> bool {
    true
}

fn default_temperature() -> f64 {
    0.1
}

impl Default for DirectPolicyConfig {
    fn default() -> Self {
        Self {
            mlp: MlpConfig::default(),
            temperature: default_temperature(),
            warm_start: default_warm_start(),
        }
    }
}

impl DirectPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// What the network output means and how it is scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    Surrogate { spec: SurrogateSpec },
    DirectPolicy { cost: f64, temperature: f64 },
}

impl Head {
    /// Per-row training loss (to be minimized) and its derivative in the
    /// network output.
    pub fn loss_and_grad(&self, out: f64, y_star: f64) -> (f64, f64) {
        match *self {
            Head::Surrogate { spec } => (-spec.loss_q(out, y_star), -spec.dloss(out, y_star)),
            Head::DirectPolicy { cost, temperature } => {
                let s = logistic_cdf(out / temperature);
                let gain = y_star - cost;
                (-s * gain, -s * (1.0 - s) / temperature * gain)
            }
        }
    }

    pub fn is_cate(&self) -> bool {
        matches!(self, Head::Surrogate { .. })
    }

    /// Monetary-scale output. Direct-policy scores are shifted by the
    /// cost so that, like a CATE, they treat exactly when `score ≥ c`.
    pub fn to_external(&self, out: f64) -> f64 {
        match self {
            Head::Surrogate { spec } => spec.to_external(out),
            Head::DirectPolicy { cost, .. } => out + cost,
        }
    }

    pub fn cost(&self) -> f64 {
        match self {
            Head::Surrogate { spec } => spec.cost(),
            Head::DirectPolicy { cost, .. } => *cost,
        }
    }
}

/// One affine map `W a + b`, `W` being outputs × inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRepr {
    inputs: usize,
    outputs: usize,
    /// Row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        Self {
            inputs: l.weights.ncols(),
            outputs: l.weights.nrows(),
            weights: l.weights.transpose().as_slice().to_vec(),
            bias: l.bias.as_slice().to_vec(),
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(r: LayerRepr) -> std::result::Result<Self, String> {
        if r.weights.len() != r.inputs * r.outputs || r.bias.len() != r.outputs {
            return Err(format!(
                "layer {}x{} needs {} weights and {} biases",
                r.outputs,
                r.inputs,
                r.inputs * r.outputs,
                r.outputs
            ));
        }
        if r.weights.iter().chain(&r.bias).any(|v| !v.is_finite()) {
            return Err("layer parameters must be finite".into());
        }
        Ok(Self {
            weights: DMatrix::from_row_slice(r.outputs, r.inputs, &r.weights),
            bias: DVector::from_vec(r.bias),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss, penalty included.
    pub train_obj: f64,
    pub val_obj: f64,
}

pub const TRAINING_LOG_CSV_HEADER: &str = "epoch,train_obj,val_obj";

pub fn write_training_log_csv<W: std::io::Write>(
    mut out: W,
    log: &[EpochLog],
) -> std::io::Result<()> {
    use crate::numfmt::fmt_sig;
    writeln!(out, "{TRAINING_LOG_CSV_HEADER}")?;
    for e in log {
        writeln!(
            out,
            "{},{},{}",
            e.epoch,
            fmt_sig(e.train_obj),
            fmt_sig(e.val_obj)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel {
    pub activation: Activation,
    pub layers: Vec<Layer>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub head: Head,
    pub config: MlpConfig,
    pub training_log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; 0 for the initial weights.
    pub best_epoch: usize,
}

/// Per-layer weight and bias gradients.
type Grads = Vec<(DMatrix<f64>, DVector<f64>)>;

impl MlpModel {
    fn init(inputs: usize, cfg: &MlpConfig, head: Head, rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend(&cfg.hidden_sizes);
        sizes.push(1);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = if l < last && cfg.activation == Activation::Relu {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-bound..bound)
                    }),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self {
            activation: cfg.activation,
            layers,
            input_mean: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
            head,
            config: cfg.clone(),
            training_log: Vec::new(),
            best_epoch: 0,
        }
    }

    pub fn inputs(&self) -> usize {
        self.input_mean.len()
    }

    /// Freshly initialized weights from `cfg.seed`, identity input scaling.
    pub fn untrained(inputs: usize, cfg: &MlpConfig, head: Head) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_INIT);
        Self::init(inputs, cfg, head, &mut rng)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.inputs()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn is_cate(&self) -> bool {
        self.head.is_cate()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights (column-major) first.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(l.bias.as_slice());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Standardized inputs, one column per row of `x`.
    fn standardized_columns(&self, x: &DMatrix<f64>, rows: std::ops::Range<usize>) -> DMatrix<f64> {
        let d = self.inputs();
        DMatrix::from_fn(d, rows.len(), |j, i| {
            (x[(rows.start + i, j)] - self.input_mean[j]) / self.input_scale[j]
        })
    }

    fn affine(layer: &Layer, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &layer.weights * a;
        for mut col in z.column_iter_mut() {
            col += &layer.bias;
        }
        z
    }

    /// Network output for standardized input columns.
    fn forward(&self, xt: &DMatrix<f64>) -> Vec<f64> {
        let mut a = xt.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &a);
            if l < last {
                z.apply(|v| *v = self.activation.apply(*v));
            }
            a = z;
        }
        a.as_slice().to_vec()
    }

    /// Network outputs on the loss scale for raw covariate rows.
    pub fn raw_outputs(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::Dimension {
                expected: self.inputs(),
                got: x.ncols(),
            });
        }
        let n = x.nrows();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            out.extend(self.forward(&self.standardized_columns(x, start..end)));
            start = end;
        }
        Ok(out)
    }

    /// Mean loss over `xt`'s columns and its gradient. Dropout, when
    /// enabled, draws its masks from `dropout`.
    fn loss_grad(
        &self,
        xt: &DMatrix<f64>,
        y: &[f64],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
        weight_decay: f64,
    ) -> (f64, Grads) {
        let b = xt.ncols();
        let last = self.layers.len() - 1;
        // inputs to each layer, after dropout
        let mut inputs: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        // post-activation values before dropout, and the masks, per hidden layer
        let mut hidden: Vec<DMatrix<f64>> = Vec::with_capacity(last);
        let mut masks: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(last);
        let mut dropout = dropout;
        inputs.push(xt.clone());
        for l in 0..last {
            let mut h = Self::affine(&self.layers[l], &inputs[l]);
            h.apply(|v| *v = self.activation.apply(*v));
            let mask = match dropout.as_mut() {
                Some((p, rng)) if *p > 0.0 => {
                    let keep = 1.0 - *p;
                    Some(DMatrix::from_fn(h.nrows(), b, |_, _| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    }))
                }
                _ => None,
            };
            let next = match &mask {
                Some(m) => h.component_mul(m),
                None => h.clone(),
            };
            hidden.push(h);
            masks.push(mask);
            inputs.push(next);
        }
        let out = Self::affine(&self.layers[last], &inputs[last]);

        let mut loss = 0.0;
        let mut delta = DMatrix::zeros(1, b);
        for (j, (&o, &yj)) in out.iter().zip(y).enumerate() {
            let (lj, gj) = self.head.loss_and_grad(o, yj);
            loss += lj;
            delta[(0, j)] = gj / b as f64;
        }
        loss /= b as f64;

        let mut grads: Grads = Vec::with_capacity(self.layers.len());
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let mut gw = &delta * inputs[l].transpose();
            if weight_decay > 0.0 {
                gw += &layer.weights * (2.0 * weight_decay);
            }
            let gb = delta.column_sum();
            if l > 0 {
                let mut back = layer.weights.tr_mul(&delta);
                let h = &hidden[l - 1];
                for (idx, v) in back.iter_mut().enumerate() {
                    *v *= self.activation.derivative_from_output(h[idx]);
                }
                if let Some(m) = &masks[l - 1] {
                    back.component_mul_assign(m);
                }
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        if weight_decay > 0.0 {
            loss += weight_decay
                * self
                    .layers
                    .iter()
                    .map(|l| l.weights.norm_squared())
                    .sum::<f64>();
        }
        (loss, grads)
    }

    /// Mean loss over the whole of `xt` without dropout or penalty.
    fn mean_loss(&self, xt: &DMatrix<f64>, y: &[f64]) -> f64 {
        let out = self.forward(xt);
        out.iter()
            .zip(y)
            .map(|(&o, &yj)| self.head.loss_and_grad(o, yj).0)
            .sum::<f64>()
            / y.len() as f64
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

fn column_stats(x: &DMatrix<f64>, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    (0..x.ncols())
        .map(|j| {
            let mean = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|&i| (x[(i, j)] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        })
        .unzip()
}

fn train(
    td: &TransformedDataset,
    head: Head,
    cfg: &MlpConfig,
    start: Option<Vec<Layer>>,
) -> Result<MlpModel> {
    cfg.validate()?;
    let n = td.len();
    if n < MIN_TRAIN_ROWS {
        return Err(Error::Data(format!(
            "neural training needs at least {MIN_TRAIN_ROWS} rows, got {n}"
        )));
    }
    let stream = |id| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(id);
        r
    };
    let (mut init_rng, mut split_rng, mut shuffle_rng, mut drop_rng) = (
        stream(STREAM_INIT),
        stream(STREAM_SPLIT),
        stream(STREAM_SHUFFLE),
        stream(STREAM_DROPOUT),
    );

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut split_rng);
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let (train_idx, val_idx) = order.split_at(n - n_val);

    let mut model = MlpModel::init(td.ncols(), cfg, head, &mut init_rng);
    if let Some(layers) = start {
        model.layers = layers;
    }
    let (mean, scale) = column_stats(td.x(), train_idx);
    model.input_mean = mean;
    model.input_scale = scale;

    let gather = |idx: &[usize]| -> (DMatrix<f64>, Vec<f64>) {
        let d = td.ncols();
        let xt = DMatrix::from_fn(d, idx.len(), |j, i| {
            (td.x()[(idx[i], j)] - model.input_mean[j]) / model.input_scale[j]
        });
        (xt, idx.iter().map(|&i| td.y_star()[i]).collect())
    };
    let (train_x, train_y) = gather(train_idx);
    let (val_x, val_y) = gather(val_idx);

    let mut velocity: Grads = model
        .layers
        .iter()
        .map(|l| {
            (
                DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                DVector::zeros(l.bias.len()),
            )
        })
        .collect();
    let mut best = model.layers.clone();
    let mut best_val = model.mean_loss(&val_x, &val_y);
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut perm: Vec<usize> = (0..train_idx.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        perm.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in perm.chunks(cfg.batch_size) {
            let xb = train_x.select_columns(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let (loss, mut grads) = model.loss_grad(
                &xb,
                &yb,
                Some((cfg.dropout_rate, &mut drop_rng)),
                cfg.weight_decay,
            );
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if let Some(clip) = cfg.grad_clip_norm {
                let norm = grads
                    .iter()
                    .map(|(w, b)| w.norm_squared() + b.norm_squared())
                    .sum::<f64>()
                    .sqrt();
                if norm > clip {
                    let f = clip / norm;
                    for (w, b) in &mut grads {
                        *w *= f;
                        *b *= f;
                    }
                }
            }
            for ((layer, (vw, vb)), (gw, gb)) in
                model.layers.iter_mut().zip(&mut velocity).zip(&grads)
            {
                *vw *= cfg.momentum;
                *vw += gw;
                *vb *= cfg.momentum;
                *vb += gb;
                layer.weights -= &*vw * cfg.learning_rate;
                layer.bias -= &*vb * cfg.learning_rate;
            }
            epoch_loss += loss;
            batches += 1;
        }
        if !model.all_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let val = model.mean_loss(&val_x, &val_y);
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log.push(EpochLog {
            epoch,
            train_obj: epoch_loss / batches as f64,
            val_obj: val,
        });
        if val < best_val {
            best_val = val;
            best = model.layers.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    model.layers = best;
    model.training_log = log;
    model.best_epoch = best_epoch;
    Ok(model)
}

/// Fits `τ̄(X)` by maximizing the surrogate objective.
pub fn train_surrogate_mlp(
    td: &TransformedDataset,
    spec: &SurrogateSpec,
    cfg: &MlpConfig,
) -> Result<MlpModel> {
    train(td, Head::Surrogate { spec: *spec }, cfg, None)
}

/// Fits a treatment score by maximizing the smoothed policy value
/// `(1/n) Σ sigmoid(s(X_i)/T) (Y*_i − c)`.
pub fn train_direct_policy(
    td: &TransformedDataset,
    c: f64,
    cfg: &DirectPolicyConfig,
) -> Result<MlpModel> {
    cfg.validate()?;
    if !c.is_finite() {
        return Err(Error::Config(format!("cost must be finite, got {c}")));
    }
    let start = if cfg.warm_start {
        let mut ls = train_surrogate_mlp(td, &SurrogateSpec::mse_limit(c)?, &cfg.mlp)?.layers;
        if let Some(out) = ls.last_mut() {
            out.bias[0] -= c;
        }
        Some(ls)
    } else {
        None
    };
    train(
        td,
        Head::DirectPolicy {
            cost: c,
            temperature: cfg.temperature,
        },
        &cfg.mlp,
        start,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPrediction {
    pub values: Vec<f64>,
    /// False for direct-policy scores, which rank and threshold like a
    /// CATE but are not effect estimates.
    pub is_cate: bool,
}

/// Monetary-scale predictions: `σ net(x) + c` for surrogate heads, the
/// cost-shifted score for direct-policy heads.
pub fn predict_mlp(model: &MlpModel, x_new: &DMatrix<f64>) -> Result<MlpPrediction> {
    let raw = model.raw_outputs(x_new)?;
    Ok(MlpPrediction {
        values: raw.into_iter().map(|o| model.head.to_external(o)).collect(),
        is_cate: model.is_cate(),
    })
}

impl MlpModel {
    /// Full-data loss and gradient with dropout disabled, as flat vectors.
    pub fn loss_and_gradient(&self, td: &TransformedDataset) -> Result<(f64, Vec<f64>)> {
        if td.ncols() != self.inputs() {
            return Err(Error::Dimension {
                expected: self.inputs(),
                got: td.ncols(),
            });
        }
        let xt = self.standardized_columns(td.x(), 0..td.len());
        let (loss, grads) = self.loss_grad(&xt, td.y_star(), None, self.config.weight_decay);
        let mut flat = Vec::with_capacity(self.n_params());
        for (w, b) in &grads {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b.as_slice());
        }
        Ok((loss, flat))
    }
}
