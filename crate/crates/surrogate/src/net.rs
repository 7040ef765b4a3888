//! Dense feed-forward network: ReLU hidden layers, SoftPlus output, mean
//! squared error, Adam mini-batch training with early stopping.
//!
//! Parameters live in one flat vector, layer by layer, each layer as its
//! row-major `n_out x n_in` weight matrix followed by the bias. Inputs are
//! standardised inside the model with constants fitted on the training set,
//! and the SoftPlus output is multiplied by the mean training label.

use std::fs;
use std::path::Path;
use std::time::Instant;

use flmm_core::rng::stream_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::codec::{Decoder, Encoder};
use crate::dataset::{LabeledSample, SampleInput, N_FEATURES};
use crate::error::{Result, SurrogateError};

pub const MODEL_MAGIC: &[u8; 8] = b"FLMMNET1";
pub const MODEL_VERSION: u32 = 1;
pub const METRICS_CSV_HEADER: &str =
    "n,mse,mae,mean_label,mae_rel,residual_mean,residual_sd,residual_mean_se,beyond_3sd,beyond_3sd_frac";
pub const HISTORY_CSV_HEADER: &str = "epoch,train_mse,train_mae,val_mse,val_mae,learning_rate";

const INFERENCE_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub widths: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub rel_tol: f64,
    pub early_stopping: bool,
    /// Training samples per validation sample.
    pub validation_ratio: usize,
    /// Per-epoch multiplicative learning-rate decay (1 = constant).
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            widths: vec![N_FEATURES, 300, 300, 300, 300, 1],
            batch_size: 1024,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_epochs: 1000,
            patience: 20,
            rel_tol: 1e-4,
            early_stopping: true,
            validation_ratio: 100,
            lr_decay: 1.0,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 2 || w.contains(&0) {
            return Err(SurrogateError::config("widths", "need at least two nonzero widths"));
        }
        if w[0] != N_FEATURES || w[w.len() - 1] != 1 {
            return Err(SurrogateError::config(
                "widths",
                format!("input width must be {N_FEATURES} and output width 1, got {w:?}"),
            ));
        }
        if self.batch_size == 0 {
            return Err(SurrogateError::config("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SurrogateError::config("learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(SurrogateError::config("beta", "Adam betas must lie in [0, 1)"));
        }
        if !(self.eps_adam > 0.0) {
            return Err(SurrogateError::config("eps_adam", "must be > 0"));
        }
        if !(self.rel_tol >= 0.0 && self.rel_tol < 1.0) {
            return Err(SurrogateError::config("rel_tol", "must lie in [0, 1)"));
        }
        if self.validation_ratio == 0 {
            return Err(SurrogateError::config("validation_ratio", "must be >= 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(SurrogateError::config("lr_decay", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Row-major feature matrix with its labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Table {
    pub fn from_samples(samples: &[LabeledSample]) -> Self {
        let (x, y) = crate::dataset::design_matrix(samples);
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn check(&self, width: usize, what: &'static str) -> Result<()> {
        if self.is_empty() {
            return Err(SurrogateError::Empty(what));
        }
        if self.x.len() != self.y.len() * width {
            return Err(SurrogateError::Shape(format!(
                "{what}: {} features for {} rows of width {width}",
                self.x.len(),
                self.y.len()
            )));
        }
        Ok(())
    }

    fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in self.x.iter().chain(&self.y) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        // ln(1 + e^z) underflows to 0 below z ~ -745; keep the output positive.
        let v = z.exp().ln_1p();
        if v > 0.0 || z.is_nan() {
            v
        } else {
            f64::MIN_POSITIVE
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Dot product with eight independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `C (m x n) = A (m x k) B (k x n) + beta C` with explicit strides; C is dense row-major.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    pub params: Vec<f64>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Output multiplier: the prediction is `y_scale * softplus(z)`.
    pub y_scale: f64,
}

/// Activations kept for the backward pass.
#[derive(Default)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    z_out: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    /// All parameters zero, identity normalisation.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || widths[widths.len() - 1] != 1 {
            return Err(SurrogateError::Shape(format!("bad layer widths {widths:?}")));
        }
        let n_params = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; n_params],
            shift: vec![0.0; widths[0]],
            scale: vec![1.0; widths[0]],
            y_scale: 1.0,
        })
    }

    /// Uniform fan-in initialisation on `[-sqrt(6/n_in), sqrt(6/n_in)]`, zero biases.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for l in 0..net.n_layers() {
            let limit = (6.0 / net.widths[l] as f64).sqrt();
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Index ranges of the weights and biases of layer `l`.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start: usize = self.widths[..l + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let nw = self.widths[l] * self.widths[l + 1];
        (start..start + nw, start + nw..start + nw + self.widths[l + 1])
    }

    /// Zero-mean, unit-variance standardisation fitted on `x`; constant
    /// features keep scale 1.
    pub fn fit_normalization(&mut self, x: &[f64]) {
        let d = self.n_inputs();
        let n = (x.len() / d) as f64;
        for j in 0..d {
            let col = x.iter().skip(j).step_by(d);
            let mean = col.clone().sum::<f64>() / n;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            self.shift[j] = mean;
            self.scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }

    fn forward_ws(&self, x: &[f64], n: usize, ws: &mut Workspace) {
        let d = self.n_inputs();
        ws.acts.resize_with(self.n_layers(), Vec::new);
        let a0 = &mut ws.acts[0];
        a0.clear();
        a0.extend(
            x.chunks_exact(d)
                .flat_map(|row| row.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| (v - m) / s)),
        );
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let (wr, br) = self.layer_range(l);
            let bias = &self.params[br];
            let mut out = std::mem::take(if l + 1 < self.n_layers() {
                &mut ws.acts[l + 1]
            } else {
                &mut ws.z_out
            });
            out.clear();
            for _ in 0..n {
                out.extend_from_slice(bias);
            }
            if n == 1 {
                let a = &ws.acts[l];
                for (o, row) in out.iter_mut().zip(self.params[wr].chunks_exact(n_in)) {
                    *o += dot(row, a);
                }
            } else {
                gemm(n, n_in, n_out, &ws.acts[l], (n_in, 1), &self.params[wr], (1, n_in), 1.0, &mut out);
            }
            if l + 1 < self.n_layers() {
                for v in &mut out {
                    *v = v.max(0.0);
                }
                ws.acts[l + 1] = out;
            } else {
                ws.z_out = out;
            }
        }
    }

    /// Gradient of the loss with respect to every parameter, given
    /// `dL/dz` at the output pre-activation in `ws.delta`.
    fn backward_ws(&self, ws: &mut Workspace, n: usize, grad: &mut [f64]) {
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let (wr, br) = self.layer_range(l);
            let a_prev = &ws.acts[l];
            gemm(n_out, n, n_in, &ws.delta, (1, n_out), a_prev, (n_in, 1), 0.0, &mut grad[wr.clone()]);
            let gb = &mut grad[br];
            gb.fill(0.0);
            for row in ws.delta.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                ws.delta_prev.clear();
                ws.delta_prev.resize(n * n_in, 0.0);
                gemm(n, n_out, n_in, &ws.delta, (n_out, 1), &self.params[wr], (n_in, 1), 0.0, &mut ws.delta_prev);
                for (d, a) in ws.delta_prev.iter_mut().zip(a_prev) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let d = self.n_inputs();
        if !x.len().is_multiple_of(d) {
            return Err(SurrogateError::Shape(format!("{} values is not a multiple of width {d}", x.len())));
        }
        Ok(x.len() / d)
    }

    /// Predictions for a row-major batch.
    pub fn predict_batch(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let d = self.n_inputs();
        let mut ws = Workspace::default();
        let mut out = Vec::with_capacity(x.len() / d);
        for chunk in x.chunks(INFERENCE_CHUNK * d) {
            self.forward_ws(chunk, chunk.len() / d, &mut ws);
            out.extend(ws.z_out.iter().map(|&z| self.y_scale * softplus(z)));
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_inputs() {
            return Err(SurrogateError::Shape(format!(
                "expected {} features, got {}",
                self.n_inputs(),
                x.len()
            )));
        }
        Ok(self.predict_batch(x)?[0])
    }

    pub fn predict_sample(&self, s: &SampleInput) -> Result<f64> {
        self.predict(&s.features())
    }

    /// Mean squared error on `(x, y)` and its gradient.
    pub fn loss_and_gradient(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.check_input(x)?;
        if n != y.len() || n == 0 {
            return Err(SurrogateError::Shape(format!("{n} rows for {} labels", y.len())));
        }
        let mut ws = Workspace::default();
        let mut grad = vec![0.0; self.n_params()];
        let (sse, _) = self.batch_step(x, y, &mut ws, &mut grad);
        Ok((sse / n as f64, grad))
    }

    /// Forward and backward pass; returns the sums of squared and absolute errors.
    fn batch_step(&self, x: &[f64], y: &[f64], ws: &mut Workspace, grad: &mut [f64]) -> (f64, f64) {
        let n = y.len();
        self.forward_ws(x, n, ws);
        let mut sse = 0.0;
        let mut sae = 0.0;
        ws.delta.clear();
        for (&z, &t) in ws.z_out.iter().zip(y) {
            let e = self.y_scale * softplus(z) - t;
            sse += e * e;
            sae += e.abs();
            ws.delta.push(2.0 * e / n as f64 * self.y_scale * sigmoid(z));
        }
        self.backward_ws(ws, n, grad);
        (sse, sae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Running averages over the mini-batches of the epoch.
    pub train_mse: f64,
    pub train_mae: f64,
    /// NaN when no validation set was given.
    pub val_mse: f64,
    pub val_mae: f64,
    pub learning_rate: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.epoch, self.train_mse, self.train_mae, self.val_mse, self.val_mae, self.learning_rate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    Diverged,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "max-epochs",
            StopReason::EarlyStop => "early-stop",
            StopReason::Diverged => "diverged",
        }
    }

    fn code(&self) -> u32 {
        *self as u32
    }

    fn from_code(c: u32) -> Option<Self> {
        [Self::MaxEpochs, Self::EarlyStop, Self::Diverged].into_iter().find(|s| s.code() == c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: Mlp,
    pub config: NetConfig,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept (0 = initial weights).
    pub best_epoch: usize,
    pub stop: StopReason,
    /// SHA-256 of the training table.
    pub dataset_hash: [u8; 32],
}

impl TrainedModel {
    pub fn predict(&self, s: &SampleInput) -> Result<f64> {
        self.net.predict_sample(s)
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        for r in &self.history {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &NetConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps_adam);
        }
    }
}

/// Mean squared and absolute error of `net` over a table.
fn table_errors(net: &Mlp, t: &Table) -> Result<(f64, f64)> {
    let pred = net.predict_batch(&t.x)?;
    let n = t.len() as f64;
    let (se, ae) = pred
        .iter()
        .zip(&t.y)
        .fold((0.0, 0.0), |(se, ae), (p, y)| (se + (p - y) * (p - y), ae + (p - y).abs()));
    Ok((se / n, ae / n))
}

/// Trains a fresh network. The monitored quantity is the validation MSE
/// when a validation table is given and the epoch's training MSE otherwise.
/// With early stopping the best weights seen are restored at the end.
/// A non-finite loss stops training and returns the last finite weights.
pub fn train(
    data: &Table,
    val: Option<&Table>,
    cfg: &NetConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    cfg.validate()?;
    let d = cfg.widths[0];
    data.check(d, "training set")?;
    if let Some(v) = val {
        v.check(d, "validation set")?;
    }
    let mut init_rng = stream_rng(cfg.seed, 0);
    let mut shuffle_rng = stream_rng(cfg.seed, 1);
    let mut net = Mlp::init(&cfg.widths, &mut init_rng)?;
    net.fit_normalization(&data.x);
    let mean_y = data.y.iter().sum::<f64>() / data.len() as f64;
    if mean_y > 0.0 {
        let (_, br) = net.layer_range(net.n_layers() - 1);
        net.y_scale = mean_y;
        net.params[br.start] = softplus_inv(1.0);
    }

    let mut adam = Adam::new(net.n_params());
    let mut grad = vec![0.0; net.n_params()];
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut xb = Vec::with_capacity(cfg.batch_size * d);
    let mut yb = Vec::with_capacity(cfg.batch_size);

    let mut best_params = net.params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32 - 1);
        let last_good = if cfg.early_stopping { None } else { Some(net.params.clone()) };
        order.shuffle(&mut shuffle_rng);
        let (mut sse, mut sae) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(&data.x[i * d..(i + 1) * d]);
                yb.push(data.y[i]);
            }
            let (s, a) = net.batch_step(&xb, &yb, &mut ws, &mut grad);
            sse += s;
            sae += a;
            if !s.is_finite() {
                break;
            }
            adam.step(&mut net.params, &grad, lr, cfg);
        }
        let n = data.len() as f64;
        let (val_mse, val_mae) = match val {
            Some(v) => table_errors(&net, v)?,
            None => (f64::NAN, f64::NAN),
        };
        let record = EpochRecord {
            epoch,
            train_mse: sse / n,
            train_mae: sae / n,
            val_mse,
            val_mae,
            learning_rate: lr,
        };
        let monitored = if val.is_some() { val_mse } else { record.train_mse };
        if !monitored.is_finite() || !record.train_mse.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            history.push(record);
            on_epoch(&record);
            stop = StopReason::Diverged;
            if let Some(p) = last_good {
                net.params = p;
                best_epoch = epoch - 1;
            }
            break;
        }
        history.push(record);
        on_epoch(&record);
        if monitored < best_loss * (1.0 - cfg.rel_tol) {
            best_loss = monitored;
            best_epoch = epoch;
            since_best = 0;
            if cfg.early_stopping {
                best_params.clone_from(&net.params);
            }
        } else {
            since_best += 1;
            if cfg.early_stopping && since_best >= cfg.patience {
                stop = StopReason::EarlyStop;
                break;
            }
        }
    }
    if cfg.early_stopping {
        net.params = best_params;
    } else if stop != StopReason::Diverged {
        best_epoch = history.len();
    }
    Ok(TrainedModel {
        net,
        config: cfg.clone(),
        history,
        best_epoch,
        stop,
        dataset_hash: data.hash(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub mean_label: f64,
    /// Mean and (population) standard deviation of `prediction - label`.
    pub residual_mean: f64,
    pub residual_sd: f64,
    /// Residuals more than three standard deviations from their mean.
    pub beyond_3sd: usize,
    pub residuals: Vec<f64>,
    pub predictions: Vec<f64>,
    pub seconds: f64,
}

impl Metrics {
    pub fn from_predictions(pred: &[f64], labels: &[f64]) -> Result<Self> {
        if labels.is_empty() {
            return Err(SurrogateError::Empty("evaluation set"));
        }
        if pred.len() != labels.len() {
            return Err(SurrogateError::Shape(format!(
                "{} predictions for {} labels",
                pred.len(),
                labels.len()
            )));
        }
        let n = labels.len() as f64;
        let residuals: Vec<f64> = pred.iter().zip(labels).map(|(p, y)| p - y).collect();
        let mse = residuals.iter().map(|e| e * e).sum::<f64>() / n;
        let mae = residuals.iter().map(|e| e.abs()).sum::<f64>() / n;
        let residual_mean = residuals.iter().sum::<f64>() / n;
        let residual_sd = (residuals.iter().map(|e| (e - residual_mean).powi(2)).sum::<f64>() / n).sqrt();
        let beyond_3sd = residuals
            .iter()
            .filter(|e| (*e - residual_mean).abs() > 3.0 * residual_sd)
            .count();
        Ok(Self {
            n: labels.len(),
            mse,
            mae,
            mean_label: labels.iter().sum::<f64>() / n,
            residual_mean,
            residual_sd,
            beyond_3sd,
            residuals,
            predictions: pred.to_vec(),
            seconds: 0.0,
        })
    }

    pub fn mae_rel(&self) -> f64 {
        self.mae / self.mean_label
    }

    pub fn residual_mean_se(&self) -> f64 {
        if self.n > 1 {
            self.residual_sd * (self.n as f64 / (self.n - 1) as f64).sqrt() / (self.n as f64).sqrt()
        } else {
            f64::INFINITY
        }
    }

    pub fn beyond_3sd_frac(&self) -> f64 {
        self.beyond_3sd as f64 / self.n as f64
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
            self.n,
            self.mse,
            self.mae,
            self.mean_label,
            self.mae_rel(),
            self.residual_mean,
            self.residual_sd,
            self.residual_mean_se(),
            self.beyond_3sd,
            self.beyond_3sd_frac()
        )
    }
}

pub fn evaluate(net: &Mlp, data: &Table) -> Result<Metrics> {
    data.check(net.n_inputs(), "evaluation set")?;
    let clock = Instant::now();
    let pred = net.predict_batch(&data.x)?;
    let seconds = clock.elapsed().as_secs_f64();
    let mut m = Metrics::from_predictions(&pred, &data.y)?;
    m.seconds = seconds;
    Ok(m)
}

pub fn encode_model(m: &TrainedModel) -> Vec<u8> {
    let mut e = Encoder::default();
    let c = &m.config;
    e.bytes(MODEL_MAGIC);
    e.u32(MODEL_VERSION);
    e.u64(c.widths.len() as u64);
    for &w in &c.widths {
        e.u64(w as u64);
    }
    e.u64(c.batch_size as u64);
    e.f64s(&[c.learning_rate, c.beta1, c.beta2, c.eps_adam]);
    e.u64(c.max_epochs as u64);
    e.u64(c.patience as u64);
    e.f64(c.rel_tol);
    e.u64(c.early_stopping as u64);
    e.u64(c.validation_ratio as u64);
    e.f64(c.lr_decay);
    e.u64(c.seed);
    e.bytes(&m.dataset_hash);
    e.u64(m.best_epoch as u64);
    e.u32(m.stop.code());
    e.u64(m.net.widths.len() as u64);
    for &w in &m.net.widths {
        e.u64(w as u64);
    }
    e.f64s(&m.net.shift);
    e.f64s(&m.net.scale);
    e.f64(m.net.y_scale);
    e.f64s(&m.net.params);
    e.u64(m.history.len() as u64);
    for r in &m.history {
        e.u64(r.epoch as u64);
        e.f64s(&[r.train_mse, r.train_mae, r.val_mse, r.val_mae, r.learning_rate]);
    }
    e.buf
}

fn read_widths(d: &mut Decoder) -> Result<Vec<usize>> {
    let n = d.usize()?;
    if n > d.remaining() / 8 {
        return Err(d.corrupt("implausible layer count"));
    }
    (0..n).map(|_| d.usize()).collect()
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    let mut d = Decoder::new(bytes, path);
    if d.take(8)? != MODEL_MAGIC {
        return Err(d.corrupt("bad magic"));
    }
    let version = d.u32()?;
    if version != MODEL_VERSION {
        return Err(SurrogateError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let widths = read_widths(&mut d)?;
    let config = NetConfig {
        widths,
        batch_size: d.usize()?,
        learning_rate: d.f64()?,
        beta1: d.f64()?,
        beta2: d.f64()?,
        eps_adam: d.f64()?,
        max_epochs: d.usize()?,
        patience: d.usize()?,
        rel_tol: d.f64()?,
        early_stopping: d.u64()? != 0,
        validation_ratio: d.usize()?,
        lr_decay: d.f64()?,
        seed: d.u64()?,
    };
    let dataset_hash: [u8; 32] = d.take(32)?.try_into().unwrap();
    let best_epoch = d.usize()?;
    let stop_code = d.u32()?;
    let stop = StopReason::from_code(stop_code).ok_or_else(|| d.corrupt(format!("unknown stop code {stop_code}")))?;
    let net_widths = read_widths(&mut d)?;
    let mut net = Mlp::zeros(&net_widths).map_err(|_| d.corrupt(format!("bad layer widths {net_widths:?}")))?;
    net.shift = d.f64s(net.n_inputs())?;
    net.scale = d.f64s(net.n_inputs())?;
    net.y_scale = d.f64()?;
    net.params = d.f64s(net.n_params())?;
    let n_hist = d.usize()?;
    if n_hist > d.remaining() / 48 {
        return Err(d.corrupt("implausible history length"));
    }
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        history.push(EpochRecord {
            epoch: d.usize()?,
            train_mse: d.f64()?,
            train_mae: d.f64()?,
            val_mse: d.f64()?,
            val_mae: d.f64()?,
            learning_rate: d.f64()?,
        });
    }
    d.finish()?;
    Ok(TrainedModel {
        net,
        config,
        history,
        best_epoch,
        stop,
        dataset_hash,
    })
}

pub fn save_model(m: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(m)).map_err(|e| SurrogateError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| SurrogateError::io(path, e))?;
    decode_model(&bytes, path)
}
