//! Training: SGD with separate main/lambda parameter groups, initialization,
//! losses, a finite-difference gradient checker, and metric/histogram
//! recording.
//!
//! The lambda group (the eigenvalue diagonals) starts at zero and trains with
//! its own, smaller learning rate; everything else is the main group.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::layers::{Mode, ParamKind};
use crate::network::net::Network;
use crate::network::{ConvParams, Layer, NeuronKind};
use crate::neurons::{quad_backward, quad_forward, QuadNeuronParams};
use crate::numerics::{Rng, Tensor};

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_lr_lambda() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    10
}

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_main: f64,
    #[serde(default = "default_lr_lambda")]
    pub lr_lambda: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// (epoch, multiplier) pairs; multipliers compound from their epoch on.
    #[serde(default)]
    pub schedule: Vec<(usize, f64)>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Exempt the lambda group from weight decay (ablation flag).
    #[serde(default)]
    pub exempt_lambda_wd: bool,
    /// Global-norm gradient clip threshold; off when absent.
    #[serde(default)]
    pub clip_global_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_main: 0.1,
            lr_lambda: default_lr_lambda(),
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            schedule: Vec::new(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            exempt_lambda_wd: false,
            clip_global_norm: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_main > 0.0 && self.lr_lambda > 0.0) {
            return Err(Error::Domain("learning rates must be positive".into()));
        }
        if self.lr_lambda > self.lr_main {
            return Err(Error::Domain("lr_lambda must not exceed lr_main".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain("momentum must lie in [0,1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Domain("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Domain("batch size and epochs must be positive".into()));
        }
        for &(_, m) in &self.schedule {
            if m <= 0.0 {
                return Err(Error::Domain("schedule multipliers must be positive".into()));
            }
        }
        Ok(())
    }

    /// Cumulative schedule multiplier in force at `epoch`.
    pub fn schedule_multiplier(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .map(|(_, m)| m)
            .product()
    }

    pub fn lr_at(&self, kind: ParamKind, epoch: usize) -> f64 {
        let base = match kind {
            ParamKind::Main => self.lr_main,
            ParamKind::Lambda => self.lr_lambda,
        };
        base * self.schedule_multiplier(epoch)
    }
}

/// One SGD-with-momentum update for a flat parameter buffer.
pub fn sgd_update(
    data: &mut [f64],
    grad: &[f64],
    mom_buf: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for i in 0..data.len() {
        let g = grad[i] + weight_decay * data[i];
        mom_buf[i] = momentum * mom_buf[i] + g;
        data[i] -= lr * mom_buf[i];
    }
}

/// Applies one optimizer step over the whole network for the given epoch.
/// A NaN gradient aborts with an instability error before any mutation.
pub fn sgd_step(net: &mut Network, cfg: &OptimConfig, epoch: usize) -> Result<()> {
    let mut bad: Option<String> = None;
    let mut sq_norm = 0.0;
    net.visit_params(&mut |slot| {
        for g in slot.grad.iter() {
            if !g.is_finite() {
                bad.get_or_insert_with(|| slot.name.clone());
            }
            sq_norm += g * g;
        }
    });
    if let Some(name) = bad {
        return Err(Error::Instability(format!(
            "non-finite gradient in {name}"
        )));
    }
    let clip_scale = match cfg.clip_global_norm {
        Some(limit) if sq_norm.sqrt() > limit => limit / sq_norm.sqrt(),
        _ => 1.0,
    };
    net.visit_params(&mut |slot| {
        let lr = cfg.lr_at(slot.kind, epoch);
        let wd = if slot.kind == ParamKind::Lambda && cfg.exempt_lambda_wd {
            0.0
        } else {
            cfg.weight_decay
        };
        if clip_scale != 1.0 {
            for g in slot.grad.iter_mut() {
                *g *= clip_scale;
            }
        }
        sgd_update(slot.data, slot.grad, slot.mom, lr, cfg.momentum, wd);
    });
    Ok(())
}

/// He-style initialization: conv/dense weights drawn normal with std
/// sqrt(2/fan_in); lambdas and biases zero; batchnorm affine at identity.
///
/// Quadratic conv layers draw in output-channel order (w row, then the k
/// direction rows, per neuron) so that the same seed produces bit-identical
/// weights in a width-matched linear network.
pub fn init_params(net: &mut Network, rng: &mut Rng) {
    for layer in net.layers.iter_mut() {
        match layer {
            Layer::Conv(l) => {
                let n = l.n;
                let std = (2.0 / n as f64).sqrt();
                match &mut l.params {
                    ConvParams::Linear { w, .. } => {
                        for v in w.iter_mut() {
                            *v = std * rng.normal();
                        }
                    }
                    ConvParams::Quad { q, w, fw, .. } => {
                        let k = l.k;
                        for j in 0..l.m {
                            for v in &mut w[j * n..(j + 1) * n] {
                                *v = std * rng.normal();
                            }
                            for v in &mut q[j * k * n..(j + 1) * k * n] {
                                *v = std * rng.normal();
                            }
                        }
                        for v in fw.iter_mut() {
                            *v = std * rng.normal();
                        }
                    }
                    ConvParams::Product { w1, w2, w3, .. } => {
                        for c in 0..l.spec.out_channels {
                            for buf in [&mut *w1, &mut *w2, &mut *w3] {
                                for v in &mut buf[c * n..(c + 1) * n] {
                                    *v = std * rng.normal();
                                }
                            }
                        }
                    }
                }
            }
            Layer::Dense(l) => {
                let std = (2.0 / l.in_features as f64).sqrt();
                for v in l.w.iter_mut() {
                    *v = std * rng.normal();
                }
            }
            _ => {}
        }
    }
}

/// Mean cross-entropy over a batch of logits `[N, C]`, with the gradient.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::Shape(format!(
            "cross entropy: logits {:?} with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (nb, c) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = Tensor::zeros(&[nb, c]);
    let mut loss = 0.0;
    for s in 0..nb {
        if labels[s] >= c {
            return Err(Error::Domain(format!(
                "label {} out of range for {c} classes",
                labels[s]
            )));
        }
        let row = &logits.data()[s * c..(s + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[labels[s]];
        for j in 0..c {
            let softmax = (row[j] - max).exp() / sum_exp;
            grad.data_mut()[s * c + j] =
                (softmax - f64::from(u8::from(j == labels[s]))) / nb as f64;
        }
    }
    Ok((loss / nb as f64, grad))
}

/// Fraction of rows whose argmax (first maximum wins) equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (nb, c) = (logits.shape()[0], logits.shape()[1]);
    let mut hits = 0;
    for s in 0..nb {
        let row = &logits.data()[s * c..(s + 1) * c];
        let mut best = 0;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        hits += usize::from(best == labels[s]);
    }
    hits as f64 / nb.max(1) as f64
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a sigmoid of the pre-activation, in the stable
/// log-sum-exp form. Returns (loss, dloss/dy).
pub fn bce_with_logit(y: f64, label: usize) -> (f64, f64) {
    let t = label as f64;
    let loss = y.max(0.0) - y * t + (-y.abs()).exp().ln_1p();
    (loss, sigmoid(y) - t)
}

const GRAD_CHECK_MAX_PARAMS: usize = 10_000;

/// Central-difference gradient check of every parameter coordinate against
/// the analytic backward pass. Returns (max relative error, tensor name).
pub fn grad_check(
    net: &mut Network,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
) -> Result<(f64, String)> {
    let per_tensor = grad_check_tensors(net, x, labels, eps)?;
    let mut worst = 0.0;
    let mut worst_name = String::from("none");
    for (name, err) in per_tensor {
        if err >= worst {
            worst = err;
            worst_name = name;
        }
    }
    Ok((worst, worst_name))
}

/// Per-tensor maxima of the central-difference gradient check.
pub fn grad_check_tensors(
    net: &mut Network,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
) -> Result<Vec<(String, f64)>> {
    if eps <= 0.0 {
        return Err(Error::Domain("gradient check needs eps > 0".into()));
    }
    let total = net.param_count();
    if total > GRAD_CHECK_MAX_PARAMS {
        return Err(Error::Domain(format!(
            "network has {total} parameters; gradient check is limited to {GRAD_CHECK_MAX_PARAMS}"
        )));
    }
    // Analytic pass.
    let logits = net.forward(x, Mode::Train)?;
    let (_, grad_logits) = cross_entropy(&logits, labels)?;
    net.zero_grads();
    net.backward(&grad_logits)?;
    let mut names: Vec<String> = Vec::new();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    net.visit_params(&mut |slot| {
        names.push(slot.name.clone());
        analytic.push(slot.grad.clone());
    });

    let loss_at = |net: &mut Network| -> Result<f64> {
        let logits = net.forward(x, Mode::Train)?;
        Ok(cross_entropy(&logits, labels)?.0)
    };
    let mut out = Vec::with_capacity(names.len());
    for (vi, grads) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for idx in 0..grads.len() {
            let bump = |net: &mut Network, delta: f64| {
                let mut count = 0;
                net.visit_params(&mut |slot| {
                    if count == vi {
                        slot.data[idx] += delta;
                    }
                    count += 1;
                });
            };
            bump(net, eps);
            let up = loss_at(net)?;
            bump(net, -2.0 * eps);
            let dn = loss_at(net)?;
            bump(net, eps);
            let numeric = (up - dn) / (2.0 * eps);
            let a = grads[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((names[vi].clone(), worst));
    }
    Ok(out)
}

pub const HISTOGRAM_BINS: usize = 64;

/// CSV header for histogram files.
pub const HISTOGRAM_HEADER: &str = "epoch,layer,kind,bin,lo,hi,count";

/// 64 uniform bins over the observed value range, one CSV row per bin.
pub fn histogram_rows(epoch: usize, layer: &str, kind: &str, values: &[f64]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if values.is_empty() {
        return String::new();
    }
    // Degenerate range: a single bin around the constant value.
    let width = if hi > lo {
        (hi - lo) / HISTOGRAM_BINS as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &v in values {
        let mut bin = ((v - lo) / width) as usize;
        if bin >= HISTOGRAM_BINS {
            bin = HISTOGRAM_BINS - 1;
        }
        counts[bin] += 1;
    }
    let mut out = String::new();
    for (bin, count) in counts.iter().enumerate() {
        out.push_str(&format!(
            "{epoch},{layer},{kind},{bin},{},{},{count}\n",
            lo + bin as f64 * width,
            lo + (bin + 1) as f64 * width,
        ));
    }
    out
}

/// Histograms of every quadratic conv layer's lambda and w values.
pub fn record_histograms(net: &mut Network, epoch: usize) -> String {
    let mut out = String::new();
    net.visit_params(&mut |slot| {
        if let Some(layer) = slot.name.strip_suffix(".lam") {
            out.push_str(&histogram_rows(epoch, layer, "lambda", slot.data));
        } else if let Some(layer) = slot.name.strip_suffix(".w") {
            if layer.starts_with("conv") {
                out.push_str(&histogram_rows(epoch, layer, "weight", slot.data));
            }
        }
    });
    out
}

/// CSV header for metrics files.
pub const METRICS_HEADER: &str = "epoch,step,split,loss,accuracy,lr_main,lr_lambda";

fn metrics_row(
    epoch: usize,
    step: usize,
    split: &str,
    loss: f64,
    acc: f64,
    cfg: &OptimConfig,
) -> String {
    format!(
        "{epoch},{step},{split},{loss:.12},{acc:.6},{},{}\n",
        cfg.lr_at(ParamKind::Main, epoch),
        cfg.lr_at(ParamKind::Lambda, epoch)
    )
}

/// Training loop output: CSV bodies plus the final test accuracy.
pub struct TrainOutcome {
    pub metrics_csv: String,
    pub histogram_csv: String,
    pub final_test_accuracy: f64,
}

/// Evaluates mean loss and accuracy over a split in evaluation mode.
pub fn evaluate(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut hits = 0.0;
    let mut seen = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch_size).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = data.batch(&idx)?;
        let labels = data.batch_labels(&idx);
        let logits = net.forward(&x, Mode::Eval)?;
        let (loss, _) = cross_entropy(&logits, &labels)?;
        loss_sum += loss * idx.len() as f64;
        hits += accuracy(&logits, &labels) * idx.len() as f64;
        seen += idx.len();
        start = end;
    }
    if seen == 0 {
        return Err(Error::Domain("cannot evaluate an empty split".into()));
    }
    Ok((loss_sum / seen as f64, hits / seen as f64))
}

/// Runs the full training loop, recording one train and one test metrics row
/// per epoch and lambda/weight histograms at epoch 0 and after every epoch.
pub fn train(
    net: &mut Network,
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &OptimConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let mut hist = String::from(HISTOGRAM_HEADER);
    hist.push('\n');
    hist.push_str(&record_histograms(net, 0));

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut step = 0usize;
    let mut final_acc = 0.0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // Batchnorm statistics need at least two samples.
            if chunk.len() < 2 {
                continue;
            }
            let x = train_data.batch(chunk)?;
            let labels = train_data.batch_labels(chunk);
            let logits = net.forward(&x, Mode::Train)?;
            let (loss, grad) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Instability(format!(
                    "non-finite loss at epoch {epoch} step {step}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            acc_sum += accuracy(&logits, &labels) * chunk.len() as f64;
            seen += chunk.len();
            net.zero_grads();
            net.backward(&grad)?;
            sgd_step(net, cfg, epoch)?;
            step += 1;
        }
        if seen == 0 {
            return Err(Error::Domain("training split too small for batch size".into()));
        }
        metrics.push_str(&metrics_row(
            epoch,
            step,
            "train",
            loss_sum / seen as f64,
            acc_sum / seen as f64,
            cfg,
        ));
        let (test_loss, test_acc) = evaluate(net, test_data, cfg.batch_size)?;
        metrics.push_str(&metrics_row(epoch, step, "test", test_loss, test_acc, cfg));
        hist.push_str(&record_histograms(net, epoch + 1));
        final_acc = test_acc;
    }
    Ok(TrainOutcome {
        metrics_csv: metrics,
        histogram_csv: hist,
        final_test_accuracy: final_acc,
    })
}

/// A single neuron with a sigmoid head for the 2-D binary tasks.
pub enum SingleNeuron {
    Quad {
        p: QuadNeuronParams,
        mom: QuadMomentum,
    },
    Linear {
        w: Vec<f64>,
        b: f64,
        mw: Vec<f64>,
        mb: f64,
    },
}

pub struct QuadMomentum {
    pub qk: Vec<f64>,
    pub lam: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

impl SingleNeuron {
    pub fn new(kind: NeuronKind, n: usize, rng: &mut Rng) -> Result<SingleNeuron> {
        let std = (2.0 / n as f64).sqrt();
        match kind {
            NeuronKind::Quadratic { k } => {
                if k == 0 || k > n {
                    return Err(Error::Domain(format!(
                        "single-neuron rank k={k} invalid for n={n}"
                    )));
                }
                let w: Vec<f64> = (0..n).map(|_| std * rng.normal()).collect();
                let qk =
                    Tensor::from_fn(&[n, k], |_| std * rng.normal())?;
                Ok(SingleNeuron::Quad {
                    p: QuadNeuronParams {
                        qk,
                        lam: vec![0.0; k],
                        w,
                        b: 0.0,
                        k,
                    },
                    mom: QuadMomentum {
                        qk: vec![0.0; n * k],
                        lam: vec![0.0; k],
                        w: vec![0.0; n],
                        b: 0.0,
                    },
                })
            }
            NeuronKind::Linear => Ok(SingleNeuron::Linear {
                w: (0..n).map(|_| std * rng.normal()).collect(),
                b: 0.0,
                mw: vec![0.0; n],
                mb: 0.0,
            }),
            NeuronKind::Product => Err(Error::Domain(
                "single-neuron training supports linear and quadratic kinds".into(),
            )),
        }
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        match self {
            SingleNeuron::Quad { p, .. } => Ok(quad_forward(p, x)?.0),
            SingleNeuron::Linear { w, b, .. } => {
                Ok(crate::neurons::linear_forward(
                    &crate::neurons::LinearNeuronParams {
                        w: w.clone(),
                        b: *b,
                    },
                    x,
                )?)
            }
        }
    }

    pub fn lambda_values(&self) -> &[f64] {
        match self {
            SingleNeuron::Quad { p, .. } => &p.lam,
            SingleNeuron::Linear { .. } => &[],
        }
    }
}

/// Accuracy of the sigmoid-thresholded single neuron on a 2-class split.
pub fn single_neuron_accuracy(model: &SingleNeuron, data: &Dataset) -> Result<f64> {
    let size = data.sample_size();
    let mut hits = 0usize;
    for i in 0..data.len() {
        let y = model.logit(&data.x[i * size..(i + 1) * size])?;
        hits += usize::from(usize::from(y > 0.0) == data.labels[i]);
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Minibatch SGD on a single neuron for a fixed number of steps. Returns the
/// outcome with one metrics row per 100 steps plus histograms at start/end.
pub fn train_single_neuron(
    model: &mut SingleNeuron,
    train_data: &Dataset,
    test_data: &Dataset,
    steps: usize,
    cfg: &OptimConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.classes != 2 {
        return Err(Error::Domain("single-neuron training is binary only".into()));
    }
    let size = train_data.sample_size();
    let mut metrics = String::from(METRICS_HEADER);
    metrics.push('\n');
    let mut hist = String::from(HISTOGRAM_HEADER);
    hist.push('\n');
    hist.push_str(&histogram_rows(0, "neuron", "lambda", model.lambda_values()));

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut cursor = order.len();
    for step in 0..steps {
        // Epoch-style reshuffle when the pool runs dry.
        if cursor + cfg.batch_size > order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let chunk = &order[cursor..cursor + cfg.batch_size.min(order.len())];
        cursor += cfg.batch_size;
        let bs = chunk.len() as f64;
        let mut loss_sum = 0.0;
        match model {
            SingleNeuron::Quad { p, mom } => {
                let n = p.w.len();
                let k = p.k;
                let mut gqk = vec![0.0; n * k];
                let mut glam = vec![0.0; k];
                let mut gw = vec![0.0; n];
                let mut gb = 0.0;
                for &i in chunk {
                    let x = &train_data.x[i * size..(i + 1) * size];
                    let (y, _f) = quad_forward(p, x)?;
                    let (loss, gy) = bce_with_logit(y, train_data.labels[i]);
                    loss_sum += loss;
                    let (_, grads) = quad_backward(p, x, gy / bs, &vec![0.0; k])?;
                    for j in 0..n * k {
                        gqk[j] += grads.qk.data()[j];
                    }
                    for j in 0..k {
                        glam[j] += grads.lam[j];
                    }
                    for j in 0..n {
                        gw[j] += grads.w[j];
                    }
                    gb += grads.b;
                }
                if glam.iter().chain(gqk.iter()).any(|g| !g.is_finite()) {
                    return Err(Error::Instability(format!(
                        "non-finite gradient at step {step}"
                    )));
                }
                let lr_main = cfg.lr_at(ParamKind::Main, 0);
                let lr_lam = cfg.lr_at(ParamKind::Lambda, 0);
                sgd_update(
                    p.qk.data_mut(),
                    &gqk,
                    &mut mom.qk,
                    lr_main,
                    cfg.momentum,
                    cfg.weight_decay,
                );
                let lam_wd = if cfg.exempt_lambda_wd {
                    0.0
                } else {
                    cfg.weight_decay
                };
                sgd_update(&mut p.lam, &glam, &mut mom.lam, lr_lam, cfg.momentum, lam_wd);
                sgd_update(
                    &mut p.w,
                    &gw,
                    &mut mom.w,
                    lr_main,
                    cfg.momentum,
                    cfg.weight_decay,
                );
                let g = gb + cfg.weight_decay * p.b;
                mom.b = cfg.momentum * mom.b + g;
                p.b -= lr_main * mom.b;
            }
            SingleNeuron::Linear { w, b, mw, mb } => {
                let n = w.len();
                let mut gw = vec![0.0; n];
                let mut gb = 0.0;
                for &i in chunk {
                    let x = &train_data.x[i * size..(i + 1) * size];
                    let y: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + *b;
                    let (loss, gy) = bce_with_logit(y, train_data.labels[i]);
                    loss_sum += loss;
                    for j in 0..n {
                        gw[j] += gy / bs * x[j];
                    }
                    gb += gy / bs;
                }
                let lr = cfg.lr_at(ParamKind::Main, 0);
                sgd_update(w, &gw, mw, lr, cfg.momentum, cfg.weight_decay);
                let g = gb + cfg.weight_decay * *b;
                *mb = cfg.momentum * *mb + g;
                *b -= lr * *mb;
            }
        }
        if step % 100 == 0 || step + 1 == steps {
            let acc = single_neuron_accuracy(model, train_data)?;
            metrics.push_str(&metrics_row(0, step, "train", loss_sum / bs, acc, cfg));
        }
    }
    let final_acc = single_neuron_accuracy(model, test_data)?;
    metrics.push_str(&metrics_row(0, steps, "test", 0.0, final_acc, cfg));
    hist.push_str(&histogram_rows(1, "neuron", "lambda", model.lambda_values()));
    Ok(TrainOutcome {
        metrics_csv: metrics,
        histogram_csv: hist,
        final_test_accuracy: final_acc,
    })
}
