//! One-dimensional convolutional forecaster trained online.
//!
//! Input is an `X×F` window of normalised tuples (time-major), output is the
//! next `Y` tuples flattened to `Y·F` values. Convolutions are valid
//! cross-correlations along time with all features as input channels; each
//! convolution is followed by a rectifier and an optional non-overlapping
//! max-pool. Dense layers follow; the final layer (dense, or convolution when
//! there are no dense layers) is linear.
//!
//! All parameters live in one flat buffer so that gradients, momentum and
//! checkpoints share a single layout: for every layer, weights then biases.
//! Convolution weights are laid out `[filter][tap][channel]`, dense weights
//! `[out][in]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::telemetry::{History, Matrix, NormStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Max-pool window; 1 disables pooling.
    #[serde(default = "one")]
    pub pool: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_slots: usize,
    pub features: usize,
    pub output_slots: usize,
    pub conv: Vec<ConvLayer>,
    /// Dense widths including the output layer.
    pub dense: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Conv {
        in_len: usize,
        in_ch: usize,
        out_len: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        pool: usize,
        pooled_len: usize,
        w_off: usize,
        b_off: usize,
        last: bool,
    },
    Dense {
        input: usize,
        output: usize,
        w_off: usize,
        b_off: usize,
        last: bool,
    },
}

impl Layer {
    fn param_range(&self) -> (usize, usize, usize) {
        match *self {
            Layer::Conv {
                in_ch,
                filters,
                kernel,
                w_off,
                ..
            } => (w_off, filters * kernel * in_ch, filters),
            Layer::Dense {
                input, output, w_off, ..
            } => (w_off, input * output, output),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            Layer::Conv {
                in_ch, filters, kernel, ..
            } => (kernel * in_ch, kernel * filters),
            Layer::Dense { input, output, .. } => (input, output),
        }
    }
}

impl Architecture {
    pub fn output_len(&self) -> usize {
        self.output_slots * self.features
    }

    pub fn input_len(&self) -> usize {
        self.input_slots * self.features
    }

    fn plan(&self) -> Result<Vec<Layer>> {
        if self.input_slots == 0 || self.features == 0 || self.output_slots == 0 {
            return Err(SimError::Shape("input and output dimensions must be >= 1".into()));
        }
        let mut layers = Vec::new();
        let mut len = self.input_slots;
        let mut ch = self.features;
        let mut off = 0;
        let n_layers = self.conv.len() + self.dense.len();
        for (i, c) in self.conv.iter().enumerate() {
            if c.filters == 0 || c.kernel == 0 || c.stride == 0 || c.pool == 0 {
                return Err(SimError::Shape(format!("conv layer {i}: all sizes must be >= 1")));
            }
            if c.kernel > len {
                return Err(SimError::Shape(format!(
                    "conv layer {i}: kernel {} exceeds temporal length {len}",
                    c.kernel
                )));
            }
            let out_len = (len - c.kernel) / c.stride + 1;
            let pooled_len = out_len / c.pool;
            if pooled_len == 0 {
                return Err(SimError::Shape(format!(
                    "conv layer {i}: pool {} exceeds temporal length {out_len}",
                    c.pool
                )));
            }
            let w_off = off;
            let b_off = w_off + c.filters * c.kernel * ch;
            off = b_off + c.filters;
            layers.push(Layer::Conv {
                in_len: len,
                in_ch: ch,
                out_len,
                filters: c.filters,
                kernel: c.kernel,
                stride: c.stride,
                pool: c.pool,
                pooled_len,
                w_off,
                b_off,
                last: i + 1 == n_layers,
            });
            len = pooled_len;
            ch = c.filters;
        }
        let mut width = len * ch;
        for (i, &d) in self.dense.iter().enumerate() {
            if d == 0 {
                return Err(SimError::Shape(format!("dense layer {i}: width must be >= 1")));
            }
            let w_off = off;
            let b_off = w_off + d * width;
            off = b_off + d;
            layers.push(Layer::Dense {
                input: width,
                output: d,
                w_off,
                b_off,
                last: self.conv.len() + i + 1 == n_layers,
            });
            width = d;
        }
        if width != self.output_len() {
            return Err(SimError::Shape(format!(
                "network produces {width} outputs, expected Y·F = {}",
                self.output_len()
            )));
        }
        Ok(layers)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Total number of trainable values (M).
    pub fn param_count(&self) -> Result<usize> {
        let plan = self.plan()?;
        Ok(plan.last().map_or(0, |l| match *l {
            Layer::Conv { b_off, filters, .. } => b_off + filters,
            Layer::Dense { b_off, output, .. } => b_off + output,
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    layers: Vec<Layer>,
    pub params: Vec<f64>,
    pub velocity: Vec<f64>,
    pub step: u64,
}

/// Intermediate values kept for backpropagation.
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    /// Pool winners (index into the activated conv output) per layer.
    argmax: Vec<Vec<usize>>,
    output: Vec<f64>,
}

#[inline]
/// `gw += d·x` and `gx += d·w` over equal-length slices.
fn axpy2(d: f64, x: &[f64], gw: &mut [f64], w: &[f64], gx: &mut [f64]) {
    let n = x.len();
    let (gw, w, gx) = (&mut gw[..n], &w[..n], &mut gx[..n]);
    for i in 0..n {
        gw[i] += d * x[i];
        gx[i] += d * w[i];
    }
}

/// False if any value is NaN or infinite.
fn all_finite(xs: &[f64]) -> bool {
    // x·0 is 0 for finite x and NaN otherwise
    let mut acc = [0.0; 8];
    let chunks = xs.chunks_exact(8);
    let tail_ok = chunks.remainder().iter().all(|v| v.is_finite());
    for c in chunks {
        for k in 0..8 {
            acc[k] += c[k] * 0.0;
        }
    }
    tail_ok && acc.iter().all(|&a| a == 0.0)
}

/// Eight independent partial sums so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 8];
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

impl Model {
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let layers = arch.plan()?;
        let m = arch.param_count()?;
        let mut params = vec![0.0; m];
        for layer in &layers {
            let (w_off, w_len, _) = layer.param_range();
            let (fan_in, fan_out) = layer.fans();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params[w_off..w_off + w_len] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            arch,
            layers,
            velocity: vec![0.0; m],
            params,
            step: 0,
        })
    }

    /// Rebuilds a model from stored tensors.
    pub fn from_parts(arch: Architecture, params: Vec<f64>, velocity: Vec<f64>, step: u64) -> Result<Self> {
        let layers = arch.plan()?;
        let m = arch.param_count()?;
        if params.len() != m || velocity.len() != m {
            return Err(SimError::Shape(format!(
                "architecture needs {m} parameters, got {} / {}",
                params.len(),
                velocity.len()
            )));
        }
        Ok(Self {
            arch,
            layers,
            params,
            velocity,
            step,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.params) && all_finite(&self.velocity)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input_len() {
            return Err(SimError::Shape(format!(
                "input has {} values, expected {}",
                input.len(),
                self.arch.input_len()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn run(&self, input: &[f64], keep: bool) -> Trace {
        let mut trace = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
            argmax: Vec::new(),
            output: Vec::new(),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let (next, pre, winners) = match *layer {
                Layer::Conv {
                    in_ch,
                    out_len,
                    filters,
                    kernel,
                    stride,
                    pool,
                    pooled_len,
                    w_off,
                    b_off,
                    last,
                    ..
                } => {
                    let span = kernel * in_ch;
                    let w = &self.params[w_off..b_off];
                    let b = &self.params[b_off..b_off + filters];
                    let mut z = vec![0.0; out_len * filters];
                    for o in 0..out_len {
                        let window = &x[o * stride * in_ch..o * stride * in_ch + span];
                        for f in 0..filters {
                            z[o * filters + f] = b[f] + dot(&w[f * span..(f + 1) * span], window);
                        }
                    }
                    let a: Vec<f64> = if last {
                        z.clone()
                    } else {
                        z.iter().map(|&v| v.max(0.0)).collect()
                    };
                    if pool == 1 {
                        (a, z, Vec::new())
                    } else {
                        let mut p = vec![0.0; pooled_len * filters];
                        let mut idx = vec![0usize; pooled_len * filters];
                        for q in 0..pooled_len {
                            for f in 0..filters {
                                let mut best = (q * pool) * filters + f;
                                for j in 1..pool {
                                    let cand = (q * pool + j) * filters + f;
                                    if a[cand] > a[best] {
                                        best = cand;
                                    }
                                }
                                p[q * filters + f] = a[best];
                                idx[q * filters + f] = best;
                            }
                        }
                        (p, z, idx)
                    }
                }
                Layer::Dense {
                    input: n_in,
                    output: n_out,
                    w_off,
                    b_off,
                    last,
                } => {
                    let w = &self.params[w_off..b_off];
                    let b = &self.params[b_off..b_off + n_out];
                    let z: Vec<f64> = (0..n_out)
                        .map(|o| b[o] + dot(&w[o * n_in..(o + 1) * n_in], &x))
                        .collect();
                    let a = if last {
                        z.clone()
                    } else {
                        z.iter().map(|&v| v.max(0.0)).collect()
                    };
                    (a, z, Vec::new())
                }
            };
            if keep {
                trace.inputs.push(std::mem::replace(&mut x, next));
                trace.pre.push(pre);
                trace.argmax.push(winners);
            } else {
                x = next;
            }
        }
        trace.output = x;
        trace
    }

    /// Network output for one normalised, flattened `X×F` window.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input, false).output)
    }

    /// Loss and exact gradient of the mean squared error for one sample.
    pub fn backward(&self, input: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(input)?;
        if target.len() != self.arch.output_len() {
            return Err(SimError::Shape(format!(
                "target has {} values, expected {}",
                target.len(),
                self.arch.output_len()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let loss = self.gradient_into(input, target, &mut grads)?;
        Ok((loss, grads))
    }

    /// Same as [`Model::backward`] but overwrites a caller-owned buffer.
    fn gradient_into(&self, input: &[f64], target: &[f64], grads: &mut [f64]) -> Result<f64> {
        grads.fill(0.0);
        let trace = self.run(input, true);
        let loss = mse(&trace.output, target)?;
        let n = target.len() as f64;
        let mut g: Vec<f64> = trace
            .output
            .iter()
            .zip(target)
            .map(|(p, t)| 2.0 * (p - t) / n)
            .collect();

        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[li];
            let z = &trace.pre[li];
            match *layer {
                Layer::Conv {
                    in_len,
                    in_ch,
                    out_len,
                    filters,
                    kernel,
                    stride,
                    pool,
                    w_off,
                    b_off,
                    last,
                    ..
                } => {
                    let mut gz = if pool == 1 {
                        g
                    } else {
                        let mut ga = vec![0.0; out_len * filters];
                        for (&src, &gv) in trace.argmax[li].iter().zip(&g) {
                            ga[src] += gv;
                        }
                        ga
                    };
                    if !last {
                        for (gv, &zv) in gz.iter_mut().zip(z) {
                            if zv <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                    }
                    let span = kernel * in_ch;
                    let mut gx = vec![0.0; in_len * in_ch];
                    let (gw, rest) = grads[w_off..].split_at_mut(b_off - w_off);
                    let gb = &mut rest[..filters];
                    let w = &self.params[w_off..b_off];
                    for o in 0..out_len {
                        let base = o * stride * in_ch;
                        let window = &x[base..base + span];
                        for f in 0..filters {
                            let d = gz[o * filters + f];
                            if d == 0.0 {
                                continue;
                            }
                            gb[f] += d;
                            axpy2(
                                d,
                                window,
                                &mut gw[f * span..(f + 1) * span],
                                &w[f * span..(f + 1) * span],
                                &mut gx[base..base + span],
                            );
                        }
                    }
                    g = gx;
                }
                Layer::Dense {
                    input: n_in,
                    output: n_out,
                    w_off,
                    b_off,
                    last,
                } => {
                    let mut gz = g;
                    if !last {
                        for (gv, &zv) in gz.iter_mut().zip(z) {
                            if zv <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                    }
                    let mut gx = vec![0.0; n_in];
                    let (gw, rest) = grads[w_off..].split_at_mut(b_off - w_off);
                    let gb = &mut rest[..n_out];
                    let w = &self.params[w_off..b_off];
                    for o in 0..n_out {
                        let d = gz[o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        axpy2(
                            d,
                            x,
                            &mut gw[o * n_in..(o + 1) * n_in],
                            &w[o * n_in..(o + 1) * n_in],
                            &mut gx,
                        );
                    }
                    g = gx;
                }
            }
        }
        Ok(loss)
    }

    /// Momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`.
    pub fn sgd_step(&mut self, grads: &[f64], lr: f64, momentum: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(SimError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        if !all_finite(grads) {
            return Err(SimError::NonFinite("gradient".into()));
        }
        for ((p, v), &g) in self.params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = momentum * *v + g;
            // decaying momentum of inactive units would otherwise sit in
            // subnormal range, where arithmetic is very slow
            if v.abs() < f64::MIN_POSITIVE {
                *v = 0.0;
            }
            *p -= lr * *v;
        }
        self.step += 1;
        Ok(())
    }
}

/// Mean squared error over all entries.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(SimError::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

/// Forecast of a user's next `Y` tuples in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub user_id: u64,
    /// Slot at which the forecast was issued; row `k` forecasts slot `made_at_slot + k`.
    pub made_at_slot: u64,
    pub values: Matrix,
}

impl Prediction {
    pub fn rssi(&self, step: usize, ap: usize) -> f64 {
        self.values.get(step, 2 + ap)
    }
}

/// Forecast for the slots following the newest stored tuple.
pub fn predict_user(
    model: &Model,
    stats: &NormStats,
    history: &History,
    made_at_slot: u64,
) -> Result<Option<Prediction>> {
    let arch = model.arch();
    let Some(window) = history.input_window(arch.input_slots) else {
        return Ok(None);
    };
    if !stats.is_ready() {
        return Ok(None);
    }
    let z = stats.normalize(&window)?;
    let out = model.forward(z.as_slice())?;
    let out = Matrix::from_vec(arch.output_slots, arch.features, out)?;
    Ok(Some(Prediction {
        user_id: history.user_id,
        made_at_slot,
        values: stats.denormalize(&out)?,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainReport {
    pub trained: usize,
    pub mean_loss: Option<f64>,
    /// Updates skipped because the gradient was not finite.
    pub rejected: usize,
}

/// One backward pass and update per user with a complete delayed-label pair,
/// in the order the histories are given.
pub fn online_train_step<'a>(
    model: &mut Model,
    stats: &NormStats,
    histories: impl IntoIterator<Item = &'a History>,
    lr: f64,
    momentum: f64,
) -> Result<TrainReport> {
    let (x, y) = (model.arch().input_slots, model.arch().output_slots);
    let mut report = TrainReport::default();
    if !stats.is_ready() {
        return Ok(report);
    }
    let mut loss_sum = 0.0;
    let mut grads = vec![0.0; model.param_count()];
    for h in histories {
        let Some(pair) = h.training_pair(x, y) else {
            continue;
        };
        let input = stats.normalize(&pair.input)?;
        let target = stats.normalize(&pair.target)?;
        model.check_input(input.as_slice())?;
        let loss = model.gradient_into(input.as_slice(), target.as_slice(), &mut grads)?;
        match model.sgd_step(&grads, lr, momentum) {
            Ok(()) => {
                report.trained += 1;
                loss_sum += loss;
            }
            Err(SimError::NonFinite(_)) => report.rejected += 1,
            Err(e) => return Err(e),
        }
    }
    if report.trained > 0 {
        report.mean_loss = Some(loss_sum / report.trained as f64);
    }
    Ok(report)
}
