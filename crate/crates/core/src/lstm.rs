//! Single-layer LSTM with inverted dropout on the final hidden state and a
//! sigmoid dense head, trained with Adam on binary cross-entropy.
//!
//! Parameters live in one flat vector laid out as
//! `[W (4H×I) | U (4H×H) | b (4H) | w (H) | b_out]`, with gate rows ordered
//! i, f, g, o. This keeps the optimizer, gradient check and checkpoint code
//! independent of the network shape.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::features::{FlatSample, CONTINUOUS_SLOTS, N_FEATURES};

const CHECKPOINT_MAGIC: &str = "delirium-risk-lstm";
const CHECKPOINT_VERSION: u32 = 1;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

    fn offset(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    input_size: usize,
    hidden_size: usize,
    data: Vec<f64>,
}

impl LstmParams {
    pub fn n_params(input_size: usize, hidden_size: usize) -> usize {
        4 * hidden_size * (input_size + hidden_size + 1) + hidden_size + 1
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            data: vec![0.0; Self::n_params(input_size, hidden_size)],
        }
    }

    pub fn from_vec(input_size: usize, hidden_size: usize, data: Vec<f64>) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::InvalidParameter("LSTM sizes must be positive".into()));
        }
        if data.len() != Self::n_params(input_size, hidden_size) {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters for input {input_size} / hidden {hidden_size}, got {}",
                Self::n_params(input_size, hidden_size),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite LSTM parameter".into()));
        }
        Ok(Self {
            input_size,
            hidden_size,
            data,
        })
    }

    /// Uniform(−s, s) with s = 1/√H, forget-gate bias set to 1.
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (hidden_size as f64).sqrt();
        let dist = Uniform::new_inclusive(-s, s);
        let mut p = Self::zeros(input_size, hidden_size);
        for v in &mut p.data {
            *v = dist.sample(rng);
        }
        p.gate_bias_mut(Gate::Forget).fill(1.0);
        p
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn u_offset(&self) -> usize {
        4 * self.hidden_size * self.input_size
    }

    fn b_offset(&self) -> usize {
        self.u_offset() + 4 * self.hidden_size * self.hidden_size
    }

    fn w_offset(&self) -> usize {
        self.b_offset() + 4 * self.hidden_size
    }

    /// Input weights of one gate, H rows of length I.
    pub fn gate_input_weights(&self, g: Gate) -> &[f64] {
        let n = self.hidden_size * self.input_size;
        &self.data[g.offset() * n..(g.offset() + 1) * n]
    }

    pub fn gate_input_weights_mut(&mut self, g: Gate) -> &mut [f64] {
        let n = self.hidden_size * self.input_size;
        &mut self.data[g.offset() * n..(g.offset() + 1) * n]
    }

    /// Recurrent weights of one gate, H rows of length H.
    pub fn gate_recurrent_weights(&self, g: Gate) -> &[f64] {
        let n = self.hidden_size * self.hidden_size;
        let o = self.u_offset() + g.offset() * n;
        &self.data[o..o + n]
    }

    pub fn gate_recurrent_weights_mut(&mut self, g: Gate) -> &mut [f64] {
        let n = self.hidden_size * self.hidden_size;
        let o = self.u_offset() + g.offset() * n;
        &mut self.data[o..o + n]
    }

    pub fn gate_bias(&self, g: Gate) -> &[f64] {
        let o = self.b_offset() + g.offset() * self.hidden_size;
        &self.data[o..o + self.hidden_size]
    }

    pub fn gate_bias_mut(&mut self, g: Gate) -> &mut [f64] {
        let o = self.b_offset() + g.offset() * self.hidden_size;
        &mut self.data[o..o + self.hidden_size]
    }

    pub fn dense_weights(&self) -> &[f64] {
        let o = self.w_offset();
        &self.data[o..o + self.hidden_size]
    }

    pub fn dense_weights_mut(&mut self) -> &mut [f64] {
        let o = self.w_offset();
        &mut self.data[o..o + self.hidden_size]
    }

    pub fn dense_bias(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn set_dense_bias(&mut self, b: f64) {
        let n = self.data.len();
        self.data[n - 1] = b;
    }
}

// ── Forward / backward ──────────────────────────────────────────────────────

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn bce_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Per-step activations kept for backpropagation. Row t holds
/// `[i f g o c tanh(c) h]`, each of width H.
struct Trace {
    hidden: usize,
    rows: Vec<f64>,
    logit: f64,
}

impl Trace {
    fn width(&self) -> usize {
        7 * self.hidden
    }

    fn step(&self, t: usize) -> &[f64] {
        &self.rows[t * self.width()..(t + 1) * self.width()]
    }
}

fn check_input(params: &LstmParams, x: &[f64], mask_len: usize) -> Result<usize> {
    let i = params.input_size;
    if !x.len().is_multiple_of(i) {
        return Err(Error::InvalidParameter(format!(
            "input length {} is not a multiple of {i}",
            x.len()
        )));
    }
    let steps = x.len() / i;
    if mask_len == 0 || mask_len > steps {
        return Err(Error::InvalidParameter(format!(
            "mask length {mask_len} outside 1..={steps}"
        )));
    }
    let real = &x[(steps - mask_len) * i..];
    if real.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite LSTM input".into()));
    }
    Ok(steps - mask_len)
}

fn run(params: &LstmParams, x: &[f64], mask_len: usize, dropout: Option<&[f64]>) -> Result<Trace> {
    let first = check_input(params, x, mask_len)?;
    let (ni, h) = (params.input_size, params.hidden_size);
    if let Some(d) = dropout {
        if d.len() != h {
            return Err(Error::InvalidParameter("dropout mask width mismatch".into()));
        }
    }
    let w = &params.data[..params.u_offset()];
    let u = &params.data[params.u_offset()..params.b_offset()];
    let b = &params.data[params.b_offset()..params.w_offset()];
    let mut trace = Trace {
        hidden: h,
        rows: vec![0.0; mask_len * 7 * h],
        logit: 0.0,
    };
    let mut z = vec![0.0; 4 * h];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for t in 0..mask_len {
        let xt = &x[(first + t) * ni..(first + t + 1) * ni];
        for r in 0..4 * h {
            let wr = &w[r * ni..(r + 1) * ni];
            let ur = &u[r * h..(r + 1) * h];
            let mut acc = b[r];
            for k in 0..ni {
                acc += wr[k] * xt[k];
            }
            for k in 0..h {
                acc += ur[k] * h_prev[k];
            }
            z[r] = acc;
        }
        let row = &mut trace.rows[t * 7 * h..(t + 1) * 7 * h];
        for j in 0..h {
            let ig = sigmoid(z[j]);
            let fg = sigmoid(z[h + j]);
            let gg = z[2 * h + j].tanh();
            let og = sigmoid(z[3 * h + j]);
            let c = fg * c_prev[j] + ig * gg;
            let tc = c.tanh();
            let hh = og * tc;
            row[j] = ig;
            row[h + j] = fg;
            row[2 * h + j] = gg;
            row[3 * h + j] = og;
            row[4 * h + j] = c;
            row[5 * h + j] = tc;
            row[6 * h + j] = hh;
            c_prev[j] = c;
            h_prev[j] = hh;
        }
    }
    let dense = params.dense_weights();
    let mut logit = params.dense_bias();
    for j in 0..h {
        let m = dropout.map_or(1.0, |d| d[j]);
        logit += dense[j] * h_prev[j] * m;
    }
    trace.logit = logit;
    Ok(trace)
}

/// Probability for one sequence. `x` holds steps of width `input_size`; only
/// the last `mask_len` are read. `dropout`, when given, multiplies the final
/// hidden state elementwise (already scaled by 1/(1−rate)).
pub fn forward(params: &LstmParams, x: &[f64], mask_len: usize, dropout: Option<&[f64]>) -> Result<f64> {
    let p = sigmoid(run(params, x, mask_len, dropout)?.logit);
    Ok(p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
}

/// One training sequence, already scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub mask_len: usize,
    pub label: bool,
}

fn accumulate(
    params: &LstmParams,
    ex: &Example,
    dropout: Option<&[f64]>,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let trace = run(params, &ex.x, ex.mask_len, dropout)?;
    let (ni, h) = (params.input_size, params.hidden_size);
    let first = ex.x.len() / ni - ex.mask_len;
    let p = sigmoid(trace.logit);
    let loss = bce_loss(p, ex.label);
    let y = if ex.label { 1.0 } else { 0.0 };
    let dlogit = (p - y) * scale;

    let (uo, bo, wo) = (params.u_offset(), params.b_offset(), params.w_offset());
    let u = &params.data[uo..bo];
    let dense = params.dense_weights();
    let last = trace.step(ex.mask_len - 1);
    let mut dh = vec![0.0; h];
    for j in 0..h {
        let m = dropout.map_or(1.0, |d| d[j]);
        grad[wo + j] += dlogit * last[6 * h + j] * m;
        dh[j] = dlogit * dense[j] * m;
    }
    grad[wo + h] += dlogit;

    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zeros = vec![0.0; 7 * h];
    for t in (0..ex.mask_len).rev() {
        let row = trace.step(t);
        let prev = if t == 0 { &zeros[..] } else { trace.step(t - 1) };
        for j in 0..h {
            let (ig, fg, gg, og) = (row[j], row[h + j], row[2 * h + j], row[3 * h + j]);
            let tc = row[5 * h + j];
            let c_prev = prev[4 * h + j];
            let d_c = dc[j] + dh[j] * og * (1.0 - tc * tc);
            dz[j] = d_c * gg * ig * (1.0 - ig);
            dz[h + j] = d_c * c_prev * fg * (1.0 - fg);
            dz[2 * h + j] = d_c * ig * (1.0 - gg * gg);
            dz[3 * h + j] = dh[j] * tc * og * (1.0 - og);
            dc[j] = d_c * fg;
        }
        let xt = &ex.x[(first + t) * ni..(first + t + 1) * ni];
        dh.fill(0.0);
        for r in 0..4 * h {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            let gw = &mut grad[r * ni..(r + 1) * ni];
            for k in 0..ni {
                gw[k] += d * xt[k];
            }
            let gu = &mut grad[uo + r * h..uo + (r + 1) * h];
            let ur = &u[r * h..(r + 1) * h];
            for k in 0..h {
                gu[k] += d * prev[6 * h + k];
                dh[k] += ur[k] * d;
            }
            grad[bo + r] += d;
        }
    }
    Ok(loss)
}

/// Mean BCE over the batch and its exact gradient. `dropout`, when given,
/// supplies one mask per example.
pub fn backward(
    params: &LstmParams,
    batch: &[&Example],
    dropout: Option<&[Vec<f64>]>,
) -> Result<(f64, LstmParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty training batch".into()));
    }
    if let Some(d) = dropout {
        if d.len() != batch.len() {
            return Err(Error::InvalidParameter("one dropout mask per example required".into()));
        }
    }
    let mut grad = LstmParams::zeros(params.input_size, params.hidden_size);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (n, ex) in batch.iter().enumerate() {
        let mask = dropout.map(|d| d[n].as_slice());
        loss += accumulate(params, ex, mask, scale, &mut grad.data)?;
    }
    let loss = loss * scale;
    if !loss.is_finite() || grad.data.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite loss or gradient".into()));
    }
    Ok((loss, grad))
}

/// Largest relative error |a − n| / max(|a|, |n|, 1e-8) between analytic and
/// central-difference gradients of the single-example loss, over every
/// parameter.
pub fn grad_check(params: &LstmParams, example: &Example, eps: f64) -> Result<f64> {
    check_input(params, &example.x, example.mask_len)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let (_, analytic) = backward(params, &[example], None)?;
    let loss = |p: &LstmParams| -> Result<f64> {
        let trace = run(p, &example.x, example.mask_len, None)?;
        // loss from the logit directly so the probability clamp never flattens it
        let z = trace.logit;
        Ok(if example.label { softplus(-z) } else { softplus(z) })
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..params.data.len() {
        let orig = params.data[k];
        probe.data[k] = orig + eps;
        let up = loss(&probe)?;
        probe.data[k] = orig - eps;
        let down = loss(&probe)?;
        probe.data[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

// ── Input scaling ───────────────────────────────────────────────────────────

/// Standardizes the continuous feature slots; nominal slots pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaler {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Fit on the real steps of `samples`. Constant slots get unit scale.
    pub fn fit(samples: &[FlatSample]) -> Self {
        let mut s = Self::identity(N_FEATURES);
        for &slot in &CONTINUOUS_SLOTS {
            let values: Vec<f64> = samples
                .iter()
                .flat_map(|f| (f.first_real_step()..f.max_seq_len()).map(move |t| f.step(t)[slot]))
                .collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            s.mean[slot] = mean;
            s.std[slot] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        s
    }

    /// Scaled real steps of `sample`, padding dropped.
    pub fn example(&self, sample: &FlatSample) -> Example {
        let w = self.mean.len();
        let x = sample.vector[sample.first_real_step() * w..]
            .chunks_exact(w)
            .flat_map(|step| step.iter().enumerate().map(|(k, v)| (v - self.mean[k]) / self.std[k]))
            .collect();
        Example {
            x,
            mask_len: sample.mask_len,
            label: sample.label,
        }
    }
}

/// Trained network plus the scaler fitted on its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub params: LstmParams,
    pub scaler: InputScaler,
}

impl LstmModel {
    pub fn predict(&self, sample: &FlatSample) -> Result<f64> {
        let ex = self.scaler.example(sample);
        forward(&self.params, &ex.x, ex.mask_len, None)
    }

    pub fn predict_all(&self, samples: &[FlatSample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.predict(s)).collect()
    }

    /// Plain-text checkpoint: shape header, scaler, then one parameter per
    /// line. Floats are written in shortest round-trip form, so reading the
    /// file back reproduces every bit.
    pub fn write_checkpoint<W: Write>(&self, mut w: W, preamble: &[String]) -> std::io::Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        writeln!(w, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}")?;
        writeln!(w, "input_size {}", self.params.input_size)?;
        writeln!(w, "hidden_size {}", self.params.hidden_size)?;
        writeln!(w, "scaler_mean {}", join(&self.scaler.mean))?;
        writeln!(w, "scaler_std {}", join(&self.scaler.std))?;
        writeln!(w, "params {}", self.params.data.len())?;
        let mut buf = String::with_capacity(self.params.data.len() * 24);
        for v in &self.params.data {
            let _ = writeln!(buf, "{v:?}");
        }
        w.write_all(buf.as_bytes())
    }

    pub fn read_checkpoint(text: &str, source: &Path) -> Result<Self> {
        let bad = |msg: String| Error::input(source, msg);
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("truncated checkpoint: missing {what}")));
        let magic = next("header")?;
        if magic.trim() != format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}") {
            return Err(bad(format!("unrecognized checkpoint header {magic:?}")));
        }
        let field = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected {key}, got {line:?}")))
        };
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("invalid number {t:?}"))))
                .collect()
        };
        let count = |s: String| s.trim().parse::<usize>().map_err(|_| bad(format!("invalid size {s:?}")));
        let input_size = count(field(next("input_size")?, "input_size")?)?;
        let hidden_size = count(field(next("hidden_size")?, "hidden_size")?)?;
        let mean = floats(&field(next("scaler_mean")?, "scaler_mean")?)?;
        let std = floats(&field(next("scaler_std")?, "scaler_std")?)?;
        let n = count(field(next("params")?, "params")?)?;
        if mean.len() != input_size || std.len() != input_size || std.iter().any(|s| !(*s > 0.0)) {
            return Err(bad("scaler does not match input size".into()));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let line = next("parameter")?;
            data.push(line.trim().parse::<f64>().map_err(|_| bad(format!("invalid parameter {line:?}")))?);
        }
        if lines.next().is_some() {
            return Err(bad("trailing data after parameters".into()));
        }
        let params = LstmParams::from_vec(input_size, hidden_size, data).map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            params,
            scaler: InputScaler { mean, std },
        })
    }
}

// ── Training ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` disables early stopping.
    pub early_stopping_patience: Option<usize>,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            dropout_rate: 0.2,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            early_stopping_patience: Some(5),
            master_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParameter(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        if self.hidden_size == 0 || self.epochs == 0 || self.batch_size == 0 || self.early_stopping_patience == Some(0) {
            return Err(Error::InvalidParameter("training sizes and counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingCriterion {
    ValidationAuroc,
    ValidationLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Empty when the validation set has a single class.
    pub val_auroc: Vec<f64>,
    pub criterion: StoppingCriterion,
    /// Zero-based.
    pub selected_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..theta.len() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * grad[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * grad[k] * grad[k];
            theta[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

fn evaluate(params: &LstmParams, set: &[Example]) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(set.len());
    for ex in set {
        let p = forward(params, &ex.x, ex.mask_len, None)?;
        loss += bce_loss(p, ex.label);
        scores.push(p);
    }
    Ok((loss / set.len() as f64, scores))
}

/// Mini-batch Adam with per-epoch validation. Returns the parameters of the
/// best validation epoch.
pub fn train(train_set: &[Example], val_set: &[Example], config: &TrainConfig) -> Result<(LstmParams, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    // examples carry real steps only, so every x is mask_len rows wide
    let input = train_set[0].x.len() / train_set[0].mask_len.max(1);
    if input == 0
        || train_set
            .iter()
            .chain(val_set)
            .any(|e| e.mask_len == 0 || e.x.len() != e.mask_len * input)
    {
        return Err(Error::InvalidParameter("training examples must hold real steps of equal width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
    let mut params = LstmParams::init(input, config.hidden_size, &mut rng);
    let val_labels: Vec<bool> = val_set.iter().map(|e| e.label).collect();
    let use_auroc = val_labels.iter().any(|&l| l) && val_labels.iter().any(|&l| !l);
    if !use_auroc {
        log::warn!("validation set has a single class; early stopping on validation loss");
    }
    let criterion = if use_auroc {
        StoppingCriterion::ValidationAuroc
    } else {
        StoppingCriterion::ValidationLoss
    };

    let mut adam = Adam::new(params.data.len(), config.learning_rate);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_auroc: Vec::new(),
        criterion,
        selected_epoch: 0,
    };
    let mut best = (f64::NEG_INFINITY, params.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let keep = 1.0 - config.dropout_rate;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let masks: Option<Vec<Vec<f64>>> = (config.dropout_rate > 0.0).then(|| {
                batch
                    .iter()
                    .map(|_| {
                        (0..config.hidden_size)
                            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect()
            });
            let (loss, grad) = backward(&params, &batch, masks.as_deref()).map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(format!("epoch {}: {msg}", epoch + 1)),
                other => other,
            })?;
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut params.data, &grad.data);
        }
        history.train_loss.push(epoch_loss / train_set.len() as f64);
        let (val_loss, scores) = evaluate(&params, val_set)?;
        history.val_loss.push(val_loss);
        let score = if use_auroc {
            let a = auroc(&scores, &val_labels)?;
            history.val_auroc.push(a);
            a
        } else {
            -val_loss
        };
        if score > best.0 {
            best = (score, params.clone());
            history.selected_epoch = epoch;
        }
        log::debug!("epoch {} loss {:.5} val {:.5}", epoch + 1, history.train_loss[epoch], score);
        if let Some(patience) = config.early_stopping_patience {
            if epoch - history.selected_epoch >= patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}

/// Fit the scaler on `train`, then train on the scaled sequences.
pub fn train_model(train_set: &[FlatSample], val_set: &[FlatSample], config: &TrainConfig) -> Result<(LstmModel, TrainHistory)> {
    let scaler = InputScaler::fit(train_set);
    let tr: Vec<Example> = train_set.iter().map(|s| scaler.example(s)).collect();
    let va: Vec<Example> = val_set.iter().map(|s| scaler.example(s)).collect();
    let (params, history) = train(&tr, &va, config)?;
    Ok((LstmModel { params, scaler }, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_example(rng: &mut ChaCha8Rng, input: usize, steps: usize, label: bool) -> Example {
        Example {
            x: (0..input * steps).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            mask_len: steps,
            label,
        }
    }

    #[test]
    fn zero_network_outputs_half() {
        let p = LstmParams::zeros(19, 4);
        let x = vec![3.0; 19 * 2];
        assert_eq!(forward(&p, &x, 2, None).unwrap(), 0.5);
    }

    #[test]
    fn single_cell_hand_trace() {
        let mut p = LstmParams::zeros(1, 1);
        let big = 30.0;
        p.gate_bias_mut(Gate::Input)[0] = big;
        p.gate_bias_mut(Gate::Output)[0] = big;
        p.gate_bias_mut(Gate::Cell)[0] = 0.5f64.atanh();
        p.dense_weights_mut()[0] = 1.0;
        let trace = run(&p, &[0.0], 1, None).unwrap();
        let s = 1.0 / (1.0 + (-big).exp());
        let expected = s * (0.5 * s).tanh();
        assert!((trace.logit - expected).abs() < 1e-9);
    }

    #[test]
    fn padding_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(5, 3, &mut rng);
        let ex = random_example(&mut rng, 5, 2, true);
        let mut padded = vec![7.0; 5];
        padded.extend_from_slice(&ex.x);
        let a = forward(&p, &ex.x, 2, None).unwrap();
        let b = forward(&p, &padded, 2, None).unwrap();
        assert_eq!(a, b);
        let pad_ex = Example { x: padded, ..ex.clone() };
        assert_eq!(backward(&p, &[&ex], None).unwrap().1, backward(&p, &[&pad_ex], None).unwrap().1);
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.25, true) - 4f64.ln()).abs() < 1e-15);
        assert!(bce_loss(1.0, true) < 1e-11);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(4, 3, &mut rng);
        let ex = random_example(&mut rng, 4, 4, false);
        let err = grad_check(&p, &ex, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
        let empty = Example { x: vec![], mask_len: 0, label: true };
        assert!(grad_check(&p, &empty, 1e-5).is_err());
    }

    #[test]
    fn head_stationary_point() {
        let mut p = LstmParams::init(3, 2, &mut ChaCha8Rng::seed_from_u64(1));
        p.dense_weights_mut().fill(0.0);
        // two positives and one negative on the same input: optimum logit ln 2
        p.set_dense_bias(2f64.ln());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = random_example(&mut rng, 3, 2, true);
        let neg = Example { label: false, ..pos.clone() };
        let (_, g) = backward(&p, &[&pos, &pos, &neg], None).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-15), "{:?}", g.as_slice());
    }

    #[test]
    fn doubled_batch_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LstmParams::init(3, 2, &mut rng);
        let a = random_example(&mut rng, 3, 2, true);
        let b = random_example(&mut rng, 3, 3, false);
        let (l1, g1) = backward(&p, &[&a, &b], None).unwrap();
        let (l2, g2) = backward(&p, &[&a, &b, &a, &b], None).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (x, y) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = LstmModel {
            params: LstmParams::init(19, 5, &mut rng),
            scaler: InputScaler {
                mean: (0..19).map(|i| i as f64 / 3.0).collect(),
                std: vec![0.1; 19],
            },
        };
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf, &["seed 9".into()]).unwrap();
        let back = LstmModel::read_checkpoint(std::str::from_utf8(&buf).unwrap(), Path::new("m")).unwrap();
        assert_eq!(back, model);
        let truncated = std::str::from_utf8(&buf[..buf.len() - 30]).unwrap();
        assert!(LstmModel::read_checkpoint(truncated, Path::new("m")).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { dropout_rate: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
