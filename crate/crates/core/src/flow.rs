//! Affine-coupling normalizing flow.
//!
//! Each layer keeps the coordinates selected by its mask and maps the rest as
//! `y = x * exp(s) + t`, where `(raw, t)` come from a one-hidden-layer tanh
//! perceptron applied to the kept coordinates and `s = c * tanh(raw / c)`.
//! The base density is `N(0, I_d)`, so
//! `log p(x) = -|z|^2 / 2 - (d/2) log(2 pi) + sum of all s`.
//!
//! Gradients of the negative log-likelihood are back-propagated by hand and
//! can be audited with [`gradient_check`].

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{ensure_finite, ensure_finite_batch, Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::rng::{Domain, Stream};
use crate::Batch;

const MAGIC: &[u8; 8] = b"SPEMFLOW";
const FORMAT_VERSION: u32 = 1;

/// Which coordinates the first layer keeps; later layers alternate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPattern {
    /// Keep the first `d / 2` coordinates.
    Halves,
    /// Keep the first `k` coordinates.
    Split(usize),
}

impl MaskPattern {
    fn first_mask(self, d: usize) -> Result<Vec<bool>> {
        let k = match self {
            MaskPattern::Halves => d / 2,
            MaskPattern::Split(k) => k,
        };
        if k == 0 || k >= d {
            return Err(Error::param(
                "mask",
                format!("split {k} must lie in 1..{d} so both halves are non-empty"),
            ));
        }
        Ok((0..d).map(|j| j < k).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowArch {
    pub layers: usize,
    pub hidden: usize,
    pub mask: MaskPattern,
    pub log_scale_clamp: f64,
}

impl Default for FlowArch {
    fn default() -> Self {
        FlowArch {
            layers: 4,
            hidden: 32,
            mask: MaskPattern::Halves,
            log_scale_clamp: 5.0,
        }
    }
}

/// One affine coupling layer. Parameters live in a single flat vector laid
/// out as `w1 (hidden x n_keep), b1 (hidden), w2 (2 n_move x hidden), b2 (2 n_move)`;
/// the first `n_move` outputs are raw log-scales, the rest are shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    mask: Vec<bool>,
    keep: Vec<usize>,
    moved: Vec<usize>,
    hidden: usize,
    clamp: f64,
    params: Vec<f64>,
}

struct Offsets {
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

/// Intermediate values of one layer's forward pass, kept for backprop.
struct LayerTape {
    h: Vec<f64>,
    s: Vec<f64>,
    x_moved: Vec<f64>,
}

impl CouplingLayer {
    /// Builds a layer from explicit parameters. `mask[j] == true` keeps
    /// coordinate `j` unchanged.
    pub fn from_parts(
        mask: Vec<bool>,
        hidden: usize,
        clamp: f64,
        w1: &[f64],
        b1: &[f64],
        w2: &[f64],
        b2: &[f64],
    ) -> Result<Self> {
        let mut layer = Self::zeros(mask, hidden, clamp)?;
        let o = layer.offsets();
        let expect = [
            ("w1", w1.len(), o.b1),
            ("b1", b1.len(), o.w2 - o.b1),
            ("w2", w2.len(), o.b2 - o.w2),
            ("b2", b2.len(), o.end - o.b2),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::param(name, format!("expected {want} values, got {got}")));
            }
        }
        layer.params = [w1, b1, w2, b2].concat();
        ensure_finite(&layer.params, "coupling parameters")?;
        Ok(layer)
    }

    fn zeros(mask: Vec<bool>, hidden: usize, clamp: f64) -> Result<Self> {
        let keep: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        let moved: Vec<usize> = (0..mask.len()).filter(|&j| !mask[j]).collect();
        if keep.is_empty() || moved.is_empty() {
            return Err(Error::param("mask", "both halves must be non-empty"));
        }
        if hidden == 0 {
            return Err(Error::param("hidden", "must be positive"));
        }
        if !(clamp > 0.0 && clamp.is_finite()) {
            return Err(Error::param("log_scale_clamp", "must be positive and finite"));
        }
        let n = hidden * keep.len() + hidden + 2 * moved.len() * hidden + 2 * moved.len();
        Ok(CouplingLayer {
            mask,
            keep,
            moved,
            hidden,
            clamp,
            params: vec![0.0; n],
        })
    }

    fn offsets(&self) -> Offsets {
        let (nk, nm, h) = (self.keep.len(), self.moved.len(), self.hidden);
        let b1 = h * nk;
        let w2 = b1 + h;
        let b2 = w2 + 2 * nm * h;
        Offsets {
            b1,
            w2,
            b2,
            end: b2 + 2 * nm,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn log_scale_clamp(&self) -> f64 {
        self.clamp
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Runs the conditioner on the kept coordinates of `x`; returns hidden
    /// activations, clamped log-scales and shifts.
    fn conditioner(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let o = self.offsets();
        let p = &self.params;
        let nk = self.keep.len();
        let nm = self.moved.len();
        let h: Vec<f64> = (0..self.hidden)
            .map(|i| {
                let row = &p[i * nk..(i + 1) * nk];
                let pre = p[o.b1 + i] + row.iter().zip(&self.keep).map(|(w, &j)| w * x[j]).sum::<f64>();
                pre.tanh()
            })
            .collect();
        let out = |r: usize| {
            let row = &p[o.w2 + r * self.hidden..o.w2 + (r + 1) * self.hidden];
            p[o.b2 + r] + row.iter().zip(&h).map(|(w, hv)| w * hv).sum::<f64>()
        };
        let c = self.clamp;
        let s = (0..nm).map(|r| c * (out(r) / c).tanh()).collect();
        let t = (0..nm).map(|r| out(nm + r)).collect();
        (h, s, t)
    }

    /// Maps `x` in place and returns this layer's log-determinant.
    fn forward_in_place(&self, x: &mut [f64]) -> f64 {
        let (_, s, t) = self.conditioner(x);
        let mut log_det = 0.0;
        for (r, &j) in self.moved.iter().enumerate() {
            x[j] = x[j] * s[r].exp() + t[r];
            log_det += s[r];
        }
        log_det
    }

    fn forward_taped(&self, x: &mut [f64]) -> (f64, LayerTape) {
        let (h, s, t) = self.conditioner(x);
        let mut log_det = 0.0;
        let mut x_moved = Vec::with_capacity(self.moved.len());
        for (r, &j) in self.moved.iter().enumerate() {
            x_moved.push(x[j]);
            x[j] = x[j] * s[r].exp() + t[r];
            log_det += s[r];
        }
        (log_det, LayerTape { h, s, x_moved })
    }

    fn inverse_in_place(&self, z: &mut [f64]) {
        // kept coordinates are identical on both sides, so the conditioner
        // sees the same input as in the forward pass
        let (_, s, t) = self.conditioner(z);
        for (r, &j) in self.moved.iter().enumerate() {
            z[j] = (z[j] - t[r]) * (-s[r]).exp();
        }
    }

    /// Back-propagates `g` (gradient w.r.t. this layer's output, overwritten
    /// with the gradient w.r.t. its input) and accumulates parameter
    /// gradients into `grad`. The loss carries `-sum(s)` from the
    /// log-determinant, which is folded in here.
    fn backward(&self, x_in: &[f64], tape: &LayerTape, g: &mut [f64], grad: &mut [f64]) {
        let o = self.offsets();
        let p = &self.params;
        let nk = self.keep.len();
        let nm = self.moved.len();
        let hd = self.hidden;
        let c = self.clamp;

        // gradient w.r.t. conditioner outputs [raw log-scales, shifts]
        let mut g_out = vec![0.0; 2 * nm];
        for (r, &j) in self.moved.iter().enumerate() {
            let es = tape.s[r].exp();
            let gy = g[j];
            let gs = gy * tape.x_moved[r] * es - 1.0;
            let ratio = tape.s[r] / c;
            g_out[r] = gs * (1.0 - ratio * ratio);
            g_out[nm + r] = gy;
            g[j] = gy * es;
        }

        let mut g_pre = vec![0.0; hd];
        for (r, &go) in g_out.iter().enumerate() {
            grad[o.b2 + r] += go;
            let base = o.w2 + r * hd;
            for i in 0..hd {
                grad[base + i] += go * tape.h[i];
                g_pre[i] += go * p[base + i];
            }
        }
        for i in 0..hd {
            g_pre[i] *= 1.0 - tape.h[i] * tape.h[i];
            grad[o.b1 + i] += g_pre[i];
            let base = i * nk;
            for (q, &j) in self.keep.iter().enumerate() {
                grad[base + q] += g_pre[i] * x_in[j];
                g[j] += g_pre[i] * p[base + q];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    d: usize,
    layers: Vec<CouplingLayer>,
}

impl FlowModel {
    /// The flow with no layers: `z = x`.
    pub fn identity(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "must be positive"));
        }
        Ok(FlowModel { d, layers: Vec::new() })
    }

    pub fn from_layers(d: usize, layers: Vec<CouplingLayer>) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "must be positive"));
        }
        for l in &layers {
            if l.mask.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: l.mask.len(),
                });
            }
        }
        Ok(FlowModel { d, layers })
    }

    /// Fresh model for training: first-layer weights drawn uniformly in
    /// `±1/sqrt(fan_in)`, output weights zero, so the map starts as the identity.
    pub fn new(d: usize, arch: &FlowArch, seed: u64) -> Result<Self> {
        Self::initialised(d, arch, seed, 0.0)
    }

    /// Like [`FlowModel::new`] but the output weights are also drawn from
    /// `U(-out_scale, out_scale)`, giving a non-trivial map.
    pub fn random(d: usize, arch: &FlowArch, out_scale: f64, seed: u64) -> Result<Self> {
        Self::initialised(d, arch, seed, out_scale)
    }

    fn initialised(d: usize, arch: &FlowArch, seed: u64, out_scale: f64) -> Result<Self> {
        if arch.layers == 0 {
            return Err(Error::param("layers", "must be positive"));
        }
        let first = arch.mask.first_mask(d)?;
        let mut layers = Vec::with_capacity(arch.layers);
        for li in 0..arch.layers {
            let mask: Vec<bool> = first.iter().map(|&m| m ^ (li % 2 == 1)).collect();
            let mut layer = CouplingLayer::zeros(mask, arch.hidden, arch.log_scale_clamp)?;
            let o = layer.offsets();
            let mut rng = Stream::new(seed, Domain::Init, li as u64);
            let bound = 1.0 / (layer.keep.len() as f64).sqrt();
            for v in &mut layer.params[..o.w2] {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
            for v in &mut layer.params[o.w2..] {
                *v = out_scale * (2.0 * rng.uniform() - 1.0);
            }
            layers.push(layer);
        }
        Ok(FlowModel { d, layers })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        ensure_finite(x, "flow input")
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(x)?;
        let mut z = x.to_vec();
        let log_det = self.layers.iter().map(|l| l.forward_in_place(&mut z)).sum();
        ensure_finite(&z, "flow output")?;
        Ok((z, log_det))
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        let mut x = z.to_vec();
        for l in self.layers.iter().rev() {
            l.inverse_in_place(&mut x);
        }
        ensure_finite(&x, "flow inverse output")?;
        Ok(x)
    }

    /// Exact log-density of `x` in nats.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        let (z, log_det) = self.forward(x)?;
        Ok(standard_normal_log_density(&z) + log_det)
    }

    pub fn log_likelihood_batch(&self, x: &Batch) -> Result<Vec<f64>> {
        x.rows()
            .into_iter()
            .map(|row| self.log_likelihood(&row_vec(row)))
            .collect()
    }

    pub fn mean_nll(&self, x: &Batch) -> Result<f64> {
        let ll = self.log_likelihood_batch(x)?;
        if ll.is_empty() {
            return Err(Error::Empty("batch"));
        }
        Ok(-ll.iter().sum::<f64>() / ll.len() as f64)
    }

    /// Draws `n` points by pushing base samples through the inverse map.
    /// Sample `i` uses its own random stream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Batch> {
        let mut out = Array2::zeros((n, self.d));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let z = Stream::new(seed, Domain::Sample, i as u64).normal_vec(self.d);
            let x = self.inverse(&z)?;
            row.assign(&ArrayView1::from(&x));
        }
        Ok(out)
    }

    /// Negative log-likelihood of one sample and its gradient w.r.t. all
    /// parameters (accumulated into `grad`, laid out layer by layer).
    fn nll_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let mut log_det = 0.0;
        for l in &self.layers {
            inputs.push(cur.clone());
            let (ld, tape) = l.forward_taped(&mut cur);
            log_det += ld;
            tapes.push(tape);
        }
        let nll = -(standard_normal_log_density(&cur) + log_det);
        // d(nll)/dz = z for the Gaussian base term
        let mut g = cur;
        let mut end = grad.len();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let start = end - l.params.len();
            l.backward(&inputs[li], &tapes[li], &mut g, &mut grad[start..end]);
            end = start;
        }
        nll
    }

    fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params.iter().copied()).collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.params.len();
            l.params.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Mean NLL over the rows of `x` and its gradient.
    fn batch_nll_grad(&self, x: &Batch, rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let mut total = 0.0;
        let mut buf = vec![0.0; self.d];
        for &r in rows {
            for (b, v) in buf.iter_mut().zip(x.row(r)) {
                *b = *v;
            }
            total += self.nll_and_grad(&buf, &mut grad);
        }
        let inv = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        (total * inv, grad)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.d as u32);
        w.u32(self.layers.len() as u32);
        for l in &self.layers {
            let mask: Vec<u8> = l.mask.iter().map(|&m| m as u8).collect();
            w.bytes(&mask);
            w.u32(l.hidden as u32);
            w.f64(l.clamp);
            w.f64s(&l.params);
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "flow model");
        r.magic(MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let d = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        if d == 0 {
            return Err(Error::Format("flow model: zero dimension".into()));
        }
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let mut mask = Vec::with_capacity(d);
            for &b in r.take(d)? {
                match b {
                    0 => mask.push(false),
                    1 => mask.push(true),
                    other => return Err(Error::Format(format!("flow model: mask byte {other}"))),
                }
            }
            let hidden = r.u32()? as usize;
            let clamp = r.f64()?;
            let mut layer =
                CouplingLayer::zeros(mask, hidden, clamp).map_err(|e| Error::Format(format!("flow model: {e}")))?;
            let n = layer.params.len();
            layer.params = r.f64s(n)?;
            ensure_finite(&layer.params, "stored flow parameters")?;
            layers.push(layer);
        }
        r.finish()?;
        Ok(FlowModel { d, layers })
    }
}

fn row_vec(row: ArrayView1<f64>) -> Vec<f64> {
    row.iter().copied().collect()
}

pub fn standard_normal_log_density(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * sq - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: FlowArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay applied alongside each Adam step.
    pub weight_decay: f64,
    /// Learning rate reached at the end of the cosine schedule.
    pub lr_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: FlowArch::default(),
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            lr_floor: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("lr_floor", self.lr_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive and finite"));
            }
        }
        if self.lr_floor > self.learning_rate {
            return Err(Error::param("lr_floor", "must not exceed learning_rate"));
        }
        Ok(())
    }
}

/// Mean training NLL (nats per sample) before training and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub initial: f64,
    pub epochs: Vec<f64>,
}

impl LossTrace {
    pub fn last(&self) -> f64 {
        self.epochs.last().copied().unwrap_or(self.initial)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::B1.powi(self.t);
        let bc2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            params[i] *= 1.0 - lr * wd;
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Maximum-likelihood training with Adam, decoupled weight decay and a cosine
/// learning-rate schedule; each epoch visits a fresh permutation and drops
/// the final partial batch.
pub fn train(data: &Batch, cfg: &TrainConfig) -> Result<(FlowModel, LossTrace)> {
    cfg.validate()?;
    let (n, d) = data.dim();
    if n < 2 * cfg.batch_size {
        return Err(Error::param(
            "batch_size",
            format!("need at least {} samples, got {n}", 2 * cfg.batch_size),
        ));
    }
    ensure_finite_batch(data, "training data")?;
    let mut model = FlowModel::new(d, &cfg.arch, cfg.seed)?;
    let initial = model.mean_nll(data)?;
    let batches = n / cfg.batch_size;
    let total_steps = (cfg.epochs * batches) as f64;
    let mut adam = Adam::new(model.num_params());
    let mut params = model.flat_params();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        Stream::new(cfg.seed, Domain::Shuffle, epoch as u64).shuffle(&mut order);
        for b in 0..batches {
            let rows = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let (loss, grad) = model.batch_nll_grad(data, rows);
            if loss.is_nan() {
                return Err(Error::Diverged { epoch });
            }
            let progress = step as f64 / total_steps;
            let lr = cfg.lr_floor + 0.5 * (cfg.learning_rate - cfg.lr_floor) * (1.0 + (PI * progress).cos());
            adam.step(&mut params, &grad, lr, cfg.weight_decay);
            model.set_flat_params(&params);
            step += 1;
        }
        let epoch_nll = match model.mean_nll(data) {
            Ok(v) if v.is_finite() => v,
            _ => return Err(Error::Diverged { epoch }),
        };
        log::debug!("epoch {epoch}: mean nll {epoch_nll:.6}");
        epochs.push(epoch_nll);
    }
    Ok((model, LossTrace { initial, epochs }))
}

/// Largest discrepancy between the analytic gradient of the mean NLL over
/// `x` and its central finite-difference estimate with step `eps`, over every
/// parameter. Each discrepancy is divided by `max(1, |analytic|, |numeric|)`,
/// so it is relative for large gradients and absolute near zero.
pub fn gradient_check(model: &FlowModel, x: &Batch, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("eps", "must be positive and finite"));
    }
    if x.ncols() != model.d {
        return Err(Error::Dimension {
            expected: model.d,
            got: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::Empty("gradient check batch"));
    }
    ensure_finite_batch(x, "gradient check batch")?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let (_, analytic) = model.batch_nll_grad(x, &rows);
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.set_flat_params(&p);
        let plus = probe.mean_nll(x)?;
        p[i] = base[i] - eps;
        probe.set_flat_params(&p);
        let minus = probe.mean_nll(x)?;
        let numeric = (plus - minus) / (2.0 * eps);
        let scale = 1f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}
