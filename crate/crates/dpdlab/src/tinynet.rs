//! Minimal neural-network engine: 1-D convolutions (kernel 3, stride 1, same
//! padding), batch normalization, PReLU, Adam, exact backpropagation, a
//! finite-difference gradient-check harness, and weight-file serialization.
//!
//! The fixed architecture is 6 conv layers with channel plan
//! input -> 16 -> 32 -> 64 -> 64 -> 128 -> 2; layers 1-5 carry BN + PReLU,
//! the output layer is a bare convolution.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

use crate::{DpdError, Result};

const DPN_MAGIC: [u8; 4] = *b"DPN1";

/// Real scalar the engine is generic over: f32 for training, f64 for tight
/// gradient checks.
pub trait Scalar: Float + rustfft::FftNum + Default + std::iter::Sum {
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense [batch x channels x time] tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub data: Vec<T>,
    pub batch: usize,
    pub channels: usize,
    pub time: usize,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(batch: usize, channels: usize, time: usize) -> Self {
        Self { data: vec![T::default(); batch * channels * time], batch, channels, time }
    }

    pub fn from_vec(data: Vec<T>, batch: usize, channels: usize, time: usize) -> Result<Self> {
        if data.len() != batch * channels * time {
            return Err(DpdError::Shape(format!(
                "tensor data length {} != {batch}x{channels}x{time}",
                data.len()
            )));
        }
        Ok(Self { data, batch, channels, time })
    }

    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let start = (b * self.channels + c) * self.time;
        &self.data[start..start + self.time]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let start = (b * self.channels + c) * self.time;
        &mut self.data[start..start + self.time]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.batch == other.batch && self.channels == other.channels && self.time == other.time
    }

    pub fn map_to<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
            batch: self.batch,
            channels: self.channels,
            time: self.time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One conv layer, optionally followed by BN + PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Kernel weights, [out_ch x in_ch x 3] row-major.
    pub w: Vec<T>,
    pub bias: Vec<T>,
    /// (gamma, beta, running_mean, running_var, prelu_slope), all per out_ch.
    pub bn_prelu: Option<BnPrelu<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnPrelu<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub slope: Vec<T>,
}

/// BN hyperparameters (fixed; not serialized per layer).
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetParams<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Layer<T> {
    fn new(in_ch: usize, out_ch: usize, with_bn: bool, rng: &mut ChaCha8Rng) -> Self {
        // Kaiming-uniform, fan_in = in_ch * kernel.
        let bound = (6.0 / (in_ch as f64 * 3.0)).sqrt();
        let w = (0..out_ch * in_ch * 3)
            .map(|_| T::of_f64(rng.gen_range(-bound..bound)))
            .collect();
        let bias = vec![T::default(); out_ch];
        let bn_prelu = with_bn.then(|| BnPrelu {
            gamma: vec![T::of_f64(1.0); out_ch],
            beta: vec![T::default(); out_ch],
            running_mean: vec![T::default(); out_ch],
            running_var: vec![T::of_f64(1.0); out_ch],
            slope: vec![T::of_f64(0.25); out_ch],
        });
        Self { in_ch, out_ch, w, bias, bn_prelu }
    }

    fn zeros_like(&self) -> Self {
        Self {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            w: vec![T::default(); self.w.len()],
            bias: vec![T::default(); self.bias.len()],
            bn_prelu: self.bn_prelu.as_ref().map(|bp| BnPrelu {
                gamma: vec![T::default(); bp.gamma.len()],
                beta: vec![T::default(); bp.beta.len()],
                running_mean: vec![T::default(); bp.running_mean.len()],
                running_var: vec![T::default(); bp.running_var.len()],
                slope: vec![T::default(); bp.slope.len()],
            }),
        }
    }
}

impl<T: Scalar> ConvNetParams<T> {
    /// The fixed 6-layer architecture for a given input channel count.
    pub fn paper_arch(in_channels: usize, seed: u64) -> Self {
        Self::with_plan(&[in_channels, 16, 32, 64, 64, 128, 2], seed)
    }

    /// Arbitrary channel plan (used by unit tests with small nets). All but
    /// the last layer carry BN + PReLU.
    pub fn with_plan(plan: &[usize], seed: u64) -> Self {
        assert!(plan.len() >= 2, "need at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = plan
            .windows(2)
            .enumerate()
            .map(|(i, io)| Layer::new(io[0], io[1], i + 2 < plan.len(), &mut rng))
            .collect();
        Self { layers }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn channel_plan(&self) -> Vec<usize> {
        let mut plan = vec![self.layers[0].in_ch];
        plan.extend(self.layers.iter().map(|l| l.out_ch));
        plan
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Layer::zeros_like).collect() }
    }

    pub fn map_to<U: Scalar>(&self) -> ConvNetParams<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::of_f64(x.as_f64())).collect::<Vec<U>>();
        ConvNetParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    w: conv(&l.w),
                    bias: conv(&l.bias),
                    bn_prelu: l.bn_prelu.as_ref().map(|bp| BnPrelu {
                        gamma: conv(&bp.gamma),
                        beta: conv(&bp.beta),
                        running_mean: conv(&bp.running_mean),
                        running_var: conv(&bp.running_var),
                        slope: conv(&bp.slope),
                    }),
                })
                .collect(),
        }
    }

    /// Trainable tensors in a fixed order (running stats excluded), as
    /// (label, accessor index) pairs used by Adam and the gradient checker.
    pub fn trainable_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("layer{i}.w"));
            out.push(format!("layer{i}.bias"));
            if l.bn_prelu.is_some() {
                out.push(format!("layer{i}.gamma"));
                out.push(format!("layer{i}.beta"));
                out.push(format!("layer{i}.slope"));
            }
        }
        out
    }

    pub fn trainable(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.bias);
            if let Some(bp) = &l.bn_prelu {
                out.push(&bp.gamma);
                out.push(&bp.beta);
                out.push(&bp.slope);
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.bias);
            if let Some(bp) = &mut l.bn_prelu {
                out.push(&mut bp.gamma);
                out.push(&mut bp.beta);
                out.push(&mut bp.slope);
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.trainable().iter().map(|v| v.len()).sum()
    }
}

struct BnCache<T> {
    xhat: Tensor3<T>,
    invstd: Vec<T>,
}

/// Activations and per-layer statistics retained for the backward pass.
pub struct ForwardCache<T> {
    mode: Mode,
    /// acts[l] is the input to layer l; acts[L] is the network output.
    acts: Vec<Tensor3<T>>,
    bn: Vec<Option<BnCache<T>>>,
    plan: Vec<usize>,
}

fn conv_forward<T: Scalar>(layer: &Layer<T>, x: &Tensor3<T>, out: &mut Tensor3<T>) {
    let t = x.time;
    for b in 0..x.batch {
        for o in 0..layer.out_ch {
            let orow = out.row_mut(b, o);
            let bias = layer.bias[o];
            orow.iter_mut().for_each(|v| *v = bias);
            for i in 0..layer.in_ch {
                let xr = x.row(b, i);
                let wbase = (o * layer.in_ch + i) * 3;
                let (w0, w1, w2) = (layer.w[wbase], layer.w[wbase + 1], layer.w[wbase + 2]);
                orow[0] = orow[0] + w1 * xr[0] + w2 * xr[1];
                for tt in 1..t - 1 {
                    orow[tt] = orow[tt] + w0 * xr[tt - 1] + w1 * xr[tt] + w2 * xr[tt + 1];
                }
                orow[t - 1] = orow[t - 1] + w0 * xr[t - 2] + w1 * xr[t - 1];
            }
        }
    }
}

fn conv_backward<T: Scalar>(
    layer: &Layer<T>,
    x: &Tensor3<T>,
    grad_out: &Tensor3<T>,
    grad_layer: &mut Layer<T>,
    grad_in: &mut Tensor3<T>,
) {
    let t = x.time;
    for b in 0..x.batch {
        for o in 0..layer.out_ch {
            let g = grad_out.row(b, o);
            grad_layer.bias[o] = grad_layer.bias[o] + g.iter().copied().sum::<T>();
            for i in 0..layer.in_ch {
                let xr = x.row(b, i);
                let wbase = (o * layer.in_ch + i) * 3;
                let mut gw0 = T::default();
                let mut gw1 = T::default();
                let mut gw2 = T::default();
                gw1 = gw1 + g[0] * xr[0];
                gw2 = gw2 + g[0] * xr[1];
                for tt in 1..t - 1 {
                    gw0 = gw0 + g[tt] * xr[tt - 1];
                    gw1 = gw1 + g[tt] * xr[tt];
                    gw2 = gw2 + g[tt] * xr[tt + 1];
                }
                gw0 = gw0 + g[t - 1] * xr[t - 2];
                gw1 = gw1 + g[t - 1] * xr[t - 1];
                grad_layer.w[wbase] = grad_layer.w[wbase] + gw0;
                grad_layer.w[wbase + 1] = grad_layer.w[wbase + 1] + gw1;
                grad_layer.w[wbase + 2] = grad_layer.w[wbase + 2] + gw2;

                let (w0, w1, w2) = (layer.w[wbase], layer.w[wbase + 1], layer.w[wbase + 2]);
                let gi = grad_in.row_mut(b, i);
                gi[0] = gi[0] + w1 * g[0] + w0 * g[1];
                for tt in 1..t - 1 {
                    gi[tt] = gi[tt] + w2 * g[tt - 1] + w1 * g[tt] + w0 * g[tt + 1];
                }
                gi[t - 1] = gi[t - 1] + w2 * g[t - 2] + w1 * g[t - 1];
            }
        }
    }
}

/// Forward pass. `Train` uses batch statistics for BN and returns the
/// running-stat updates to apply; `Eval` uses running statistics.
fn forward_impl<T: Scalar>(
    params: &ConvNetParams<T>,
    input: &Tensor3<T>,
    mode: Mode,
) -> Result<(Tensor3<T>, ForwardCache<T>, Vec<Option<(Vec<T>, Vec<T>)>>)> {
    if input.channels != params.in_channels() {
        return Err(DpdError::Shape(format!(
            "input has {} channels, net expects {}",
            input.channels,
            params.in_channels()
        )));
    }
    if input.time < 2 {
        return Err(DpdError::Shape("time dimension must be >= 2".into()));
    }
    let mut acts: Vec<Tensor3<T>> = Vec::with_capacity(params.layers.len() + 1);
    let mut bn_caches = Vec::with_capacity(params.layers.len());
    let mut running_updates = Vec::with_capacity(params.layers.len());
    acts.push(input.clone());

    for layer in &params.layers {
        let x = acts.last().unwrap();
        let mut z = Tensor3::zeros(x.batch, layer.out_ch, x.time);
        conv_forward(layer, x, &mut z);

        match &layer.bn_prelu {
            None => {
                bn_caches.push(None);
                running_updates.push(None);
                acts.push(z);
            }
            Some(bp) => {
                let n = (z.batch * z.time) as f64;
                let eps = T::of_f64(BN_EPS);
                let mut xhat = Tensor3::zeros(z.batch, z.channels, z.time);
                let mut invstd = vec![T::default(); z.channels];
                let mut batch_mean = vec![T::default(); z.channels];
                let mut batch_var = vec![T::default(); z.channels];
                for c in 0..z.channels {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mut s = T::default();
                            for b in 0..z.batch {
                                s = s + z.row(b, c).iter().copied().sum::<T>();
                            }
                            let mean = s / T::of_f64(n);
                            let mut v = T::default();
                            for b in 0..z.batch {
                                for &x in z.row(b, c) {
                                    let d = x - mean;
                                    v = v + d * d;
                                }
                            }
                            (mean, v / T::of_f64(n))
                        }
                        Mode::Eval => (bp.running_mean[c], bp.running_var[c]),
                    };
                    batch_mean[c] = mean;
                    batch_var[c] = var;
                    let istd = T::of_f64(1.0) / (var + eps).sqrt();
                    invstd[c] = istd;
                    let gamma = bp.gamma[c];
                    let beta = bp.beta[c];
                    let slope = bp.slope[c];
                    for b in 0..z.batch {
                        let zr = z.row(b, c);
                        let xr = xhat.row_mut(b, c);
                        for tt in 0..z.time {
                            xr[tt] = (zr[tt] - mean) * istd;
                        }
                    }
                    // PReLU applied in place on z using gamma*xhat+beta.
                    for b in 0..z.batch {
                        let start = (b * z.channels + c) * z.time;
                        for tt in 0..z.time {
                            let y = gamma * xhat.data[start + tt] + beta;
                            z.data[start + tt] = if y > T::default() { y } else { slope * y };
                        }
                    }
                }
                bn_caches.push(Some(BnCache { xhat, invstd }));
                running_updates.push(match mode {
                    Mode::Train => Some((batch_mean, batch_var)),
                    Mode::Eval => None,
                });
                acts.push(z);
            }
        }
    }

    let out = acts.last().unwrap().clone();
    let plan = params.channel_plan();
    Ok((out, ForwardCache { mode, acts, bn: bn_caches, plan }, running_updates))
}

/// Eval-mode forward: pure function of (params, input).
pub fn net_forward<T: Scalar>(
    params: &ConvNetParams<T>,
    input: &Tensor3<T>,
) -> Result<(Tensor3<T>, ForwardCache<T>)> {
    let (out, cache, _) = forward_impl(params, input, Mode::Eval)?;
    Ok((out, cache))
}

/// Train-mode forward: BN uses batch statistics and running stats are updated
/// with momentum [`BN_MOMENTUM`].
pub fn net_forward_train<T: Scalar>(
    params: &mut ConvNetParams<T>,
    input: &Tensor3<T>,
) -> Result<(Tensor3<T>, ForwardCache<T>)> {
    let (out, cache, updates) = forward_impl(params, input, Mode::Train)?;
    let mom = T::of_f64(BN_MOMENTUM);
    let keep = T::of_f64(1.0 - BN_MOMENTUM);
    for (layer, upd) in params.layers.iter_mut().zip(updates) {
        if let (Some(bp), Some((mean, var))) = (&mut layer.bn_prelu, upd) {
            for c in 0..bp.running_mean.len() {
                bp.running_mean[c] = keep * bp.running_mean[c] + mom * mean[c];
                bp.running_var[c] = keep * bp.running_var[c] + mom * var[c];
            }
        }
    }
    Ok((out, cache))
}

/// Replace the BN running statistics with the batch statistics of `input`
/// (a momentum-1 update). Used to pin Eval-mode behavior to the current
/// Train-mode behavior on a representative batch, e.g. before deploying a
/// network whose training inputs it generated itself.
pub fn recalibrate_bn<T: Scalar>(params: &mut ConvNetParams<T>, input: &Tensor3<T>) -> Result<()> {
    let (_, _, updates) = forward_impl(params, input, Mode::Train)?;
    for (layer, upd) in params.layers.iter_mut().zip(updates) {
        if let (Some(bp), Some((mean, var))) = (&mut layer.bn_prelu, upd) {
            bp.running_mean.copy_from_slice(&mean);
            bp.running_var.copy_from_slice(&var);
        }
    }
    Ok(())
}

/// Exact gradients of the forward computation. Returns parameter gradients
/// (same structure as the params, running-stat slots zero) and the gradient
/// with respect to the network input.
pub fn net_backward<T: Scalar>(
    params: &ConvNetParams<T>,
    cache: &ForwardCache<T>,
    output_grad: &Tensor3<T>,
) -> Result<(ConvNetParams<T>, Tensor3<T>)> {
    if cache.plan != params.channel_plan() || cache.acts.len() != params.layers.len() + 1 {
        return Err(DpdError::Shape("cache does not match network".into()));
    }
    let out = cache.acts.last().unwrap();
    if !output_grad.same_shape(out) {
        return Err(DpdError::Shape("output_grad shape mismatch".into()));
    }
    let mut grads = params.zeros_like();
    let mut g = output_grad.clone();

    for (l, layer) in params.layers.iter().enumerate().rev() {
        let x = &cache.acts[l]; // conv input
        // Undo PReLU and BN first (they run after the conv).
        if let (Some(bp), Some(bnc)) = (&layer.bn_prelu, &cache.bn[l]) {
            let gl = grads.layers[l].bn_prelu.as_mut().unwrap();
            let nt = (g.batch * g.time) as f64;
            for c in 0..layer.out_ch {
                let gamma = bp.gamma[c];
                let beta = bp.beta[c];
                let slope = bp.slope[c];
                let istd = bnc.invstd[c];
                // PReLU backward on y = gamma*xhat + beta.
                let mut dslope = T::default();
                let mut sum_dy = T::default();
                let mut sum_dy_xhat = T::default();
                for b in 0..g.batch {
                    let start = (b * g.channels + c) * g.time;
                    for tt in 0..g.time {
                        let xh = bnc.xhat.data[start + tt];
                        let y = gamma * xh + beta;
                        let mut dy = g.data[start + tt];
                        if y <= T::default() {
                            dslope = dslope + dy * y;
                            dy = dy * slope;
                        }
                        g.data[start + tt] = dy; // now grad wrt BN output
                        sum_dy = sum_dy + dy;
                        sum_dy_xhat = sum_dy_xhat + dy * xh;
                    }
                }
                gl.slope[c] = dslope;
                gl.gamma[c] = sum_dy_xhat;
                gl.beta[c] = sum_dy;
                // BN backward: batch-stat coupling only in Train mode.
                match cache.mode {
                    Mode::Train => {
                        let n = T::of_f64(nt);
                        for b in 0..g.batch {
                            let start = (b * g.channels + c) * g.time;
                            for tt in 0..g.time {
                                let xh = bnc.xhat.data[start + tt];
                                let dy = g.data[start + tt];
                                g.data[start + tt] =
                                    gamma * istd * (dy - sum_dy / n - xh * sum_dy_xhat / n);
                            }
                        }
                    }
                    Mode::Eval => {
                        let k = gamma * istd;
                        for b in 0..g.batch {
                            let start = (b * g.channels + c) * g.time;
                            for tt in 0..g.time {
                                g.data[start + tt] = g.data[start + tt] * k;
                            }
                        }
                    }
                }
            }
        }
        let mut grad_in = Tensor3::zeros(x.batch, x.channels, x.time);
        conv_backward(layer, x, &g, &mut grads.layers[l], &mut grad_in);
        g = grad_in;
    }
    Ok((grads, g))
}

/// Adam optimizer state, aligned with [`ConvNetParams::trainable`] order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ConvNetParams<T>) -> Self {
        let shapes: Vec<usize> = params.trainable().iter().map(|v| v.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![T::default(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::default(); n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction. The learning-rate schedule is the
/// trainer's job; `lr` is the rate for this step.
pub fn adam_step<T: Scalar>(
    params: &mut ConvNetParams<T>,
    grads: &ConvNetParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    let labels = params.trainable_labels();
    for (i, gv) in grads.trainable().iter().enumerate() {
        if gv.iter().any(|g| !g.as_f64().is_finite()) {
            return Err(DpdError::Divergence(format!("non-finite gradient in {}", labels[i])));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = T::of_f64(state.beta1);
    let b2 = T::of_f64(state.beta2);
    let one = T::of_f64(1.0);
    let bc1 = T::of_f64(1.0 - state.beta1.powf(t));
    let bc2 = T::of_f64(1.0 - state.beta2.powf(t));
    let lr_t = T::of_f64(lr);
    let eps = T::of_f64(state.eps);
    let gvs = grads.trainable();
    for (i, pv) in params.trainable_mut().into_iter().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let gv = gvs[i];
        for j in 0..pv.len() {
            let g = gv[j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            pv[j] = pv[j] - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central-difference gradient check in f64 over a random 1% parameter subset
/// plus all PReLU slopes and BN gammas. `loss_fn` maps network output to
/// (loss, dLoss/dOutput); the forward runs in Train mode.
pub fn grad_check<F>(
    params: &ConvNetParams<f64>,
    input: &Tensor3<f64>,
    loss_fn: &mut F,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor3<f64>) -> (f64, Tensor3<f64>),
{
    // Analytic gradients first, then the FD probe closure can own loss_fn.
    let mut p = params.clone();
    let (out, cache) = net_forward_train(&mut p, input)?;
    let (_, out_grad) = loss_fn(&out);
    let (grads, _) = net_backward(params, &cache, &out_grad)?;
    let mut eval = |p: &ConvNetParams<f64>| -> Result<f64> {
        let mut p = p.clone();
        let (out, _) = net_forward_train(&mut p, input)?;
        Ok(loss_fn(&out).0)
    };

    let labels = params.trainable_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    let analytic = grads.trainable();
    let mut perturbed = params.clone();
    for (ti, label) in labels.iter().enumerate() {
        let full = label.ends_with(".slope") || label.ends_with(".gamma");
        let len = analytic[ti].len();
        for j in 0..len {
            if !full && rng.gen::<f64>() > 0.01 {
                continue;
            }
            let orig = perturbed.trainable()[ti][j];
            perturbed.trainable_mut()[ti][j] = orig + h;
            let lp = eval(&perturbed)?;
            perturbed.trainable_mut()[ti][j] = orig - h;
            let lm = eval(&perturbed)?;
            perturbed.trainable_mut()[ti][j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{label}[{j}] analytic {a:.6e} numeric {numeric:.6e}");
            }
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, worst, checked })
}

fn push_tensor(buf: &mut Vec<u8>, v: &[f32]) {
    for &x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn take_tensor(payload: &[u8], pos: &mut usize, len: usize) -> Result<Vec<f32>> {
    let bytes = len * 4;
    if *pos + bytes > payload.len() {
        return Err(DpdError::Truncated(format!("tensor of {len} floats at offset {pos}")));
    }
    let out = payload[*pos..*pos + bytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *pos += bytes;
    Ok(out)
}

/// Write the "DPN1" weight file: magic, layer table, f32 LE tensors in
/// declared order, trailing SHA-256 checksum.
pub fn save_params(params: &ConvNetParams<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&DPN_MAGIC);
    buf.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        buf.extend_from_slice(&(l.in_ch as u32).to_le_bytes());
        buf.extend_from_slice(&(l.out_ch as u32).to_le_bytes());
        buf.push(l.bn_prelu.is_some() as u8);
    }
    for l in &params.layers {
        push_tensor(&mut buf, &l.w);
        push_tensor(&mut buf, &l.bias);
        if let Some(bp) = &l.bn_prelu {
            push_tensor(&mut buf, &bp.gamma);
            push_tensor(&mut buf, &bp.beta);
            push_tensor(&mut buf, &bp.running_mean);
            push_tensor(&mut buf, &bp.running_var);
            push_tensor(&mut buf, &bp.slope);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a "DPN1" weight file written by [`save_params`].
pub fn load_params(path: &Path) -> Result<ConvNetParams<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 4 + 4 + 32 {
        return Err(DpdError::Truncated("file shorter than header + checksum".into()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != DPN_MAGIC {
        return Err(DpdError::BadMagic { expected: DPN_MAGIC, got: magic });
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(DpdError::ChecksumMismatch);
    }
    let n_layers = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
    let table_end = 8 + n_layers * 9;
    if body.len() < table_end {
        return Err(DpdError::Truncated("layer table".into()));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let off = 8 + i * 9;
        let in_ch = u32::from_le_bytes(body[off..off + 4].try_into().unwrap()) as usize;
        let out_ch = u32::from_le_bytes(body[off + 4..off + 8].try_into().unwrap()) as usize;
        let has_bn = body[off + 8] != 0;
        shapes.push((in_ch, out_ch, has_bn));
    }
    let payload = &body[table_end..];
    let mut pos = 0usize;
    let mut layers = Vec::with_capacity(n_layers);
    for &(in_ch, out_ch, has_bn) in &shapes {
        let w = take_tensor(payload, &mut pos, out_ch * in_ch * 3)?;
        let bias = take_tensor(payload, &mut pos, out_ch)?;
        let bn_prelu = if has_bn {
            Some(BnPrelu {
                gamma: take_tensor(payload, &mut pos, out_ch)?,
                beta: take_tensor(payload, &mut pos, out_ch)?,
                running_mean: take_tensor(payload, &mut pos, out_ch)?,
                running_var: take_tensor(payload, &mut pos, out_ch)?,
                slope: take_tensor(payload, &mut pos, out_ch)?,
            })
        } else {
            None
        };
        layers.push(Layer { in_ch, out_ch, w, bias, bn_prelu });
    }
    Ok(ConvNetParams { layers })
}

/// Load and require the fixed 6-layer plan for `in_channels` inputs.
pub fn load_params_checked(path: &Path, in_channels: usize) -> Result<ConvNetParams<f32>> {
    let params = load_params(path)?;
    let expected = vec![in_channels, 16, 32, 64, 64, 128, 2];
    if params.channel_plan() != expected {
        return Err(DpdError::Shape(format!(
            "weight file plan {:?} does not match expected {:?}",
            params.channel_plan(),
            expected
        )));
    }
    Ok(params)
}
