//! Two training stages: the conditional PA surrogate (PAN) learned against
//! the virtual PA, then the pre-distortion network (PDN) trained end-to-end
//! through the frozen PAN. Plus dataset windowing, streaming inference and
//! the evaluation harness.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::iqsig::{align, normalize_rms, IqSignal};
use crate::losses::{combined, LossValue, LossWeights};
use crate::mpdpd::{mp_apply, MpCoeffs};
use crate::spectra::{aclr, mse_dbc, oob_reduction, BandPlan, StftParams};
use crate::tinynet::{
    adam_step, net_backward, net_forward, net_forward_train, recalibrate_bn, AdamState,
    ConvNetParams, Tensor3,
};
use crate::vpa::{pa_response, PaCondition};
use crate::{DpdError, Result};

/// Network input/output window length in samples.
pub const WINDOW_LEN: usize = 128;
/// Streaming-inference hop; the central samples of each window are retained.
pub const INFER_HOP: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub batch_pan: usize,
    pub batch_pdn: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    #[serde(default)]
    pub desk_scale: Option<DeskScale>,
}

/// Smaller-run overrides for desk/CI scale. Loss definitions never change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskScale {
    pub epochs: Option<usize>,
    pub max_windows: Option<usize>,
}

impl Default for TrainConfig {
    /// Full-paper configuration: 4000 epochs, lr 0.01 divided by 10 every
    /// 1000 epochs, batches 512/256.
    fn default() -> Self {
        Self {
            epochs: 4000,
            lr0: 0.01,
            lr_decay_every: 1000,
            lr_decay_factor: 10.0,
            batch_pan: 512,
            batch_pdn: 256,
            loss_weights: LossWeights::all_three(),
            seed: 1,
            desk_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.lr_decay_every == 0
            || self.batch_pan == 0
            || self.batch_pdn == 0
            || !(self.lr0 > 0.0)
            || !(self.lr_decay_factor > 0.0)
        {
            return Err(DpdError::Config("train config fields must be positive".into()));
        }
        self.loss_weights.validate()
    }

    pub fn effective_epochs(&self) -> usize {
        self.desk_scale.as_ref().and_then(|d| d.epochs).unwrap_or(self.epochs)
    }

    pub fn max_windows(&self) -> Option<usize> {
        self.desk_scale.as_ref().and_then(|d| d.max_windows)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 / self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// One aligned (input, PA output) frame pair for PAN training.
#[derive(Debug, Clone)]
pub struct PanExample {
    pub cond_idx: usize,
    pub input: IqSignal,
    pub target: IqSignal,
}

/// Number of contiguous non-overlapping training windows in a frame.
pub fn num_windows(frame_len: usize) -> Result<usize> {
    if frame_len < WINDOW_LEN {
        return Err(DpdError::Shape(format!("frame of {frame_len} samples is shorter than one window")));
    }
    Ok(frame_len / WINDOW_LEN)
}

fn put_complex_window(t: &mut Tensor3<f32>, b: usize, ch_i: usize, ch_q: usize, w: &[Complex64]) {
    for (n, v) in w.iter().enumerate() {
        t.row_mut(b, ch_i)[n] = v.re as f32;
        t.row_mut(b, ch_q)[n] = v.im as f32;
    }
}

/// PAN windowing: input channels are I, Q plus a one-hot condition channel
/// block broadcast across time; targets are the PA-output windows.
pub fn make_pan_windows(
    x: &IqSignal,
    y: &IqSignal,
    cond_idx: usize,
    num_conditions: usize,
) -> Result<(Tensor3<f32>, Tensor3<f32>)> {
    if x.len() != y.len() {
        return Err(DpdError::Shape("input/target frame lengths differ".into()));
    }
    if cond_idx >= num_conditions {
        return Err(DpdError::Config("condition index out of range".into()));
    }
    let k = num_windows(x.len())?;
    let mut input = Tensor3::zeros(k, 2 + num_conditions, WINDOW_LEN);
    let mut target = Tensor3::zeros(k, 2, WINDOW_LEN);
    for w in 0..k {
        let s = w * WINDOW_LEN;
        put_complex_window(&mut input, w, 0, 1, &x.samples[s..s + WINDOW_LEN]);
        input.row_mut(w, 2 + cond_idx).iter_mut().for_each(|v| *v = 1.0);
        put_complex_window(&mut target, w, 0, 1, &y.samples[s..s + WINDOW_LEN]);
    }
    Ok((input, target))
}

/// PDN windowing: channels are current input I,Q; previous transmitted
/// (pre-distorted) block I,Q; previous PA-output block I,Q. The first window
/// of a frame gets zero previous-pair channels.
pub fn make_pdn_windows(
    x: &IqSignal,
    transmitted: &IqSignal,
    pa_output: &IqSignal,
) -> Result<Tensor3<f32>> {
    if x.len() != transmitted.len() || x.len() != pa_output.len() {
        return Err(DpdError::Shape("pdn window signals must share a length".into()));
    }
    let k = num_windows(x.len())?;
    let mut input = Tensor3::zeros(k, 6, WINDOW_LEN);
    for w in 0..k {
        let s = w * WINDOW_LEN;
        put_complex_window(&mut input, w, 0, 1, &x.samples[s..s + WINDOW_LEN]);
        if w > 0 {
            let p = s - WINDOW_LEN;
            put_complex_window(&mut input, w, 2, 3, &transmitted.samples[p..p + WINDOW_LEN]);
            put_complex_window(&mut input, w, 4, 5, &pa_output.samples[p..p + WINDOW_LEN]);
        }
    }
    Ok(input)
}

/// Per-epoch training log entry (serialized as a JSON line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch: usize,
    pub lr: f64,
    pub tmse: f64,
    pub fmae: f64,
    pub fspec: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ConvNetParams<f32>,
    pub history: Vec<TrainLog>,
    /// Training hit a non-finite loss and `params` is the last good epoch.
    pub diverged: bool,
}

fn mean_log(epoch: usize, lr: f64, acc: &[LossValue]) -> TrainLog {
    let n = acc.len().max(1) as f64;
    TrainLog {
        epoch,
        lr,
        tmse: acc.iter().map(|v| v.tmse).sum::<f64>() / n,
        fmae: acc.iter().map(|v| v.fmae).sum::<f64>() / n,
        fspec: acc.iter().map(|v| v.fspec).sum::<f64>() / n,
        total: acc.iter().map(|v| v.total).sum::<f64>() / n,
    }
}

/// Stage 1: train the conditional PAN to reproduce the virtual PA's output
/// windows under every training condition.
pub fn train_pan(
    examples: &[PanExample],
    num_conditions: usize,
    cfg: &TrainConfig,
    loss_stft: &StftParams,
    bp: &BandPlan,
) -> Result<TrainResult> {
    train_pan_resumed(examples, num_conditions, cfg, loss_stft, bp, None)
}

/// [`train_pan`] continuing from checkpointed parameters at a given epoch.
/// Optimizer state restarts; the learning-rate schedule and epoch counter
/// pick up where the checkpoint left off.
pub fn train_pan_resumed(
    examples: &[PanExample],
    num_conditions: usize,
    cfg: &TrainConfig,
    loss_stft: &StftParams,
    bp: &BandPlan,
    resume: Option<(ConvNetParams<f32>, usize)>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if num_conditions < 2 {
        return Err(DpdError::Config("PAN training needs at least 2 conditions".into()));
    }
    if examples.is_empty() {
        return Err(DpdError::Config("no PAN training examples".into()));
    }
    let rate = examples[0].input.sample_rate_hz;

    // Materialize all windows once.
    let mut inputs: Vec<Tensor3<f32>> = Vec::new();
    let mut targets: Vec<Tensor3<f32>> = Vec::new();
    for ex in examples {
        let (i, t) = make_pan_windows(&ex.input, &ex.target, ex.cond_idx, num_conditions)?;
        inputs.push(i);
        targets.push(t);
    }
    // Flatten into one pool.
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (fi, t) in inputs.iter().enumerate() {
        for w in 0..t.batch {
            pool.push((fi, w));
        }
    }
    if let Some(maxw) = cfg.max_windows() {
        pool.truncate(maxw);
    }

    let (mut params, start_epoch) = match resume {
        Some((p, e)) => (p, e),
        None => (ConvNetParams::<f32>::paper_arch(2 + num_conditions, cfg.seed), 0),
    };
    let mut adam = AdamState::new(&params);
    let mut history = Vec::new();
    let mut last_good = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b97f4a7c15));

    for epoch in start_epoch..cfg.effective_epochs() {
        let lr = cfg.lr_at(epoch);
        pool.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        let mut diverged = false;
        for chunk in pool.chunks(cfg.batch_pan) {
            let mut bi = Tensor3::zeros(chunk.len(), 2 + num_conditions, WINDOW_LEN);
            let mut bt = Tensor3::zeros(chunk.len(), 2, WINDOW_LEN);
            for (row, &(fi, w)) in chunk.iter().enumerate() {
                for c in 0..bi.channels {
                    bi.row_mut(row, c).copy_from_slice(inputs[fi].row(w, c));
                }
                for c in 0..2 {
                    bt.row_mut(row, c).copy_from_slice(targets[fi].row(w, c));
                }
            }
            let (out, cache) = net_forward_train(&mut params, &bi)?;
            let (loss, grad) = combined(&bt, &out, &cfg.loss_weights, loss_stft, bp, rate)?;
            if !loss.total.is_finite() {
                diverged = true;
                break;
            }
            let (grads, _) = net_backward(&params, &cache, &grad)?;
            if let Err(DpdError::Divergence(_)) = adam_step(&mut params, &grads, &mut adam, lr) {
                diverged = true;
                break;
            }
            epoch_losses.push(loss);
        }
        if diverged {
            return Ok(TrainResult { params: last_good, history, diverged: true });
        }
        history.push(mean_log(epoch, lr, &epoch_losses));
        last_good = params.clone();
    }
    Ok(TrainResult { params, history, diverged: false })
}

fn one_hot(num_conditions: usize, cond_idx: usize) -> Vec<f32> {
    let mut v = vec![0.0; num_conditions];
    v[cond_idx] = 1.0;
    v
}

/// Run a network over a full frame with extra constant channels, using
/// hop-64 windows and retaining the central 64 samples of each (edges widen
/// to cover the frame). Output length equals input length.
pub fn apply_net_streaming(
    params: &ConvNetParams<f32>,
    extra_channels: &[f32],
    frame: &IqSignal,
) -> Result<IqSignal> {
    let n0 = frame.len();
    let padded = pad_to_infer_grid(frame);
    let n = padded.len();
    let k = (n - WINDOW_LEN) / INFER_HOP + 1;
    let ch = 2 + extra_channels.len();
    let mut input = Tensor3::zeros(k, ch, WINDOW_LEN);
    for w in 0..k {
        let s = w * INFER_HOP;
        put_complex_window(&mut input, w, 0, 1, &padded[s..s + WINDOW_LEN]);
        for (ci, &v) in extra_channels.iter().enumerate() {
            input.row_mut(w, 2 + ci).iter_mut().for_each(|x| *x = v);
        }
    }
    let (out, _) = net_forward(params, &input)?;
    let mut samples = vec![Complex64::default(); n];
    for w in 0..k {
        let s = w * INFER_HOP;
        let (a, b) = retained_range(w, k);
        for t in a..b {
            samples[s + t] =
                Complex64::new(out.row(w, 0)[t] as f64, out.row(w, 1)[t] as f64);
        }
    }
    samples.truncate(n0);
    IqSignal::new(samples, frame.sample_rate_hz)
}

fn pad_to_infer_grid(frame: &IqSignal) -> Vec<Complex64> {
    let mut v = frame.samples.clone();
    let n = v.len().max(WINDOW_LEN);
    let n = n.div_ceil(INFER_HOP) * INFER_HOP;
    v.resize(n, Complex64::default());
    v
}

/// Retained sample range inside window `w` of `k` total.
fn retained_range(w: usize, k: usize) -> (usize, usize) {
    if k == 1 {
        return (0, WINDOW_LEN);
    }
    let a = if w == 0 { 0 } else { WINDOW_LEN / 4 };
    let b = if w == k - 1 { WINDOW_LEN } else { WINDOW_LEN / 4 + INFER_HOP };
    (a, b)
}

/// Per-window unit-RMS normalization with backward support.
struct NormCache {
    normalized: Tensor3<f32>,
    inv_rms: Vec<f32>,
}

fn normalize_windows(y: &Tensor3<f32>) -> NormCache {
    let n = (y.channels * y.time) as f32;
    let mut out = y.clone();
    let mut inv = Vec::with_capacity(y.batch);
    for b in 0..y.batch {
        let start = b * y.channels * y.time;
        let seg = &mut out.data[start..start + y.channels * y.time];
        let p: f32 = seg.iter().map(|v| v * v).sum();
        let r = (p / n).sqrt().max(1e-20);
        let ir = 1.0 / r;
        seg.iter_mut().for_each(|v| *v *= ir);
        inv.push(ir);
    }
    NormCache { normalized: out, inv_rms: inv }
}

/// Scale each batch row by its own constant factor (forward and backward of
/// the target-RMS rescaling are the same linear map).
fn scale_rows(t: &Tensor3<f32>, factors: &[f32]) -> Tensor3<f32> {
    debug_assert_eq!(t.batch, factors.len());
    let mut out = t.clone();
    let len = t.channels * t.time;
    for b in 0..t.batch {
        let f = factors[b];
        out.data[b * len..(b + 1) * len].iter_mut().for_each(|v| *v *= f);
    }
    out
}

/// Estimate the small-signal complex gain of a frame-level linear map by a
/// least-squares fit on a 0.01-RMS probe.
pub fn small_signal_gain<F>(apply: &mut F, probe_frame: &IqSignal) -> Result<Complex64>
where
    F: FnMut(&IqSignal) -> Result<IqSignal>,
{
    let probe = normalize_rms(probe_frame, 0.01)?;
    let resp = apply(&probe)?;
    let a = align(&probe, &resp)?;
    Ok(Complex64::from_polar(a.gain, a.phase_rad))
}

/// Stage 2: train the PDN through the frozen PAN. Per epoch each frame is
/// assigned a uniformly sampled condition, a refresh pass regenerates the
/// previous-pair conditioning signals with the current PDN, and batches then
/// train the PDN against the amplitude-normalized ideal response g0 * x.
pub fn train_pdn(
    pan: &ConvNetParams<f32>,
    frames: &[IqSignal],
    num_conditions: usize,
    cfg: &TrainConfig,
    loss_stft: &StftParams,
    bp: &BandPlan,
) -> Result<TrainResult> {
    train_pdn_resumed(pan, frames, num_conditions, cfg, loss_stft, bp, None)
}

/// [`train_pdn`] continuing from checkpointed parameters at a given epoch.
pub fn train_pdn_resumed(
    pan: &ConvNetParams<f32>,
    frames: &[IqSignal],
    num_conditions: usize,
    cfg: &TrainConfig,
    loss_stft: &StftParams,
    bp: &BandPlan,
    resume: Option<(ConvNetParams<f32>, usize)>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(DpdError::Config("no PDN training frames".into()));
    }
    let rate = frames[0].sample_rate_hz;
    let (mut pdn, start_epoch) = match resume {
        Some((p, e)) => (p, e),
        None => (ConvNetParams::<f32>::paper_arch(6, cfg.seed.wrapping_add(1)), 0),
    };
    let mut adam = AdamState::new(&pdn);
    let mut history = Vec::new();
    let mut last_good = pdn.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x2545f4914f6cdd1d));

    // Ideal linear response per condition: PAN small-signal gain.
    let mut g0 = Vec::with_capacity(num_conditions);
    for c in 0..num_conditions {
        let hot = one_hot(num_conditions, c);
        let mut apply = |s: &IqSignal| apply_net_streaming(pan, &hot, s);
        g0.push(small_signal_gain(&mut apply, &frames[0])?);
    }

    for epoch in start_epoch..cfg.effective_epochs() {
        let lr = cfg.lr_at(epoch);
        // Condition assignment and refresh pass.
        let mut window_inputs: Vec<Tensor3<f32>> = Vec::new();
        let mut window_targets: Vec<Tensor3<f32>> = Vec::new();
        let mut window_target_irs: Vec<Vec<f32>> = Vec::new();
        let mut window_conds: Vec<usize> = Vec::new();
        for frame in frames {
            let cond = (rand::Rng::gen_range(&mut rng, 0..num_conditions as u32)) as usize;
            let hot = one_hot(num_conditions, cond);
            // Before any training has happened the Eval-mode PDN is random
            // and its window-to-window recursion can amplify without bound,
            // so the very first epoch uses the identity compensator for the
            // history pass: u = x, y = PAN(x | cond). Unlike zero channels
            // this exposes the condition through the history pair from the
            // first gradient step onward.
            let (u_sig, y_sig) = if epoch == 0 {
                let y0 = apply_net_streaming(pan, &hot, frame)?;
                (frame.clone(), y0)
            } else {
                pdn_refresh_pass(&pdn, pan, &hot, frame)?
            };
            let input = make_pdn_windows(frame, &u_sig, &y_sig)?;
            // Target: g0 * x windows, rescaled to unit RMS per window. The
            // prediction is rescaled by the SAME target-derived factor, so
            // the objective stays amplitude-aware (a collapsed low-power
            // output cannot fake linearity) while windows of different
            // power contribute comparably.
            let k = input.batch;
            let mut target = Tensor3::zeros(k, 2, WINDOW_LEN);
            for w in 0..k {
                let s = w * WINDOW_LEN;
                let scaled: Vec<Complex64> =
                    frame.samples[s..s + WINDOW_LEN].iter().map(|v| v * g0[cond]).collect();
                put_complex_window(&mut target, w, 0, 1, &scaled);
            }
            let tn = normalize_windows(&target);
            window_inputs.push(input);
            window_targets.push(tn.normalized);
            window_target_irs.push(tn.inv_rms);
            window_conds.push(cond);
        }
        let mut pool: Vec<(usize, usize)> = Vec::new();
        for (fi, t) in window_inputs.iter().enumerate() {
            for w in 0..t.batch {
                pool.push((fi, w));
            }
        }
        if let Some(maxw) = cfg.max_windows() {
            pool.truncate(maxw);
        }
        pool.shuffle(&mut rng);

        let mut epoch_losses = Vec::new();
        let mut diverged = false;
        // Eval-mode statistics are re-pinned after the epoch from a sample
        // of this epoch's inputs; a single small chunk is too noisy and the
        // jitter feeds back through the history recursion, so gather rows
        // until a stable sample size is reached.
        const CALIB_WINDOWS: usize = 128;
        let mut calib_rows: Vec<Tensor3<f32>> = Vec::new();
        let mut calib_count = 0usize;
        for chunk in pool.chunks(cfg.batch_pdn) {
            // PDN forward (Train mode).
            let mut bi = Tensor3::zeros(chunk.len(), 6, WINDOW_LEN);
            let mut bt = Tensor3::zeros(chunk.len(), 2, WINDOW_LEN);
            let mut pan_in = Tensor3::zeros(chunk.len(), 2 + num_conditions, WINDOW_LEN);
            let mut target_irs = Vec::with_capacity(chunk.len());
            for (row, &(fi, w)) in chunk.iter().enumerate() {
                target_irs.push(window_target_irs[fi][w]);
                for c in 0..6 {
                    bi.row_mut(row, c).copy_from_slice(window_inputs[fi].row(w, c));
                }
                for c in 0..2 {
                    bt.row_mut(row, c).copy_from_slice(window_targets[fi].row(w, c));
                }
                pan_in.row_mut(row, 2 + window_conds[fi]).iter_mut().for_each(|v| *v = 1.0);
            }
            if calib_count < CALIB_WINDOWS {
                calib_rows.push(bi.clone());
                calib_count += bi.batch;
            }
            let (u, pdn_cache) = net_forward_train(&mut pdn, &bi)?;
            for row in 0..chunk.len() {
                for c in 0..2 {
                    pan_in.row_mut(row, c).copy_from_slice(u.row(row, c));
                }
            }
            // Frozen PAN in Eval mode.
            let (y, pan_cache) = net_forward(pan, &pan_in)?;
            let y_scaled = scale_rows(&y, &target_irs);
            let (loss, grad_scaled) =
                combined(&bt, &y_scaled, &cfg.loss_weights, loss_stft, bp, rate)?;
            if !loss.total.is_finite() {
                diverged = true;
                break;
            }
            let grad_y = scale_rows(&grad_scaled, &target_irs);
            let (_, pan_input_grad) = net_backward(pan, &pan_cache, &grad_y)?;
            // Only the signal channels flow back into the PDN.
            let mut grad_u = Tensor3::zeros(chunk.len(), 2, WINDOW_LEN);
            for row in 0..chunk.len() {
                for c in 0..2 {
                    grad_u.row_mut(row, c).copy_from_slice(pan_input_grad.row(row, c));
                }
            }
            let (grads, _) = net_backward(&pdn, &pdn_cache, &grad_u)?;
            if let Err(DpdError::Divergence(_)) = adam_step(&mut pdn, &grads, &mut adam, lr) {
                diverged = true;
                break;
            }
            epoch_losses.push(loss);
        }
        if diverged {
            return Ok(TrainResult { params: last_good, history, diverged: true });
        }
        // Pin the Eval-mode statistics to this epoch's data so the network
        // that generates next epoch's history (and the one that ships) is
        // behaviorally the trained one. Without this the Eval/Train split
        // drifts: the refresh recursion then feeds the trainer inputs the
        // deployed network will never reproduce.
        if !calib_rows.is_empty() {
            let mut calib = Tensor3::zeros(calib_count, 6, WINDOW_LEN);
            let mut row = 0;
            for t in &calib_rows {
                for w in 0..t.batch {
                    for c in 0..6 {
                        calib.row_mut(row, c).copy_from_slice(t.row(w, c));
                    }
                    row += 1;
                }
            }
            recalibrate_bn(&mut pdn, &calib)?;
        }
        history.push(mean_log(epoch, lr, &epoch_losses));
        last_good = pdn.clone();
    }
    Ok(TrainResult { params: pdn, history, diverged: false })
}

/// Sequentially run the current PDN and frozen PAN over a frame on the
/// non-overlapping training grid, producing the transmitted (pre-distorted)
/// and PA-output signals used as previous-pair conditioning.
fn pdn_refresh_pass(
    pdn: &ConvNetParams<f32>,
    pan: &ConvNetParams<f32>,
    one_hot: &[f32],
    frame: &IqSignal,
) -> Result<(IqSignal, IqSignal)> {
    let k = num_windows(frame.len())?;
    let mut u_sig = vec![Complex64::default(); frame.len()];
    let mut y_sig = vec![Complex64::default(); frame.len()];
    let num_conditions = one_hot.len();
    // History-channel safety clamp. Early in training the PDN's
    // window-to-window recursion can amplify; clipping the recorded history
    // at 8x the frame RMS (well above OFDM peak factors, so inactive once
    // the network is trained) keeps the generated conditioning finite.
    let clamp = 8.0 * frame.rms();
    let clip = |v: Complex64| {
        let m = v.norm();
        if m.is_finite() && m <= clamp {
            v
        } else if m.is_finite() && m > 0.0 {
            v * (clamp / m)
        } else {
            Complex64::default()
        }
    };
    for w in 0..k {
        let s = w * WINDOW_LEN;
        let mut input = Tensor3::zeros(1, 6, WINDOW_LEN);
        put_complex_window(&mut input, 0, 0, 1, &frame.samples[s..s + WINDOW_LEN]);
        if w > 0 {
            let p = s - WINDOW_LEN;
            put_complex_window(&mut input, 0, 2, 3, &u_sig[p..p + WINDOW_LEN]);
            put_complex_window(&mut input, 0, 4, 5, &y_sig[p..p + WINDOW_LEN]);
        }
        let (u, _) = net_forward(pdn, &input)?;
        let mut pan_in = Tensor3::zeros(1, 2 + num_conditions, WINDOW_LEN);
        for c in 0..2 {
            pan_in.row_mut(0, c).copy_from_slice(u.row(0, c));
        }
        for (ci, &v) in one_hot.iter().enumerate() {
            pan_in.row_mut(0, 2 + ci).iter_mut().for_each(|x| *x = v);
        }
        let (y, _) = net_forward(pan, &pan_in)?;
        for t in 0..WINDOW_LEN {
            u_sig[s + t] = clip(Complex64::new(u.row(0, 0)[t] as f64, u.row(0, 1)[t] as f64));
            y_sig[s + t] = clip(Complex64::new(y.row(0, 0)[t] as f64, y.row(0, 1)[t] as f64));
        }
    }
    Ok((
        IqSignal { samples: u_sig, sample_rate_hz: frame.sample_rate_hz },
        IqSignal { samples: y_sig, sample_rate_hz: frame.sample_rate_hz },
    ))
}

/// Per-window feedback used during streaming inference to maintain the
/// previous PA-output channel; maps a transmitted 128-sample block to the
/// PA's response.
pub type FeedbackFn<'a> = dyn FnMut(&[Complex64]) -> Result<Vec<Complex64>> + 'a;

/// Streaming PDN inference: hop-64 overlap-save over the frame, keeping the
/// central samples of each window, with previous-pair channels maintained
/// from the running history. Output length equals input length.
pub fn pdn_infer(
    pdn: &ConvNetParams<f32>,
    frame: &IqSignal,
    feedback: Option<&mut FeedbackFn<'_>>,
) -> Result<IqSignal> {
    let (out, _) = pdn_infer_impl(pdn, frame, feedback, false)?;
    Ok(out)
}

/// Same traversal as [`pdn_infer`] but the network forward runs once over
/// all windows as a batch (after the sequential history pass). Exists to
/// check streaming/batch equivalence.
pub fn pdn_infer_batched(
    pdn: &ConvNetParams<f32>,
    frame: &IqSignal,
    feedback: Option<&mut FeedbackFn<'_>>,
) -> Result<IqSignal> {
    let (_, inputs) = pdn_infer_impl(pdn, frame, feedback, true)?;
    let inputs = inputs.expect("requested");
    let n0 = frame.len();
    let padded = pad_to_infer_grid(frame);
    let n = padded.len();
    let k = inputs.batch;
    let (out, _) = net_forward(pdn, &inputs)?;
    let mut samples = vec![Complex64::default(); n];
    for w in 0..k {
        let s = w * INFER_HOP;
        let (a, b) = retained_range(w, k);
        for t in a..b {
            samples[s + t] = Complex64::new(out.row(w, 0)[t] as f64, out.row(w, 1)[t] as f64);
        }
    }
    samples.truncate(n0);
    IqSignal::new(samples, frame.sample_rate_hz)
}

fn pdn_infer_impl(
    pdn: &ConvNetParams<f32>,
    frame: &IqSignal,
    mut feedback: Option<&mut FeedbackFn<'_>>,
    keep_inputs: bool,
) -> Result<(IqSignal, Option<Tensor3<f32>>)> {
    let n0 = frame.len();
    let padded = pad_to_infer_grid(frame);
    let n = padded.len();
    let k = (n - WINDOW_LEN) / INFER_HOP + 1;
    let mut u_hist = vec![Complex64::default(); n];
    let mut y_hist = vec![Complex64::default(); n];
    let mut kept = keep_inputs.then(|| Tensor3::zeros(k, 6, WINDOW_LEN));
    for w in 0..k {
        let s = w * INFER_HOP;
        let mut input = Tensor3::zeros(1, 6, WINDOW_LEN);
        put_complex_window(&mut input, 0, 0, 1, &padded[s..s + WINDOW_LEN]);
        if s >= WINDOW_LEN {
            let p = s - WINDOW_LEN;
            put_complex_window(&mut input, 0, 2, 3, &u_hist[p..p + WINDOW_LEN]);
            put_complex_window(&mut input, 0, 4, 5, &y_hist[p..p + WINDOW_LEN]);
        } else if s > 0 {
            // Partial history at the frame start.
            let avail = s;
            let mut ubuf = vec![Complex64::default(); WINDOW_LEN];
            let mut ybuf = vec![Complex64::default(); WINDOW_LEN];
            ubuf[WINDOW_LEN - avail..].copy_from_slice(&u_hist[..avail]);
            ybuf[WINDOW_LEN - avail..].copy_from_slice(&y_hist[..avail]);
            put_complex_window(&mut input, 0, 2, 3, &ubuf);
            put_complex_window(&mut input, 0, 4, 5, &ybuf);
        }
        if let Some(t) = &mut kept {
            for c in 0..6 {
                t.row_mut(w, c).copy_from_slice(input.row(0, c));
            }
        }
        let (out, _) = net_forward(pdn, &input)?;
        let u_w: Vec<Complex64> = (0..WINDOW_LEN)
            .map(|t| Complex64::new(out.row(0, 0)[t] as f64, out.row(0, 1)[t] as f64))
            .collect();
        let y_w = match feedback.as_deref_mut() {
            Some(f) => f(&u_w)?,
            None => vec![Complex64::default(); WINDOW_LEN],
        };
        if y_w.len() != WINDOW_LEN {
            return Err(DpdError::Shape("feedback must return a full window".into()));
        }
        let (a, b) = retained_range(w, k);
        for t in a..b {
            u_hist[s + t] = u_w[t];
            y_hist[s + t] = y_w[t];
        }
    }
    u_hist.truncate(n0);
    let out = IqSignal::new(u_hist, frame.sample_rate_hz)?;
    Ok((out, kept))
}

/// How well the trained PAN mimics the virtual-PA oracle for one condition
/// on held-out frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanFidelity {
    pub condition: PaCondition,
    /// Residual power of PAN output vs oracle output, dB relative to carrier.
    pub mse_dbc: f64,
    pub pan_aclr_h_db: f64,
    pub pan_aclr_l_db: f64,
    pub oracle_aclr_h_db: f64,
    pub oracle_aclr_l_db: f64,
}

impl PanFidelity {
    pub fn aclr_err_h_db(&self) -> f64 {
        self.pan_aclr_h_db - self.oracle_aclr_h_db
    }

    pub fn aclr_err_l_db(&self) -> f64 {
        self.pan_aclr_l_db - self.oracle_aclr_l_db
    }
}

/// Measure PAN-vs-oracle agreement on held-out frames for one condition.
pub fn pan_fidelity(
    pan: &ConvNetParams<f32>,
    num_conditions: usize,
    cond_idx: usize,
    cond: &PaCondition,
    frames: &[IqSignal],
    eval_stft: &StftParams,
    bp: &BandPlan,
) -> Result<PanFidelity> {
    if frames.is_empty() {
        return Err(DpdError::Config("no evaluation frames".into()));
    }
    let rate = frames[0].sample_rate_hz;
    let hot = one_hot(num_conditions, cond_idx);
    let mut pan_cat = Vec::new();
    let mut oracle_cat = Vec::new();
    for frame in frames {
        pan_cat.extend(apply_net_streaming(pan, &hot, frame)?.samples);
        oracle_cat.extend(pa_response(cond, frame)?.samples);
    }
    let pan_out = IqSignal::new(pan_cat, rate)?;
    let oracle_out = IqSignal::new(oracle_cat, rate)?;
    let ap = aclr(&pan_out, eval_stft, bp)?;
    let ao = aclr(&oracle_out, eval_stft, bp)?;
    Ok(PanFidelity {
        condition: *cond,
        mse_dbc: mse_dbc(&oracle_out, &pan_out)?,
        pan_aclr_h_db: ap.aclr_high_db,
        pan_aclr_l_db: ap.aclr_low_db,
        oracle_aclr_h_db: ao.aclr_high_db,
        oracle_aclr_l_db: ao.aclr_low_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DpdKind {
    None,
    Pdn,
    Mp,
}

/// Evaluation row mirroring the reporting tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse_dbc: f64,
    pub aclr_h_db: f64,
    pub aclr_l_db: f64,
    pub oob_reduction_pct: f64,
    pub condition: PaCondition,
    pub dpd_kind: DpdKind,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "mse_dbc,aclr_h_db,aclr_l_db,oob_reduction_pct"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6}",
            self.mse_dbc, self.aclr_h_db, self.aclr_l_db, self.oob_reduction_pct
        )
    }
}

/// Pre-distorter under evaluation.
pub enum Dpd<'a> {
    None,
    Pdn(&'a ConvNetParams<f32>),
    Mp(&'a MpCoeffs),
}

impl Dpd<'_> {
    fn kind(&self) -> DpdKind {
        match self {
            Dpd::None => DpdKind::None,
            Dpd::Pdn(_) => DpdKind::Pdn,
            Dpd::Mp(_) => DpdKind::Mp,
        }
    }
}

/// Nonlinear system the cascade is measured against: the trained PAN or the
/// virtual-PA oracle itself.
pub enum LinTarget<'a> {
    Pan { params: &'a ConvNetParams<f32>, num_conditions: usize, cond_idx: usize },
    Vpa,
}

impl LinTarget<'_> {
    fn apply(&self, cond: &PaCondition, sig: &IqSignal) -> Result<IqSignal> {
        match self {
            LinTarget::Pan { params, num_conditions, cond_idx } => {
                apply_net_streaming(params, &one_hot(*num_conditions, *cond_idx), sig)
            }
            LinTarget::Vpa => pa_response(cond, sig),
        }
    }
}

/// Run x -> (dpd?) -> target over evaluation frames and measure the cascade
/// against the ideal linear response g0 * x.
pub fn evaluate(
    dpd: &Dpd<'_>,
    target: &LinTarget<'_>,
    cond: &PaCondition,
    frames: &[IqSignal],
    eval_stft: &StftParams,
    bp: &BandPlan,
) -> Result<EvalReport> {
    if frames.is_empty() {
        return Err(DpdError::Config("no evaluation frames".into()));
    }
    let rate = frames[0].sample_rate_hz;
    let mut apply_target = |s: &IqSignal| target.apply(cond, s);
    let g0 = small_signal_gain(&mut apply_target, &frames[0])?;

    let mut ref_cat = Vec::new();
    let mut no_cat = Vec::new();
    let mut with_cat = Vec::new();
    for frame in frames {
        let u = match dpd {
            Dpd::None => frame.clone(),
            Dpd::Mp(c) => mp_apply(c, frame)?,
            Dpd::Pdn(p) => {
                let mut fb = |uw: &[Complex64]| -> Result<Vec<Complex64>> {
                    let w = IqSignal::new(uw.to_vec(), rate)?;
                    Ok(target.apply(cond, &w)?.samples)
                };
                pdn_infer(p, frame, Some(&mut fb))?
            }
        };
        let no_dpd = target.apply(cond, frame)?;
        let with_dpd = match dpd {
            Dpd::None => no_dpd.clone(),
            _ => target.apply(cond, &u)?,
        };
        ref_cat.extend(frame.samples.iter().map(|v| v * g0));
        no_cat.extend(no_dpd.samples);
        with_cat.extend(with_dpd.samples);
    }
    let reference = IqSignal::new(ref_cat, rate)?;
    let no_dpd = IqSignal::new(no_cat, rate)?;
    let with_dpd = IqSignal::new(with_cat, rate)?;

    let a = aclr(&with_dpd, eval_stft, bp)?;
    let mse = mse_dbc(&reference, &with_dpd)?;
    let oob = match dpd {
        Dpd::None => 0.0,
        _ => oob_reduction(&no_dpd, &with_dpd, &reference, eval_stft, bp)?.percent,
    };
    Ok(EvalReport {
        mse_dbc: mse,
        aclr_h_db: a.aclr_high_db,
        aclr_l_db: a.aclr_low_db,
        oob_reduction_pct: oob,
        condition: *cond,
        dpd_kind: dpd.kind(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqsig::{generate_frame, WaveformConfig};
    use crate::vpa::VoltageClass;

    fn small_frame(seed: u64) -> IqSignal {
        let mut cfg = WaveformConfig::default_preset();
        cfg.fft_size = 1280;
        cfg.occupied_subcarriers = 340;
        cfg.num_ofdm_symbols = 1;
        generate_frame(&cfg, seed).unwrap()
    }

    #[test]
    fn window_count_arithmetic() {
        assert_eq!(num_windows(1280).unwrap(), 10);
        assert_eq!(num_windows(128).unwrap(), 1);
        assert_eq!(num_windows(300).unwrap(), 2);
        assert!(num_windows(100).is_err());
    }

    #[test]
    fn pan_windows_copy_exact_samples_and_one_hot() {
        let x = small_frame(1);
        let y = small_frame(2);
        let (input, target) = make_pan_windows(&x, &y, 1, 3).unwrap();
        assert_eq!(input.batch, 10);
        assert_eq!(input.channels, 5);
        for w in 0..input.batch {
            for t in 0..WINDOW_LEN {
                let s = w * WINDOW_LEN + t;
                assert_eq!(input.row(w, 0)[t], x.samples[s].re as f32);
                assert_eq!(input.row(w, 1)[t], x.samples[s].im as f32);
                assert_eq!(target.row(w, 0)[t], y.samples[s].re as f32);
            }
            assert!(input.row(w, 2).iter().all(|&v| v == 0.0));
            assert!(input.row(w, 3).iter().all(|&v| v == 1.0));
            assert!(input.row(w, 4).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pdn_first_window_has_zero_history() {
        let x = small_frame(3);
        let u = small_frame(4);
        let y = small_frame(5);
        let input = make_pdn_windows(&x, &u, &y).unwrap();
        assert_eq!(input.channels, 6);
        for c in 2..6 {
            assert!(input.row(0, c).iter().all(|&v| v == 0.0));
        }
        // Window 1 previous-pair channels equal window 0 of u/y.
        for t in 0..WINDOW_LEN {
            assert_eq!(input.row(1, 2)[t], u.samples[t].re as f32);
            assert_eq!(input.row(1, 4)[t], y.samples[t].re as f32);
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(999), 0.01);
        assert!((cfg.lr_at(1000) - 0.001).abs() < 1e-15);
        assert!((cfg.lr_at(3999) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn streaming_output_length_contract() {
        let pdn = ConvNetParams::<f32>::paper_arch(6, 3);
        for len in [6400usize, 128, 129, 200, 1280] {
            let frame = IqSignal::new(
                (0..len).map(|i| Complex64::new((i as f64 * 0.01).sin(), 0.1)).collect(),
                1e6,
            )
            .unwrap();
            let out = pdn_infer(&pdn, &frame, None).unwrap();
            assert_eq!(out.len(), len, "len {len}");
        }
    }

    #[test]
    fn streaming_is_deterministic() {
        let pdn = ConvNetParams::<f32>::paper_arch(6, 3);
        let frame = small_frame(6);
        let a = pdn_infer(&pdn, &frame, None).unwrap();
        let b = pdn_infer(&pdn, &frame, None).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn streaming_equals_batched() {
        let pdn = ConvNetParams::<f32>::paper_arch(6, 3);
        let frame = small_frame(7);
        let cond = PaCondition::nominal(VoltageClass::V4_0);
        let mut fb1 = |uw: &[Complex64]| -> Result<Vec<Complex64>> {
            let w = IqSignal::new(uw.to_vec(), frame.sample_rate_hz)?;
            Ok(pa_response(&cond, &w)?.samples)
        };
        let a = pdn_infer(&pdn, &frame, Some(&mut fb1)).unwrap();
        let mut fb2 = |uw: &[Complex64]| -> Result<Vec<Complex64>> {
            let w = IqSignal::new(uw.to_vec(), frame.sample_rate_hz)?;
            Ok(pa_response(&cond, &w)?.samples)
        };
        let b = pdn_infer_batched(&pdn, &frame, Some(&mut fb2)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn normalize_windows_unit_rms_and_scale_rows_inverts() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut y = Tensor3::zeros(3, 2, 16);
        for v in y.data.iter_mut() {
            *v = rng.gen_range(-2.0f32..2.0);
        }
        let cache = normalize_windows(&y);
        let n = (y.channels * y.time) as f32;
        for b in 0..y.batch {
            let seg = &cache.normalized.data[b * 32..(b + 1) * 32];
            let rms = (seg.iter().map(|v| v * v).sum::<f32>() / n).sqrt();
            assert!((rms - 1.0).abs() < 1e-5, "window {b} rms {rms}");
        }
        // scale_rows by 1/inv_rms recovers the original tensor.
        let inv: Vec<f32> = cache.inv_rms.iter().map(|&r| 1.0 / r).collect();
        let back = scale_rows(&cache.normalized, &inv);
        for (a, b) in back.data.iter().zip(&y.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn train_pan_smoke_loss_decreases() {
        // Tiny 2-condition run; just checks the loop plumbing and that the
        // loss trends down.
        let frame = small_frame(11);
        let mut examples = Vec::new();
        for (ci, v) in [VoltageClass::V4_0, VoltageClass::V4_6].iter().enumerate() {
            let cond = PaCondition::nominal(*v);
            let y = pa_response(&cond, &frame).unwrap();
            examples.push(PanExample { cond_idx: ci, input: frame.clone(), target: y });
        }
        let cfg = TrainConfig {
            epochs: 12,
            batch_pan: 10,
            seed: 5,
            loss_weights: LossWeights::tmse_only(),
            ..TrainConfig::default()
        };
        let res = train_pan(
            &examples,
            2,
            &cfg,
            &StftParams::training_default(),
            &BandPlan::default_eutra(),
        )
        .unwrap();
        assert!(!res.diverged);
        assert_eq!(res.history.len(), 12);
        assert!(
            res.history.last().unwrap().total < res.history[0].total,
            "loss did not decrease: {} -> {}",
            res.history[0].total,
            res.history.last().unwrap().total
        );
    }

    #[test]
    fn train_pan_requires_two_conditions() {
        let frame = small_frame(12);
        let examples = vec![PanExample { cond_idx: 0, input: frame.clone(), target: frame }];
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(train_pan(
            &examples,
            1,
            &cfg,
            &StftParams::training_default(),
            &BandPlan::default_eutra()
        )
        .is_err());
    }

    #[test]
    fn eval_report_csv_shape() {
        let rep = EvalReport {
            mse_dbc: -30.0,
            aclr_h_db: 31.5,
            aclr_l_db: 36.25,
            oob_reduction_pct: 73.0,
            condition: PaCondition::nominal(VoltageClass::V4_0),
            dpd_kind: DpdKind::Pdn,
        };
        let row = rep.csv_row();
        assert_eq!(row.split(',').count(), 4);
        assert!(row.starts_with("-30.000000,31.500000,"));
        let js = serde_json::to_string(&rep).unwrap();
        let back: EvalReport = serde_json::from_str(&js).unwrap();
        assert_eq!(back, rep);
    }
}
