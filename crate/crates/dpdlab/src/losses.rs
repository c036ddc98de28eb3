//! Training objectives: time-domain MSE, log-magnitude spectral MAE, and the
//! ACLR specification loss, each with exact gradients with respect to the
//! predicted windows.
//!
//! Windows are [batch x 2 x time] real tensors (channel 0 = I, channel 1 = Q)
//! and are transformed as complex sequences z = I + jQ. All outer reductions
//! run in f64 regardless of the tensor scalar.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::spectra::{band_masks, BandPlan, StftParams};
use crate::tinynet::{Scalar, Tensor3};
use crate::{DpdError, Result};

/// Residual floor inside the outer log.
pub const LOSS_EPS: f64 = 1e-12;
/// Magnitude floor inside the per-bin log of fMAE.
pub const MAG_DELTA: f64 = 1e-8;
/// Band-power floor for fSPEC.
pub const POWER_DELTA: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_tmse: f64,
    pub w_fmae: f64,
    pub w_fspec: f64,
}

impl LossWeights {
    pub fn all_three() -> Self {
        Self { w_tmse: 1.0, w_fmae: 1.0, w_fspec: 1.0 }
    }

    pub fn tmse_only() -> Self {
        Self { w_tmse: 1.0, w_fmae: 0.0, w_fspec: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_tmse < 0.0 || self.w_fmae < 0.0 || self.w_fspec < 0.0 {
            return Err(DpdError::Config("loss weights must be >= 0".into()));
        }
        if self.w_tmse == 0.0 && self.w_fmae == 0.0 && self.w_fspec == 0.0 {
            return Err(DpdError::Config("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub tmse: f64,
    pub fmae: f64,
    pub fspec: f64,
}

fn check_pair<T: Scalar>(x: &Tensor3<T>, xhat: &Tensor3<T>) -> Result<()> {
    if !x.same_shape(xhat) {
        return Err(DpdError::Shape(format!(
            "target {}x{}x{} vs prediction {}x{}x{}",
            x.batch, x.channels, x.time, xhat.batch, xhat.channels, xhat.time
        )));
    }
    if x.channels != 2 {
        return Err(DpdError::Shape("loss windows must have exactly 2 channels (I, Q)".into()));
    }
    Ok(())
}

/// Time-domain MSE: loss = ln( sum_batch ||x - xhat||_2^2 + eps ).
pub fn tmse<T: Scalar>(x: &Tensor3<T>, xhat: &Tensor3<T>) -> Result<(f64, Tensor3<T>)> {
    check_pair(x, xhat)?;
    let mut sumsq = 0.0f64;
    for (a, b) in x.data.iter().zip(&xhat.data) {
        let d = b.as_f64() - a.as_f64();
        sumsq += d * d;
    }
    let denom = sumsq + LOSS_EPS;
    let loss = denom.ln();
    let mut grad = Tensor3::zeros(x.batch, x.channels, x.time);
    for i in 0..x.data.len() {
        grad.data[i] = T::of_f64(2.0 * (xhat.data[i].as_f64() - x.data[i].as_f64()) / denom);
    }
    Ok((loss, grad))
}

/// Complex STFT of one window's I/Q rows; returns frames of length
/// `p.window_len`.
fn window_stft<T: Scalar>(
    i_row: &[T],
    q_row: &[T],
    p: &StftParams,
    planner: &mut FftPlanner<T>,
    win: &[T],
) -> Vec<Vec<Complex<T>>> {
    let t = i_row.len();
    let num_frames = (t - p.window_len) / p.hop + 1;
    let fft = planner.plan_fft_forward(p.window_len);
    (0..num_frames)
        .map(|k| {
            let s = k * p.hop;
            let mut buf: Vec<Complex<T>> = (0..p.window_len)
                .map(|n| Complex::new(i_row[s + n] * win[n], q_row[s + n] * win[n]))
                .collect();
            fft.process(&mut buf);
            buf
        })
        .collect()
}

/// Scatter bin-domain gradients G back to the time domain:
/// grad_z += w .* F^H(G) per frame (F^H = unnormalized inverse DFT).
fn scatter_bin_grads<T: Scalar>(
    bin_grads: Vec<Vec<Complex<T>>>,
    p: &StftParams,
    planner: &mut FftPlanner<T>,
    win: &[T],
    grad_i: &mut [T],
    grad_q: &mut [T],
) {
    let ifft = planner.plan_fft_inverse(p.window_len);
    for (k, mut g) in bin_grads.into_iter().enumerate() {
        ifft.process(&mut g);
        let s = k * p.hop;
        for n in 0..p.window_len {
            grad_i[s + n] = grad_i[s + n] + win[n] * g[n].re;
            grad_q[s + n] = grad_q[s + n] + win[n] * g[n].im;
        }
    }
}

fn window_values<T: Scalar>(p: &StftParams) -> Vec<T> {
    (0..p.window_len).map(|n| T::of_f64(p.window.value(n, p.window_len))).collect()
}

/// Frequency-domain MAE on log magnitudes:
/// loss = ln( sum |ln(|X(x)|+d) - ln(|X(xhat)|+d)| + eps ).
pub fn fmae<T: Scalar>(
    x: &Tensor3<T>,
    xhat: &Tensor3<T>,
    p: &StftParams,
) -> Result<(f64, Tensor3<T>)> {
    check_pair(x, xhat)?;
    p.validate()?;
    if x.time < p.window_len {
        return Err(DpdError::Shape(format!(
            "window time {} shorter than stft window {}",
            x.time, p.window_len
        )));
    }
    let mut planner = FftPlanner::<T>::new();
    let win = window_values::<T>(p);
    let delta = MAG_DELTA;

    // First pass: accumulate S; retain per-window spectra of xhat for the
    // gradient pass.
    let mut s_total = 0.0f64;
    let mut per_window: Vec<(Vec<Vec<Complex<T>>>, Vec<Vec<f64>>)> = Vec::with_capacity(x.batch);
    for b in 0..x.batch {
        let fx = window_stft(x.row(b, 0), x.row(b, 1), p, &mut planner, &win);
        let fh = window_stft(xhat.row(b, 0), xhat.row(b, 1), p, &mut planner, &win);
        let mut signs: Vec<Vec<f64>> = Vec::with_capacity(fx.len());
        for (frame_x, frame_h) in fx.iter().zip(&fh) {
            let mut row = Vec::with_capacity(frame_x.len());
            for (vx, vh) in frame_x.iter().zip(frame_h) {
                let a = (vx.re.as_f64().hypot(vx.im.as_f64()) + delta).ln();
                let ah = (vh.re.as_f64().hypot(vh.im.as_f64()) + delta).ln();
                let u = a - ah;
                s_total += u.abs();
                row.push(u.signum());
            }
            signs.push(row);
        }
        per_window.push((fh, signs));
    }
    let denom = s_total + LOSS_EPS;
    let loss = denom.ln();

    let mut grad = Tensor3::zeros(x.batch, x.channels, x.time);
    for (b, (fh, signs)) in per_window.into_iter().enumerate() {
        let bin_grads: Vec<Vec<Complex<T>>> = fh
            .into_iter()
            .zip(signs)
            .map(|(frame, sign_row)| {
                frame
                    .into_iter()
                    .zip(sign_row)
                    .map(|(vh, sgn)| {
                        let mag = vh.re.as_f64().hypot(vh.im.as_f64());
                        if mag == 0.0 || sgn == 0.0 {
                            Complex::new(T::default(), T::default())
                        } else {
                            // dL/d|X| = -sign(u) / ((|X|+d) * denom), then
                            // dL/dX = dL/d|X| * X/|X|.
                            let c = -sgn / ((mag + delta) * denom) / mag;
                            let ct = T::of_f64(c);
                            Complex::new(vh.re * ct, vh.im * ct)
                        }
                    })
                    .collect()
            })
            .collect();
        let (gi, gq) = {
            let start_i = (b * 2) * x.time;
            let start_q = (b * 2 + 1) * x.time;
            debug_assert!(start_q > start_i);
            let (lo, hi) = grad.data.split_at_mut(start_q);
            (&mut lo[start_i..start_i + x.time], &mut hi[..x.time])
        };
        scatter_bin_grads(bin_grads, p, &mut planner, &win, gi, gq);
    }
    Ok((loss, grad))
}

/// Specification loss: per window, |ACLR(x) - ACLR(xhat)| in dB summed over
/// both adjacent sides, with ACLR = 10 log10(P_in / P_adj) over the STFT band
/// sums, averaged over the batch so its scale is batch-size invariant like the
/// other two losses. Subgradient at the kink takes sign 0.
pub fn fspec<T: Scalar>(
    x: &Tensor3<T>,
    xhat: &Tensor3<T>,
    p: &StftParams,
    bp: &BandPlan,
    sample_rate_hz: f64,
) -> Result<(f64, Tensor3<T>)> {
    check_pair(x, xhat)?;
    p.validate()?;
    bp.validate(sample_rate_hz)?;
    if x.time < p.window_len {
        return Err(DpdError::Shape("window shorter than stft window".into()));
    }
    let bin_hz = sample_rate_hz / p.window_len as f64;
    let (inb, hi, lo) = band_masks(bp, p.window_len, bin_hz);
    let mut planner = FftPlanner::<T>::new();
    let win = window_values::<T>(p);

    let band_sums = |frames: &[Vec<Complex<T>>]| -> (f64, f64, f64) {
        let mut p_in = 0.0;
        let mut p_hi = 0.0;
        let mut p_lo = 0.0;
        for frame in frames {
            for &m in &inb {
                p_in += frame[m].re.as_f64().powi(2) + frame[m].im.as_f64().powi(2);
            }
            for &m in &hi {
                p_hi += frame[m].re.as_f64().powi(2) + frame[m].im.as_f64().powi(2);
            }
            for &m in &lo {
                p_lo += frame[m].re.as_f64().powi(2) + frame[m].im.as_f64().powi(2);
            }
        }
        (p_in + POWER_DELTA, p_hi + POWER_DELTA, p_lo + POWER_DELTA)
    };
    let aclr_db = |p_in: f64, p_adj: f64| 10.0 * (p_in / p_adj).log10();

    let mut loss = 0.0f64;
    let mut grad = Tensor3::zeros(x.batch, x.channels, x.time);
    let ln10_over_10 = 10.0 / std::f64::consts::LN_10;
    let inv_b = 1.0 / x.batch as f64;

    for b in 0..x.batch {
        let fx = window_stft(x.row(b, 0), x.row(b, 1), p, &mut planner, &win);
        let fh = window_stft(xhat.row(b, 0), xhat.row(b, 1), p, &mut planner, &win);
        let (xi, xh_, xl) = band_sums(&fx);
        let (hi_in, hi_hi, hi_lo) = band_sums(&fh);
        let d_high = aclr_db(xi, xh_) - aclr_db(hi_in, hi_hi);
        let d_low = aclr_db(xi, xl) - aclr_db(hi_in, hi_lo);
        loss += (d_high.abs() + d_low.abs()) * inv_b;

        // Per-bin gradient coefficient: for each side,
        // dLoss/dACLR(xhat)_side = -sign(d_side) / batch, and
        // dACLR/dP = (10/ln10) * (mask_in/P_in - mask_side/P_side).
        let s_h = -d_high.signum() * inv_b;
        let s_l = -d_low.signum() * inv_b;
        let coef_in = (s_h + s_l) * ln10_over_10 / hi_in;
        let coef_hi = -s_h * ln10_over_10 / hi_hi;
        let coef_lo = -s_l * ln10_over_10 / hi_lo;
        let mut coef = vec![0.0f64; p.window_len];
        for &m in &inb {
            coef[m] = coef_in;
        }
        for &m in &hi {
            coef[m] = coef_hi;
        }
        for &m in &lo {
            coef[m] = coef_lo;
        }
        let bin_grads: Vec<Vec<Complex<T>>> = fh
            .into_iter()
            .map(|frame| {
                frame
                    .into_iter()
                    .enumerate()
                    .map(|(m, v)| {
                        // d(|X|^2)/dX = 2X in the real-pair convention.
                        let c = T::of_f64(2.0 * coef[m]);
                        Complex::new(v.re * c, v.im * c)
                    })
                    .collect()
            })
            .collect();
        let (gi, gq) = {
            let start_i = (b * 2) * x.time;
            let start_q = (b * 2 + 1) * x.time;
            let (lo_s, hi_s) = grad.data.split_at_mut(start_q);
            (&mut lo_s[start_i..start_i + x.time], &mut hi_s[..x.time])
        };
        scatter_bin_grads(bin_grads, p, &mut planner, &win, gi, gq);
    }
    Ok((loss, grad))
}

/// Weighted combination of the three losses; gradient is the weighted sum of
/// the component gradients.
pub fn combined<T: Scalar>(
    x: &Tensor3<T>,
    xhat: &Tensor3<T>,
    weights: &LossWeights,
    p: &StftParams,
    bp: &BandPlan,
    sample_rate_hz: f64,
) -> Result<(LossValue, Tensor3<T>)> {
    weights.validate()?;
    let mut grad = Tensor3::zeros(x.batch, x.channels, x.time);
    let mut value = LossValue { total: 0.0, tmse: 0.0, fmae: 0.0, fspec: 0.0 };
    let add = |g: Tensor3<T>, w: f64, acc: &mut Tensor3<T>| {
        let wt = T::of_f64(w);
        for (a, b) in acc.data.iter_mut().zip(g.data) {
            *a = *a + wt * b;
        }
    };
    if weights.w_tmse > 0.0 {
        let (l, g) = tmse(x, xhat)?;
        value.tmse = l;
        add(g, weights.w_tmse, &mut grad);
    }
    if weights.w_fmae > 0.0 {
        let (l, g) = fmae(x, xhat, p)?;
        value.fmae = l;
        add(g, weights.w_fmae, &mut grad);
    }
    if weights.w_fspec > 0.0 {
        let (l, g) = fspec(x, xhat, p, bp, sample_rate_hz)?;
        value.fspec = l;
        add(g, weights.w_fspec, &mut grad);
    }
    value.total =
        weights.w_tmse * value.tmse + weights.w_fmae * value.fmae + weights.w_fspec * value.fspec;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::ifft_in_place;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RATE: f64 = 368.64e6;

    fn rand_windows(batch: usize, time: usize, seed: u64) -> Tensor3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * 2 * time).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor3::from_vec(data, batch, 2, time).unwrap()
    }

    fn training_stft() -> StftParams {
        StftParams::training_default()
    }

    fn rotate_phase(x: &Tensor3<f64>, phi: f64) -> Tensor3<f64> {
        let mut out = x.clone();
        let (c, s) = (phi.cos(), phi.sin());
        for b in 0..x.batch {
            for tt in 0..x.time {
                let i = x.row(b, 0)[tt];
                let q = x.row(b, 1)[tt];
                out.row_mut(b, 0)[tt] = c * i - s * q;
                out.row_mut(b, 1)[tt] = c * q + s * i;
            }
        }
        out
    }

    /// Central-difference gradient of a scalar loss over the prediction.
    fn fd_grad<F: Fn(&Tensor3<f64>) -> f64>(
        f: &F,
        xhat: &Tensor3<f64>,
        h: f64,
        stride: usize,
    ) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for j in (0..xhat.data.len()).step_by(stride) {
            let mut xp = xhat.clone();
            xp.data[j] += h;
            let lp = f(&xp);
            xp.data[j] -= 2.0 * h;
            let lm = f(&xp);
            out.push((j, (lp - lm) / (2.0 * h)));
        }
        out
    }

    fn max_rel(analytic: &Tensor3<f64>, numeric: &[(usize, f64)]) -> f64 {
        numeric
            .iter()
            .map(|&(j, n)| {
                let a = analytic.data[j];
                (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn tmse_identity_hits_eps_floor() {
        let x = rand_windows(4, 128, 1);
        let (l, g) = tmse(&x, &x).unwrap();
        assert!((l - LOSS_EPS.ln()).abs() < 1e-12);
        assert!((l - (-27.631)).abs() < 0.01);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tmse_unit_impulse() {
        let x = rand_windows(1, 128, 2);
        let mut xh = x.clone();
        xh.data[37] += 1.0;
        let (l, _) = tmse(&x, &xh).unwrap();
        assert!(l.abs() < 1e-9, "{l}");
    }

    #[test]
    fn tmse_gradient_matches_fd() {
        let x = rand_windows(2, 128, 3);
        let xh = rand_windows(2, 128, 4);
        let (_, g) = tmse(&x, &xh).unwrap();
        let f = |p: &Tensor3<f64>| tmse(&x, p).unwrap().0;
        let fd = fd_grad(&f, &xh, 1e-6, 11);
        assert!(max_rel(&g, &fd) < 1e-5, "{}", max_rel(&g, &fd));
    }

    #[test]
    fn fmae_identity_and_global_phase_blindness() {
        let x = rand_windows(3, 128, 5);
        let (l, _) = fmae(&x, &x, &training_stft()).unwrap();
        assert!((l - LOSS_EPS.ln()).abs() < 1e-9);
        // A global phase rotation only perturbs bin magnitudes at the ulp
        // level; the summed residual stays within a small factor of eps.
        let rotated = rotate_phase(&x, 0.7);
        let (l2, _) = fmae(&x, &rotated, &training_stft()).unwrap();
        assert!(l2 < LOSS_EPS.ln() + 0.7, "{l2}");
    }

    #[test]
    fn fmae_gradient_matches_fd() {
        let x = rand_windows(2, 128, 6);
        let xh = rand_windows(2, 128, 7);
        let (_, g) = fmae(&x, &xh, &training_stft()).unwrap();
        let f = |p: &Tensor3<f64>| fmae(&x, p, &training_stft()).unwrap().0;
        let fd = fd_grad(&f, &xh, 1e-6, 13);
        assert!(max_rel(&g, &fd) < 1e-4, "{}", max_rel(&g, &fd));
    }

    #[test]
    fn fmae_gradient_matches_fd_hann_overlap() {
        let p = StftParams { window_len: 64, hop: 32, window: crate::spectra::Window::Hann };
        let x = rand_windows(1, 128, 8);
        let xh = rand_windows(1, 128, 9);
        let (_, g) = fmae(&x, &xh, &p).unwrap();
        let f = |q: &Tensor3<f64>| fmae(&x, q, &p).unwrap().0;
        let fd = fd_grad(&f, &xh, 1e-6, 7);
        assert!(max_rel(&g, &fd) < 1e-4, "{}", max_rel(&g, &fd));
    }

    /// Build a window from a desired 128-bin spectrum.
    fn window_from_spectrum(spec: &[Complex64]) -> Tensor3<f64> {
        let mut z = spec.to_vec();
        ifft_in_place(&mut z);
        let mut t = Tensor3::zeros(1, 2, z.len());
        for (n, v) in z.iter().enumerate() {
            t.row_mut(0, 0)[n] = v.re;
            t.row_mut(0, 1)[n] = v.im;
        }
        t
    }

    #[test]
    fn fspec_scale_invariance_and_constructed_offset() {
        let bp = BandPlan::default_eutra();
        let p = training_stft();
        let x = rand_windows(2, 128, 10);
        let mut scaled = x.clone();
        scaled.data.iter_mut().for_each(|v| *v *= -2.5);
        let (l, _) = fspec(&x, &scaled, &p, &bp, RATE).unwrap();
        assert!(l.abs() < 1e-9, "{l}");

        // Construct spectra with equal in-band power and 10x adjacent power.
        let bin_hz = RATE / 128.0;
        let (inb, hi, lo) = band_masks(&bp, 128, bin_hz);
        let mut sx = vec![Complex64::default(); 128];
        for &m in inb.iter().take(8) {
            sx[m] = Complex64::new(3.0, 0.0);
        }
        sx[hi[1]] = Complex64::new(0.1, 0.0);
        sx[lo[1]] = Complex64::new(0.1, 0.0);
        let mut sh = sx.clone();
        sh[hi[1]] = Complex64::new(0.1 * 10f64.sqrt(), 0.0); // 10x power
        sh[lo[1]] = Complex64::new(0.1 * 10f64.sqrt(), 0.0);
        let wx = window_from_spectrum(&sx);
        let wh = window_from_spectrum(&sh);
        let (l, _) = fspec(&wx, &wh, &p, &bp, RATE).unwrap();
        assert!((l - 20.0).abs() < 1e-6, "{l}"); // 10 dB per side

        // Batch mean: duplicating the pair across a batch keeps the loss.
        let dup = |t: &Tensor3<f64>| {
            let mut d = Tensor3::zeros(3, t.channels, t.time);
            for b in 0..3 {
                for c in 0..t.channels {
                    d.row_mut(b, c).copy_from_slice(t.row(0, c));
                }
            }
            d
        };
        let (l3, _) = fspec(&dup(&wx), &dup(&wh), &p, &bp, RATE).unwrap();
        assert!((l3 - 20.0).abs() < 1e-6, "{l3}");
    }

    #[test]
    fn fspec_gradient_matches_fd() {
        let bp = BandPlan::default_eutra();
        let p = training_stft();
        let x = rand_windows(1, 128, 11);
        let xh = rand_windows(1, 128, 12);
        let (_, g) = fspec(&x, &xh, &p, &bp, RATE).unwrap();
        let f = |q: &Tensor3<f64>| fspec(&x, q, &p, &bp, RATE).unwrap().0;
        let fd = fd_grad(&f, &xh, 1e-7, 9);
        assert!(max_rel(&g, &fd) < 1e-4, "{}", max_rel(&g, &fd));
    }

    #[test]
    fn combined_projections_and_linearity() {
        let bp = BandPlan::default_eutra();
        let p = training_stft();
        let x = rand_windows(2, 128, 13);
        let xh = rand_windows(2, 128, 14);

        let (v, g) = combined(&x, &xh, &LossWeights::tmse_only(), &p, &bp, RATE).unwrap();
        let (lt, gt) = tmse(&x, &xh).unwrap();
        assert_eq!(v.total, lt);
        assert_eq!(g.data, gt.data);

        let w2 = LossWeights { w_tmse: 2.0, w_fmae: 0.0, w_fspec: 0.0 };
        let (v2, _) = combined(&x, &xh, &w2, &p, &bp, RATE).unwrap();
        assert!((v2.total - 2.0 * lt).abs() < 1e-12);

        let (vid, _) = combined(&x, &x, &LossWeights::all_three(), &p, &bp, RATE).unwrap();
        assert!((vid.total - 2.0 * LOSS_EPS.ln()).abs() < 1e-6, "{}", vid.total);
    }

    #[test]
    fn combined_rejects_zero_weights() {
        let bp = BandPlan::default_eutra();
        let p = training_stft();
        let x = rand_windows(1, 128, 15);
        let w = LossWeights { w_tmse: 0.0, w_fmae: 0.0, w_fspec: 0.0 };
        assert!(combined(&x, &x, &w, &p, &bp, RATE).is_err());
    }

    #[test]
    fn losses_minimized_at_perfect_prediction() {
        let bp = BandPlan::default_eutra();
        let p = training_stft();
        let x = rand_windows(1, 128, 16);
        let (base, _) = combined(&x, &x, &LossWeights::all_three(), &p, &bp, RATE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let mut xh = x.clone();
            let scale = rng.gen_range(1e-4..1e-1);
            for v in xh.data.iter_mut() {
                *v += rng.gen_range(-scale..scale);
            }
            let (l, _) = combined(&x, &xh, &LossWeights::all_three(), &p, &bp, RATE).unwrap();
            assert!(l.total >= base.total, "{} < {}", l.total, base.total);
        }
    }
}
