//! Fourier analysis and the spectral metric suite: STFT, ACLR, dBc MSE,
//! out-of-band spectrum reduction.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::iqsig::{normalize_rms, IqSignal};
use crate::{DpdError, Result};

/// dBc floor preventing -inf from identical signals.
pub const DBC_FLOOR: f64 = -160.0;

/// Forward DFT in place (unnormalized): X_m = sum_n x_n e^{-2pi i nm/N}.
pub fn fft_in_place(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

/// Inverse DFT in place, normalized by 1/N so it inverts [`fft_in_place`].
pub fn ifft_in_place(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_inverse(buf.len()).process(buf);
    let n = buf.len() as f64;
    buf.iter_mut().for_each(|v| *v /= n);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    /// Periodic window sample w(n), n in [0, len).
    pub fn value(self, n: usize, len: usize) -> f64 {
        match self {
            Window::Rectangular => 1.0,
            Window::Hann => {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl StftParams {
    /// Training-loss STFT: one rectangular frame covering a 128-sample window.
    pub fn training_default() -> Self {
        Self { window_len: 128, hop: 128, window: Window::Rectangular }
    }

    /// Evaluation STFT: Welch-style Hann 1024 with 50% overlap.
    pub fn eval_default() -> Self {
        Self { window_len: 1024, hop: 512, window: Window::Hann }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 || self.hop > self.window_len {
            return Err(DpdError::Config(format!(
                "invalid stft params: window_len {}, hop {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }
}

/// Complex STFT frames, row per frame, `window_len` bins per row.
#[derive(Debug, Clone)]
pub struct SpectrumFrames {
    pub frames: Vec<Vec<Complex64>>,
    pub bin_hz: f64,
}

impl SpectrumFrames {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn window_len(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Per-bin power summed over all frames.
    pub fn power_per_bin(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.window_len()];
        for frame in &self.frames {
            for (acc, v) in p.iter_mut().zip(frame) {
                *acc += v.norm_sqr();
            }
        }
        p
    }
}

/// In-band and adjacent-band masks for ACLR-style metrics. Adjacent bands sit
/// at +/- `adj_offset_hz`, each `adj_bw_hz` wide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPlan {
    pub inband_lo_hz: f64,
    pub inband_hi_hz: f64,
    pub adj_offset_hz: f64,
    pub adj_bw_hz: f64,
}

impl BandPlan {
    /// E-UTRA plan: in-band +/-49.14 MHz, adjacent bands 98.28 MHz wide
    /// centered at +/-100 MHz.
    pub fn default_eutra() -> Self {
        Self {
            inband_lo_hz: -49.14e6,
            inband_hi_hz: 49.14e6,
            adj_offset_hz: 100e6,
            adj_bw_hz: 98.28e6,
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyq = sample_rate_hz / 2.0;
        let adj_hi = self.adj_offset_hz + self.adj_bw_hz / 2.0;
        let adj_lo = self.adj_offset_hz - self.adj_bw_hz / 2.0;
        if self.inband_lo_hz >= self.inband_hi_hz || self.adj_bw_hz <= 0.0 {
            return Err(DpdError::Config("degenerate band plan".into()));
        }
        if self.inband_lo_hz <= -nyq || self.inband_hi_hz >= nyq || adj_hi >= nyq {
            return Err(DpdError::Config(format!(
                "band plan exceeds (+/-{nyq} Hz) for sample rate {sample_rate_hz}"
            )));
        }
        if adj_lo < self.inband_hi_hz {
            return Err(DpdError::Config("adjacent band overlaps in-band".into()));
        }
        Ok(())
    }

    fn in_band(&self, f: f64) -> bool {
        f >= self.inband_lo_hz && f <= self.inband_hi_hz
    }

    fn in_adjacent(&self, f: f64, high_side: bool) -> bool {
        let center = if high_side { self.adj_offset_hz } else { -self.adj_offset_hz };
        (f - center).abs() <= self.adj_bw_hz / 2.0
    }
}

/// Signed center frequency of FFT bin `m` out of `len` bins at `bin_hz`.
pub fn bin_freq_hz(m: usize, len: usize, bin_hz: f64) -> f64 {
    let k = if m <= len / 2 { m as f64 } else { m as f64 - len as f64 };
    k * bin_hz
}

/// Bin-index masks (in-band, adjacent-high, adjacent-low) for a `len`-bin FFT.
pub fn band_masks(bp: &BandPlan, len: usize, bin_hz: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut inb = Vec::new();
    let mut hi = Vec::new();
    let mut lo = Vec::new();
    for m in 0..len {
        let f = bin_freq_hz(m, len, bin_hz);
        if bp.in_band(f) {
            inb.push(m);
        } else if bp.in_adjacent(f, true) {
            hi.push(m);
        } else if bp.in_adjacent(f, false) {
            lo.push(m);
        }
    }
    (inb, hi, lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AclrReport {
    pub aclr_high_db: f64,
    pub aclr_low_db: f64,
}

impl AclrReport {
    /// True when either side hit a zero-power sentinel.
    pub fn has_sentinel(&self) -> bool {
        !self.aclr_high_db.is_finite() || !self.aclr_low_db.is_finite()
    }
}

/// Short-time Fourier transform.
///
/// Frame k, bin m = sum_n w(n) x(k*hop + n) e^{-2pi i nm/window_len}.
pub fn stft(sig: &IqSignal, p: &StftParams) -> Result<SpectrumFrames> {
    p.validate()?;
    let n = sig.len();
    if n < p.window_len {
        return Err(DpdError::Shape(format!(
            "signal length {n} shorter than stft window {}",
            p.window_len
        )));
    }
    let num_frames = (n - p.window_len) / p.hop + 1;
    let w: Vec<f64> = (0..p.window_len).map(|i| p.window.value(i, p.window_len)).collect();
    let fft = FftPlanner::new().plan_fft_forward(p.window_len);
    let mut frames = Vec::with_capacity(num_frames);
    for k in 0..num_frames {
        let start = k * p.hop;
        let mut buf: Vec<Complex64> = sig.samples[start..start + p.window_len]
            .iter()
            .zip(&w)
            .map(|(x, &wn)| x * wn)
            .collect();
        fft.process(&mut buf);
        frames.push(buf);
    }
    Ok(SpectrumFrames { frames, bin_hz: sig.sample_rate_hz / p.window_len as f64 })
}

fn band_powers(sig: &IqSignal, p: &StftParams, bp: &BandPlan) -> Result<(f64, f64, f64)> {
    bp.validate(sig.sample_rate_hz)?;
    let sf = stft(sig, p)?;
    let power = sf.power_per_bin();
    let (inb, hi, lo) = band_masks(bp, sf.window_len(), sf.bin_hz);
    let sum = |idx: &[usize]| idx.iter().map(|&m| power[m]).sum::<f64>();
    Ok((sum(&inb), sum(&hi), sum(&lo)))
}

/// Adjacent channel leakage ratio, positive dB when in-band power dominates.
///
/// ACLR_side = 10 log10( P_inband / P_adjacent_side ), power summed over all
/// STFT frames and band bins (bin-center membership).
pub fn aclr(sig: &IqSignal, p: &StftParams, bp: &BandPlan) -> Result<AclrReport> {
    let (p_in, p_hi, p_lo) = band_powers(sig, p, bp)?;
    let side = |p_adj: f64| {
        if p_in == 0.0 {
            f64::NEG_INFINITY
        } else if p_adj == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (p_in / p_adj).log10()
        }
    };
    Ok(AclrReport { aclr_high_db: side(p_hi), aclr_low_db: side(p_lo) })
}

/// Time-domain MSE in dB relative to carrier power, after normalizing both
/// signals to unit RMS. Floored at [`DBC_FLOOR`].
pub fn mse_dbc(reference: &IqSignal, test: &IqSignal) -> Result<f64> {
    if reference.len() != test.len() || reference.sample_rate_hz != test.sample_rate_hz {
        return Err(DpdError::Shape("mse_dbc requires matching signals".into()));
    }
    let r = normalize_rms(reference, 1.0)?;
    let t = normalize_rms(test, 1.0)?;
    let err: f64 = r.samples.iter().zip(&t.samples).map(|(a, b)| (a - b).norm_sqr()).sum();
    let refp = r.power();
    let db = 10.0 * (err / refp).log10();
    Ok(db.max(DBC_FLOOR))
}

/// Out-of-band spectrum reduction result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OobReduction {
    pub percent: f64,
    /// Raw value fell outside [0, 100] before clamping.
    pub clamped: bool,
}

/// Percentage of excess out-of-band power removed by DPD.
///
/// Spectra are scaled to equal in-band power first. E = max(0, P_oob(signal)
/// - P_oob(reference)); result = 100 (1 - E_with / E_without), clamped to
/// [0, 100].
pub fn oob_reduction(
    no_dpd: &IqSignal,
    with_dpd: &IqSignal,
    reference: &IqSignal,
    p: &StftParams,
    bp: &BandPlan,
) -> Result<OobReduction> {
    let (ref_in, ref_hi, ref_lo) = band_powers(reference, p, bp)?;
    let (no_in, no_hi, no_lo) = band_powers(no_dpd, p, bp)?;
    let (wi_in, wi_hi, wi_lo) = band_powers(with_dpd, p, bp)?;
    if ref_in == 0.0 || no_in == 0.0 || wi_in == 0.0 {
        return Err(DpdError::DegenerateInput("zero in-band power".into()));
    }
    // In-band parity: scale each spectrum so in-band power matches the
    // reference.
    let oob_ref = ref_hi + ref_lo;
    let oob_no = (no_hi + no_lo) * ref_in / no_in;
    let oob_wi = (wi_hi + wi_lo) * ref_in / wi_in;
    let e_without = (oob_no - oob_ref).max(0.0);
    let e_with = (oob_wi - oob_ref).max(0.0);
    if e_without == 0.0 {
        return Err(DpdError::UndefinedBaseline(
            "no-DPD signal has no excess out-of-band power".into(),
        ));
    }
    let raw = 100.0 * (1.0 - e_with / e_without);
    Ok(OobReduction { percent: raw.clamp(0.0, 100.0), clamped: !(0.0..=100.0).contains(&raw) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqsig::{generate_frame, WaveformConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(bin: usize, len: usize, rate: f64, amp: f64) -> IqSignal {
        let samples = (0..len)
            .map(|n| {
                Complex64::from_polar(
                    amp,
                    2.0 * std::f64::consts::PI * bin as f64 * n as f64 / len as f64,
                )
            })
            .collect();
        IqSignal::new(samples, rate).unwrap()
    }

    #[test]
    fn fft_round_trip_up_to_64k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &n in &[2usize, 128, 1000, 4096, 1 << 16] {
            let x: Vec<Complex64> =
                (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
            let mut y = x.clone();
            fft_in_place(&mut y);
            ifft_in_place(&mut y);
            let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = x.iter().map(|a| a.norm_sqr()).sum();
            assert!((num / den).sqrt() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn stft_single_tone_lands_in_one_bin() {
        let len = 256;
        let sig = tone(5, len, 1.0, 1.0);
        let p = StftParams { window_len: len, hop: len, window: Window::Rectangular };
        let sf = stft(&sig, &p).unwrap();
        assert_eq!(sf.num_frames(), 1);
        let frame = &sf.frames[0];
        let peak = frame[5].norm();
        assert!((peak - len as f64).abs() < 1e-9 * len as f64);
        for (m, v) in frame.iter().enumerate() {
            if m != 5 {
                assert!(v.norm() < 1e-9 * peak, "bin {m} leaked {}", v.norm());
            }
        }
    }

    #[test]
    fn stft_parseval_per_frame() {
        // Oracle: sum_frames sum_bins |X|^2 == window_len * sum_k sum_n
        // w(n)^2 |x(k hop + n)|^2.
        let cfg = WaveformConfig::default_preset();
        let sig = generate_frame(&cfg, 7).unwrap();
        let p = StftParams { window_len: 1024, hop: 512, window: Window::Hann };
        let sf = stft(&sig, &p).unwrap();
        let lhs: f64 =
            sf.frames.iter().map(|f| f.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum();
        let mut rhs = 0.0;
        for k in 0..sf.num_frames() {
            for n in 0..p.window_len {
                let w = p.window.value(n, p.window_len);
                rhs += w * w * sig.samples[k * p.hop + n].norm_sqr();
            }
        }
        rhs *= p.window_len as f64;
        assert!((lhs - rhs).abs() / rhs < 1e-6, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn stft_zero_signal_and_short_signal() {
        let z = IqSignal { samples: vec![Complex64::default(); 64], sample_rate_hz: 1.0 };
        let p = StftParams { window_len: 32, hop: 16, window: Window::Hann };
        let sf = stft(&z, &p).unwrap();
        assert!(sf.frames.iter().flatten().all(|v| v.norm() == 0.0));
        let short = IqSignal { samples: vec![Complex64::new(1.0, 0.0); 8], sample_rate_hz: 1.0 };
        assert!(matches!(stft(&short, &p), Err(DpdError::Shape(_))));
    }

    /// In-band power exactly 1000x each adjacent band, built from unit tones.
    fn thousand_to_one_signal() -> (IqSignal, StftParams, BandPlan) {
        let len = 1024;
        let rate = 368.64e6;
        let bin_hz = rate / len as f64;
        let bp = BandPlan::default_eutra();
        let (inb, hi, lo) = band_masks(&bp, len, bin_hz);
        // 10 in-band tones of power p_in each, 1 tone per adjacent band such
        // that sum_in = 1000 * each adjacent sum.
        let mut samples = vec![Complex64::default(); len];
        let mut spectrum = vec![Complex64::default(); len];
        for &m in inb.iter().take(10) {
            spectrum[m] = Complex64::new(10.0, 0.0); // power 100 each, 1000 total
        }
        spectrum[hi[3]] = Complex64::new(1.0, 0.0);
        spectrum[lo[3]] = Complex64::new(1.0, 0.0);
        let mut buf = spectrum.clone();
        ifft_in_place(&mut buf);
        samples.copy_from_slice(&buf);
        let sig = IqSignal::new(samples, rate).unwrap();
        (sig, StftParams { window_len: len, hop: len, window: Window::Rectangular }, bp)
    }

    #[test]
    fn aclr_thousand_to_one_is_30_db() {
        let (sig, p, bp) = thousand_to_one_signal();
        let rep = aclr(&sig, &p, &bp).unwrap();
        assert!((rep.aclr_high_db - 30.0).abs() < 0.01, "{}", rep.aclr_high_db);
        assert!((rep.aclr_low_db - 30.0).abs() < 0.01, "{}", rep.aclr_low_db);
    }

    #[test]
    fn aclr_scale_invariant_exactly() {
        // Invariant to the last representable digits: complex scaling only
        // perturbs band powers at the ulp level, so the dB ratio moves by
        // far less than 1e-10.
        let (sig, p, bp) = thousand_to_one_signal();
        let rep = aclr(&sig, &p, &bp).unwrap();
        let scaled = sig.scaled(Complex64::new(-3.25, 1.5));
        let rep2 = aclr(&scaled, &p, &bp).unwrap();
        assert!((rep.aclr_high_db - rep2.aclr_high_db).abs() < 1e-10);
        assert!((rep.aclr_low_db - rep2.aclr_low_db).abs() < 1e-10);
    }

    #[test]
    fn aclr_circular_shift_invariant_full_window() {
        let (sig, p, bp) = thousand_to_one_signal();
        let rep = aclr(&sig, &p, &bp).unwrap();
        let shifted = crate::iqsig::circular_shift(&sig, 37);
        let rep2 = aclr(&shifted, &p, &bp).unwrap();
        assert!((rep.aclr_high_db - rep2.aclr_high_db).abs() < 1e-10);
        assert!((rep.aclr_low_db - rep2.aclr_low_db).abs() < 1e-10);
    }

    #[test]
    fn aclr_white_noise_near_zero_db() {
        // Equal expected power per Hz; in-band width 98.28 MHz equals each
        // adjacent width.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1 << 21; // ~2M samples
        let samples: Vec<Complex64> = (0..n)
            .map(|_| {
                // Box-Muller circular Gaussian.
                let u1: f64 = rng.gen::<f64>().max(1e-18);
                let u2: f64 = rng.gen();
                let r = (-2.0 * u1.ln()).sqrt();
                Complex64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
            })
            .collect();
        let sig = IqSignal::new(samples, 368.64e6).unwrap();
        let p = StftParams::eval_default();
        let rep = aclr(&sig, &p, &BandPlan::default_eutra()).unwrap();
        assert!(rep.aclr_high_db.abs() < 0.5, "{}", rep.aclr_high_db);
        assert!(rep.aclr_low_db.abs() < 0.5, "{}", rep.aclr_low_db);
    }

    #[test]
    fn aclr_sentinels() {
        let (sig, p, _) = thousand_to_one_signal();
        // Adjacent bands narrower than one bin and centered between bin
        // centers: the masks are empty, so adjacent power is exactly zero.
        let narrow = BandPlan {
            inband_lo_hz: -50e6,
            inband_hi_hz: 50e6,
            adj_offset_hz: 130.14e6,
            adj_bw_hz: 100e3,
        };
        let rep = aclr(&sig, &p, &narrow).unwrap();
        assert!(rep.has_sentinel());
        assert_eq!(rep.aclr_high_db, f64::INFINITY);
        assert_eq!(rep.aclr_low_db, f64::INFINITY);
    }

    #[test]
    fn mse_dbc_floor_and_scale_invariance() {
        let cfg = WaveformConfig::default_preset();
        let x = generate_frame(&cfg, 7).unwrap();
        assert_eq!(mse_dbc(&x, &x).unwrap(), DBC_FLOOR);
        let doubled = x.scaled(Complex64::new(2.0, 0.0));
        assert_eq!(mse_dbc(&x, &doubled).unwrap(), DBC_FLOOR);
    }

    #[test]
    fn mse_dbc_orthogonal_pair() {
        // ||x - y||^2 = 2 for unit-RMS orthogonal signals -> 10 log10(2).
        let len = 1024;
        let x = tone(3, len, 1.0, 1.0);
        let y = tone(9, len, 1.0, 1.0);
        let db = mse_dbc(&x, &y).unwrap();
        assert!((db - 10.0 * 2.0f64.log10()).abs() < 1e-6, "{db}");
    }

    #[test]
    fn mse_dbc_symmetry() {
        let cfg = WaveformConfig::default_preset();
        let x = generate_frame(&cfg, 7).unwrap();
        let y = generate_frame(&cfg, 8).unwrap();
        let a = mse_dbc(&x, &y).unwrap();
        let b = mse_dbc(&y, &x).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    /// Reference plus band-limited adjacent-channel noise at a chosen power.
    fn with_oob_noise(reference: &IqSignal, bp: &BandPlan, scale: f64, seed: u64) -> IqSignal {
        let n = reference.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bin_hz = reference.sample_rate_hz / n as f64;
        let (_, hi, lo) = band_masks(bp, n, bin_hz);
        let mut spec = vec![Complex64::default(); n];
        for &m in hi.iter().chain(lo.iter()) {
            spec[m] = Complex64::from_polar(scale, rng.gen::<f64>() * std::f64::consts::TAU);
        }
        ifft_in_place(&mut spec);
        let samples: Vec<Complex64> =
            reference.samples.iter().zip(&spec).map(|(a, b)| a + b).collect();
        IqSignal::new(samples, reference.sample_rate_hz).unwrap()
    }

    #[test]
    fn oob_reduction_endpoints_and_half() {
        // Exact construction on the STFT bin grid: the reference carries no
        // out-of-band leakage, so adding adjacent-band tones at amplitude a
        // and a/sqrt(2) gives excess powers in an exact 2:1 ratio.
        let len = 1024;
        let rate = 368.64e6;
        let bp = BandPlan::default_eutra();
        let p = StftParams { window_len: len, hop: len, window: Window::Rectangular };
        let (inb, hi, lo) = band_masks(&bp, len, rate / len as f64);
        let build = |oob_amp: f64| {
            let mut spec = vec![Complex64::default(); len];
            for &m in inb.iter().take(16) {
                spec[m] = Complex64::new(4.0, 0.0);
            }
            for (j, &m) in hi.iter().chain(lo.iter()).enumerate().take(12) {
                spec[m] = Complex64::from_polar(oob_amp, 0.37 * j as f64);
            }
            ifft_in_place(&mut spec);
            IqSignal::new(spec, rate).unwrap()
        };
        let reference = build(0.0);
        let no_dpd = build(0.08);

        // with_dpd == reference -> 100%.
        let r = oob_reduction(&no_dpd, &reference, &reference, &p, &bp).unwrap();
        assert_eq!(r.percent, 100.0);

        // with_dpd == no_dpd -> 0%.
        let r = oob_reduction(&no_dpd, &no_dpd, &reference, &p, &bp).unwrap();
        assert!(r.percent < 1e-9);

        // Amplitude/sqrt(2): excess power exactly halved.
        let half = build(0.08 / 2.0f64.sqrt());
        let r = oob_reduction(&no_dpd, &half, &reference, &p, &bp).unwrap();
        assert!((r.percent - 50.0).abs() < 0.5, "{}", r.percent);
    }

    #[test]
    fn oob_reduction_undefined_baseline() {
        let cfg = WaveformConfig::default_preset();
        let reference = generate_frame(&cfg, 7).unwrap();
        let bp = BandPlan::default_eutra();
        let p = StftParams::eval_default();
        let err = oob_reduction(&reference, &reference, &reference, &p, &bp);
        assert!(matches!(err, Err(DpdError::UndefinedBaseline(_))));
    }

    #[test]
    fn oob_reduction_monotone_in_with_dpd_power() {
        let cfg = WaveformConfig::default_preset();
        let reference = generate_frame(&cfg, 7).unwrap();
        let bp = BandPlan::default_eutra();
        let p = StftParams::eval_default();
        let no_dpd = with_oob_noise(&reference, &bp, 2e-3, 11);
        let mut last = -1.0;
        for &s in &[1.5e-3, 1e-3, 5e-4, 1e-4] {
            let w = with_oob_noise(&reference, &bp, s, 11);
            let r = oob_reduction(&no_dpd, &w, &reference, &p, &bp).unwrap();
            assert!(r.percent >= last, "not monotone: {} < {last}", r.percent);
            last = r.percent;
        }
    }

    #[test]
    fn band_plan_validation() {
        let bp = BandPlan::default_eutra();
        assert!(bp.validate(368.64e6).is_ok());
        assert!(bp.validate(100e6).is_err()); // adjacent band beyond Nyquist
        let overlap = BandPlan { adj_offset_hz: 60e6, ..bp };
        assert!(overlap.validate(368.64e6).is_err());
    }
}
