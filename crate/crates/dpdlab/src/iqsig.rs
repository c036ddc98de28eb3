//! Complex baseband I/Q signals: generation, normalization, alignment, file I/O.
//!
//! The waveform generator emits a simplified DFT-s-OFDM frame (no cyclic
//! prefix, no reference signals) whose spectral occupancy is what every
//! downstream metric cares about.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::spectra::{fft_in_place, ifft_in_place};
use crate::{DpdError, Result};

const IQ_MAGIC: [u8; 4] = *b"IQF1";

/// A complex baseband sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl IqSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(DpdError::DegenerateInput("empty sample vector".into()));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(DpdError::Config(format!(
                "sample_rate_hz must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(DpdError::DegenerateInput("non-finite sample".into()));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Root mean square amplitude over I and Q jointly.
    pub fn rms(&self) -> f64 {
        let p: f64 = self.samples.iter().map(|s| s.norm_sqr()).sum();
        (p / self.samples.len() as f64).sqrt()
    }

    /// Total sample power (sum of |x|^2).
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Scale every sample by a complex factor.
    pub fn scaled(&self, g: Complex64) -> IqSignal {
        IqSignal {
            samples: self.samples.iter().map(|s| s * g).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// DFT-s-OFDM frame parameters.
///
/// `occupied_subcarriers * subcarrier_spacing_hz` is the occupied bandwidth;
/// `fft_size * subcarrier_spacing_hz` is the emitted sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformConfig {
    pub fft_size: usize,
    pub occupied_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub num_ofdm_symbols: usize,
    pub target_rms: f64,
    pub modulation: Modulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QPSK")]
    Qpsk,
}

impl WaveformConfig {
    /// 100 MHz NR-like preset: 12288-point FFT, 3276 occupied subcarriers at
    /// 30 kHz spacing (98.28 MHz occupied, 368.64 MHz sample rate).
    pub fn default_preset() -> Self {
        Self {
            fft_size: 12288,
            occupied_subcarriers: 3276,
            subcarrier_spacing_hz: 30e3,
            num_ofdm_symbols: 4,
            target_rms: 1.0,
            modulation: Modulation::Qpsk,
        }
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.fft_size as f64 * self.subcarrier_spacing_hz
    }

    pub fn occupied_bandwidth_hz(&self) -> f64 {
        self.occupied_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.occupied_subcarriers == 0 || self.num_ofdm_symbols == 0 {
            return Err(DpdError::Config("waveform sizes must be positive".into()));
        }
        if self.occupied_subcarriers > self.fft_size {
            return Err(DpdError::Config(format!(
                "occupied_subcarriers {} exceeds fft_size {}",
                self.occupied_subcarriers, self.fft_size
            )));
        }
        if !(self.subcarrier_spacing_hz > 0.0) || !(self.target_rms > 0.0) {
            return Err(DpdError::Config(
                "subcarrier_spacing_hz and target_rms must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of delay/phase/gain alignment between a reference and a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub delay_samples: i64,
    pub phase_rad: f64,
    pub gain: f64,
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Gray-mapped QPSK point for a 2-bit index.
fn qpsk_point(bits: u8) -> Complex64 {
    // 0 -> ++, 1 -> -+, 3 -> --, 2 -> +- (Gray order around the circle)
    let i = if bits & 0b01 == 0 { SQRT_HALF } else { -SQRT_HALF };
    let q = if bits & 0b10 == 0 { SQRT_HALF } else { -SQRT_HALF };
    Complex64::new(i, q)
}

/// Generate one DFT-s-OFDM frame, deterministic in `seed`.
///
/// Per OFDM symbol: draw `occupied_subcarriers` QPSK symbols, DFT-spread them,
/// map onto the centered occupied bins of an `fft_size`-point inverse FFT,
/// concatenate, then scale the whole frame to `target_rms`.
pub fn generate_frame(cfg: &WaveformConfig, seed: u64) -> Result<IqSignal> {
    cfg.validate()?;
    // PRNG pinned to ChaCha8 so datasets reproduce across machines.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occ = cfg.occupied_subcarriers;
    let n = cfg.fft_size;
    let mut frame = Vec::with_capacity(n * cfg.num_ofdm_symbols);
    let mut spread = vec![Complex64::default(); occ];
    let mut grid = vec![Complex64::default(); n];

    for _ in 0..cfg.num_ofdm_symbols {
        for s in spread.iter_mut() {
            *s = qpsk_point(rng.gen_range(0u8..4));
        }
        fft_in_place(&mut spread);
        grid.iter_mut().for_each(|g| *g = Complex64::default());
        // Centered mapping: spread bin j sits at subcarrier j - occ/2.
        let half = (occ / 2) as isize;
        for (j, &v) in spread.iter().enumerate() {
            let k = j as isize - half;
            let bin = k.rem_euclid(n as isize) as usize;
            grid[bin] = v;
        }
        ifft_in_place(&mut grid);
        frame.extend_from_slice(&grid);
    }

    let sig = IqSignal::new(frame, cfg.sample_rate_hz())?;
    normalize_rms(&sig, cfg.target_rms)
}

/// Rescale a signal to the requested RMS. Phase is unchanged.
pub fn normalize_rms(sig: &IqSignal, target_rms: f64) -> Result<IqSignal> {
    if !(target_rms > 0.0) {
        return Err(DpdError::Config(format!("target_rms must be > 0, got {target_rms}")));
    }
    let r = sig.rms();
    if r == 0.0 {
        return Err(DpdError::DegenerateInput("cannot normalize all-zero signal".into()));
    }
    Ok(sig.scaled(Complex64::new(target_rms / r, 0.0)))
}

/// Find the integer delay maximizing |cross-correlation|, then the complex
/// least-squares gain/phase between `reference` and the delay-compensated
/// `measured`. Delays are treated circularly and reported in
/// (-len/2, len/2].
pub fn align(reference: &IqSignal, measured: &IqSignal) -> Result<AlignmentResult> {
    if reference.len() != measured.len() {
        return Err(DpdError::Shape(format!(
            "align requires equal lengths ({} vs {})",
            reference.len(),
            measured.len()
        )));
    }
    if reference.sample_rate_hz != measured.sample_rate_hz {
        return Err(DpdError::Shape("align requires equal sample rates".into()));
    }
    if reference.power() == 0.0 || measured.power() == 0.0 {
        return Err(DpdError::DegenerateInput("align needs nonzero power on both inputs".into()));
    }
    let n = reference.len();
    let mut r = reference.samples.clone();
    let mut m = measured.samples.clone();
    fft_in_place(&mut r);
    fft_in_place(&mut m);
    // corr(d) = sum_n measured(n) * conj(reference(n - d)), circular.
    let mut corr: Vec<Complex64> = m.iter().zip(&r).map(|(a, b)| a * b.conj()).collect();
    ifft_in_place(&mut corr);
    let (best, _) = corr
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .expect("nonempty");
    let delay = if best > n / 2 { best as i64 - n as i64 } else { best as i64 };

    // Compensate the delay (circular) and fit measured ~= g * reference.
    let mut num = Complex64::default();
    let mut den = 0.0;
    for i in 0..n {
        let j = (i as i64 + delay).rem_euclid(n as i64) as usize;
        num += reference.samples[i].conj() * measured.samples[j];
        den += reference.samples[i].norm_sqr();
    }
    let g = num / den;
    Ok(AlignmentResult { delay_samples: delay, phase_rad: g.arg(), gain: g.norm() })
}

/// Circularly shift a signal by `delay` samples (positive = delayed).
pub fn circular_shift(sig: &IqSignal, delay: i64) -> IqSignal {
    let n = sig.len() as i64;
    let samples = (0..sig.len())
        .map(|i| sig.samples[(i as i64 - delay).rem_euclid(n) as usize])
        .collect();
    IqSignal { samples, sample_rate_hz: sig.sample_rate_hz }
}

/// Write the "IQF1" container: magic, u64 LE count, f64 LE sample rate,
/// interleaved f32 LE I,Q pairs. The payload is 32-bit float.
pub fn write_iq(sig: &IqSignal, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + sig.len() * 8);
    buf.extend_from_slice(&IQ_MAGIC);
    buf.extend_from_slice(&(sig.len() as u64).to_le_bytes());
    buf.extend_from_slice(&sig.sample_rate_hz.to_le_bytes());
    for s in &sig.samples {
        buf.extend_from_slice(&(s.re as f32).to_le_bytes());
        buf.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read an "IQF1" file written by [`write_iq`].
pub fn read_iq(path: &Path) -> Result<IqSignal> {
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; 20];
    f.read_exact(&mut header)
        .map_err(|_| DpdError::Truncated("header shorter than 20 bytes".into()))?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != IQ_MAGIC {
        return Err(DpdError::BadMagic { expected: IQ_MAGIC, got: magic });
    }
    let count = u64::from_le_bytes(header[4..12].try_into().unwrap()) as usize;
    let rate = f64::from_le_bytes(header[12..20].try_into().unwrap());
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() < count * 8 {
        return Err(DpdError::Truncated(format!(
            "header declares {count} samples ({} bytes) but payload holds {}",
            count * 8,
            payload.len()
        )));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let re = f32::from_le_bytes(payload[i * 8..i * 8 + 4].try_into().unwrap());
        let im = f32::from_le_bytes(payload[i * 8 + 4..i * 8 + 8].try_into().unwrap());
        samples.push(Complex64::new(re as f64, im as f64));
    }
    IqSignal::new(samples, rate)
}
