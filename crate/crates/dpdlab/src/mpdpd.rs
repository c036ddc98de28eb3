//! Memory-polynomial DPD baseline: least-squares post-inverse identification
//! (indirect learning) deployed as a pre-inverse.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::iqsig::IqSignal;
use crate::{DpdError, Result};

/// Memory-polynomial coefficients, odd orders {1, 3, .., order}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MpCoeffsJson", into = "MpCoeffsJson")]
pub struct MpCoeffs {
    pub memory_depth: usize,
    pub order: u32,
    /// coeffs[m * num_orders + ki] for odd order index ki.
    pub coeffs: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct MpCoeffsJson {
    memory_depth: usize,
    order: u32,
    coeffs: Vec<f64>,
}

impl From<MpCoeffs> for MpCoeffsJson {
    fn from(c: MpCoeffs) -> Self {
        Self {
            memory_depth: c.memory_depth,
            order: c.order,
            coeffs: c.coeffs.iter().flat_map(|v| [v.re, v.im]).collect(),
        }
    }
}

impl TryFrom<MpCoeffsJson> for MpCoeffs {
    type Error = DpdError;
    fn try_from(j: MpCoeffsJson) -> Result<Self> {
        if j.coeffs.len() % 2 != 0 {
            return Err(DpdError::Config("odd coefficient array length".into()));
        }
        let coeffs = j.coeffs.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Ok(Self { memory_depth: j.memory_depth, order: j.order, coeffs })
    }
}

impl MpCoeffs {
    pub fn odd_orders(order: u32) -> Vec<u32> {
        (1..=order).step_by(2).collect()
    }

    pub fn num_terms(memory_depth: usize, order: u32) -> usize {
        (memory_depth + 1) * Self::odd_orders(order).len()
    }

    /// Identity predistorter: c_{0,1} = 1, everything else 0.
    pub fn identity(memory_depth: usize, order: u32) -> Self {
        let mut coeffs = vec![Complex64::default(); Self::num_terms(memory_depth, order)];
        coeffs[0] = Complex64::new(1.0, 0.0);
        Self { memory_depth, order, coeffs }
    }
}

/// u(n) = sum_m sum_{k odd <= P} c_{m,k} x(n-m) |x(n-m)|^{k-1}, x(n<0) = 0.
pub fn mp_apply(c: &MpCoeffs, sig: &IqSignal) -> Result<IqSignal> {
    if sig.is_empty() {
        return Err(DpdError::DegenerateInput("empty signal".into()));
    }
    let orders = MpCoeffs::odd_orders(c.order);
    let nk = orders.len();
    let mut out = Vec::with_capacity(sig.len());
    for n in 0..sig.len() {
        let mut acc = Complex64::default();
        for m in 0..=c.memory_depth {
            if n < m {
                break;
            }
            let x = sig.samples[n - m];
            let r = x.norm();
            for (ki, &k) in orders.iter().enumerate() {
                acc += c.coeffs[m * nk + ki] * x * r.powi(k as i32 - 1);
            }
        }
        out.push(acc);
    }
    IqSignal::new(out, sig.sample_rate_hz)
}

/// Basis row for sample n of `sig`: terms x(n-m)|x(n-m)|^{k-1}.
fn basis_row(sig: &IqSignal, n: usize, memory_depth: usize, orders: &[u32]) -> Vec<Complex64> {
    let mut row = vec![Complex64::default(); (memory_depth + 1) * orders.len()];
    for m in 0..=memory_depth {
        if n < m {
            break;
        }
        let x = sig.samples[n - m];
        let r = x.norm();
        for (ki, &k) in orders.iter().enumerate() {
            row[m * orders.len() + ki] = x * r.powi(k as i32 - 1);
        }
    }
    row
}

/// Factor A = L L^H in place (L in the lower triangle).
fn cholesky_factor(a: &mut [Vec<Complex64>]) -> Result<()> {
    let n = a.len();
    let mut diag_max = 0.0f64;
    let mut diag_min = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j][j].re;
        for k in 0..j {
            d -= a[j][k].norm_sqr();
        }
        diag_max = diag_max.max(d);
        diag_min = diag_min.min(d);
        if !(d > 0.0) || !d.is_finite() {
            let cond = if diag_min > 0.0 { diag_max / diag_min } else { f64::INFINITY };
            return Err(DpdError::Conditioning(
                format!("Cholesky pivot {j} is non-positive"),
                cond,
            ));
        }
        let l = d.sqrt();
        a[j][j] = Complex64::new(l, 0.0);
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k].conj();
            }
            a[i][j] = s / l;
        }
    }
    Ok(())
}

/// Back-substitute through a Cholesky factor: solves L L^H c = b in place.
fn cholesky_solve(a: &[Vec<Complex64>], b: &mut [Complex64]) {
    let n = b.len();
    // L y = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i].re;
    }
    // L^H c = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i].conj() * b[k];
        }
        b[i] = s / a[i][i].re;
    }
}

/// Identify the post-inverse of a PA from (input, gain-normalized output) by
/// ridge-regularized least squares: min_c || basis(pa_out) c - pa_in ||_2.
///
/// The caller must align and gain-normalize `pa_out` (divide by the PA's
/// small-signal gain) before calling. The returned post-inverse is deployed
/// as the pre-inverse (indirect learning).
pub fn mp_fit_postinverse(
    pa_in: &IqSignal,
    pa_out: &IqSignal,
    memory_depth: usize,
    order: u32,
) -> Result<MpCoeffs> {
    if pa_in.len() != pa_out.len() {
        return Err(DpdError::Shape("mp fit requires equal-length signals".into()));
    }
    let orders = MpCoeffs::odd_orders(order);
    let nc = (memory_depth + 1) * orders.len();
    if pa_in.len() < 10 * nc {
        return Err(DpdError::Shape(format!(
            "need well over {nc} samples to identify {nc} coefficients, got {}",
            pa_in.len()
        )));
    }
    // Normal equations: (B^H B + lambda I) c = B^H y, accumulated row by row.
    let mut a = vec![vec![Complex64::default(); nc]; nc];
    let mut b = vec![Complex64::default(); nc];
    for n in 0..pa_out.len() {
        let row = basis_row(pa_out, n, memory_depth, &orders);
        for i in 0..nc {
            let ri = row[i].conj();
            for j in 0..=i {
                a[i][j] += ri * row[j];
            }
            b[i] += ri * pa_in.samples[n];
        }
    }
    for i in 0..nc {
        for j in i + 1..nc {
            a[i][j] = a[j][i].conj();
        }
    }
    let trace: f64 = (0..nc).map(|i| a[i][i].re).sum();
    let lambda = 1e-8 * trace / nc as f64;
    let a0 = a.clone();
    for i in 0..nc {
        a[i][i] += lambda;
    }
    let mut c = b.clone();
    cholesky_factor(&mut a)?;
    cholesky_solve(&a, &mut c);
    // One iterative-refinement step against the unregularized system cancels
    // the first-order ridge bias while keeping the factorization stable.
    let mut resid: Vec<Complex64> = (0..nc)
        .map(|i| b[i] - (0..nc).map(|j| a0[i][j] * c[j]).sum::<Complex64>())
        .collect();
    cholesky_solve(&a, &mut resid);
    for i in 0..nc {
        c[i] += resid[i];
    }
    Ok(MpCoeffs { memory_depth, order, coeffs: c })
}
