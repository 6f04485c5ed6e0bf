//! Fourier helpers on periodic uniform grids: FFT plans, wavenumbers,
//! spectral translation and band-limited interpolation.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse transforms of one size, with scratch space.
pub struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    n: usize,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        FftPair {
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); len],
            n,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.forward.process_with_scratch(data, &mut self.scratch);
    }

    /// Inverse transform including the `1/n` normalization.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.inverse.process_with_scratch(data, &mut self.scratch);
        let s = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

impl std::fmt::Debug for FftPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPair").field("n", &self.n).finish()
    }
}

/// Signed mode number of FFT index `j`.
pub fn mode(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Angular wavenumbers in FFT order for spacing `dx`.
pub fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * dx);
    (0..n).map(|j| mode(j, n) as f64 * dk).collect()
}

/// Translates the periodic function sampled in `psi` by `shift`:
/// on return `psi[j]` holds the old function at `x_j - shift`.
pub fn translate(fft: &mut FftPair, psi: &mut [Complex64], dx: f64, shift: f64) {
    let n = psi.len();
    fft.forward(psi);
    let dk = 2.0 * PI / (n as f64 * dx);
    for (j, c) in psi.iter_mut().enumerate() {
        let m = mode(j, n);
        if 2 * m.unsigned_abs() as usize == n {
            // The Nyquist mode has no unique translate; keep its real part.
            *c *= (m as f64 * dk * shift).cos();
        } else {
            *c *= Complex64::from_polar(1.0, -(m as f64) * dk * shift);
        }
    }
    fft.inverse(psi);
}

/// Band-limited (trigonometric) interpolant of samples on a periodic grid
/// starting at `x0` with spacing `dx`.
#[derive(Debug, Clone)]
pub struct Interpolant {
    x0: f64,
    dk: f64,
    m_lo: i64,
    /// Coefficients for modes `m_lo ..= m_lo + coeffs.len() - 1`, divided by n.
    coeffs: Vec<Complex64>,
}

impl Interpolant {
    /// Modes whose magnitude is below `rel_tol` times the largest are dropped
    /// from the ends of the spectrum. The Nyquist mode is always dropped.
    pub fn new(fft: &mut FftPair, samples: &[Complex64], x0: f64, dx: f64, rel_tol: f64) -> Self {
        let n = samples.len();
        let mut c = samples.to_vec();
        fft.forward(&mut c);
        let half = (n / 2) as i64;
        let at = |m: i64| c[m.rem_euclid(n as i64) as usize];
        let max = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let cut = rel_tol * max;
        let mut m_lo = -(half - 1);
        let mut m_hi = half - 1;
        while m_lo < 0 && at(m_lo).norm() <= cut {
            m_lo += 1;
        }
        while m_hi > 0 && at(m_hi).norm() <= cut {
            m_hi -= 1;
        }
        let inv_n = 1.0 / n as f64;
        let coeffs = (m_lo..=m_hi).map(|m| at(m) * inv_n).collect();
        Interpolant {
            x0,
            dk: 2.0 * PI / (n as f64 * dx),
            m_lo,
            coeffs,
        }
    }

    /// Interpolated value at `x` (periodic extension outside the grid).
    pub fn eval(&self, x: f64) -> Complex64 {
        let u = x - self.x0;
        let step = Complex64::from_polar(1.0, self.dk * u);
        let mut ph = Complex64::from_polar(1.0, self.m_lo as f64 * self.dk * u);
        let mut acc = Complex64::new(0.0, 0.0);
        // Re-anchor the phase recurrence periodically to bound rounding drift.
        for (i, c) in self.coeffs.iter().enumerate() {
            if i % 256 == 255 {
                ph = Complex64::from_polar(1.0, (self.m_lo + i as i64) as f64 * self.dk * u);
            }
            acc += c * ph;
            ph *= step;
        }
        acc
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<Complex64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(x: f64, c: f64) -> Complex64 {
        Complex64::from_polar((-(x - c) * (x - c) / 4.0).exp(), 1.3 * x)
    }

    #[test]
    fn roundtrip_fft() {
        let n = 256;
        let mut fft = FftPair::new(n);
        let orig: Vec<Complex64> = (0..n).map(|j| gaussian(j as f64 * 0.2 - 25.6, 0.0)).collect();
        let mut v = orig.clone();
        fft.forward(&mut v);
        fft.inverse(&mut v);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn translation_matches_shifted_samples() {
        let n = 512;
        let dx = 0.1;
        let x0 = -25.6;
        let mut fft = FftPair::new(n);
        let mut v: Vec<Complex64> = (0..n).map(|j| gaussian(x0 + j as f64 * dx, 0.0)).collect();
        translate(&mut fft, &mut v, dx, 3.37);
        for (j, val) in v.iter().enumerate() {
            let x = x0 + j as f64 * dx;
            assert!((val - gaussian(x - 3.37, 0.0)).norm() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn interpolation_is_exact_for_band_limited_data() {
        let n = 512;
        let dx = 0.1;
        let x0 = -25.6;
        let mut fft = FftPair::new(n);
        let v: Vec<Complex64> = (0..n).map(|j| gaussian(x0 + j as f64 * dx, 1.0)).collect();
        let it = Interpolant::new(&mut fft, &v, x0, dx, 1e-18);
        for i in 0..300 {
            let x = -10.0 + i as f64 * 0.0731;
            assert!((it.eval(x) - gaussian(x, 1.0)).norm() < 1e-12, "x={x}");
        }
        // Grid points are reproduced.
        assert!((it.eval(x0 + 100.0 * dx) - v[100]).norm() < 1e-13);
    }

    #[test]
    fn wavenumber_layout() {
        let k = wavenumbers(8, 0.5);
        let dk = 2.0 * PI / 4.0;
        assert_eq!(k[1], dk);
        assert_eq!(k[4], 4.0 * dk);
        assert_eq!(k[7], -dk);
    }
}
