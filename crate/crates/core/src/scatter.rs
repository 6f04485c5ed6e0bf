//! Stationary scattering: transfer-matrix spectra, Breit–Wigner resonance
//! extraction, closed-well levels and the scaling symmetry of the spectrum.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BarrierSpec;
use crate::quad;
use crate::wkb;

/// Default number of slices over the support of a smooth potential.
pub const DEFAULT_SEGMENTS: usize = 4096;

/// A potential that is constant on consecutive intervals and zero outside.
#[derive(Debug, Clone)]
pub struct Piecewise {
    /// Left edge of the first slice.
    pub start: f64,
    /// `(width, value)` of each slice, left to right.
    pub slices: Vec<(f64, Complex64)>,
}

impl Piecewise {
    pub fn new(start: f64, slices: Vec<(f64, Complex64)>) -> Self {
        Piecewise { start, slices }
    }

    /// Piecewise-constant rendering of a barrier. Rectangular barriers are
    /// represented exactly; smooth ones by midpoint values on `segments`
    /// equal slices over the support.
    pub fn from_barrier(spec: &BarrierSpec, segments: usize) -> Self {
        if spec.edge_smoothing == 0.0 {
            let (l0, l1) = spec.left_barrier();
            let (r0, r1) = spec.right_barrier();
            let v = Complex64::new(spec.v0, 0.0);
            return Piecewise {
                start: l0,
                slices: vec![
                    (l1 - l0, v),
                    (r0 - l1, Complex64::new(0.0, 0.0)),
                    (r1 - r0, v),
                ],
            };
        }
        let (lo, hi) = spec.support();
        Self::from_fn(|x| spec.potential(x), lo, hi, segments)
    }

    /// Midpoint sampling of `v` on `segments` equal slices of `[lo, hi]`.
    pub fn from_fn<F: Fn(f64) -> f64>(v: F, lo: f64, hi: f64, segments: usize) -> Self {
        let h = (hi - lo) / segments as f64;
        let slices = (0..segments)
            .map(|i| (h, Complex64::new(v(lo + (i as f64 + 0.5) * h), 0.0)))
            .collect();
        Piecewise { start: lo, slices }
    }

    pub fn end(&self) -> f64 {
        self.start + self.slices.iter().map(|s| s.0).sum::<f64>()
    }

    /// Transmission and reflection probabilities at energy `e > 0`.
    ///
    /// The outgoing solution `exp(ikx)` on the right is carried slice by slice
    /// to the left edge and decomposed into incident and reflected waves.
    pub fn transmit(&self, e: f64) -> (f64, f64) {
        let k = (2.0 * e).sqrt();
        let x_right = self.end();
        let mut psi = Complex64::from_polar(1.0, k * x_right);
        let mut dpsi = Complex64::new(0.0, k) * psi;
        // True amplitudes are the stored ones times exp(log_scale).
        let mut log_scale = 0.0;
        for &(h, v) in self.slices.iter().rev() {
            let q2 = Complex64::new(2.0 * e, 0.0) - 2.0 * v;
            let (c, s) = cos_and_sinc(q2, h);
            // Backward step over -h: [psi, dpsi] <- [[c, -s], [q2 s, c]] [psi, dpsi].
            let p = c * psi - s * dpsi;
            let d = q2 * s * psi + c * dpsi;
            psi = p;
            dpsi = d;
            let m = psi.norm().max(dpsi.norm());
            if m > 1e100 {
                psi /= m;
                dpsi /= m;
                log_scale += m.ln();
            }
        }
        let x_left = self.start;
        let ik = Complex64::new(0.0, k);
        let a = 0.5 * (psi + dpsi / ik) * Complex64::from_polar(1.0, -k * x_left);
        let b = 0.5 * (psi - dpsi / ik) * Complex64::from_polar(1.0, k * x_left);
        let a2 = a.norm_sqr();
        let t = (-2.0 * log_scale).exp() / a2;
        let r = b.norm_sqr() / a2;
        (t, r)
    }
}

/// `cos(q h)` and `sin(q h)/q` for `q = sqrt(q2)`, without dividing by `q`.
fn cos_and_sinc(q2: Complex64, h: f64) -> (Complex64, Complex64) {
    let z2 = q2 * h * h;
    if z2.norm() < 1e-3 {
        // Taylor series in z^2 to well below double precision.
        let mut c = Complex64::new(0.0, 0.0);
        let mut s = Complex64::new(0.0, 0.0);
        let mut term_c = Complex64::new(1.0, 0.0);
        let mut term_s = Complex64::new(1.0, 0.0);
        for n in 0..8 {
            c += term_c;
            s += term_s;
            let n = n as f64;
            term_c *= -z2 / ((2.0 * n + 1.0) * (2.0 * n + 2.0));
            term_s *= -z2 / ((2.0 * n + 2.0) * (2.0 * n + 3.0));
        }
        return (c, s * h);
    }
    if q2.im == 0.0 {
        let q2 = q2.re;
        if q2 > 0.0 {
            let q = q2.sqrt();
            let z = q * h;
            return (Complex64::new(z.cos(), 0.0), Complex64::new(z.sin() / q, 0.0));
        }
        let kappa = (-q2).sqrt();
        let z = kappa * h;
        return (Complex64::new(z.cosh(), 0.0), Complex64::new(z.sinh() / kappa, 0.0));
    }
    let q = q2.sqrt();
    let z = q * h;
    (z.cos(), z.sin() / q)
}

/// Closed-form transmission of one rectangular barrier of height `v0`, width `d`.
pub fn rectangular_transmission(v0: f64, d: f64, e: f64) -> f64 {
    if e < v0 {
        let kappa = (2.0 * (v0 - e)).sqrt();
        let sh = (kappa * d).sinh();
        1.0 / (1.0 + v0 * v0 * sh * sh / (4.0 * e * (v0 - e)))
    } else if e > v0 {
        let q = (2.0 * (e - v0)).sqrt();
        let sn = (q * d).sin();
        1.0 / (1.0 + v0 * v0 * sn * sn / (4.0 * e * (e - v0)))
    } else {
        1.0 / (1.0 + v0 * d * d / 2.0)
    }
}

/// One extracted transmission resonance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Resonance {
    pub e_r: f64,
    pub gamma: f64,
    pub t_peak: f64,
    /// RMS relative deviation of the Breit–Wigner fit over `|E - E_R| <= 2 Gamma`.
    pub fit_residual: f64,
    pub non_lorentzian: bool,
    /// Single-barrier action at `e_r`.
    pub wkb_action: f64,
    /// `Gamma / (E_R exp(-A))`.
    pub width_over_wkb_width: f64,
}

/// Transmission and reflection spectra with the resonances found in them.
#[derive(Debug, Clone, Serialize)]
pub struct ScatteringResult {
    pub energies: Vec<f64>,
    pub transmission: Vec<f64>,
    pub reflection: Vec<f64>,
    pub resonances: Vec<Resonance>,
}

/// Residual above which a fitted line is flagged.
pub const NON_LORENTZIAN_RESIDUAL: f64 = 0.1;

/// Transfer-matrix solver bound to one barrier.
#[derive(Debug, Clone)]
pub struct BarrierScattering {
    pub spec: BarrierSpec,
    pub piecewise: Piecewise,
}

impl BarrierScattering {
    pub fn new(spec: &BarrierSpec, segments: usize) -> Result<Self> {
        spec.validate()?;
        if segments < 2000 && spec.edge_smoothing > 0.0 {
            return Err(Error::invalid(
                "scatter.segments",
                format!("need at least 2000 slices, got {segments}"),
            ));
        }
        Ok(BarrierScattering {
            spec: *spec,
            piecewise: Piecewise::from_barrier(spec, segments),
        })
    }

    pub fn transmission(&self, e: f64) -> f64 {
        self.piecewise.transmit(e).0
    }

    /// Spectra on the given energies; resonances are left empty.
    pub fn spectrum(&self, energies: &[f64]) -> Result<ScatteringResult> {
        if let Some(&bad) = energies.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::invalid("energies", format!("must be finite and > 0, got {bad}")));
        }
        let tr: Vec<(f64, f64)> = energies.par_iter().map(|&e| self.piecewise.transmit(e)).collect();
        Ok(ScatteringResult {
            energies: energies.to_vec(),
            transmission: tr.iter().map(|p| p.0).collect(),
            reflection: tr.iter().map(|p| p.1).collect(),
            resonances: Vec::new(),
        })
    }

    /// Refines every sampled local maximum of `result` that clears the
    /// coherent-peak threshold `10 exp(-2A)` and fits a Breit–Wigner line to it.
    pub fn find_resonances(&self, result: &ScatteringResult) -> Vec<Resonance> {
        let top = self.spec.top();
        let (e, t) = (&result.energies, &result.transmission);
        let mut out: Vec<Resonance> = Vec::new();
        for i in 1..e.len().saturating_sub(1) {
            if !(t[i] > t[i - 1] && t[i] >= t[i + 1]) || e[i] >= top {
                continue;
            }
            let (e_pk, t_pk) = quad::golden_max(|x| self.transmission(x), e[i - 1], e[i + 1], 1e-13 * e[i]);
            if e_pk >= top {
                continue;
            }
            let Ok(action) = wkb::action_exponent(&self.spec, e_pk) else {
                continue;
            };
            if t_pk < 10.0 * wkb::wkb_double_transmission(action) {
                continue;
            }
            if let Some(res) = self.fit_peak(e_pk, t_pk, action) {
                if !out.iter().any(|o| (o.e_r - res.e_r).abs() < 0.5 * o.gamma) {
                    out.push(res);
                }
            }
        }
        out
    }

    fn half_point(&self, e_pk: f64, t_half: f64, dir: f64) -> Option<f64> {
        let mut step = 1e-9 * e_pk.max(1e-12);
        let mut inner = e_pk;
        for _ in 0..200 {
            let outer = e_pk + dir * step;
            if outer <= 0.0 {
                return None;
            }
            if self.transmission(outer) < t_half {
                let g = |x: f64| self.transmission(x) - t_half;
                return quad::bisect(g, inner, outer, 1e-15 * e_pk);
            }
            inner = outer;
            step *= 1.5;
        }
        None
    }

    fn fit_peak(&self, e_pk: f64, t_pk: f64, action: f64) -> Option<Resonance> {
        let lo = self.half_point(e_pk, 0.5 * t_pk, -1.0)?;
        let hi = self.half_point(e_pk, 0.5 * t_pk, 1.0)?;
        let gamma0 = hi - lo;
        if !(gamma0 > 0.0) {
            return None;
        }
        // 41 samples over +-2 Gamma put 21 of them above half maximum.
        let n = 41;
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let x = e_pk + gamma0 * (-2.0 + 4.0 * j as f64 / (n - 1) as f64);
                (x, self.transmission(x))
            })
            .filter(|p| p.0 > 0.0 && p.1 > 0.0)
            .collect();
        let (e_r, gamma, t_peak) = fit_breit_wigner(&samples, (e_pk, gamma0, t_pk));
        let residual = (samples
            .iter()
            .map(|&(x, y)| {
                let m = breit_wigner(x, e_r, gamma, t_peak);
                ((m - y) / y).powi(2)
            })
            .sum::<f64>()
            / samples.len() as f64)
            .sqrt();
        let action = wkb::action_exponent(&self.spec, e_r).unwrap_or(action);
        Some(Resonance {
            e_r,
            gamma,
            t_peak,
            fit_residual: residual,
            non_lorentzian: residual > NON_LORENTZIAN_RESIDUAL,
            wkb_action: action,
            width_over_wkb_width: gamma / (e_r * (-action).exp()),
        })
    }
}

/// `t_peak (Gamma/2)^2 / ((E - E_R)^2 + (Gamma/2)^2)`.
pub fn breit_wigner(e: f64, e_r: f64, gamma: f64, t_peak: f64) -> f64 {
    let hg = 0.5 * gamma;
    t_peak * hg * hg / ((e - e_r).powi(2) + hg * hg)
}

/// Gauss–Newton least squares of `ln T` against the Breit–Wigner form.
fn fit_breit_wigner(samples: &[(f64, f64)], start: (f64, f64, f64)) -> (f64, f64, f64) {
    let (mut e_r, mut gamma, mut t_peak) = start;
    let scale = gamma;
    for _ in 0..50 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(x, y) in samples {
            let hg = 0.5 * gamma;
            let den = (x - e_r).powi(2) + hg * hg;
            let model = t_peak.ln() + 2.0 * hg.ln() - den.ln();
            let res = y.ln() - model;
            // Derivatives with respect to (E_R / scale, Gamma / scale, ln t_peak).
            let j = [
                scale * 2.0 * (x - e_r) / den,
                scale * (1.0 / hg - hg / den),
                1.0,
            ];
            for a in 0..3 {
                jtr[a] += j[a] * res;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let Some(d) = solve3(jtj, jtr) else { break };
        e_r += scale * d[0];
        gamma = (gamma + scale * d[1]).max(0.1 * gamma);
        t_peak *= d[2].exp();
        if d[0].abs() < 1e-14 && d[1].abs() < 1e-14 && d[2].abs() < 1e-14 {
            break;
        }
    }
    (e_r, gamma, t_peak)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(&m) / d;
    }
    Some(x)
}

/// Uniform energy grid on `(0, e_max]` with `n` points.
pub fn energy_grid(e_min: f64, e_max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![e_min];
    }
    (0..n)
        .map(|i| e_min + (e_max - e_min) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Spectrum of `spec` on `energies` with its resonances.
pub fn transmission_spectrum(spec: &BarrierSpec, energies: &[f64], segments: usize) -> Result<ScatteringResult> {
    let solver = BarrierScattering::new(spec, segments)?;
    let mut result = solver.spectrum(energies)?;
    result.resonances = solver.find_resonances(&result);
    Ok(result)
}

/// Resonances of `spec` below the barrier top, located on a grid of `n` energies.
pub fn resonances_below_top(spec: &BarrierSpec, n: usize, segments: usize) -> Result<Vec<Resonance>> {
    let top = spec.top();
    let energies = energy_grid(top * 1e-3, top * (1.0 - 1e-6), n);
    Ok(transmission_spectrum(spec, &energies, segments)?.resonances)
}

/// Levels `n^2 pi^2 / (2 W^2)` of the well closed by infinite walls at its edges,
/// keeping those below the barrier height.
pub fn well_levels(spec: &BarrierSpec) -> Vec<f64> {
    let base = std::f64::consts::PI.powi(2) / (2.0 * spec.well_width.powi(2));
    let levels: Vec<f64> = (1..)
        .map(|n: u32| base * f64::from(n * n))
        .take_while(|&e| e < spec.v0)
        .collect();
    if levels.is_empty() {
        log::warn!("no closed-well level below the barrier height {}", spec.v0);
    }
    levels
}

/// Outcome of comparing the spectrum of `V(x/r)/r^2` with that of `V`.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingCheck {
    pub r: f64,
    /// Largest `|T_r(E/r^2) - T(E)| / T(E)` over the sampled energies.
    pub max_spectrum_deviation: f64,
    /// Largest `|E_R(r) r^2 - E_R| / E_R` over matched resonances.
    pub max_level_deviation: f64,
    /// Largest `|t_peak(r) - t_peak|` over matched resonances.
    pub max_peak_deviation: f64,
    pub resonances_unscaled: usize,
    pub resonances_scaled: usize,
}

impl ScalingCheck {
    pub fn max_deviation(&self) -> f64 {
        self.max_spectrum_deviation
            .max(self.max_level_deviation)
            .max(self.max_peak_deviation)
    }
}

pub fn scaled_spectrum_check(spec: &BarrierSpec, r: f64, n: usize, segments: usize) -> Result<ScalingCheck> {
    let scaled = spec.scaled(r)?;
    let top = spec.top();
    let energies = energy_grid(top * 1e-3, top * (1.0 - 1e-6), n);
    let scaled_energies: Vec<f64> = energies.iter().map(|e| e / (r * r)).collect();
    let a = transmission_spectrum(spec, &energies, segments)?;
    let b = transmission_spectrum(&scaled, &scaled_energies, segments)?;
    let max_spectrum_deviation = a
        .transmission
        .iter()
        .zip(&b.transmission)
        .map(|(x, y)| (x - y).abs() / x)
        .fold(0.0, f64::max);
    let mut max_level_deviation = 0.0f64;
    let mut max_peak_deviation = 0.0f64;
    for ra in &a.resonances {
        let nearest = b
            .resonances
            .iter()
            .min_by(|p, q| {
                let dp = (p.e_r * r * r - ra.e_r).abs();
                let dq = (q.e_r * r * r - ra.e_r).abs();
                dp.total_cmp(&dq)
            });
        match nearest {
            Some(rb) => {
                max_level_deviation = max_level_deviation.max((rb.e_r * r * r - ra.e_r).abs() / ra.e_r);
                max_peak_deviation = max_peak_deviation.max((rb.t_peak - ra.t_peak).abs());
            }
            None => max_level_deviation = f64::INFINITY,
        }
    }
    if a.resonances.len() != b.resonances.len() {
        max_level_deviation = f64::INFINITY;
    }
    Ok(ScalingCheck {
        r,
        max_spectrum_deviation,
        max_level_deviation,
        max_peak_deviation,
        resonances_unscaled: a.resonances.len(),
        resonances_scaled: b.resonances.len(),
    })
}

/// Spurious flux (reflection plus leakage through the far end) of a layer
/// `-i eta (d/w)^2`, `0 <= d <= w`, at wavenumber `k`.
pub fn absorber_spurious_flux(eta: f64, width: f64, k: f64, segments: usize) -> f64 {
    let h = width / segments as f64;
    let slices = (0..segments)
        .map(|i| {
            let d = (i as f64 + 0.5) * h / width;
            (h, Complex64::new(0.0, -eta * d * d))
        })
        .collect();
    let (t, r) = Piecewise::new(0.0, slices).transmit(0.5 * k * k);
    t + r
}

/// Absorber strength minimizing the worst spurious flux over `[k_min, k_max]`.
///
/// Returns `(eta, worst spurious flux)`.
pub fn tune_absorber(width: f64, k_min: f64, k_max: f64) -> (f64, f64) {
    let ks: Vec<f64> = energy_grid(k_min, k_max, 24);
    let worst = |eta: f64| {
        ks.iter()
            .map(|&k| absorber_spurious_flux(eta, width, k, 400))
            .fold(0.0, f64::max)
    };
    let mut best = (1.0, f64::INFINITY);
    for i in 0..=60 {
        let eta = 10f64.powf(-3.0 + 6.0 * i as f64 / 60.0);
        let w = worst(eta);
        if w < best.1 {
            best = (eta, w);
        }
    }
    // Polish in log eta.
    let (mut lo, mut hi) = (best.0.ln() - 0.12, best.0.ln() + 0.12);
    for _ in 0..40 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if worst(m1.exp()) < worst(m2.exp()) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let eta = (0.5 * (lo + hi)).exp();
    let w = worst(eta);
    if w < best.1 {
        (eta, w)
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single(v0: f64, d: f64) -> Piecewise {
        Piecewise::new(0.0, vec![(d, Complex64::new(v0, 0.0))])
    }

    #[test]
    fn free_space_is_transparent() {
        let p = Piecewise::new(-5.0, vec![(10.0, Complex64::new(0.0, 0.0))]);
        for e in [0.01, 0.5, 3.0, 100.0] {
            let (t, r) = p.transmit(e);
            assert_relative_eq!(t, 1.0, max_relative = 1e-13);
            assert!(r < 1e-25);
        }
    }

    #[test]
    fn rectangular_barrier_example() {
        let t = single(5.0, 2.0).transmit(1.0).0;
        let exact = rectangular_transmission(5.0, 2.0, 1.0);
        assert_relative_eq!(t, exact, max_relative = 1e-10);
        assert_relative_eq!(exact, 3.1e-5, max_relative = 0.02);
        assert!(single(5.0, 2.0).transmit(500.0).0 >= 0.99);
    }

    #[test]
    fn smooth_slicing_converges_to_exact_for_sharp_limit() {
        let b = BarrierSpec::rectangular(2.0, 1.0, 2.0).unwrap();
        let exact = Piecewise::from_barrier(&b, 0);
        let sliced = Piecewise::from_fn(|x| b.potential(x), -2.5, 2.5, 5000);
        // Edges fall on slice boundaries (5000 slices of 1e-3).
        for e in [0.3, 0.9, 1.5] {
            assert_relative_eq!(exact.transmit(e).0, sliced.transmit(e).0, max_relative = 1e-9);
        }
    }

    #[test]
    fn closed_well_levels() {
        let deep = BarrierSpec::rectangular(1e4, 1.0, 2.0).unwrap();
        let lv = well_levels(&deep);
        assert_relative_eq!(lv[0], std::f64::consts::PI.powi(2) / 8.0, max_relative = 1e-14);
        assert_relative_eq!(lv[0], 1.2337, max_relative = 1e-4);
        assert!(lv.iter().all(|&e| e > 0.0 && e < 1e4));
        let narrow = BarrierSpec::rectangular(1.0, 1.0, 0.5).unwrap();
        assert!(well_levels(&narrow).is_empty());
    }

    #[test]
    fn deep_well_resonance_near_closed_level() {
        // Thick, high barriers: the lowest resonance approaches the closed-well level
        // from below, with a shift of order the penetration depth.
        let b = BarrierSpec::rectangular(200.0, 0.5, 2.0).unwrap();
        let res = resonances_below_top(&b, 4000, DEFAULT_SEGMENTS).unwrap();
        let e1 = well_levels(&b)[0];
        assert!(res[0].e_r < e1 && res[0].e_r > 0.9 * e1, "{} vs {}", res[0].e_r, e1);
    }

    #[test]
    fn empty_potential_has_no_resonances() {
        let p = Piecewise::new(-1.0, vec![(2.0, Complex64::new(0.0, 0.0))]);
        let energies = energy_grid(0.01, 5.0, 200);
        let t: Vec<f64> = energies.iter().map(|&e| p.transmit(e).0).collect();
        let has_peak = (1..t.len() - 1).any(|i| t[i] > t[i - 1] && t[i] >= t[i + 1] && t[i] - t[i - 1] > 1e-12);
        assert!(!has_peak);
    }

    #[test]
    fn breit_wigner_fit_recovers_synthetic_line() {
        let samples: Vec<(f64, f64)> = (0..41)
            .map(|j| {
                let x = 1.0 + 0.01 * (-2.0 + 4.0 * j as f64 / 40.0);
                (x, breit_wigner(x, 1.0003, 0.0095, 0.97))
            })
            .collect();
        let (e, g, t) = fit_breit_wigner(&samples, (1.0, 0.01, 1.0));
        assert_relative_eq!(e, 1.0003, max_relative = 1e-10);
        assert_relative_eq!(g, 0.0095, max_relative = 1e-8);
        assert_relative_eq!(t, 0.97, max_relative = 1e-8);
    }

    #[test]
    fn absorber_tuning_reaches_target() {
        let (eta, worst) = tune_absorber(60.0, 0.6, 2.0);
        assert!(eta > 0.0);
        assert!(worst < 1e-6, "{worst}");
    }

    proptest! {
        #[test]
        fn unitarity(e in 0.01f64..20.0, v0 in 0.5f64..10.0, d in 0.1f64..3.0, w in 0.5f64..4.0) {
            let b = BarrierSpec::new(v0, d, w, 0.1 * d, 0.0).unwrap();
            let p = Piecewise::from_barrier(&b, 2048);
            let (t, r) = p.transmit(e);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&t));
            prop_assert!((t + r - 1.0).abs() <= 1e-8);
        }

        #[test]
        fn rectangular_matches_closed_form(e in 0.05f64..4.95) {
            let t = single(5.0, 2.0).transmit(e).0;
            let exact = rectangular_transmission(5.0, 2.0, e);
            prop_assert!(((t - exact) / exact).abs() <= 1e-9);
        }
    }
}
