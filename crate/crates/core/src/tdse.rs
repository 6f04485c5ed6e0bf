//! Split-operator propagation of the time-dependent Schrödinger equation on a
//! periodic uniform grid with absorbing edges, packet construction,
//! region-resolved diagnostics and classical trajectories.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BarrierSpec;
use crate::scatter;
use crate::spectral::{wavenumbers, FftPair};

/// Uniform periodic grid `x_j = x_min + j dx`, `j < n_points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        let g = Grid {
            x_min,
            x_max,
            n_points,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(Error::invalid(
                "grid.x_max",
                format!("need finite x_min < x_max, got [{}, {}]", self.x_min, self.x_max),
            ));
        }
        if self.n_points < 16 || !self.n_points.is_power_of_two() {
            return Err(Error::invalid(
                "grid.n_points",
                format!("must be a power of two >= 16, got {}", self.n_points),
            ));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_points as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    /// Largest representable wavenumber `pi/dx`.
    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI / self.dx()
    }

    /// Requires `k_max >= 8 |k|` for the largest wavenumber of a run.
    pub fn check_resolution(&self, k_largest: f64) -> Result<()> {
        if self.k_max() < 8.0 * k_largest.abs() {
            return Err(Error::invalid(
                "grid.n_points",
                format!(
                    "k_max = {:.4} must exceed 8 x the largest wavenumber {:.4}",
                    self.k_max(),
                    k_largest
                ),
            ));
        }
        Ok(())
    }

    /// Grid with the same extent and twice the points.
    pub fn refined(&self) -> Grid {
        Grid {
            n_points: 2 * self.n_points,
            ..*self
        }
    }

    /// Index range `[lo, hi)` of the points with `a <= x < b`.
    pub fn index_range(&self, a: f64, b: f64) -> (usize, usize) {
        let dx = self.dx();
        let idx = |x: f64| -> usize {
            let f = ((x - self.x_min) / dx).ceil();
            f.clamp(0.0, self.n_points as f64) as usize
        };
        (idx(a), idx(b).max(idx(a)))
    }
}

/// Wave function on a grid with the probability absorbed at either edge.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub grid: Grid,
    pub psi: Vec<Complex64>,
    pub time: f64,
    pub absorbed_left: f64,
    pub absorbed_right: f64,
}

impl WaveState {
    pub fn new(grid: Grid, psi: Vec<Complex64>, time: f64) -> Self {
        assert_eq!(psi.len(), grid.n_points);
        WaveState {
            grid,
            psi,
            time,
            absorbed_left: 0.0,
            absorbed_right: 0.0,
        }
    }

    /// `∫ |psi|^2 dx` on the grid.
    pub fn norm(&self) -> f64 {
        self.psi.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// Norm plus everything absorbed so far.
    pub fn total_probability(&self) -> f64 {
        self.norm() + self.absorbed_left + self.absorbed_right
    }

    pub fn normalize(&mut self) {
        let s = 1.0 / self.norm().sqrt();
        for v in &mut self.psi {
            *v *= s;
        }
    }

    pub fn probability_in(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = self.grid.index_range(a, b);
        self.psi[lo..hi].iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// `<x>` and the spread `sqrt(<x^2> - <x>^2)` of the grid part.
    pub fn position_moments(&self) -> (f64, f64) {
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (j, v) in self.psi.iter().enumerate() {
            let p = v.norm_sqr();
            let x = self.grid.x(j);
            m0 += p;
            m1 += p * x;
            m2 += p * x * x;
        }
        if m0 == 0.0 {
            return (0.0, 0.0);
        }
        let mean = m1 / m0;
        (mean, (m2 / m0 - mean * mean).max(0.0).sqrt())
    }

    /// `<k>` and `<k^2>/2` of the grid part.
    pub fn momentum_moments(&self, fft: &mut FftPair) -> (f64, f64) {
        let mut c = self.psi.clone();
        fft.forward(&mut c);
        let ks = wavenumbers(self.grid.n_points, self.grid.dx());
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (v, k) in c.iter().zip(&ks) {
            let p = v.norm_sqr();
            m0 += p;
            m1 += p * k;
            m2 += p * k * k;
        }
        if m0 == 0.0 {
            return (0.0, 0.0);
        }
        (m1 / m0, 0.5 * m2 / m0)
    }

    /// L2 distance `sqrt(∫ |a - b|^2 dx)` to another state on the same grid.
    pub fn l2_distance(&self, other: &WaveState) -> f64 {
        l2_distance(&self.psi, &other.psi, self.grid.dx())
    }
}

pub fn l2_distance(a: &[Complex64], b: &[Complex64], dx: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * dx).sqrt()
}

fn check_packet_support(grid: &Grid, center: f64, sigma: f64, k0: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("packet.sigma", format!("must be > 0, got {sigma}")));
    }
    let left = center - grid.x_min;
    let right = grid.x_max - center;
    if left <= 6.0 * sigma {
        return Err(Error::Support(format!(
            "packet centre {center} is {left:.4} from the left edge, needs > 6 sigma = {:.4}",
            6.0 * sigma
        )));
    }
    if right <= 6.0 * sigma {
        return Err(Error::Support(format!(
            "packet centre {center} is {right:.4} from the right edge, needs > 6 sigma = {:.4}",
            6.0 * sigma
        )));
    }
    if k0 != 0.0 && 2.0 * std::f64::consts::PI / k0.abs() < 8.0 * grid.dx() {
        return Err(Error::Support(format!(
            "wavelength {:.4} is resolved by fewer than 8 points (dx = {:.4})",
            2.0 * std::f64::consts::PI / k0.abs(),
            grid.dx()
        )));
    }
    Ok(())
}

/// Normalized Gaussian `exp(-(x - x0)^2 / (4 sigma^2) + i k0 x)` at time `time`.
pub fn make_gaussian_packet(grid: &Grid, x0: f64, k0: f64, sigma: f64, time: f64) -> Result<WaveState> {
    make_focused_packet(grid, x0, k0, sigma, 0.0, time)
}

/// Free Gaussian packet that, left alone, narrows to width `sigma` at position
/// `x_focus` after a delay `delay`. With `delay = 0` this is the plain Gaussian.
pub fn make_focused_packet(
    grid: &Grid,
    x_focus: f64,
    k0: f64,
    sigma: f64,
    delay: f64,
    time: f64,
) -> Result<WaveState> {
    let s = -delay;
    let center = x_focus + k0 * s;
    let spread = sigma * (1.0 + (s / (2.0 * sigma * sigma)).powi(2)).sqrt();
    check_packet_support(grid, center, spread, k0)?;
    let width2 = Complex64::new(4.0 * sigma * sigma, 2.0 * s);
    let pre = Complex64::new(1.0, s / (2.0 * sigma * sigma)).sqrt().inv();
    let psi = (0..grid.n_points)
        .map(|j| {
            let x = grid.x(j);
            let u = x - center;
            pre * (-(u * u) / width2 + Complex64::new(0.0, k0 * x - 0.5 * k0 * k0 * s)).exp()
        })
        .collect();
    let mut st = WaveState::new(*grid, psi, time);
    st.normalize();
    Ok(st)
}

/// A time-dependent real potential split into a short-range part, evaluated
/// pointwise inside a window, and a long-range polynomial `c1 x + c2 x^2`.
pub trait Potential: Sync {
    fn local(&self, x: f64, t: f64) -> f64;

    /// Interval outside which [`Potential::local`] vanishes; `None` if it does not.
    fn window(&self, _t: f64) -> Option<(f64, f64)> {
        None
    }

    /// Coefficients `(c1, c2)` of the long-range part.
    fn polynomial(&self, _t: f64) -> (f64, f64) {
        (0.0, 0.0)
    }

    /// Largest time step that resolves the explicit time dependence near `t`.
    fn max_step(&self, _t: f64) -> f64 {
        f64::INFINITY
    }

    /// Full potential at `x`.
    fn value(&self, x: f64, t: f64) -> f64 {
        let (c1, c2) = self.polynomial(t);
        let inside = self.window(t).map_or(true, |(a, b)| x >= a && x <= b);
        let l = if inside { self.local(x, t) } else { 0.0 };
        l + c1 * x + c2 * x * x
    }
}

/// Arbitrary `V(x, t)` evaluated everywhere.
pub struct FnPotential<F>(pub F);

impl<F: Fn(f64, f64) -> f64 + Sync> Potential for FnPotential<F> {
    fn local(&self, x: f64, t: f64) -> f64 {
        (self.0)(x, t)
    }
}

/// `V = 0`.
pub struct FreeSpace;

impl Potential for FreeSpace {
    fn local(&self, _x: f64, _t: f64) -> f64 {
        0.0
    }

    fn window(&self, _t: f64) -> Option<(f64, f64)> {
        Some((0.0, -1.0))
    }
}

/// Static barrier `V(x)`.
pub struct StaticBarrier(pub BarrierSpec);

impl Potential for StaticBarrier {
    fn local(&self, x: f64, _t: f64) -> f64 {
        self.0.potential(x)
    }

    fn window(&self, _t: f64) -> Option<(f64, f64)> {
        Some(self.0.support())
    }
}

/// Uniform field `E`: potential `-E x`.
pub struct UniformField<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Potential for UniformField<F> {
    fn local(&self, _x: f64, _t: f64) -> f64 {
        0.0
    }

    fn window(&self, _t: f64) -> Option<(f64, f64)> {
        Some((0.0, -1.0))
    }

    fn polynomial(&self, t: f64) -> (f64, f64) {
        (-(self.0)(t), 0.0)
    }
}

/// Time-step selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepPolicy {
    Fixed { dt: f64 },
    /// `dt = phase / max(V_eff, K_eff)`, where `V_eff` is the largest
    /// `|V|` and `K_eff` the largest `k^2/2` over the points and modes whose
    /// density exceeds `threshold` times the maximum; free motion uses `dt_max`.
    /// Steps are drawn from the ladder `dt_max 2^(-m/4)`.
    Adaptive {
        phase: f64,
        dt_max: f64,
        threshold: f64,
    },
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepPolicy::Fixed { dt } => dt > 0.0 && dt.is_finite(),
            StepPolicy::Adaptive {
                phase,
                dt_max,
                threshold,
            } => phase > 0.0 && dt_max > 0.0 && dt_max.is_finite() && (0.0..1.0).contains(&threshold),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("grid.step", format!("invalid step policy {self:?}")))
        }
    }

    /// Same policy with half the step.
    pub fn halved(&self) -> StepPolicy {
        match *self {
            StepPolicy::Fixed { dt } => StepPolicy::Fixed { dt: 0.5 * dt },
            StepPolicy::Adaptive {
                phase,
                dt_max,
                threshold,
            } => StepPolicy::Adaptive {
                phase: 0.5 * phase,
                dt_max: 0.5 * dt_max,
                threshold,
            },
        }
    }
}

/// Complex absorbing layers `-i strength (d/width)^2` of depth `d` into
/// the last `width` of each grid edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Absorber {
    pub width: f64,
    pub strength: f64,
}

impl Absorber {
    /// Layer whose strength is tuned for the wavenumber band `[k_min, k_max]`;
    /// also returns the worst spurious flux in that band.
    pub fn tuned(width: f64, k_min: f64, k_max: f64) -> (Absorber, f64) {
        let (strength, worst) = scatter::tune_absorber(width, k_min, k_max);
        (Absorber { width, strength }, worst)
    }
}

/// Tolerance on `norm + absorbed` drift before a run is aborted.
pub const NORM_TOLERANCE: f64 = 1e-6;

struct StepFactors {
    kinetic: Vec<Complex64>,
    cap_left: Vec<f64>,
    cap_right: Vec<f64>,
}

/// Per-run counters.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StepStats {
    pub steps: u64,
    pub min_dt: f64,
    pub max_dt: f64,
}

/// Strang split-step propagator: half potential, full kinetic, half potential,
/// with the potential evaluated at the step midpoint.
pub struct Propagator {
    grid: Grid,
    fft: FftPair,
    half_k2: Vec<f64>,
    policy: StepPolicy,
    absorber: Option<Absorber>,
    cap_left: Vec<f64>,
    cap_right: Vec<f64>,
    cache: HashMap<i32, StepFactors>,
    kinetic_bound: f64,
    reference_total: Option<f64>,
    pub stats: StepStats,
    pub norm_tolerance: f64,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("grid", &self.grid)
            .field("policy", &self.policy)
            .field("absorber", &self.absorber)
            .finish()
    }
}

impl Propagator {
    pub fn new(grid: Grid, policy: StepPolicy, absorber: Option<Absorber>) -> Result<Self> {
        grid.validate()?;
        policy.validate()?;
        let n = grid.n_points;
        let half_k2 = wavenumbers(n, grid.dx()).iter().map(|k| 0.5 * k * k).collect();
        let (mut cap_left, mut cap_right) = (Vec::new(), Vec::new());
        if let Some(a) = absorber {
            if !(a.width > 0.0 && a.strength >= 0.0 && 2.0 * a.width < grid.x_max - grid.x_min) {
                return Err(Error::invalid("absorber", format!("invalid absorbing layer {a:?}")));
            }
            for j in 0..n {
                let x = grid.x(j);
                let dl = (grid.x_min + a.width - x) / a.width;
                if dl > 0.0 {
                    cap_left.push(a.strength * dl * dl);
                }
            }
            for j in (0..n).rev() {
                let x = grid.x(j);
                let dr = (x - (grid.x_max - a.width)) / a.width;
                if dr > 0.0 {
                    cap_right.push(a.strength * dr * dr);
                } else {
                    break;
                }
            }
            cap_right.reverse();
        }
        Ok(Propagator {
            grid,
            fft: FftPair::new(n),
            half_k2,
            policy,
            absorber,
            cap_left,
            cap_right,
            cache: HashMap::new(),
            kinetic_bound: f64::INFINITY,
            reference_total: None,
            stats: StepStats::default(),
            norm_tolerance: NORM_TOLERANCE,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn policy(&self) -> StepPolicy {
        self.policy
    }

    /// Switches the step policy, keeping the drift reference.
    pub fn set_policy(&mut self, policy: StepPolicy) -> Result<()> {
        policy.validate()?;
        if policy != self.policy {
            self.policy = policy;
            self.cache.clear();
            self.kinetic_bound = f64::INFINITY;
        }
        Ok(())
    }

    pub fn fft(&mut self) -> &mut FftPair {
        &mut self.fft
    }

    /// Forget the probability reference used for the drift check.
    pub fn reset_reference(&mut self) {
        self.reference_total = None;
    }

    fn build_factors(&self, dt: f64) -> StepFactors {
        StepFactors {
            kinetic: self
                .half_k2
                .iter()
                .map(|&e| Complex64::from_polar(1.0, -e * dt))
                .collect(),
            cap_left: self.cap_left.iter().map(|g| (-g * 0.5 * dt).exp()).collect(),
            cap_right: self.cap_right.iter().map(|g| (-g * 0.5 * dt).exp()).collect(),
        }
    }

    /// Step size suggested by the policy at the current state, before clipping.
    fn target_step(&self, state: &WaveState, pot: &dyn Potential) -> (f64, Option<i32>) {
        let t = state.time;
        match self.policy {
            StepPolicy::Fixed { dt } => (dt.min(pot.max_step(t)), None),
            StepPolicy::Adaptive {
                phase,
                dt_max,
                threshold,
            } => {
                let v_eff = self.potential_bound(state, pot, threshold);
                let mut dt = dt_max.min(pot.max_step(t));
                if v_eff > 0.0 {
                    dt = dt.min(phase / v_eff.max(self.kinetic_bound.min(1e300)));
                }
                // Ladder dt_max * 2^(-m/4).
                let m = (4.0 * (dt_max / dt).log2()).ceil().max(0.0) as i32;
                (dt_max * (-(m as f64) / 4.0).exp2(), Some(m))
            }
        }
    }

    /// Largest |V| over points carrying a density above `threshold` times the peak.
    fn potential_bound(&self, state: &WaveState, pot: &dyn Potential, threshold: f64) -> f64 {
        let t = state.time;
        let peak = state.psi.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        let cut = threshold * peak;
        let n = self.grid.n_points;
        let first = state.psi.iter().position(|v| v.norm_sqr() > cut).unwrap_or(n);
        if first == n {
            return 0.0;
        }
        let last = state.psi.iter().rposition(|v| v.norm_sqr() > cut).unwrap_or(0);
        let (lo, hi) = match pot.window(t) {
            Some((a, b)) => self.grid.index_range(a, b),
            None => (0, n),
        };
        let mut bound = 0.0f64;
        for j in lo.max(first)..hi.min(last + 1) {
            if state.psi[j].norm_sqr() > cut {
                bound = bound.max(pot.local(self.grid.x(j), t).abs());
            }
        }
        let (_, c2) = pot.polynomial(t);
        if c2 != 0.0 {
            let xa = self.grid.x(first).abs().max(self.grid.x(last).abs());
            bound += c2.abs() * xa * xa;
        }
        bound
    }

    fn half_potential(&self, state: &mut WaveState, pot: &dyn Potential, tm: f64, h: f64) {
        let n = self.grid.n_points;
        let (lo, hi) = match pot.window(tm) {
            Some((a, b)) => self.grid.index_range(a, b),
            None => (0, n),
        };
        for j in lo..hi {
            let v = pot.local(self.grid.x(j), tm);
            if v != 0.0 {
                state.psi[j] *= Complex64::from_polar(1.0, -v * h);
            }
        }
        let (c1, c2) = pot.polynomial(tm);
        let xa = self.grid.x_min.abs().max(self.grid.x_max.abs());
        if c2 != 0.0 {
            for (j, v) in state.psi.iter_mut().enumerate() {
                let x = self.grid.x(j);
                *v *= Complex64::from_polar(1.0, -(c1 * x + c2 * x * x) * h);
            }
        } else if (c1 * xa * h).abs() > 1e-16 {
            let dx = self.grid.dx();
            let step = Complex64::from_polar(1.0, -c1 * dx * h);
            let mut ph = Complex64::new(1.0, 0.0);
            for (j, v) in state.psi.iter_mut().enumerate() {
                if j % 1024 == 0 {
                    ph = Complex64::from_polar(1.0, -c1 * self.grid.x(j) * h);
                }
                *v *= ph;
                ph *= step;
            }
        }
    }

    fn absorb(&self, state: &mut WaveState, left: &[f64], right: &[f64]) {
        let dx = self.grid.dx();
        let mut lost = 0.0;
        for (v, &f) in state.psi.iter_mut().zip(left) {
            let p = v.norm_sqr();
            lost += p * (1.0 - f * f);
            *v *= f;
        }
        state.absorbed_left += lost * dx;
        let n = self.grid.n_points;
        let off = n - right.len();
        let mut lost = 0.0;
        for (v, &f) in state.psi[off..].iter_mut().zip(right) {
            let p = v.norm_sqr();
            lost += p * (1.0 - f * f);
            *v *= f;
        }
        state.absorbed_right += lost * dx;
    }

    fn step(&mut self, state: &mut WaveState, pot: &dyn Potential, dt: f64, level: Option<i32>) {
        let fresh;
        let factors: &StepFactors = match level {
            Some(m) => {
                if !self.cache.contains_key(&m) {
                    let f = self.build_factors(dt);
                    self.cache.insert(m, f);
                }
                &self.cache[&m]
            }
            None => {
                fresh = self.build_factors(dt);
                &fresh
            }
        };
        let tm = state.time + 0.5 * dt;
        let h = 0.5 * dt;
        self.half_potential(state, pot, tm, h);
        self.absorb(state, &factors.cap_left, &factors.cap_right);
        self.fft.forward(&mut state.psi);
        // For a purely linear long-range term the splitting error is the global
        // phase c1^2 dt^3 / 24 per step; remove it so uniform fields are exact.
        let (c1, c2) = pot.polynomial(tm);
        let corr = if c2 == 0.0 {
            Complex64::from_polar(1.0, -c1 * c1 * dt * dt * dt / 24.0)
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut peak = 0.0f64;
        for (v, k) in state.psi.iter_mut().zip(&factors.kinetic) {
            peak = peak.max(v.norm_sqr());
            *v *= k * corr;
        }
        if let StepPolicy::Adaptive { threshold, .. } = self.policy {
            let cut = threshold * peak;
            self.kinetic_bound = state
                .psi
                .iter()
                .zip(&self.half_k2)
                .filter(|(v, _)| v.norm_sqr() > cut)
                .map(|(_, e)| *e)
                .fold(0.0, f64::max);
        }
        self.fft.inverse(&mut state.psi);
        self.absorb(state, &factors.cap_left, &factors.cap_right);
        self.half_potential(state, pot, tm, h);
        state.time += dt;
        self.stats.steps += 1;
        if self.stats.min_dt == 0.0 || dt < self.stats.min_dt {
            self.stats.min_dt = dt;
        }
        self.stats.max_dt = self.stats.max_dt.max(dt);
    }

    fn check_drift(&mut self, state: &WaveState) -> Result<()> {
        let total = state.total_probability();
        let reference = *self.reference_total.get_or_insert(total);
        let drift = (total - reference).abs();
        if drift > self.norm_tolerance || !total.is_finite() {
            return Err(Error::NormDrift {
                drift,
                time: state.time,
            });
        }
        Ok(())
    }

    /// Advances `state` to `t_end` (no-op if already there).
    pub fn advance(&mut self, state: &mut WaveState, pot: &dyn Potential, t_end: f64) -> Result<()> {
        if state.grid != self.grid {
            return Err(Error::invalid("state", "state grid differs from propagator grid"));
        }
        self.check_drift(state)?;
        let eps = 1e-12 * t_end.abs().max(1.0);
        let mut since_check = 0;
        if matches!(self.policy, StepPolicy::Adaptive { .. }) && !self.kinetic_bound.is_finite() {
            let (_, ke) = state.momentum_moments(&mut self.fft);
            self.kinetic_bound = 4.0 * ke;
        }
        while t_end - state.time > eps {
            let (dt, level) = self.target_step(state, pot);
            let remaining = t_end - state.time;
            if dt >= remaining - eps {
                self.step(state, pot, remaining, None);
                state.time = t_end;
            } else {
                self.step(state, pot, dt, level);
            }
            since_check += 1;
            if since_check == 64 {
                since_check = 0;
                self.check_drift(state)?;
            }
        }
        self.check_drift(state)
    }

    /// `<H>` of the grid part at time `t`.
    pub fn energy(&mut self, state: &WaveState, pot: &dyn Potential) -> f64 {
        let (_, kin) = state.momentum_moments(&mut self.fft);
        let n = state.norm();
        let dx = self.grid.dx();
        let pot_e: f64 = state
            .psi
            .iter()
            .enumerate()
            .map(|(j, v)| v.norm_sqr() * pot.value(self.grid.x(j), state.time))
            .sum::<f64>()
            * dx;
        kin + pot_e / n
    }
}

/// Probabilities left of `b.0`, between, and right of `b.1`; the outer two
/// include the probability absorbed at the respective edge.
pub fn measure_fractions(state: &WaveState, boundaries: (f64, f64)) -> (f64, f64, f64) {
    let (a, b) = boundaries;
    let g = &state.grid;
    let left = state.probability_in(g.x_min, a) + state.absorbed_left;
    let well = state.probability_in(a, b);
    let right = state.probability_in(b, g.x_max + g.dx()) + state.absorbed_right;
    (left, well, right)
}

/// Probability inside the well of the barrier scaled by `r`.
pub fn well_occupation(state: &WaveState, spec: &BarrierSpec, r: f64) -> Result<f64> {
    let (a, b) = spec.scaled(r)?.well();
    Ok(state.probability_in(a, b))
}

/// Sampled classical trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Fourth-order Runge–Kutta integration of `x'' = -dU/dx` with the force from
/// a central difference of `potential(x, t)`.
pub fn classical_trajectory<U: Fn(f64, f64) -> f64>(
    potential: U,
    x_init: f64,
    v_init: f64,
    t_span: (f64, f64),
    steps: usize,
) -> Trajectory {
    let force = |x: f64, t: f64| {
        let h = 1e-5 * x.abs().max(1.0);
        -(potential(x + h, t) - potential(x - h, t)) / (2.0 * h)
    };
    let (t0, t1) = t_span;
    let dt = (t1 - t0) / steps as f64;
    let mut out = Trajectory {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
    };
    let (mut x, mut v) = (x_init, v_init);
    out.t.push(t0);
    out.x.push(x);
    out.v.push(v);
    for i in 0..steps {
        let t = t0 + i as f64 * dt;
        let k1x = v;
        let k1v = force(x, t);
        let k2x = v + 0.5 * dt * k1v;
        let k2v = force(x + 0.5 * dt * k1x, t + 0.5 * dt);
        let k3x = v + 0.5 * dt * k2v;
        let k3v = force(x + 0.5 * dt * k2x, t + 0.5 * dt);
        let k4x = v + dt * k3v;
        let k4v = force(x + dt * k3x, t + dt);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        out.t.push(t0 + (i + 1) as f64 * dt);
        out.x.push(x);
        out.v.push(v);
    }
    out
}
