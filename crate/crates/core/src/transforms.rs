//! Exact frame changes of the driven barrier problem.
//!
//! Scaling frame: `psi(x, t) = r^(-1/2) exp(i r_dot x^2 / (2 r)) Phi(x/r, T)`
//! with `dT/dt = 1/r^2`, which turns `V(x/r)/r^2` into the static `V(z)` plus
//! the transient oscillator `(1/2) r^3 r_ddot z^2`.
//!
//! Accelerated frame: `psi(x, t) = phi(x - eta, t) exp(i eta_dot (x - eta) + i theta)`
//! with `eta_ddot = E(t)` and `theta_dot = eta_dot^2/2 + eta E`, which removes
//! the uniform field `-x E(t)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{logistic, softplus, BarrierSpec, DriveProtocol, ScaleSchedule};
use crate::quad;
use crate::spectral::{translate, FftPair, Interpolant};
use crate::tdse::{Grid, Potential, Propagator, StepPolicy, WaveState};

/// `T(t) = ∫ dt'/r^2(t')` from an anchor time, tabulated at checkpoints.
#[derive(Debug, Clone)]
pub struct RescaledClock<S> {
    schedule: S,
    anchor: f64,
    t_min: f64,
    t_max: f64,
    knots: Vec<f64>,
    values: Vec<f64>,
}

fn inv_r2<S: ScaleSchedule>(s: &S, t: f64) -> f64 {
    let r = s.r(t);
    1.0 / (r * r)
}

impl<S: ScaleSchedule> RescaledClock<S> {
    /// Clock with `T(anchor) = 0`, defined on `[t_min, t_max]`, with
    /// checkpoints every `spacing`.
    pub fn new(schedule: S, anchor: f64, t_min: f64, t_max: f64, spacing: f64) -> Result<Self> {
        if !(t_min <= anchor && anchor <= t_max && spacing > 0.0) {
            return Err(Error::invalid(
                "clock",
                format!("need t_min <= anchor <= t_max, got {t_min}, {anchor}, {t_max}"),
            ));
        }
        let mut knots = vec![anchor];
        let mut t = anchor;
        while t > t_min {
            t = (t - spacing).max(t_min);
            knots.push(t);
        }
        knots.reverse();
        let mut t = anchor;
        while t < t_max {
            t = (t + spacing).min(t_max);
            knots.push(t);
        }
        let mut values = vec![0.0; knots.len()];
        let i0 = knots.iter().position(|&k| k == anchor).expect("anchor is a knot");
        for i in i0 + 1..knots.len() {
            values[i] = values[i - 1] + Self::segment(&schedule, knots[i - 1], knots[i]);
        }
        for i in (0..i0).rev() {
            values[i] = values[i + 1] - Self::segment(&schedule, knots[i], knots[i + 1]);
        }
        Ok(RescaledClock {
            schedule,
            anchor,
            t_min,
            t_max,
            knots,
            values,
        })
    }

    fn segment(s: &S, a: f64, b: f64) -> f64 {
        quad::integrate(|t| inv_r2(s, t), a, b, 0.0, 1e-15).0
    }

    pub fn schedule(&self) -> &S {
        &self.schedule
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn rescaled_range(&self) -> (f64, f64) {
        (self.values[0], *self.values.last().unwrap())
    }

    /// `T(t)`.
    pub fn rescaled(&self, t: f64) -> Result<f64> {
        if !(t >= self.t_min && t <= self.t_max) {
            return Err(Error::OutOfRange {
                what: "rescaled time",
                value: t,
                lo: self.t_min,
                hi: self.t_max,
            });
        }
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => return Ok(self.values[i]),
            Err(i) => i - 1,
        };
        Ok(self.values[i] + Self::segment(&self.schedule, self.knots[i], t))
    }

    /// `t(T)`, the inverse of [`RescaledClock::rescaled`].
    pub fn time_of(&self, big_t: f64) -> Result<f64> {
        let (lo, hi) = self.rescaled_range();
        if !(big_t >= lo && big_t <= hi) {
            return Err(Error::OutOfRange {
                what: "inverse rescaled time",
                value: big_t,
                lo,
                hi,
            });
        }
        let i = match self.values.binary_search_by(|v| v.total_cmp(&big_t)) {
            Ok(i) => return Ok(self.knots[i]),
            Err(i) => i - 1,
        };
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let base = self.values[i];
        // Newton on T(t) - T with dT/dt = 1/r^2, kept inside the bracket.
        let mut t = a + (b - a) * (big_t - base) / (self.values[i + 1] - base);
        for _ in 0..50 {
            let g = base + Self::segment(&self.schedule, a, t) - big_t;
            let r = self.schedule.r(t);
            let next = (t - g * r * r).clamp(a, b);
            if (next - t).abs() <= 1e-15 * t.abs().max(1.0) {
                return Ok(next);
            }
            t = next;
        }
        // Monotone fallback.
        quad::bisect(
            |s| base + Self::segment(&self.schedule, a, s) - big_t,
            a,
            b,
            1e-14 * a.abs().max(1.0),
        )
        .ok_or(Error::OutOfRange {
            what: "inverse rescaled time",
            value: big_t,
            lo,
            hi,
        })
    }
}

/// `T(t)` measured from `-t0`, defined for `t >= -t0`.
pub fn rescaled_time(protocol: &DriveProtocol, t: f64) -> Result<f64> {
    let a = -protocol.t0;
    if !(t >= a) {
        return Err(Error::OutOfRange {
            what: "rescaled time",
            value: t,
            lo: a,
            hi: f64::INFINITY,
        });
    }
    let step = 1.0 / protocol.omega_drive;
    let mut acc = 0.0;
    let mut s = a;
    while s < t {
        let e = (s + step).min(t);
        acc += quad::integrate(|u| inv_r2(protocol, u), s, e, 0.0, 1e-15).0;
        s = e;
    }
    Ok(acc)
}

/// `f(T) = r_ddot r^3 / Omega^2` at `t(T)`.
pub fn effective_harmonic_coefficient<S: ScaleSchedule>(
    clock: &RescaledClock<S>,
    omega_drive: f64,
    big_t: f64,
) -> Result<f64> {
    let t = clock.time_of(big_t)?;
    let s = clock.schedule().sample(t);
    Ok(s.r_ddot * s.r.powi(3) / (omega_drive * omega_drive))
}

/// Instantaneous parameters of the scaling frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleFrame {
    pub r: f64,
    pub r_dot: f64,
    /// Rescaled time.
    pub big_t: f64,
}

impl ScaleFrame {
    pub fn identity() -> Self {
        ScaleFrame {
            r: 1.0,
            r_dot: 0.0,
            big_t: 0.0,
        }
    }
}

/// Probability of `state` outside `[a, b]`.
fn mass_outside(state: &WaveState, a: f64, b: f64) -> f64 {
    let g = &state.grid;
    state.probability_in(g.x_min, a) + state.probability_in(b, g.x_max + g.dx())
}

/// Mass allowed to fall outside the target grid of a map.
pub const SUPPORT_TOLERANCE: f64 = 1e-12;

fn resample(
    fft: &mut FftPair,
    src: &WaveState,
    targets: impl Iterator<Item = f64>,
) -> Vec<Complex64> {
    let g = src.grid;
    let it = Interpolant::new(fft, &src.psi, g.x_min, g.dx(), 1e-17);
    targets
        .map(|x| {
            if x < g.x_min || x >= g.x_max {
                Complex64::new(0.0, 0.0)
            } else {
                it.eval(x)
            }
        })
        .collect()
}

/// `Phi(z) = sqrt(r) exp(-i r_dot r z^2 / 2) psi(r z)` on `z_grid`.
pub fn scale_map_forward(psi: &WaveState, frame: &ScaleFrame, z_grid: &Grid) -> Result<WaveState> {
    let r = frame.r;
    if !(r > 0.0) {
        return Err(Error::invalid("frame.r", format!("must be > 0, got {r}")));
    }
    let lost = mass_outside(psi, r * z_grid.x_min, r * z_grid.x_max);
    if lost > SUPPORT_TOLERANCE {
        return Err(Error::Support(format!(
            "probability {lost:.3e} lies outside the scaled target grid"
        )));
    }
    let mut fft = FftPair::new(psi.grid.n_points);
    let vals = resample(&mut fft, psi, (0..z_grid.n_points).map(|j| r * z_grid.x(j)));
    let sr = r.sqrt();
    let out = vals
        .into_iter()
        .enumerate()
        .map(|(j, v)| {
            let z = z_grid.x(j);
            v * Complex64::from_polar(sr, -0.5 * frame.r_dot * r * z * z)
        })
        .collect();
    let mut st = WaveState::new(*z_grid, out, frame.big_t);
    st.absorbed_left = psi.absorbed_left;
    st.absorbed_right = psi.absorbed_right;
    Ok(st)
}

/// `psi(x) = r^(-1/2) exp(i r_dot x^2 / (2 r)) Phi(x/r)` on `x_grid`, at lab time `time`.
pub fn scale_map_inverse(phi: &WaveState, frame: &ScaleFrame, x_grid: &Grid, time: f64) -> Result<WaveState> {
    let r = frame.r;
    if !(r > 0.0) {
        return Err(Error::invalid("frame.r", format!("must be > 0, got {r}")));
    }
    let lost = mass_outside(phi, x_grid.x_min / r, x_grid.x_max / r);
    if lost > SUPPORT_TOLERANCE {
        return Err(Error::Support(format!(
            "probability {lost:.3e} lies outside the unscaled target grid"
        )));
    }
    let mut fft = FftPair::new(phi.grid.n_points);
    let vals = resample(&mut fft, phi, (0..x_grid.n_points).map(|j| x_grid.x(j) / r));
    let isr = 1.0 / r.sqrt();
    let out = vals
        .into_iter()
        .enumerate()
        .map(|(j, v)| {
            let x = x_grid.x(j);
            v * Complex64::from_polar(isr, 0.5 * frame.r_dot * x * x / r)
        })
        .collect();
    let mut st = WaveState::new(*x_grid, out, time);
    st.absorbed_left = phi.absorbed_left;
    st.absorbed_right = phi.absorbed_right;
    Ok(st)
}

/// Lab-frame potential `V(x/r(t))/r(t)^2 - x E(t)` of the driven barrier.
pub struct DrivenBarrier<'a, S> {
    pub spec: &'a BarrierSpec,
    pub schedule: &'a S,
    /// Uniform field; `None` for the pure scaling problem.
    pub field: Option<&'a DriveProtocol>,
}

impl<S: ScaleSchedule> Potential for DrivenBarrier<'_, S> {
    fn local(&self, x: f64, t: f64) -> f64 {
        self.spec.scaled_potential_unchecked(self.schedule.r(t), x)
    }

    fn window(&self, t: f64) -> Option<(f64, f64)> {
        let r = self.schedule.r(t);
        let (a, b) = self.spec.support();
        Some((a * r, b * r))
    }

    fn polynomial(&self, t: f64) -> (f64, f64) {
        match self.field {
            Some(p) => (-p.field(t), 0.0),
            None => (0.0, 0.0),
        }
    }

    fn max_step(&self, t: f64) -> f64 {
        match self.field {
            Some(p) if p.field_enabled => pulse_step_limit(p, t),
            _ => f64::INFINITY,
        }
    }
}

/// Step bound resolving the field pulses: 1/40 of the pulse width near a
/// pulse, unrestricted where the field has decayed below 1e-14 of its peak.
pub fn pulse_step_limit(p: &DriveProtocol, t: f64) -> f64 {
    let w = p.pulse_width();
    let zc = (t.abs() - p.t1()) / w;
    // F''(z) < 1e-14 F''(0) once |z| > 35.
    if zc.abs() > 35.0 {
        let gap = (zc.abs() - 35.0) * w;
        (0.5 * gap).max(w / 40.0)
    } else {
        w / 40.0
    }
}

/// Scaling-frame potential `V(z) + (1/2) r^3 r_ddot z^2` in rescaled time.
pub struct ScaleFramePotential<'a, S> {
    pub spec: &'a BarrierSpec,
    pub clock: &'a RescaledClock<S>,
}

impl<S: ScaleSchedule> Potential for ScaleFramePotential<'_, S> {
    fn local(&self, z: f64, _big_t: f64) -> f64 {
        self.spec.potential(z)
    }

    fn window(&self, _big_t: f64) -> Option<(f64, f64)> {
        Some(self.spec.support())
    }

    fn polynomial(&self, big_t: f64) -> (f64, f64) {
        let t = self.clock.time_of(big_t).expect("rescaled time inside clock range");
        let s = self.clock.schedule().sample(t);
        (0.0, 0.5 * s.r_ddot * s.r.powi(3))
    }
}

/// Displacement, velocity and accumulated phase of the accelerated frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccelFrame {
    pub eta: f64,
    pub eta_dot: f64,
    pub phase_integral: f64,
}

impl AccelFrame {
    pub fn identity() -> Self {
        AccelFrame {
            eta: 0.0,
            eta_dot: 0.0,
            phase_integral: 0.0,
        }
    }
}

/// `(eta, eta_dot)` of the accelerating pulse for `t <= 0`, from `F` and `F'`.
pub fn eta_closed_form(p: &DriveProtocol, t: f64) -> (f64, f64) {
    if !p.field_enabled {
        return (0.0, 0.0);
    }
    let r0 = p.pulse_r0();
    let z = p.pulse_argument(t);
    (r0 / p.omega_drive * softplus(z), logistic(z) / r0)
}

/// Mirror-image closed form for `t >= 0` (the braking pulse undoes the kick).
/// Used as an independent check of [`EtaTrajectory`].
pub fn eta_braking_closed_form(p: &DriveProtocol, t: f64) -> (f64, f64) {
    if !p.field_enabled {
        return (0.0, 0.0);
    }
    let r0 = p.pulse_r0();
    let z = p.pulse_argument(-t);
    let z0 = 1.0 / r0;
    (
        r0 / p.omega_drive * (2.0 * softplus(z0) - softplus(z)),
        logistic(z) / r0,
    )
}

/// Frame history: closed forms for `t <= 0`, fourth-order Runge–Kutta
/// continuation for `t > 0`, and the phase integral from `t_start`.
#[derive(Debug, Clone)]
pub struct EtaTrajectory {
    protocol: DriveProtocol,
    t_start: f64,
    h: f64,
    /// Samples `(eta, eta_dot, theta)` every `h` from `t_start`.
    samples: Vec<[f64; 3]>,
}

impl EtaTrajectory {
    /// Tabulates the frame on `[t_start, t_end]` with steps of `1/200` pulse width
    /// (or finer if needed to land on `t = 0`).
    pub fn new(protocol: &DriveProtocol, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::invalid("eta", "t_end must exceed t_start"));
        }
        let target = protocol.pulse_width() / 200.0;
        // The field jumps at t = 0 (pulse tails of opposite sign), so make it a node.
        let (n, h) = if t_start < 0.0 && t_end > 0.0 {
            let n_neg = (-t_start / target).ceil();
            let h = -t_start / n_neg;
            (n_neg as usize + (t_end / h).ceil() as usize, h)
        } else {
            let n = ((t_end - t_start) / target).ceil().max(1.0);
            (n as usize, (t_end - t_start) / n)
        };
        let e = |t: f64| protocol.field(t);
        let mut samples = Vec::with_capacity(n + 1);
        let (eta0, v0) = if t_start <= 0.0 {
            eta_closed_form(protocol, t_start)
        } else {
            eta_braking_closed_form(protocol, t_start)
        };
        let mut y = [eta0, v0, 0.0];
        samples.push(y);
        for i in 0..n {
            let t = t_start + i as f64 * h;
            // One-sided field inside each step: the node at t = 0 may be off by rounding.
            let left = t + 0.5 * h < 0.0;
            let rhs = |t: f64, y: &[f64; 3]| {
                let f = if left { e(t.min(-f64::MIN_POSITIVE)) } else { e(t.max(f64::MIN_POSITIVE)) };
                [y[1], f, 0.5 * y[1] * y[1] + y[0] * f]
            };
            let k1 = rhs(t, &y);
            let k2 = rhs(t + 0.5 * h, &add(&y, &k1, 0.5 * h));
            let k3 = rhs(t + 0.5 * h, &add(&y, &k2, 0.5 * h));
            let k4 = rhs(t + h, &add(&y, &k3, h));
            for c in 0..3 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            let tn = t + h;
            if tn <= 0.0 {
                // Keep the closed form on the accelerating side.
                let (a, b) = eta_closed_form(protocol, tn);
                y[0] = a;
                y[1] = b;
            }
            samples.push(y);
        }
        Ok(EtaTrajectory {
            protocol: *protocol,
            t_start,
            h,
            samples,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t_start, self.t_start + self.h * (self.samples.len() - 1) as f64)
    }

    /// Frame at time `t` (cubic Hermite interpolation between samples for `t > 0`).
    pub fn frame(&self, t: f64) -> Result<AccelFrame> {
        let (a, b) = self.range();
        if !(t >= a && t <= b + 1e-9 * self.h) {
            return Err(Error::OutOfRange {
                what: "frame history",
                value: t,
                lo: a,
                hi: b,
            });
        }
        let u = ((t - a) / self.h).max(0.0);
        let i = (u.floor() as usize).min(self.samples.len() - 2);
        let s = u - i as f64;
        let (y0, y1) = (self.samples[i], self.samples[i + 1]);
        let (t0, t1) = (a + i as f64 * self.h, a + (i + 1) as f64 * self.h);
        let p = &self.protocol;
        let left = t0 + t1 < 0.0;
        let d = |t: f64, y: &[f64; 3]| {
            let f = if left { p.field(t.min(-f64::MIN_POSITIVE)) } else { p.field(t.max(f64::MIN_POSITIVE)) };
            [y[1], f, 0.5 * y[1] * y[1] + y[0] * f]
        };
        let (d0, d1) = (d(t0, &y0), d(t1, &y1));
        let herm = |c: usize| {
            let h = self.h;
            let (s2, s3) = (s * s, s * s * s);
            (2.0 * s3 - 3.0 * s2 + 1.0) * y0[c]
                + (s3 - 2.0 * s2 + s) * h * d0[c]
                + (-2.0 * s3 + 3.0 * s2) * y1[c]
                + (s3 - s2) * h * d1[c]
        };
        let theta = herm(2);
        let (eta, eta_dot) = if t <= 0.0 {
            eta_closed_form(p, t)
        } else {
            (herm(0), herm(1))
        };
        Ok(AccelFrame {
            eta,
            eta_dot,
            phase_integral: theta,
        })
    }
}

fn add(y: &[f64; 3], k: &[f64; 3], h: f64) -> [f64; 3] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}

/// `(eta(t), eta_dot(t))` for any `t`: closed form before the collision,
/// numerical continuation through the braking pulse after it.
pub fn solve_eta(protocol: &DriveProtocol, t: f64) -> Result<(f64, f64)> {
    if t <= 0.0 {
        return Ok(eta_closed_form(protocol, t));
    }
    let tr = EtaTrajectory::new(protocol, 0.0, t)?;
    let f = tr.frame(t)?;
    Ok((f.eta, f.eta_dot))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `psi -> phi`.
    Forward,
    /// `phi -> psi`.
    Inverse,
}

/// Accelerated-frame map on a common grid, with the shift done by spectral translation.
pub fn accel_frame_map(state: &WaveState, frame: &AccelFrame, direction: Direction) -> Result<WaveState> {
    let g = state.grid;
    let eta = frame.eta;
    // Content translated by -eta (forward) or +eta (inverse) must not wrap.
    let shift = match direction {
        Direction::Forward => -eta,
        Direction::Inverse => eta,
    };
    let lost = if shift < 0.0 {
        state.probability_in(g.x_min, g.x_min - shift)
    } else {
        state.probability_in(g.x_max - shift, g.x_max + g.dx())
    };
    if lost > SUPPORT_TOLERANCE || shift.abs() >= g.x_max - g.x_min {
        return Err(Error::Support(format!(
            "shift by {shift:.4} moves probability {lost:.3e} across the grid edge"
        )));
    }
    let mut fft = FftPair::new(g.n_points);
    let mut out = state.clone();
    match direction {
        Direction::Forward => {
            translate(&mut fft, &mut out.psi, g.dx(), shift);
            for (j, v) in out.psi.iter_mut().enumerate() {
                let y = g.x(j);
                *v *= Complex64::from_polar(1.0, -(frame.eta_dot * y + frame.phase_integral));
            }
        }
        Direction::Inverse => {
            for (j, v) in out.psi.iter_mut().enumerate() {
                let y = g.x(j);
                *v *= Complex64::from_polar(1.0, frame.eta_dot * y + frame.phase_integral);
            }
            translate(&mut fft, &mut out.psi, g.dx(), shift);
        }
    }
    Ok(out)
}

/// Accelerated-frame potential `V((y + eta)/r)/r^2` on a fixed scale `r`.
pub struct MovingBarrier<'a> {
    pub spec: &'a BarrierSpec,
    pub r: f64,
    pub history: &'a EtaTrajectory,
}

impl Potential for MovingBarrier<'_> {
    fn local(&self, y: f64, t: f64) -> f64 {
        let eta = self.history.frame(t).map(|f| f.eta).unwrap_or(0.0);
        self.spec.scaled_potential_unchecked(self.r, y + eta)
    }

    fn window(&self, t: f64) -> Option<(f64, f64)> {
        let eta = self.history.frame(t).map(|f| f.eta).unwrap_or(0.0);
        let (a, b) = self.spec.support();
        Some((a * self.r - eta, b * self.r - eta))
    }
}

/// Drive expressed in `xi = x/r0`, `tau = t/r0^2`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RescaledDrive {
    pub protocol: DriveProtocol,
}

impl RescaledDrive {
    /// `epsilon(tau) = E(r0^2 tau) r0^3`.
    pub fn epsilon(&self, tau: f64) -> f64 {
        let r0 = self.protocol.pulse_r0();
        self.protocol.field(r0 * r0 * tau) * r0.powi(3)
    }

    pub fn tau_of(&self, t: f64) -> f64 {
        t / self.protocol.pulse_r0().powi(2)
    }

    pub fn xi_of(&self, x: f64) -> f64 {
        x / self.protocol.pulse_r0()
    }

    /// `Omega/4`, attained at `tau = -t1/r0^2`.
    pub fn epsilon_peak(&self) -> f64 {
        self.epsilon(-self.protocol.t1() / self.protocol.pulse_r0().powi(2))
    }

    /// Pulse duration in `tau`.
    pub fn tau_pulse_width(&self) -> f64 {
        self.protocol.pulse_width() / self.protocol.pulse_r0().powi(2)
    }

    /// Perturbation parameter of the multiphoton estimate for a barrier of height `v0`.
    pub fn photon_assist_w(&self, v0: f64) -> f64 {
        crate::wkb::photon_assist_w(self.epsilon_peak(), self.protocol.omega_drive, v0)
    }
}

pub fn rescaled_equation_params(protocol: &DriveProtocol) -> RescaledDrive {
    RescaledDrive { protocol: *protocol }
}

/// Largest `|f|` of the shrink switch, sampled on `[-t0 - span, -t0 + span]`.
pub fn max_harmonic_coefficient(protocol: &DriveProtocol, span: f64, samples: usize) -> f64 {
    let w2 = protocol.omega_drive * protocol.omega_drive;
    (0..=samples)
        .map(|i| {
            let t = -protocol.t0 - span + 2.0 * span * i as f64 / samples as f64;
            let s = protocol.scale(t);
            (s.r_ddot * s.r.powi(3) / w2).abs()
        })
        .fold(0.0, f64::max)
}

/// Settings of the two frame-equivalence experiments.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceSetup {
    pub spec: BarrierSpec,
    pub protocol: DriveProtocol,
    pub x_grid: Grid,
    pub z_grid: Grid,
    pub packet_x0: f64,
    pub packet_k0: f64,
    pub packet_sigma: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub dt_rescaled: f64,
}

impl EquivalenceSetup {
    /// Packet `(x0 = -40, k0 = 1, sigma = 4)` crossing the shrink at `-t0`,
    /// far enough from the barrier that no tail reaches it.
    pub fn scaling(spec: BarrierSpec, protocol: DriveProtocol, dt: f64) -> Result<Self> {
        let span = 3.0 / protocol.omega_drive;
        Ok(EquivalenceSetup {
            spec,
            protocol,
            x_grid: Grid::new(-200.0, 200.0, 8192)?,
            z_grid: Grid::new(-400.0, 400.0, 16384)?,
            packet_x0: -40.0,
            packet_k0: 1.0,
            packet_sigma: 4.0,
            t_start: -protocol.t0 - span,
            t_end: -protocol.t0 + span,
            dt,
            dt_rescaled: 2.0 * dt,
        })
    }

    /// Packet at rest at `x0 = -20` through the accelerating pulse, stopped
    /// halfway to the collision.
    pub fn acceleration(spec: BarrierSpec, protocol: DriveProtocol, dt: f64) -> Result<Self> {
        let t1 = protocol.t1();
        let grid = Grid::new(-50.0, 50.0, 8192)?;
        Ok(EquivalenceSetup {
            spec,
            protocol,
            x_grid: grid,
            z_grid: grid,
            packet_x0: -20.0,
            packet_k0: 0.0,
            packet_sigma: 1.0,
            t_start: -t1 - 15.0 * protocol.pulse_width(),
            t_end: 0.5 * t1,
            dt,
            dt_rescaled: dt,
        })
    }
}

/// Maximal L2 deviations found by the frame-equivalence experiments.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub label: String,
    pub times: Vec<f64>,
    pub l2_deviation: Vec<f64>,
    pub max_l2_deviation: f64,
    pub norm_error: f64,
    pub roundtrip_error: f64,
}

/// Direct propagation under `V(x/r)/r^2` against propagation of `Phi` under
/// the static barrier plus oscillator, compared at `checkpoints` lab times.
pub fn scale_frame_equivalence(setup: &EquivalenceSetup, checkpoints: usize) -> Result<EquivalenceReport> {
    let p = setup.protocol;
    let spec = setup.spec;
    let clock = RescaledClock::new(p, -p.t0, setup.t_start, setup.t_end, 0.05 / p.omega_drive)?;
    let mut psi = crate::tdse::make_gaussian_packet(
        &setup.x_grid,
        setup.packet_x0,
        setup.packet_k0,
        setup.packet_sigma,
        setup.t_start,
    )?;
    let frame_at = |t: f64| -> Result<ScaleFrame> {
        let s = p.scale(t);
        Ok(ScaleFrame {
            r: s.r,
            r_dot: s.r_dot,
            big_t: clock.rescaled(t)?,
        })
    };
    let mut phi = scale_map_forward(&psi, &frame_at(setup.t_start)?, &setup.z_grid)?;
    let lab = DrivenBarrier {
        spec: &spec,
        schedule: &p,
        field: None,
    };
    let moving = ScaleFramePotential {
        spec: &spec,
        clock: &clock,
    };
    let mut direct = Propagator::new(setup.x_grid, StepPolicy::Fixed { dt: setup.dt }, None)?;
    let mut framed = Propagator::new(setup.z_grid, StepPolicy::Fixed { dt: setup.dt_rescaled }, None)?;
    let mut times = Vec::new();
    let mut dev = Vec::new();
    let mut norm_error = 0.0f64;
    for c in 1..=checkpoints {
        let t = setup.t_start + (setup.t_end - setup.t_start) * c as f64 / checkpoints as f64;
        let f = frame_at(t)?;
        direct.advance(&mut psi, &lab, t)?;
        framed.advance(&mut phi, &moving, f.big_t)?;
        let back = scale_map_inverse(&phi, &f, &setup.x_grid, t)?;
        times.push(t);
        dev.push(psi.l2_distance(&back));
        norm_error = norm_error.max((phi.norm() - psi.norm()).abs());
    }
    let f_end = frame_at(setup.t_end)?;
    let there = scale_map_forward(&psi, &f_end, &setup.z_grid)?;
    let back = scale_map_inverse(&there, &f_end, &setup.x_grid, setup.t_end)?;
    let roundtrip_error = psi.l2_distance(&back);
    Ok(EquivalenceReport {
        label: "scaling frame".into(),
        max_l2_deviation: dev.iter().copied().fold(0.0, f64::max),
        times,
        l2_deviation: dev,
        norm_error,
        roundtrip_error,
    })
}

/// Direct propagation under `V(x/r0)/r0^2 - x E(t)` against propagation of
/// `phi` under the moving barrier, compared at `checkpoints` times.
pub fn accel_frame_equivalence(setup: &EquivalenceSetup, checkpoints: usize) -> Result<EquivalenceReport> {
    let p = setup.protocol;
    let spec = setup.spec;
    let r0 = p.r0;
    let history = EtaTrajectory::new(&p, setup.t_start.min(-p.t0), setup.t_end)?;
    let mut psi = crate::tdse::make_gaussian_packet(
        &setup.x_grid,
        setup.packet_x0,
        setup.packet_k0,
        setup.packet_sigma,
        setup.t_start,
    )?;
    let mut phi = accel_frame_map(&psi, &history.frame(setup.t_start)?, Direction::Forward)?;
    let fixed = crate::model::ConstantScale(r0);
    let lab = DrivenBarrier {
        spec: &spec,
        schedule: &fixed,
        field: Some(&p),
    };
    let moving = MovingBarrier {
        spec: &spec,
        r: r0,
        history: &history,
    };
    let mut direct = Propagator::new(setup.x_grid, StepPolicy::Fixed { dt: setup.dt }, None)?;
    let mut framed = Propagator::new(setup.x_grid, StepPolicy::Fixed { dt: setup.dt }, None)?;
    let mut times = Vec::new();
    let mut dev = Vec::new();
    let mut norm_error = 0.0f64;
    for c in 1..=checkpoints {
        let t = setup.t_start + (setup.t_end - setup.t_start) * c as f64 / checkpoints as f64;
        direct.advance(&mut psi, &lab, t)?;
        framed.advance(&mut phi, &moving, t)?;
        let back = accel_frame_map(&phi, &history.frame(t)?, Direction::Inverse)?;
        times.push(t);
        dev.push(psi.l2_distance(&back));
        norm_error = norm_error.max((phi.norm() - psi.norm()).abs());
    }
    let fr = history.frame(setup.t_end)?;
    let there = accel_frame_map(&psi, &fr, Direction::Forward)?;
    let back = accel_frame_map(&there, &fr, Direction::Inverse)?;
    Ok(EquivalenceReport {
        label: "accelerated frame".into(),
        max_l2_deviation: dev.iter().copied().fold(0.0, f64::max),
        times,
        l2_deviation: dev,
        norm_error,
        roundtrip_error: psi.l2_distance(&back),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConstantScale;
    use crate::tdse::make_gaussian_packet;
    use approx::assert_relative_eq;

    fn protocol() -> DriveProtocol {
        DriveProtocol::new(0.1, 100.0, 0.05).unwrap()
    }

    #[test]
    fn clock_constant_scales() {
        let c = RescaledClock::new(ConstantScale(1.0), -5.0, -5.0, 50.0, 1.0).unwrap();
        assert_relative_eq!(c.rescaled(7.3).unwrap(), 12.3, max_relative = 1e-14);
        let c = RescaledClock::new(ConstantScale(0.2), -5.0, -5.0, 50.0, 1.0).unwrap();
        assert_relative_eq!(c.rescaled(7.3).unwrap(), 12.3 / 0.04, max_relative = 1e-13);
        assert_relative_eq!(c.time_of(12.3 / 0.04).unwrap(), 7.3, max_relative = 1e-13);
        assert!(c.rescaled(-6.0).is_err());
    }

    #[test]
    fn rescaled_time_against_simpson() {
        let p = protocol();
        let got = rescaled_time(&p, 0.0).unwrap();
        // Composite Simpson with 2e6 panels.
        let n = 2_000_000;
        let (a, b) = (-p.t0, 0.0);
        let h = (b - a) / n as f64;
        let f = |t: f64| 1.0 / p.scale(t).r.powi(2);
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let simpson = acc * h / 3.0;
        assert_relative_eq!(got, simpson, max_relative = 1e-8);
        assert!(rescaled_time(&p, -p.t0 - 1.0).is_err());
        let clock = RescaledClock::new(p, -p.t0, -p.t0, 0.0, 0.5 / p.omega_drive).unwrap();
        assert_relative_eq!(clock.rescaled(0.0).unwrap(), got, max_relative = 1e-12);
    }

    #[test]
    fn clock_derivative_matches_scale() {
        let p = protocol();
        let c = RescaledClock::new(p, -p.t0, -p.t0 - 50.0, 50.0, 1.0).unwrap();
        for i in 0..40 {
            let t = -140.0 + i as f64 * 4.7;
            let h = 1e-4;
            let d = (c.rescaled(t + h).unwrap() - c.rescaled(t - h).unwrap()) / (2.0 * h);
            let r = p.scale(t).r;
            assert!((d * r * r - 1.0).abs() < 1e-8, "t={t}");
            let back = c.time_of(c.rescaled(t).unwrap()).unwrap();
            assert!((back - t).abs() < 1e-9 * t.abs().max(1.0));
        }
    }

    #[test]
    fn harmonic_coefficient() {
        let c = RescaledClock::new(ConstantScale(0.3), 0.0, 0.0, 10.0, 1.0).unwrap();
        assert_eq!(effective_harmonic_coefficient(&c, 0.1, 5.0).unwrap(), 0.0);
        let p = protocol();
        let m = max_harmonic_coefficient(&p, 20.0 / p.omega_drive, 40_000);
        assert!((0.05..=20.0).contains(&m), "{m}");
        let clock = RescaledClock::new(p, -p.t0, -p.t0 - 30.0 / p.omega_drive, 0.0, 0.5 / p.omega_drive).unwrap();
        let (lo, hi) = clock.rescaled_range();
        assert!(effective_harmonic_coefficient(&clock, p.omega_drive, hi + 1.0).is_err());
        assert!(effective_harmonic_coefficient(&clock, p.omega_drive, lo).is_ok());
    }

    #[test]
    fn scale_map_identity_and_roundtrip() {
        let g = Grid::new(-40.0, 40.0, 1024).unwrap();
        let psi = make_gaussian_packet(&g, -3.0, 1.2, 2.0, 0.0).unwrap();
        let phi = scale_map_forward(&psi, &ScaleFrame::identity(), &g).unwrap();
        assert!(psi.l2_distance(&phi) < 1e-12);

        let zg = Grid::new(-80.0, 80.0, 2048).unwrap();
        let f = ScaleFrame {
            r: 0.5,
            r_dot: -0.01,
            big_t: 3.0,
        };
        let phi = scale_map_forward(&psi, &f, &zg).unwrap();
        assert!((phi.norm() - psi.norm()).abs() < 1e-8);
        let back = scale_map_inverse(&phi, &f, &g, 0.0).unwrap();
        assert!(psi.l2_distance(&back) < 1e-8);
    }

    #[test]
    fn inverse_scale_map_widens() {
        let zg = Grid::new(-40.0, 40.0, 1024).unwrap();
        let xg = Grid::new(-80.0, 80.0, 2048).unwrap();
        let phi = make_gaussian_packet(&zg, 1.0, 0.0, 2.0, 0.0).unwrap();
        let f = ScaleFrame {
            r: 2.0,
            r_dot: 0.0,
            big_t: 0.0,
        };
        let psi = scale_map_inverse(&phi, &f, &xg, 0.0).unwrap();
        let (m, s) = psi.position_moments();
        assert!((s - 4.0).abs() < 1e-8 && (m - 2.0).abs() < 1e-8);
        assert!((psi.norm() - 1.0).abs() < 1e-8);
        // r = 0.5 maps the unit-width coordinate back onto half the width.
        let half = ScaleFrame { r: 0.5, ..f };
        let psi = scale_map_inverse(&phi, &half, &zg, 0.0).unwrap();
        assert!((psi.position_moments().1 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn scale_map_support_escape() {
        let g = Grid::new(-40.0, 40.0, 1024).unwrap();
        let psi = make_gaussian_packet(&g, 20.0, 0.0, 2.0, 0.0).unwrap();
        let small = Grid::new(-10.0, 10.0, 256).unwrap();
        assert!(matches!(
            scale_map_forward(&psi, &ScaleFrame::identity(), &small),
            Err(Error::Support(_))
        ));
    }

    #[test]
    fn eta_closed_forms() {
        let p = DriveProtocol::new(0.1, 40.0, 0.1).unwrap();
        let (e, v) = eta_closed_form(&p, -p.t1() - 60.0 * p.pulse_width());
        assert!(e < 1e-20 && v < 1e-20);
        let (_, v) = eta_closed_form(&p, 0.0);
        assert!((v * p.r0 - 1.0).abs() < 1e-4);
        // Derivative of the closed-form velocity is the field.
        for i in 0..200 {
            let t = -p.t1() + (i as f64 - 100.0) * 0.05 * p.pulse_width();
            let h = 1e-4 * p.pulse_width();
            let d = (eta_closed_form(&p, t + h).1 - eta_closed_form(&p, t - h).1) / (2.0 * h);
            assert_relative_eq!(d, p.field(t), max_relative = 1e-6);
            let dx = (eta_closed_form(&p, t + h).0 - eta_closed_form(&p, t - h).0) / (2.0 * h);
            assert_relative_eq!(dx, eta_closed_form(&p, t).1, max_relative = 1e-6);
        }
    }

    #[test]
    fn eta_continuation_matches_braking_closed_form() {
        let p = DriveProtocol::new(0.1, 40.0, 0.1).unwrap();
        let tr = EtaTrajectory::new(&p, -p.t0, p.t0).unwrap();
        for i in 0..300 {
            let t = i as f64 * 0.01;
            let f = tr.frame(t).unwrap();
            let (e, v) = eta_braking_closed_form(&p, t);
            assert!((f.eta - e).abs() < 1e-9 * e.abs().max(1.0), "t={t}");
            assert!((f.eta_dot - v).abs() < 1e-9 * p.r0.recip(), "t={t}");
        }
        // Braked back to rest.
        let f = tr.frame(p.t0).unwrap();
        assert!(f.eta_dot.abs() < 1e-9);
        let (e, v) = solve_eta(&p, 1.5).unwrap();
        let (ee, vv) = eta_braking_closed_form(&p, 1.5);
        assert!((e - ee).abs() < 1e-9 && (v - vv).abs() < 1e-9);
    }

    #[test]
    fn accel_map_identity_norm_and_roundtrip() {
        let g = Grid::new(-40.0, 40.0, 1024).unwrap();
        let psi = make_gaussian_packet(&g, -3.0, 1.2, 2.0, 0.0).unwrap();
        let id = accel_frame_map(&psi, &AccelFrame::identity(), Direction::Forward).unwrap();
        assert!(psi.l2_distance(&id) < 1e-13);
        let f = AccelFrame {
            eta: 7.31,
            eta_dot: 0.8,
            phase_integral: 2.2,
        };
        let phi = accel_frame_map(&psi, &f, Direction::Forward).unwrap();
        assert!((phi.norm() - psi.norm()).abs() < 1e-12);
        let back = accel_frame_map(&phi, &f, Direction::Inverse).unwrap();
        assert!(psi.l2_distance(&back) < 1e-12);
        let far = AccelFrame { eta: -39.0, ..f };
        assert!(matches!(
            accel_frame_map(&psi, &far, Direction::Forward),
            Err(Error::Support(_))
        ));
    }

    #[test]
    fn uniform_field_equivalence() {
        // Packet in a constant field versus free packet mapped back.
        let g = Grid::new(-100.0, 100.0, 2048).unwrap();
        let e0 = 0.04;
        let (t0, t1) = (0.0, 20.0);
        let mut psi = make_gaussian_packet(&g, -10.0, 0.3, 3.0, t0).unwrap();
        let mut phi = psi.clone();
        let field = crate::tdse::UniformField(|_| e0);
        let mut prop = Propagator::new(g, StepPolicy::Fixed { dt: 0.05 }, None).unwrap();
        prop.advance(&mut psi, &field, t1).unwrap();
        let mut prop = Propagator::new(g, StepPolicy::Fixed { dt: 0.05 }, None).unwrap();
        prop.advance(&mut phi, &crate::tdse::FreeSpace, t1).unwrap();
        let t = t1 - t0;
        let eta = 0.5 * e0 * t * t;
        let eta_dot = e0 * t;
        // theta = ∫ (eta_dot^2/2 + eta E) = e0^2 t^3 / 6 + e0^2 t^3 / 6.
        let theta = e0 * e0 * t.powi(3) / 3.0;
        let f = AccelFrame {
            eta,
            eta_dot,
            phase_integral: theta,
        };
        let back = accel_frame_map(&phi, &f, Direction::Inverse).unwrap();
        assert!(psi.l2_distance(&back) < 1e-6, "{}", psi.l2_distance(&back));
    }

    #[test]
    fn rescaled_drive_values() {
        for r0 in [0.05, 0.1, 0.2] {
            let p = DriveProtocol::new(0.1, 200.0, r0).unwrap();
            let d = rescaled_equation_params(&p);
            assert_relative_eq!(d.epsilon_peak(), 0.1 / 4.0, max_relative = 1e-12);
            assert_relative_eq!(d.tau_pulse_width(), 10.0, max_relative = 1e-12);
            assert!(d.photon_assist_w(100.0) < 0.1);
        }
        let p = DriveProtocol::new(0.1, 200.0, 0.1).unwrap();
        let w = rescaled_equation_params(&p).photon_assist_w(50.0);
        assert_relative_eq!(w, 0.25 / 50f64.sqrt(), max_relative = 1e-12);
    }
}
