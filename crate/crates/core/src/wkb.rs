//! Semiclassical estimates: barrier action, WKB transmission, photon-assisted
//! transition probability and the minimal packet scales of a resonance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BarrierSpec, ScaleSchedule};
use crate::quad;

/// Turning points are located to this absolute accuracy in x.
const TURNING_TOL: f64 = 1e-10;

/// Under-barrier action `A = 2 ∫ sqrt(2 (V - E)) dx` between the turning points
/// of a single hump of `v` that peaks at `peak` and lies inside `[lo, hi]`.
pub fn hump_action<F: Fn(f64) -> f64>(v: F, lo: f64, peak: f64, hi: f64, energy: f64) -> Result<f64> {
    let top = v(peak);
    if !(energy < top) {
        return Err(Error::NoForbiddenRegion { energy, top });
    }
    let g = |x: f64| v(x) - energy;
    let xl = if g(lo) >= 0.0 {
        lo
    } else {
        quad::bisect(g, lo, peak, TURNING_TOL).unwrap_or(lo)
    };
    let xr = if g(hi) >= 0.0 {
        hi
    } else {
        quad::bisect(g, peak, hi, TURNING_TOL).unwrap_or(hi)
    };
    // x = xl + (xr - xl)(1 - cos θ)/2 cancels the square-root zeros at both ends.
    let half = 0.5 * (xr - xl);
    let integrand = |th: f64| {
        let x = xl + half * (1.0 - th.cos());
        (2.0 * (v(x) - energy)).max(0.0).sqrt() * half * th.sin()
    };
    let (val, _) = quad::integrate(integrand, 0.0, std::f64::consts::PI, 1e-14, 1e-13);
    Ok(2.0 * val)
}

/// Single-barrier action `A(E)` of the left barrier of a symmetric double barrier.
pub fn action_exponent(spec: &BarrierSpec, energy: f64) -> Result<f64> {
    let (outer, inner) = spec.left_barrier();
    let margin = 20.0 * spec.edge_smoothing;
    let peak = 0.5 * (outer + inner);
    let lo = outer - margin;
    let hi = (inner + margin).min(spec.center);
    hump_action(|x| spec.potential(x), lo, peak, hi, energy)
}

/// Single-barrier penetration probability `exp(-A)`.
pub fn wkb_transmission(action: f64) -> f64 {
    (-action).exp()
}

/// Incoherent two-barrier estimate `exp(-2A)`.
pub fn wkb_double_transmission(action: f64) -> f64 {
    (-2.0 * action).exp()
}

/// Natural log of the multiphoton transition probability
/// `exp(-(2 v0 / Omega) ln(1/w))`.
pub fn photon_assist_log(v0: f64, omega_drive: f64, w: f64) -> Result<f64> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::PerturbativeInvalid { w });
    }
    if !(omega_drive > 0.0) {
        return Err(Error::invalid(
            "omega_drive",
            format!("must be > 0, got {omega_drive}"),
        ));
    }
    Ok(-(2.0 * v0 / omega_drive) * (1.0 / w).ln())
}

/// Multiphoton transition probability; underflows to zero for many quanta.
pub fn photon_assist_probability(v0: f64, omega_drive: f64, w: f64) -> Result<f64> {
    photon_assist_log(v0, omega_drive, w).map(f64::exp)
}

/// Perturbation parameter `w = lambda E_ef / Omega` with `lambda = 1/sqrt(v0)`.
pub fn photon_assist_w(effective_field: f64, omega_drive: f64, v0: f64) -> f64 {
    effective_field.abs() / (v0.sqrt() * omega_drive)
}

/// Order-of-magnitude packet length and duration needed to resolve a level
/// `e_r` behind barriers of action `action`, for barriers scaled by `r`.
pub fn min_packet_scales(e_r: f64, action: f64, r: f64) -> (f64, f64) {
    let g = action.exp();
    (r * g / e_r.sqrt(), r * r * g / e_r)
}

/// Instantaneous single-barrier action along a run.
#[derive(Debug, Clone, Serialize)]
pub struct OpacityTrace {
    pub times: Vec<f64>,
    pub action: Vec<f64>,
    pub min_action: f64,
}

impl OpacityTrace {
    /// Largest incoherent two-barrier penetration `exp(-2 A(t))` along the trace.
    pub fn max_opacity_bound(&self) -> f64 {
        wkb_double_transmission(self.min_action)
    }
}

/// `A(t)` of the barrier scaled by `r(t)` at energy `energy_of_time(t)`.
///
/// Uses the exact invariance `A[V(x/r)/r^2](E) = A[V](E r^2)`.
pub fn opacity_trace<S, E>(
    spec: &BarrierSpec,
    schedule: &S,
    energy_of_time: E,
    times: &[f64],
) -> Result<OpacityTrace>
where
    S: ScaleSchedule + ?Sized,
    E: Fn(f64) -> f64,
{
    let mut action = Vec::with_capacity(times.len());
    for &t in times {
        let r = schedule.r(t);
        let a = action_exponent(spec, energy_of_time(t) * r * r).map_err(|e| Error::OpacityAt {
            time: t,
            source: Box::new(e),
        })?;
        action.push(a);
    }
    let min_action = action.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OpacityTrace {
        times: times.to_vec(),
        action,
        min_action,
    })
}
