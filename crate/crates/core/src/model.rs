//! Physical parametrizations: units, the static double barrier, the
//! shrink/magnify schedule `r(t)` and the accelerating field `E(t)`.
//!
//! All quantities are dimensionless with `hbar = m = a = 1`, so the intrinsic
//! frequency `hbar / (m a^2)` is 1 as well.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit system. Only the dimensionless choice is supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSystem {
    pub hbar: f64,
    pub mass: f64,
    /// Barrier length scale.
    pub a: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        UnitSystem {
            hbar: 1.0,
            mass: 1.0,
            a: 1.0,
        }
    }
}

impl UnitSystem {
    /// Intrinsic frequency `hbar / (m a^2)`.
    pub fn omega(&self) -> f64 {
        self.hbar / (self.mass * self.a * self.a)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hbar", self.hbar), ("mass", self.mass), ("a", self.a)] {
            if v != 1.0 {
                return Err(Error::invalid(
                    format!("units.{name}"),
                    format!("internal units are fixed to 1, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Logistic function, the first derivative of [`softplus`].
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `F(z) = ln(1 + e^z)`: `F ~ e^z` for `z -> -inf` and `F ~ z` for `z -> +inf`.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `F''(z) = F'(z) (1 - F'(z))`.
pub fn softplus_dd(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `1 - tanh(u)`, accurate when `tanh(u)` is close to one.
fn one_minus_tanh(u: f64) -> f64 {
    2.0 / (1.0 + (2.0 * u).exp())
}

/// Symmetric double barrier: two barriers of height `v0` and width `d`
/// flanking a zero-potential well of width `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    pub v0: f64,
    pub barrier_width: f64,
    pub well_width: f64,
    /// Edge length of the tanh blending; zero gives rectangular barriers.
    pub edge_smoothing: f64,
    #[serde(default)]
    pub center: f64,
}

/// Past this many smoothing lengths the tanh tails are below 1e-17 of `v0`.
const TAIL_LENGTHS: f64 = 20.0;

impl BarrierSpec {
    pub fn new(
        v0: f64,
        barrier_width: f64,
        well_width: f64,
        edge_smoothing: f64,
        center: f64,
    ) -> Result<Self> {
        let spec = BarrierSpec {
            v0,
            barrier_width,
            well_width,
            edge_smoothing,
            center,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rectangular barriers centred at the origin.
    pub fn rectangular(v0: f64, barrier_width: f64, well_width: f64) -> Result<Self> {
        Self::new(v0, barrier_width, well_width, 0.0, 0.0)
    }

    /// Rectangular barriers with the default edge length `0.05 d`.
    pub fn with_default_smoothing(v0: f64, barrier_width: f64, well_width: f64) -> Result<Self> {
        Self::new(v0, barrier_width, well_width, 0.05 * barrier_width, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("barrier.v0", self.v0),
            ("barrier.barrier_width", self.barrier_width),
            ("barrier.well_width", self.well_width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.edge_smoothing.is_finite() && self.edge_smoothing >= 0.0) {
            return Err(Error::invalid(
                "barrier.edge_smoothing",
                format!("must be finite and >= 0, got {}", self.edge_smoothing),
            ));
        }
        if !self.center.is_finite() {
            return Err(Error::invalid("barrier.center", "must be finite"));
        }
        Ok(())
    }

    /// Edges of the left barrier `(outer, inner)`.
    pub fn left_barrier(&self) -> (f64, f64) {
        let half = 0.5 * self.well_width;
        (
            self.center - half - self.barrier_width,
            self.center - half,
        )
    }

    /// Edges of the right barrier `(inner, outer)`.
    pub fn right_barrier(&self) -> (f64, f64) {
        let half = 0.5 * self.well_width;
        (
            self.center + half,
            self.center + half + self.barrier_width,
        )
    }

    /// Well interval between the inner barrier edges.
    pub fn well(&self) -> (f64, f64) {
        (self.left_barrier().1, self.right_barrier().0)
    }

    /// Region boundaries at the barrier midpoints: left | well | right.
    pub fn region_boundaries(&self) -> (f64, f64) {
        let m = 0.5 * self.well_width + 0.5 * self.barrier_width;
        (self.center - m, self.center + m)
    }

    /// Interval outside of which `V` vanishes (to below 1e-17 relative when smoothed).
    pub fn support(&self) -> (f64, f64) {
        let half = 0.5 * self.well_width + self.barrier_width + TAIL_LENGTHS * self.edge_smoothing;
        (self.center - half, self.center + half)
    }

    /// `V(x)`.
    pub fn potential(&self, x: f64) -> f64 {
        let (l0, l1) = self.left_barrier();
        let (r0, r1) = self.right_barrier();
        let s = self.edge_smoothing;
        if s == 0.0 {
            let step = |u: f64| {
                if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    0.0
                } else {
                    0.5
                }
            };
            return self.v0 * (step(x - l0) - step(x - l1) + step(x - r0) - step(x - r1));
        }
        let (lo, hi) = self.support();
        if x <= lo || x >= hi {
            return 0.0;
        }
        // S(u) = (1 + tanh(u/s))/2 written through 1 - tanh for accuracy in the tails.
        let sig = |u: f64| 1.0 - 0.5 * one_minus_tanh(u / s);
        let v = self.v0 * (sig(x - l0) - sig(x - l1) + sig(x - r0) - sig(x - r1));
        v.clamp(0.0, self.v0)
    }

    /// Maximum of `V` over x (the barrier top).
    pub fn top(&self) -> f64 {
        let (l0, l1) = self.left_barrier();
        self.potential(0.5 * (l0 + l1))
    }

    /// The potential `V(x/r)/r^2` expressed as a barrier of the same family.
    pub fn scaled(&self, r: f64) -> Result<BarrierSpec> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid("r", format!("scale must be > 0, got {r}")));
        }
        Ok(BarrierSpec {
            v0: self.v0 / (r * r),
            barrier_width: self.barrier_width * r,
            well_width: self.well_width * r,
            edge_smoothing: self.edge_smoothing * r,
            center: self.center * r,
        })
    }

    /// `V(x/r)/r^2`, the barrier part of the nonstationary potential.
    pub fn scaled_potential(&self, r: f64, x: f64) -> Result<f64> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid("r", format!("scale must be > 0, got {r}")));
        }
        Ok(self.scaled_potential_unchecked(r, x))
    }

    #[inline]
    pub(crate) fn scaled_potential_unchecked(&self, r: f64, x: f64) -> f64 {
        self.potential(x / r) / (r * r)
    }
}

/// `r`, `dr/dt` and `d^2r/dt^2` at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSample {
    pub r: f64,
    pub r_dot: f64,
    pub r_ddot: f64,
}

/// A barrier scale schedule `r(t)`.
pub trait ScaleSchedule: Sync {
    fn sample(&self, t: f64) -> ScaleSample;

    fn r(&self, t: f64) -> f64 {
        self.sample(t).r
    }
}

/// `r(t) = r` for all t.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScale(pub f64);

impl ScaleSchedule for ConstantScale {
    fn sample(&self, _t: f64) -> ScaleSample {
        ScaleSample {
            r: self.0,
            r_dot: 0.0,
            r_ddot: 0.0,
        }
    }
}

/// Time schedule of the scale `r(t)` and the accelerating field `E(t)`.
///
/// The scale is even in time and switches between 1 and `r0` around `-t0`
/// and `+t0` at rate `omega_drive`. The field is a softplus-shaped pulse
/// around `-t1 = -r0/Omega` and its sign-flipped mirror around `+t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveProtocol {
    pub omega_drive: f64,
    pub t0: f64,
    /// Scale floor reached on the plateau.
    pub r0: f64,
    /// Floor used to shape the field pulse; equals `r0` unless the two are
    /// detuned on purpose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_r0: Option<f64>,
    #[serde(default = "default_true")]
    pub field_enabled: bool,
}

fn default_true() -> bool {
    true
}

impl DriveProtocol {
    pub fn new(omega_drive: f64, t0: f64, r0: f64) -> Result<Self> {
        let p = DriveProtocol {
            omega_drive,
            t0,
            r0,
            field_r0: None,
            field_enabled: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let omega = UnitSystem::default().omega();
        if !(self.omega_drive.is_finite() && self.omega_drive > 0.0 && self.omega_drive < omega) {
            return Err(Error::invalid(
                "protocol.omega_drive",
                format!("must lie in (0, {omega}), got {}", self.omega_drive),
            ));
        }
        for (name, r) in [("protocol.r0", Some(self.r0)), ("protocol.field_r0", self.field_r0)] {
            if let Some(r) = r {
                if !(r.is_finite() && r > 0.0 && r < 1.0) {
                    return Err(Error::invalid(name, format!("must lie in (0, 1), got {r}")));
                }
            }
        }
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return Err(Error::invalid(
                "protocol.t0",
                format!("must be > 0, got {}", self.t0),
            ));
        }
        if (-2.0 * self.omega_drive * self.t0).exp() >= self.r0 {
            return Err(Error::invalid(
                "protocol.t0",
                format!(
                    "exp(-2 Omega t0) = {:.3e} must be below r0 = {}",
                    (-2.0 * self.omega_drive * self.t0).exp(),
                    self.r0
                ),
            ));
        }
        if self.t0 <= self.t1() {
            return Err(Error::invalid(
                "protocol.t0",
                format!("must exceed t1 = {}", self.t1()),
            ));
        }
        Ok(())
    }

    /// Floor that shapes the field pulse.
    pub fn pulse_r0(&self) -> f64 {
        self.field_r0.unwrap_or(self.r0)
    }

    /// Centre of the accelerating pulse, `t1 = r0/Omega`.
    pub fn t1(&self) -> f64 {
        self.pulse_r0() / self.omega_drive
    }

    /// Field prefactor `hbar Omega / (a r0^3)`.
    pub fn field_amplitude_scale(&self) -> f64 {
        let r = self.pulse_r0();
        self.omega_drive / (r * r * r)
    }

    /// Pulse duration `r0^2 / Omega`.
    pub fn pulse_width(&self) -> f64 {
        let r = self.pulse_r0();
        r * r / self.omega_drive
    }

    /// Argument `Omega (t + t1) / r0^2` of the accelerating pulse.
    pub fn pulse_argument(&self, t: f64) -> f64 {
        (t + self.t1()) / self.pulse_width()
    }

    /// `E(t)`. Zero at `t = 0` and for a disabled field.
    pub fn field(&self, t: f64) -> f64 {
        if !self.field_enabled || t == 0.0 {
            return 0.0;
        }
        let a = self.field_amplitude_scale();
        if t < 0.0 {
            a * softplus_dd(self.pulse_argument(t))
        } else {
            -a * softplus_dd(self.pulse_argument(-t))
        }
    }

    /// Scale sample of the symmetrized two-tanh profile.
    pub fn scale(&self, t: f64) -> ScaleSample {
        let w = self.omega_drive;
        let u1 = w * (t + self.t0);
        let u2 = w * (self.t0 - t);
        let g = 0.5 * one_minus_tanh(u1) + 0.5 * one_minus_tanh(u2);
        let sech2 = |u: f64| {
            let c = u.cosh();
            if c.is_finite() {
                1.0 / (c * c)
            } else {
                0.0
            }
        };
        let (s1, s2) = (sech2(u1), sech2(u2));
        let g_dot = -0.5 * w * (s1 - s2);
        let g_ddot = w * w * (s1 * u1.tanh() + s2 * u2.tanh());
        let amp = 1.0 - self.r0;
        ScaleSample {
            r: self.r0 + amp * g,
            r_dot: amp * g_dot,
            r_ddot: amp * g_ddot,
        }
    }

    /// Largest `|r_dot / r|` on a dense sampling of both switches.
    pub fn max_relative_rate(&self) -> f64 {
        let w = self.omega_drive;
        let span = 12.0 / w;
        let n = 24_000;
        let mut best = 0.0f64;
        for centre in [-self.t0, self.t0] {
            for i in 0..=n {
                let t = centre - span + 2.0 * span * i as f64 / n as f64;
                let s = self.scale(t);
                best = best.max((s.r_dot / s.r).abs());
            }
        }
        best
    }
}

impl ScaleSchedule for DriveProtocol {
    fn sample(&self, t: f64) -> ScaleSample {
        self.scale(t)
    }
}
