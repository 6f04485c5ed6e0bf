//! End-to-end experiments: static resonant tunneling of long and short
//! packets, the driven shrink/accelerate/collide/brake/re-expand protocol,
//! field-off controls and parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BarrierSpec, DriveProtocol, UnitSystem};
use crate::quad;
use crate::scatter::{self, Resonance};
use crate::tdse::{self, Absorber, Grid, Potential, Propagator, StaticBarrier, StepPolicy, StepStats, WaveState};
use crate::transforms::{self, DrivenBarrier};
use crate::wkb;

/// Energy samples used to locate the resonances of a barrier.
pub const RESONANCE_SEARCH_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Fixed barrier, no field.
    Static,
    /// Shrink, accelerate, collide, brake and re-expand.
    Driven,
}

/// Initial wave packet. Missing entries are derived from the barrier and protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    /// Rms width of `|psi|^2`.
    pub sigma: f64,
    /// Initial wavenumber; aimed at a resonance when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    /// Initial centre (static runs) or the free-motion focus point at `-t1` (driven runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Offset of the aimed energy from the level, in level widths.
    #[serde(default)]
    pub detuning_gammas: f64,
    /// Targeted resonance counted from the lowest.
    #[serde(default)]
    pub resonance_index: usize,
    /// Demand a packet at least as long as the minimal resonant length.
    #[serde(default)]
    pub resonant: bool,
}

impl PacketConfig {
    pub fn new(sigma: f64) -> Self {
        PacketConfig {
            sigma,
            k0: None,
            x0: None,
            detuning_gammas: 0.0,
            resonance_index: 0,
            resonant: false,
        }
    }
}

/// One named stretch of the run with its own step policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub name: String,
    /// Each phase starts where the previous one ends.
    pub end: f64,
    pub step: StepPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_start: f64,
    pub phases: Vec<Phase>,
    /// Spacing of the recorded time series.
    pub sample_interval: f64,
    /// Width of the absorbing layer at each grid edge; zero disables it.
    pub absorber_width: f64,
    /// Trailing window over which the outer fractions must be stable.
    #[serde(default = "default_window")]
    pub convergence_window: f64,
    /// Largest accepted rate of change of the outer fractions.
    #[serde(default = "default_rate")]
    pub convergence_rate: f64,
    /// Largest probability left in the well of a converged run.
    #[serde(default = "default_residual")]
    pub convergence_residual: f64,
    /// Largest accepted drift of norm plus absorbed probability before the run aborts.
    #[serde(default = "default_norm_tolerance")]
    pub norm_tolerance: f64,
    /// End the run as soon as it has converged.
    #[serde(default)]
    pub stop_when_converged: bool,
}

fn default_window() -> f64 {
    10.0
}

fn default_rate() -> f64 {
    1e-4
}

fn default_residual() -> f64 {
    1e-4
}

fn default_norm_tolerance() -> f64 {
    tdse::NORM_TOLERANCE
}

impl ScheduleConfig {
    pub fn t_end(&self) -> f64 {
        self.phases.last().map_or(self.t_start, |p| p.end)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t_start.is_finite() {
            return Err(Error::invalid("schedule.t_start", "must be finite"));
        }
        if self.phases.is_empty() {
            return Err(Error::invalid("schedule.phases", "need at least one phase"));
        }
        let mut prev = self.t_start;
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.end.is_finite() && p.end > prev) {
                return Err(Error::invalid(
                    format!("schedule.phases[{i}].end"),
                    format!("must be finite and exceed {prev}, got {}", p.end),
                ));
            }
            p.step
                .validate()
                .map_err(|_| Error::invalid(format!("schedule.phases[{i}].step"), format!("invalid {:?}", p.step)))?;
            prev = p.end;
        }
        let positive = [
            ("schedule.sample_interval", self.sample_interval),
            ("schedule.convergence_window", self.convergence_window),
            ("schedule.convergence_rate", self.convergence_rate),
            ("schedule.convergence_residual", self.convergence_residual),
            ("schedule.norm_tolerance", self.norm_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.absorber_width >= 0.0 && self.absorber_width.is_finite()) {
            return Err(Error::invalid(
                "schedule.absorber_width",
                format!("must be >= 0, got {}", self.absorber_width),
            ));
        }
        Ok(())
    }

    /// Same phases with every step halved.
    pub fn refined(&self) -> ScheduleConfig {
        let mut s = self.clone();
        for p in &mut s.phases {
            p.step = p.step.halved();
        }
        s
    }
}

/// Scenario as configured; grid, schedule and regions may be left to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub spec: BarrierSpec,
    pub protocol: DriveProtocol,
    pub packet: PacketConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    /// Left/right region boundaries of the unscaled barrier; barrier midpoints by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<(f64, f64)>,
}

/// Packet after targeting, with the level it aims at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedPacket {
    pub sigma: f64,
    pub k0: f64,
    /// Centre at the start of the run.
    pub x_start: f64,
    /// Free-motion focus point and time.
    pub x_focus: f64,
    pub focus_time: f64,
    /// Scale of the barrier at the collision.
    pub collision_scale: f64,
    /// Targeted level of the unscaled barrier.
    pub target: Resonance,
}

/// Scenario with every default filled in.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub packet: ResolvedPacket,
    pub grid: Grid,
    pub schedule: ScheduleConfig,
    pub regions: (f64, f64),
    pub absorber: Option<Absorber>,
    pub resonances: Vec<Resonance>,
}

/// Default driven setup: `v0 = 2, d = 1.6, W = 2.4, s = 0.5`, `Omega = 0.01`,
/// `t0 = 3/Omega`, `r0 = 0.13`, packet width 14 aimed at the lowest level.
pub fn default_driven_config() -> ScenarioConfig {
    let omega = 0.01;
    ScenarioConfig {
        kind: ScenarioKind::Driven,
        spec: default_barrier(),
        protocol: DriveProtocol {
            omega_drive: omega,
            t0: 3.0 / omega,
            r0: 0.13,
            field_r0: None,
            field_enabled: true,
        },
        packet: PacketConfig::new(14.0),
        grid: None,
        schedule: None,
        regions: None,
    }
}

/// Barrier with a single well level at `E_R ≈ 0.5456`, `Gamma ≈ 0.0035`.
pub fn default_barrier() -> BarrierSpec {
    BarrierSpec {
        v0: 2.0,
        barrier_width: 1.6,
        well_width: 2.4,
        edge_smoothing: 0.5,
        center: 0.0,
    }
}

/// `(eta, eta_dot)` of the reference trajectory's frame at any time.
fn eta_at(p: &DriveProtocol, t: f64) -> (f64, f64) {
    if !p.field_enabled {
        (0.0, 0.0)
    } else if t <= 0.0 {
        transforms::eta_closed_form(p, t)
    } else {
        transforms::eta_braking_closed_form(p, t)
    }
}

fn spread_after(sigma: f64, elapsed: f64) -> f64 {
    sigma * (1.0 + (elapsed / (2.0 * sigma * sigma)).powi(2)).sqrt()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        UnitSystem::default().validate()?;
        self.spec.validate()?;
        if self.kind == ScenarioKind::Driven {
            self.protocol.validate()?;
        }
        let pk = &self.packet;
        if !(pk.sigma > 0.0 && pk.sigma.is_finite()) {
            return Err(Error::invalid("packet.sigma", format!("must be > 0, got {}", pk.sigma)));
        }
        for (name, v) in [("packet.k0", pk.k0), ("packet.x0", pk.x0)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::invalid(name, format!("must be finite, got {v}")));
                }
            }
        }
        if !pk.detuning_gammas.is_finite() {
            return Err(Error::invalid("packet.detuning_gammas", "must be finite"));
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if let Some(s) = &self.schedule {
            s.validate()?;
        }
        if let Some((a, b)) = self.regions {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::invalid("regions", format!("need a < b, got ({a}, {b})")));
            }
        }
        Ok(())
    }

    /// Fills in targeting, grid, schedule, regions and absorber.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        self.validate()?;
        let resonances = scatter::resonances_below_top(&self.spec, RESONANCE_SEARCH_POINTS, scatter::DEFAULT_SEGMENTS)?;
        self.resolve_with(resonances)
    }

    fn resolve_with(&self, resonances: Vec<Resonance>) -> Result<ResolvedScenario> {
        let pk = self.packet;
        let target = *resonances.get(pk.resonance_index).ok_or_else(|| {
            Error::invalid(
                "packet.resonance_index",
                format!("barrier has {} resonances below its top", resonances.len()),
            )
        })?;
        let e_aim = target.e_r + pk.detuning_gammas * target.gamma;
        if !(e_aim > 0.0) {
            return Err(Error::invalid(
                "packet.detuning_gammas",
                format!("aimed energy {e_aim} must be positive"),
            ));
        }
        let p = self.protocol;
        let schedule = match &self.schedule {
            Some(s) => s.clone(),
            None => self.default_schedule(&target),
        };
        let packet = match self.kind {
            ScenarioKind::Static => {
                let k0 = pk.k0.unwrap_or((2.0 * e_aim).sqrt());
                let x0 = pk.x0.unwrap_or(self.spec.support().0 - 6.0 * pk.sigma - 5.0);
                ResolvedPacket {
                    sigma: pk.sigma,
                    k0,
                    x_start: x0,
                    x_focus: x0,
                    focus_time: schedule.t_start,
                    collision_scale: 1.0,
                    target,
                }
            }
            ScenarioKind::Driven => {
                let rc = p.scale(0.0).r;
                let (eta_c, v_c) = eta_at(&p, 0.0);
                let k0 = pk.k0.unwrap_or((2.0 * e_aim).sqrt() / rc - v_c);
                let tf = -p.t1();
                let (eta_f, _) = eta_at(&p, tf);
                // Free drift plus frame displacement bring the centre to the barrier at t = 0.
                let x_focus = pk.x0.unwrap_or(-k0 * (0.0 - tf) - eta_c + eta_f);
                ResolvedPacket {
                    sigma: pk.sigma,
                    k0,
                    x_start: x_focus + k0 * (schedule.t_start - tf),
                    x_focus,
                    focus_time: tf,
                    collision_scale: rc,
                    target,
                }
            }
        };
        if pk.resonant {
            let a = wkb::action_exponent(&self.spec, target.e_r)?;
            let (l0, _) = wkb::min_packet_scales(target.e_r, a, packet.collision_scale);
            if pk.sigma < l0 {
                return Err(Error::invalid(
                    "packet.sigma",
                    format!("resonant run needs sigma >= L0 = {l0:.4}, got {}", pk.sigma),
                ));
            }
        }
        let grid = match self.grid {
            Some(g) => g,
            None => self.default_grid(&packet, &schedule)?,
        };
        let k_big = match self.kind {
            ScenarioKind::Static => self.largest_wavenumber(&packet),
            ScenarioKind::Driven => self.packet_wavenumber(&packet),
        };
        grid.check_resolution(self.plateau_wavenumber(&packet))?;
        let absorber = if schedule.absorber_width > 0.0 {
            let k_lo = match self.kind {
                ScenarioKind::Static => 0.5 * packet.k0.abs(),
                ScenarioKind::Driven if self.protocol.field_enabled => 1.0,
                ScenarioKind::Driven => 0.5 * packet.k0.abs(),
            };
            let (a, worst) = Absorber::tuned(schedule.absorber_width, k_lo.max(0.05), k_big);
            if worst > 1e-3 {
                log::warn!("absorbing layer reflects up to {worst:.2e} in its band");
            }
            Some(a)
        } else {
            None
        };
        Ok(ResolvedScenario {
            config: self.clone(),
            packet,
            grid,
            schedule,
            regions: self.regions.unwrap_or_else(|| self.spec.region_boundaries()),
            absorber,
            resonances,
        })
    }

    fn plateau_wavenumber(&self, pk: &ResolvedPacket) -> f64 {
        match self.kind {
            ScenarioKind::Static => pk.k0.abs(),
            ScenarioKind::Driven => (pk.k0 + eta_at(&self.protocol, 0.0).1).abs(),
        }
    }

    /// Largest wavenumber expected during the run: the reflected part after
    /// braking, or the decay constant under the fully shrunk barrier.
    fn largest_wavenumber(&self, pk: &ResolvedPacket) -> f64 {
        let spread = 6.0 / (2.0 * pk.sigma);
        match self.kind {
            ScenarioKind::Static => pk.k0.abs() + spread,
            ScenarioKind::Driven => {
                let kappa = (2.0 * self.spec.v0).sqrt() / self.protocol.scale(0.0).r;
                self.packet_wavenumber(pk).max(kappa)
            }
        }
    }

    /// Largest wavenumber the packet itself carries, braked or not.
    fn packet_wavenumber(&self, pk: &ResolvedPacket) -> f64 {
        let spread = 6.0 / (2.0 * pk.sigma);
        let v = eta_at(&self.protocol, 0.0).1;
        (pk.k0 + v).abs() + v + spread
    }

    fn default_schedule(&self, target: &Resonance) -> ScheduleConfig {
        let fine = StepPolicy::Adaptive {
            phase: 0.1,
            dt_max: 0.05,
            threshold: 1e-4,
        };
        match self.kind {
            ScenarioKind::Static => {
                let k = (2.0 * (target.e_r + self.packet.detuning_gammas * target.gamma)).sqrt();
                let k = self.packet.k0.map_or(k, f64::abs).max(1e-3);
                let x0 = self.packet.x0.unwrap_or(self.spec.support().0 - 6.0 * self.packet.sigma - 5.0);
                let travel = (self.spec.center - x0 + 6.0 * self.packet.sigma) / k;
                ScheduleConfig {
                    t_start: 0.0,
                    phases: vec![Phase {
                        name: "propagate".into(),
                        end: travel + 20.0 / target.gamma,
                        step: StepPolicy::Adaptive {
                            phase: 0.05,
                            dt_max: 0.1,
                            threshold: 1e-6,
                        },
                    }],
                    sample_interval: 2.0,
                    absorber_width: 40.0,
                    convergence_window: default_window(),
                    convergence_rate: default_rate(),
                    convergence_residual: default_residual(),
                    norm_tolerance: default_norm_tolerance(),
                    stop_when_converged: true,
                }
            }
            ScenarioKind::Driven => {
                let p = self.protocol;
                let (t0, t1, w, om) = (p.t0, p.t1(), p.pulse_width(), p.omega_drive);
                let coarse = StepPolicy::Adaptive {
                    phase: 0.1,
                    dt_max: 0.25,
                    threshold: 1e-4,
                };
                let t_start = -t0 - 2.5 / om;
                let raw = [
                    ("shrink", -t0 + 2.5 / om, coarse),
                    ("approach", -t1 - 15.0 * w, coarse),
                    ("accelerate", -0.5 * t1, fine),
                    ("collide", 0.5 * t1, fine),
                    ("brake", t1 + 15.0 * w, fine),
                    ("re-expand", t0 + 2.5 / om, coarse),
                ];
                let mut phases = Vec::new();
                let mut prev = t_start;
                for (name, end, step) in raw {
                    // Adjacent phases may overlap for wide pulses; keep the later boundary.
                    let end = end.max(prev);
                    if end > prev {
                        phases.push(Phase {
                            name: name.into(),
                            end,
                            step,
                        });
                        prev = end;
                    }
                }
                ScheduleConfig {
                    t_start,
                    phases,
                    sample_interval: 0.5,
                    absorber_width: 30.0,
                    convergence_window: default_window(),
                    convergence_rate: default_rate(),
                    convergence_residual: default_residual(),
                    norm_tolerance: default_norm_tolerance(),
                    stop_when_converged: false,
                }
            }
        }
    }

    /// Extent covering the packet from start to end plus the absorbing layers,
    /// at the spacing required by the largest wavenumber.
    fn default_grid(&self, pk: &ResolvedPacket, schedule: &ScheduleConfig) -> Result<Grid> {
        let (s_lo, s_hi) = self.spec.support();
        let t_end = schedule.t_end();
        let start_spread = spread_after(pk.sigma, pk.focus_time - schedule.t_start);
        let end_spread = spread_after(pk.sigma, t_end - pk.focus_time);
        let mut lo = (pk.x_start - 6.0 * start_spread).min(s_lo);
        let mut hi = s_hi.max(pk.x_start + 6.0 * start_spread);
        if self.kind == ScenarioKind::Driven {
            let p = &self.protocol;
            let (eta_f, _) = eta_at(p, pk.focus_time);
            let (eta_e, _) = eta_at(p, t_end);
            let end_centre = pk.x_focus + pk.k0 * (t_end - pk.focus_time) + eta_e - eta_f;
            hi = hi.max(end_centre + 6.0 * end_spread);
            lo = lo.min(end_centre - 6.0 * end_spread);
        }
        let margin = schedule.absorber_width + 5.0;
        lo -= margin;
        hi += margin;
        let dx = std::f64::consts::PI / (8.0 * self.largest_wavenumber(pk));
        let n = (((hi - lo) / dx).ceil() as usize).next_power_of_two().max(1024);
        Grid::new(lo, hi, n)
    }

    /// The same run with the field switched off, keeping the resolved packet
    /// and schedule. The grid is sized afresh for the unaccelerated packet.
    pub fn field_off_control(&self, resolved: &ResolvedScenario) -> ScenarioConfig {
        let mut c = self.clone();
        c.protocol.field_enabled = false;
        c.packet.k0 = Some(resolved.packet.k0);
        c.packet.x0 = Some(resolved.packet.x_focus);
        c.schedule = Some(resolved.schedule.clone());
        c
    }
}

/// Recorded state of a run at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Left of the scaled left boundary, including the left absorbed probability.
    pub left: f64,
    pub well: f64,
    /// Right of the scaled right boundary, including the right absorbed probability.
    pub right: f64,
    pub absorbed_left: f64,
    pub absorbed_right: f64,
    /// Probability inside the scaled well proper.
    pub well_occupation: f64,
    pub mean_x: f64,
    pub energy: f64,
    pub r: f64,
    pub field: f64,
    /// Single-barrier action at the reference energy (zero above the top).
    pub action: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Unconverged,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceMatch {
    /// Kinetic energy of the reference trajectory at the collision.
    pub packet_energy: f64,
    /// Nearest level `E_R / r^2` of the barrier at the collision.
    pub level_energy: f64,
    pub level_width: f64,
    pub detuning_over_gamma: f64,
}

/// Conditions on slowness of the drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticityLedger {
    pub max_relative_rate: f64,
    pub omega_drive: f64,
    pub intrinsic_omega: f64,
    /// Pulse duration in the rescaled time `t / r0^2`.
    pub rescaled_pulse_width: f64,
    pub holds: bool,
}

/// The two candidate scalings of incoherent (short-packet) transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncoherentEstimates {
    /// `exp(-2A)` at the level.
    pub two_barrier: f64,
    /// Level width over the packet's energy spread.
    pub width_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub kind: ScenarioKind,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub warnings: Vec<String>,
    pub packet: ResolvedPacket,
    pub grid: Grid,
    pub schedule: ScheduleConfig,
    pub regions: (f64, f64),
    pub absorber: Option<Absorber>,
    pub samples: Vec<Sample>,
    pub final_time: f64,
    pub transmitted_fraction: f64,
    pub reflected_fraction: f64,
    pub peak_well_occupation: f64,
    pub converged: bool,
    /// Largest `exp(-2 A(t))` along the run.
    pub max_opacity_bound: f64,
    pub min_action: f64,
    pub photon_assist_w: Option<f64>,
    pub photon_assist_bound: Option<f64>,
    pub resonance_match: ResonanceMatch,
    pub adiabaticity: Option<AdiabaticityLedger>,
    pub incoherent_estimates: IncoherentEstimates,
    /// Minimal resonant packet length and duration at the collision scale.
    pub min_packet_length: f64,
    pub min_packet_duration: f64,
    /// Rms width of the transmitted part at the end.
    pub exit_packet_width: f64,
    /// Largest `|left + well + right - 1|` over the samples.
    pub bookkeeping_error: f64,
    pub steps: StepStats,
}

impl ScenarioReport {
    /// Opacity, slowness and photon-assist conditions of an accepted driven run.
    pub fn conditions_hold(&self) -> bool {
        let photon = self
            .photon_assist_bound
            .is_some_and(|b| b <= 1e-3 * self.transmitted_fraction);
        self.max_opacity_bound <= 1e-4
            && self.min_action >= 100f64.ln()
            && self.adiabaticity.is_some_and(|a| a.holds)
            && photon
    }
}

/// Rms width of the density right of `b`.
fn width_right_of(state: &WaveState, b: f64) -> f64 {
    let (lo, _) = state.grid.index_range(b, state.grid.x_max);
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for j in lo..state.grid.n_points {
        let p = state.psi[j].norm_sqr();
        let x = state.grid.x(j);
        m0 += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    if m0 == 0.0 {
        return 0.0;
    }
    let m = m1 / m0;
    (m2 / m0 - m * m).max(0.0).sqrt()
}

/// Action at `energy`, zero where the energy clears the top.
fn action_or_zero(spec: &BarrierSpec, energy: f64) -> Result<f64> {
    match wkb::action_exponent(spec, energy) {
        Ok(a) => Ok(a),
        Err(Error::NoForbiddenRegion { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

impl ResolvedScenario {
    fn kind(&self) -> ScenarioKind {
        self.config.kind
    }

    fn scale(&self, t: f64) -> f64 {
        match self.kind() {
            ScenarioKind::Static => 1.0,
            ScenarioKind::Driven => self.config.protocol.scale(t).r,
        }
    }

    /// Kinetic energy of the classical reference trajectory at `t`.
    fn reference_energy(&self, t: f64) -> f64 {
        let k = match self.kind() {
            ScenarioKind::Static => self.packet.k0,
            ScenarioKind::Driven => self.packet.k0 + eta_at(&self.config.protocol, t).1,
        };
        0.5 * k * k
    }

    fn arrival_time(&self) -> f64 {
        match self.kind() {
            ScenarioKind::Static => {
                let k = self.packet.k0.abs().max(1e-3);
                self.schedule.t_start + (self.config.spec.center - self.packet.x_start + 6.0 * self.packet.sigma) / k
            }
            ScenarioKind::Driven => {
                let p = &self.config.protocol;
                p.t1() + 15.0 * p.pulse_width()
            }
        }
    }

    fn resonance_match(&self) -> ResonanceMatch {
        let rc = self.packet.collision_scale;
        let e = self.reference_energy(0.0);
        let nearest = self
            .resonances
            .iter()
            .min_by(|a, b| {
                let da = (a.e_r / (rc * rc) - e).abs();
                let db = (b.e_r / (rc * rc) - e).abs();
                da.total_cmp(&db)
            })
            .copied()
            .unwrap_or(self.packet.target);
        let level = nearest.e_r / (rc * rc);
        let width = nearest.gamma / (rc * rc);
        ResonanceMatch {
            packet_energy: e,
            level_energy: level,
            level_width: width,
            detuning_over_gamma: (e - level) / width,
        }
    }

    pub fn run(&self) -> Result<ScenarioReport> {
        self.run_with_state().map(|(report, _)| report)
    }

    /// Runs the scenario and also returns the final wave function.
    pub fn run_with_state(&self) -> Result<(ScenarioReport, WaveState)> {
        let spec = self.config.spec;
        let p = self.config.protocol;
        let pk = &self.packet;
        let mut psi = tdse::make_focused_packet(
            &self.grid,
            pk.x_focus,
            pk.k0,
            pk.sigma,
            pk.focus_time - self.schedule.t_start,
            self.schedule.t_start,
        )?;
        let static_pot = StaticBarrier(spec);
        let driven_pot = DrivenBarrier {
            spec: &spec,
            schedule: &p,
            field: Some(&p),
        };
        let pot: &dyn Potential = match self.kind() {
            ScenarioKind::Static => &static_pot,
            ScenarioKind::Driven => &driven_pot,
        };
        let mut prop = Propagator::new(self.grid, self.schedule.phases[0].step, self.absorber)?;
        prop.norm_tolerance = self.schedule.norm_tolerance;
        let mut samples = Vec::new();
        let mut status = RunStatus::Completed;
        let mut message = None;
        let mut converged = false;
        let arrival = self.arrival_time();
        let window = self.schedule.convergence_window;
        let dt_sample = self.schedule.sample_interval;
        samples.push(self.sample(&psi, &mut prop, pot)?);
        let mut phase_start = self.schedule.t_start;
        'phases: for phase in &self.schedule.phases {
            prop.set_policy(phase.step)?;
            let n = ((phase.end - phase_start) / dt_sample).ceil().max(1.0) as usize;
            for i in 1..=n {
                let t = if i == n {
                    phase.end
                } else {
                    phase_start + i as f64 * (phase.end - phase_start) / n as f64
                };
                if let Err(e) = prop.advance(&mut psi, pot, t) {
                    if e.is_numerical_abort() {
                        status = RunStatus::Aborted;
                        message = Some(format!("aborted: {e}"));
                        break 'phases;
                    }
                    return Err(e);
                }
                samples.push(self.sample(&psi, &mut prop, pot)?);
                log::trace!("t = {:.3}: {} steps so far, min dt {:.3e}", psi.time, prop.stats.steps, prop.stats.min_dt);
                converged = psi.time >= arrival && self.is_converged(&samples, window);
                if converged && self.schedule.stop_when_converged {
                    break 'phases;
                }
            }
            log::debug!("phase {} done at t = {:.3} after {} steps", phase.name, psi.time, prop.stats.steps);
            phase_start = phase.end;
        }
        if status == RunStatus::Completed && !converged {
            status = RunStatus::Unconverged;
            message = Some(format!(
                "unconverged: at t = {} the outer fractions change faster than {} per unit time or the well holds more than {}",
                psi.time, self.schedule.convergence_rate, self.schedule.convergence_residual
            ));
        }
        let report = self.finish(&psi, samples, status, message, converged, prop.stats)?;
        Ok((report, psi))
    }

    fn is_converged(&self, samples: &[Sample], window: f64) -> bool {
        let last = samples[samples.len() - 1];
        let Some(old) = samples.iter().rev().find(|s| last.t - s.t >= window - 1e-9) else {
            return false;
        };
        let span = last.t - old.t;
        let rate = self.schedule.convergence_rate;
        last.well <= self.schedule.convergence_residual
            && (last.right - old.right).abs() / span < rate && (last.left - old.left).abs() / span < rate
    }

    fn sample(&self, psi: &WaveState, prop: &mut Propagator, pot: &dyn Potential) -> Result<Sample> {
        let t = psi.time;
        let r = self.scale(t);
        let (a, b) = self.regions;
        let c = self.config.spec.center;
        let bounds = (c + (a - c) * r, c + (b - c) * r);
        let (left, well, right) = tdse::measure_fractions(psi, bounds);
        let field = match self.kind() {
            ScenarioKind::Static => 0.0,
            ScenarioKind::Driven => self.config.protocol.field(t),
        };
        let action = action_or_zero(&self.config.spec, self.reference_energy(t) * r * r)
            .map_err(|e| Error::OpacityAt { time: t, source: Box::new(e) })?;
        Ok(Sample {
            t,
            left,
            well,
            right,
            absorbed_left: psi.absorbed_left,
            absorbed_right: psi.absorbed_right,
            well_occupation: tdse::well_occupation(psi, &self.config.spec, r)?,
            mean_x: psi.position_moments().0,
            energy: prop.energy(psi, pot),
            r,
            field,
            action,
        })
    }

    fn finish(
        &self,
        psi: &WaveState,
        samples: Vec<Sample>,
        status: RunStatus,
        message: Option<String>,
        converged: bool,
        steps: StepStats,
    ) -> Result<ScenarioReport> {
        let spec = &self.config.spec;
        let p = &self.config.protocol;
        let last = *samples.last().expect("at least the initial sample");
        let min_action = samples.iter().map(|s| s.action).fold(f64::INFINITY, f64::min);
        let mut warnings = Vec::new();
        let rm = self.resonance_match();
        if rm.detuning_over_gamma.abs() > 5.0 {
            warnings.push(format!(
                "detuned run: packet energy {:.6} is {:.1} widths from the level {:.6}",
                rm.packet_energy, rm.detuning_over_gamma, rm.level_energy
            ));
        }
        let (photon_assist_w, photon_assist_bound, adiabaticity) = match self.kind() {
            ScenarioKind::Static => (None, None, None),
            ScenarioKind::Driven => {
                let rescaled = transforms::rescaled_equation_params(p);
                let (w, bound) = if p.field_enabled {
                    let w = rescaled.photon_assist_w(spec.v0);
                    match wkb::photon_assist_probability(spec.v0, p.omega_drive, w) {
                        Ok(b) => (Some(w), Some(b)),
                        Err(e) => {
                            warnings.push(format!("photon-assist estimate unavailable: {e}"));
                            (Some(w), None)
                        }
                    }
                } else {
                    (None, Some(0.0))
                };
                let omega = UnitSystem::default().omega();
                let rate = p.max_relative_rate();
                let width = rescaled.tau_pulse_width();
                let ledger = AdiabaticityLedger {
                    max_relative_rate: rate,
                    omega_drive: p.omega_drive,
                    intrinsic_omega: omega,
                    rescaled_pulse_width: width,
                    holds: rate <= p.omega_drive
                        && p.omega_drive < omega
                        && width >= (1.0 - 1e-9) / p.omega_drive
                        && 1.0 / p.omega_drive >= 10.0 / omega,
                };
                if !ledger.holds {
                    warnings.push("slowness conditions of the drive are violated".into());
                }
                (w, bound, Some(ledger))
            }
        };
        let rc = self.packet.collision_scale;
        let target = self.packet.target;
        let a_level = action_or_zero(spec, target.e_r)?;
        let (l0, t0) = wkb::min_packet_scales(target.e_r, a_level, rc);
        let k_coll = (2.0 * rm.packet_energy).sqrt();
        let spread = k_coll / (2.0 * self.packet.sigma);
        let incoherent = IncoherentEstimates {
            two_barrier: wkb::wkb_double_transmission(a_level),
            width_ratio: rm.level_width / spread,
        };
        let bookkeeping_error = samples
            .iter()
            .map(|s| (s.left + s.well + s.right - 1.0).abs())
            .fold(0.0, f64::max);
        if bookkeeping_error > 1e-6 {
            warnings.push(format!("probability bookkeeping off by {bookkeeping_error:.2e}"));
        }
        let r_end = self.scale(psi.time);
        let c = spec.center;
        let exit_packet_width = width_right_of(psi, c + (self.regions.1 - c) * r_end);
        Ok(ScenarioReport {
            kind: self.kind(),
            status,
            message,
            warnings,
            packet: self.packet,
            grid: self.grid,
            schedule: self.schedule.clone(),
            regions: self.regions,
            absorber: self.absorber,
            peak_well_occupation: samples.iter().map(|s| s.well_occupation).fold(0.0, f64::max),
            final_time: last.t,
            transmitted_fraction: last.right.clamp(0.0, 1.0),
            reflected_fraction: last.left.clamp(0.0, 1.0),
            converged,
            max_opacity_bound: wkb::wkb_double_transmission(min_action),
            min_action,
            photon_assist_w,
            photon_assist_bound,
            resonance_match: rm,
            adiabaticity,
            incoherent_estimates: incoherent,
            min_packet_length: l0,
            min_packet_duration: t0,
            exit_packet_width,
            bookkeeping_error,
            steps,
            samples,
        })
    }

    /// Same scenario on twice the grid points with every step halved.
    pub fn refined(&self) -> ResolvedScenario {
        let mut r = self.clone();
        r.grid = self.grid.refined();
        r.schedule = self.schedule.refined();
        r
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    config.resolve()?.run()
}

/// Static run: the barrier is fixed and the field absent.
pub fn run_static_resonance(config: &ScenarioConfig) -> Result<ScenarioReport> {
    if config.kind != ScenarioKind::Static {
        return Err(Error::invalid("scenario.kind", "expected a static scenario"));
    }
    run_scenario(config)
}

/// Full driven protocol.
pub fn run_er_scenario(config: &ScenarioConfig) -> Result<ScenarioReport> {
    if config.kind != ScenarioKind::Driven {
        return Err(Error::invalid("scenario.kind", "expected a driven scenario"));
    }
    run_scenario(config)
}

/// Change of the transmitted fraction under doubled resolution.
#[derive(Debug, Clone, Serialize)]
pub struct ResolutionCheck {
    pub base: f64,
    pub refined: f64,
    pub relative_change: f64,
    pub refined_status: RunStatus,
}

pub fn resolution_check(resolved: &ResolvedScenario, base: &ScenarioReport) -> Result<ResolutionCheck> {
    let fine = resolved.refined().run()?;
    Ok(ResolutionCheck {
        base: base.transmitted_fraction,
        refined: fine.transmitted_fraction,
        relative_change: (fine.transmitted_fraction - base.transmitted_fraction).abs()
            / base.transmitted_fraction.abs().max(f64::MIN_POSITIVE),
        refined_status: fine.status,
    })
}

/// Breit–Wigner line averaged over the energy density of a Gaussian packet
/// of width `sigma` and mean wavenumber `k0`, for a level scaled by `r`.
pub fn packet_averaged_transmission(res: &Resonance, k0: f64, sigma: f64, r: f64) -> f64 {
    let sk = 1.0 / (2.0 * sigma);
    let (e_r, gamma) = (res.e_r / (r * r), res.gamma / (r * r));
    let density = |k: f64| (-(k - k0) * (k - k0) / (2.0 * sk * sk)).exp() / (sk * (2.0 * std::f64::consts::PI).sqrt());
    let f = |k: f64| density(k) * scatter::breit_wigner(0.5 * k * k, e_r, gamma, res.t_peak);
    let (lo, hi) = (k0 - 10.0 * sk, k0 + 10.0 * sk);
    let kr = (2.0 * e_r).sqrt();
    // Split at the line centre so the narrow peak is not missed.
    let mut cuts = vec![lo];
    for c in [kr - 20.0 * gamma / kr, kr, kr + 20.0 * gamma / kr] {
        if c > lo && c < hi {
            cuts.push(c);
        }
    }
    cuts.push(hi);
    cuts.windows(2)
        .map(|w| quad::integrate(f, w[0], w[1], 1e-14, 1e-10).0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    R0,
    K0,
    Sigma,
    OmegaDrive,
    V0,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "r0" => SweepParameter::R0,
            "k0" => SweepParameter::K0,
            "sigma" => SweepParameter::Sigma,
            "omega_drive" => SweepParameter::OmegaDrive,
            "v0" => SweepParameter::V0,
            other => {
                return Err(Error::invalid(
                    "sweep.parameter",
                    format!("expected one of r0, k0, sigma, omega_drive, v0, got {other}"),
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub status: Option<RunStatus>,
    pub transmitted_fraction: Option<f64>,
    pub detuning_over_gamma: Option<f64>,
    pub max_opacity_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs `base` once per value, in parallel. Rows come back sorted by value;
/// the packet wavenumber (and, for driven runs, its focus point) stay at the
/// base run's resolved values unless they are the swept parameter. With
/// `refine`, every point runs on the doubled grid with halved steps.
pub fn sweep(base: &ScenarioConfig, parameter: SweepParameter, values: &[f64], refine: bool) -> Result<Vec<SweepRow>> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid("sweep.values", format!("must be finite, got {v}")));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let resolved = base.resolve()?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = sorted
        .par_iter()
        .map(|&v| {
            let outcome = sweep_config(base, &resolved, parameter, v).and_then(|c| {
                let r = c.resolve()?;
                if refine {
                    r.refined().run()
                } else {
                    r.run()
                }
            });
            match outcome {
                Ok(rep) => SweepRow {
                    value: v,
                    status: Some(rep.status),
                    transmitted_fraction: Some(rep.transmitted_fraction),
                    detuning_over_gamma: Some(rep.resonance_match.detuning_over_gamma),
                    max_opacity_bound: Some(rep.max_opacity_bound),
                    error: rep.message,
                },
                Err(e) => SweepRow {
                    value: v,
                    status: None,
                    transmitted_fraction: None,
                    detuning_over_gamma: None,
                    max_opacity_bound: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

fn sweep_config(base: &ScenarioConfig, resolved: &ResolvedScenario, parameter: SweepParameter, v: f64) -> Result<ScenarioConfig> {
    let mut c = base.clone();
    c.packet.k0 = Some(resolved.packet.k0);
    if c.kind == ScenarioKind::Driven {
        c.packet.x0 = Some(resolved.packet.x_focus);
    }
    match parameter {
        SweepParameter::R0 => {
            // Only the scale floor moves; the pulse keeps its tuned shape.
            c.protocol.field_r0 = Some(base.protocol.pulse_r0());
            c.protocol.r0 = v;
        }
        SweepParameter::K0 => c.packet.k0 = Some(v),
        SweepParameter::Sigma => {
            c.packet.sigma = v;
            if c.kind == ScenarioKind::Static {
                c.packet.x0 = base.packet.x0;
            }
        }
        SweepParameter::OmegaDrive => c.protocol.omega_drive = v,
        SweepParameter::V0 => c.spec.v0 = v,
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_config(sigma: f64) -> ScenarioConfig {
        ScenarioConfig {
            kind: ScenarioKind::Static,
            spec: default_barrier(),
            protocol: default_driven_config().protocol,
            packet: PacketConfig::new(sigma),
            grid: None,
            schedule: None,
            regions: None,
        }
    }

    #[test]
    fn driven_defaults_aim_at_the_scaled_level() {
        let c = default_driven_config();
        let r = c.resolve().unwrap();
        let rm = r.resonance_match();
        assert!(rm.detuning_over_gamma.abs() < 1e-9, "{rm:?}");
        assert!((r.packet.target.e_r - 0.5456).abs() < 1e-3);
        // Phases are ordered and contiguous by construction.
        let mut prev = r.schedule.t_start;
        for p in &r.schedule.phases {
            assert!(p.end > prev);
            prev = p.end;
        }
        assert_eq!(r.schedule.phases.first().unwrap().name, "shrink");
        assert_eq!(r.schedule.phases.last().unwrap().name, "re-expand");
        // The classical centre reaches the barrier centre at t = 0.
        let p = c.protocol;
        let (eta0, _) = eta_at(&p, 0.0);
        let (etaf, _) = eta_at(&p, r.packet.focus_time);
        let x_c = r.packet.x_focus + r.packet.k0 * (0.0 - r.packet.focus_time) + eta0 - etaf;
        assert!(x_c.abs() < 1e-9);
        assert!(r.grid.x_min < r.packet.x_start && r.grid.x_max > 0.0);
    }

    #[test]
    fn static_packet_starts_left_of_the_barrier() {
        let r = static_config(20.0).resolve().unwrap();
        let (lo, _) = default_barrier().support();
        assert!(r.packet.x_start + 6.0 * 20.0 < lo);
        assert!((0.5 * r.packet.k0 * r.packet.k0 - r.packet.target.e_r).abs() < 1e-12);
    }

    #[test]
    fn resonant_flag_enforces_minimal_length() {
        let mut c = static_config(20.0);
        c.packet.resonant = true;
        let err = c.resolve().unwrap_err();
        assert!(err.to_string().contains("L0"), "{err}");
    }

    #[test]
    fn packet_average_limits() {
        let res = Resonance {
            e_r: 0.5,
            gamma: 0.001,
            t_peak: 1.0,
            fit_residual: 0.0,
            non_lorentzian: false,
            wkb_action: 5.0,
            width_over_wkb_width: 1.0,
        };
        // A very long packet sees the full peak.
        let long = packet_averaged_transmission(&res, 1.0, 1e6, 1.0);
        assert!((long - 1.0).abs() < 1e-3, "{long}");
        // A short packet sees pi Gamma / 2 times the density at the line (in energy).
        let sigma = 5.0;
        let short = packet_averaged_transmission(&res, 1.0, sigma, 1.0);
        let sk = 1.0 / (2.0 * sigma);
        let rho_k = 1.0 / (sk * (2.0 * std::f64::consts::PI).sqrt());
        let expect = std::f64::consts::PI * res.gamma / 2.0 * rho_k / 1.0;
        assert!((short / expect - 1.0).abs() < 0.02, "{short} vs {expect}");
    }

    #[test]
    fn sweep_empty_and_parameter_names() {
        assert!(sweep(&static_config(20.0), SweepParameter::K0, &[], false).unwrap().is_empty());
        assert_eq!("omega_drive".parse::<SweepParameter>().unwrap(), SweepParameter::OmegaDrive);
        assert!("t0".parse::<SweepParameter>().is_err());
    }

    #[test]
    fn short_static_run_records_bookkeeping() {
        // Fast off-resonance run on a small grid: nearly full reflection.
        let mut c = static_config(3.0);
        c.packet.k0 = Some(0.6);
        c.grid = Some(Grid::new(-120.0, 80.0, 2048).unwrap());
        c.schedule = Some(ScheduleConfig {
            t_start: 0.0,
            phases: vec![Phase {
                name: "propagate".into(),
                end: 150.0,
                step: StepPolicy::Fixed { dt: 0.02 },
            }],
            sample_interval: 1.0,
            absorber_width: 30.0,
            convergence_window: 10.0,
            convergence_rate: 1e-4,
            convergence_residual: 1e-3,
            norm_tolerance: 1e-6,
            stop_when_converged: true,
        });
        let rep = run_scenario(&c).unwrap();
        assert_eq!(rep.status, RunStatus::Completed, "{:?}", rep.message);
        assert!(rep.bookkeeping_error < 1e-6);
        assert!(rep.transmitted_fraction < 1e-3);
        assert!(rep.reflected_fraction > 0.99);
        assert!(rep.final_time < 150.0);
        assert!(rep.samples.windows(2).all(|w| w[1].t > w[0].t));
    }
}
