//! Command-line dispatch: parses arguments, loads the run configuration and
//! writes the JSON and CSV reports of each subcommand.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::report::{self, format_number, numeric_rows};
use crate::scatter::{self, Resonance, ScalingCheck};
use crate::scenario::{self, ResolutionCheck, RunStatus, ScenarioKind, ScenarioReport};
use crate::tdse::WaveState;
use crate::transforms::{self, EquivalenceReport, EquivalenceSetup, EtaTrajectory};
use crate::wkb;

#[derive(Debug, Parser)]
#[command(name = "tunnelsim", version, about = "Wave packets through a shrinking, field-driven double barrier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transmission spectrum, fitted resonances and the scaling check.
    Spectrum(CommonArgs),
    /// WKB action table, minimal packet scales and the photon-assist bound.
    Wkb(CommonArgs),
    /// Propagate the configured packet and dump the final wave function.
    Propagate(CommonArgs),
    /// Scaling-frame and accelerated-frame equivalence experiments.
    VerifyTransform(CommonArgs),
    /// Full scenario with its ledgers.
    Scenario(CommonArgs),
    /// One scenario per value of the configured sweep parameter.
    Sweep(CommonArgs),
    /// Potential, schedule and resolved configuration, for plotting.
    ModelDump(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "./out")]
    pub out: PathBuf,
    /// Re-run with doubled grid points and halved steps and report the change.
    #[arg(long)]
    pub seed_check: bool,
    /// Print nothing on success.
    #[arg(long)]
    pub quiet: bool,
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Spectrum(a)
            | Command::Wkb(a)
            | Command::Propagate(a)
            | Command::VerifyTransform(a)
            | Command::Scenario(a)
            | Command::Sweep(a)
            | Command::ModelDump(a) => a,
        }
    }
}

/// Whether a subcommand finished or stopped on a numerical abort after
/// writing a partial report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Aborted,
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let common = cli.command.common().clone();
    let outcome = RunConfig::load(&common.config).and_then(|cfg| dispatch(&cli.command, &cfg, &common));
    match outcome {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::Aborted) => {
            eprintln!("aborted: partial report written to {}", common.out.display());
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical_abort() {
                2
            } else {
                1
            }
        }
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    seed_check: bool,
    quiet: bool,
}

impl Ctx<'_> {
    fn path(&self, suffix: &str) -> PathBuf {
        self.out.join(format!("{}_{suffix}", self.cfg.output.prefix))
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

pub fn dispatch(command: &Command, cfg: &RunConfig, args: &CommonArgs) -> Result<Outcome> {
    report::ensure_dir(&args.out)?;
    let ctx = Ctx {
        cfg,
        out: &args.out,
        seed_check: args.seed_check || cfg.resolution_check,
        quiet: args.quiet,
    };
    match command {
        Command::Spectrum(_) => spectrum(&ctx),
        Command::Wkb(_) => wkb_table(&ctx),
        Command::Propagate(_) => propagate(&ctx),
        Command::VerifyTransform(_) => verify_transform(&ctx),
        Command::Scenario(_) => run_scenario(&ctx),
        Command::Sweep(_) => run_sweep(&ctx),
        Command::ModelDump(_) => model_dump(&ctx),
    }
}

#[derive(Serialize)]
struct SpectrumOutput {
    points: usize,
    e_min: f64,
    e_max: f64,
    barrier_top: f64,
    resonances: Vec<Resonance>,
    well_levels: Vec<f64>,
    scaling_checks: Vec<ScalingCheck>,
}

fn spectrum(ctx: &Ctx) -> Result<Outcome> {
    let spec = ctx.cfg.barrier;
    let s = &ctx.cfg.spectrum;
    let top = spec.top();
    let (e_min, e_max) = (s.e_min_fraction * top, s.e_max_fraction * top);
    let energies = scatter::energy_grid(e_min, e_max, s.points);
    let result = scatter::transmission_spectrum(&spec, &energies, s.segments)?;
    let checks = s
        .check_scales
        .iter()
        .map(|&r| scatter::scaled_spectrum_check(&spec, r, s.points, s.segments))
        .collect::<Result<Vec<_>>>()?;
    for r in &result.resonances {
        ctx.say(format!(
            "resonance E_R = {:.10} Gamma = {:.6e} t_peak = {:.6}",
            r.e_r, r.gamma, r.t_peak
        ));
    }
    for c in &checks {
        ctx.say(format!("scaling check r = {}: max deviation {:.3e}", c.r, c.max_deviation()));
    }
    let out = SpectrumOutput {
        points: energies.len(),
        e_min,
        e_max,
        barrier_top: top,
        resonances: result.resonances.clone(),
        well_levels: scatter::well_levels(&spec),
        scaling_checks: checks,
    };
    report::write_json(&ctx.path("spectrum.json"), "spectrum", ctx.cfg, &out)?;
    report::write_csv(&ctx.path("spectrum.csv"), &report::SPECTRUM_HEADER, &report::spectrum_rows(&result))?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct ResonanceScales {
    resonance: Resonance,
    /// `(length, duration)` for the unscaled barrier.
    unscaled: (f64, f64),
    /// Same at the scale floor of the protocol.
    at_floor: (f64, f64),
}

#[derive(Serialize)]
struct WkbOutput {
    floor_scale: f64,
    resonances: Vec<ResonanceScales>,
    photon_assist_w: f64,
    photon_assist_log: Option<f64>,
    photon_assist_bound: Option<f64>,
    photon_assist_error: Option<String>,
}

const WKB_HEADER: [&str; 4] = ["energy", "action", "single_barrier", "two_barrier"];

fn wkb_table(ctx: &Ctx) -> Result<Outcome> {
    let spec = ctx.cfg.barrier;
    let s = &ctx.cfg.spectrum;
    let top = spec.top();
    let energies = scatter::energy_grid(s.e_min_fraction * top, s.e_max_fraction * top, s.points);
    let mut rows = Vec::with_capacity(energies.len());
    for &e in &energies {
        let a = wkb::action_exponent(&spec, e)?;
        rows.push(vec![e, a, wkb::wkb_transmission(a), wkb::wkb_double_transmission(a)]);
    }
    let p = ctx.cfg.protocol;
    let floor = p.scale(0.0).r;
    let resonances = scatter::resonances_below_top(&spec, s.points, s.segments)?
        .into_iter()
        .map(|r| ResonanceScales {
            resonance: r,
            unscaled: wkb::min_packet_scales(r.e_r, r.wkb_action, 1.0),
            at_floor: wkb::min_packet_scales(r.e_r, r.wkb_action, floor),
        })
        .collect::<Vec<_>>();
    let w = transforms::rescaled_equation_params(&p).photon_assist_w(spec.v0);
    let (log, err) = match wkb::photon_assist_log(spec.v0, p.omega_drive, w) {
        Ok(l) => (Some(l), None),
        Err(e) => (None, Some(e.to_string())),
    };
    for r in &resonances {
        ctx.say(format!(
            "E_R = {:.6}: A = {:.4}, L0 = {:.4e}, tau0 = {:.4e} (floor r = {:.4}: {:.4e}, {:.4e})",
            r.resonance.e_r, r.resonance.wkb_action, r.unscaled.0, r.unscaled.1, floor, r.at_floor.0, r.at_floor.1
        ));
    }
    ctx.say(format!("photon assist: w = {w:.4}, ln P = {}", log.map_or("n/a".into(), |l| format!("{l:.4}"))));
    let out = WkbOutput {
        floor_scale: floor,
        resonances,
        photon_assist_w: w,
        photon_assist_log: log,
        photon_assist_bound: log.map(f64::exp),
        photon_assist_error: err,
    };
    report::write_json(&ctx.path("wkb.json"), "wkb", ctx.cfg, &out)?;
    report::write_csv(&ctx.path("wkb.csv"), &WKB_HEADER, &numeric_rows(rows))?;
    Ok(Outcome::Done)
}

const WAVE_HEADER: [&str; 4] = ["x", "re", "im", "density"];

fn wave_rows(psi: &WaveState) -> Vec<Vec<String>> {
    numeric_rows(
        psi.psi
            .iter()
            .enumerate()
            .map(|(j, v)| vec![psi.grid.x(j), v.re, v.im, v.norm_sqr()]),
    )
}

fn status_outcome(status: RunStatus) -> Outcome {
    match status {
        RunStatus::Aborted => Outcome::Aborted,
        _ => Outcome::Done,
    }
}

fn summary(ctx: &Ctx, label: &str, rep: &ScenarioReport) {
    ctx.say(format!(
        "{label}: {:?}, T = {:.6}, R = {:.6}, max exp(-2A) = {:.3e}, detuning/Gamma = {:.3}",
        rep.status,
        rep.transmitted_fraction,
        rep.reflected_fraction,
        rep.max_opacity_bound,
        rep.resonance_match.detuning_over_gamma
    ));
    if let Some(m) = &rep.message {
        ctx.say(format!("{label}: {m}"));
    }
    for w in &rep.warnings {
        ctx.say(format!("{label}: warning: {w}"));
    }
}

fn propagate(ctx: &Ctx) -> Result<Outcome> {
    let resolved = ctx.cfg.scenario_config().resolve()?;
    let (rep, psi) = resolved.run_with_state()?;
    let stem = format!("{}_propagate", ctx.cfg.output.prefix);
    report::write_scenario(ctx.out, &stem, ctx.cfg, &rep)?;
    report::write_csv(&ctx.path("propagate_wavefunction.csv"), &WAVE_HEADER, &wave_rows(&psi))?;
    summary(ctx, "propagate", &rep);
    Ok(status_outcome(rep.status))
}

#[derive(Serialize)]
struct ControlSummary {
    status: RunStatus,
    transmitted_fraction: f64,
    max_opacity_bound: f64,
    /// Transmission stays within ten times the driven run's WKB floor.
    within_floor: bool,
}

#[derive(Serialize)]
struct ScenarioOutput<'a> {
    resolved: &'a scenario::ResolvedScenario,
    conditions_hold: bool,
    #[serde(flatten)]
    report: &'a ScenarioReport,
    resolution_check: Option<ResolutionCheck>,
    field_off_control: Option<ControlSummary>,
}

fn run_scenario(ctx: &Ctx) -> Result<Outcome> {
    let config = ctx.cfg.scenario_config();
    let resolved = config.resolve()?;
    let rep = resolved.run()?;
    summary(ctx, "scenario", &rep);
    let mut check = None;
    let mut control = None;
    if rep.status != RunStatus::Aborted {
        if ctx.seed_check {
            let c = scenario::resolution_check(&resolved, &rep)?;
            ctx.say(format!(
                "resolution check: T = {:.6} -> {:.6} ({:.2e} relative)",
                c.base, c.refined, c.relative_change
            ));
            check = Some(c);
        }
        if ctx.cfg.scenario.field_off_control && config.kind == ScenarioKind::Driven {
            let c = config.field_off_control(&resolved).resolve()?.run()?;
            ctx.say(format!(
                "field-off control: T = {:.3e}, bound {:.3e}",
                c.transmitted_fraction,
                10.0 * rep.max_opacity_bound
            ));
            control = Some(ControlSummary {
                status: c.status,
                transmitted_fraction: c.transmitted_fraction,
                max_opacity_bound: c.max_opacity_bound,
                within_floor: c.transmitted_fraction <= 10.0 * rep.max_opacity_bound,
            });
        }
    }
    let out = ScenarioOutput {
        resolved: &resolved,
        conditions_hold: rep.conditions_hold(),
        report: &rep,
        resolution_check: check,
        field_off_control: control,
    };
    let stem = format!("{}_scenario", ctx.cfg.output.prefix);
    report::write_json(&ctx.out.join(format!("{stem}.json")), "scenario", ctx.cfg, &out)?;
    report::write_csv(
        &ctx.out.join(format!("{stem}_series.csv")),
        &report::SAMPLE_HEADER,
        &report::sample_rows(&rep.samples),
    )?;
    Ok(status_outcome(rep.status))
}

#[derive(Serialize)]
struct SweepOutput {
    parameter: scenario::SweepParameter,
    rows: Vec<scenario::SweepRow>,
    refined_rows: Option<Vec<scenario::SweepRow>>,
}

fn run_sweep(ctx: &Ctx) -> Result<Outcome> {
    let Some(sw) = &ctx.cfg.sweep else {
        return Err(Error::invalid("sweep", "the sweep subcommand needs a [sweep] section"));
    };
    let base = ctx.cfg.scenario_config();
    let rows = scenario::sweep(&base, sw.parameter, &sw.values, false)?;
    for r in &rows {
        ctx.say(format!(
            "{} = {}: T = {}",
            serde_json::to_value(sw.parameter).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            r.value,
            r.transmitted_fraction.map_or_else(|| "failed".into(), |t| format!("{t:.6}"))
        ));
    }
    let refined_rows = if ctx.seed_check {
        Some(scenario::sweep(&base, sw.parameter, &sw.values, true)?)
    } else {
        None
    };
    let aborted = rows.iter().any(|r| r.status == Some(RunStatus::Aborted));
    report::write_csv(&ctx.path("sweep.csv"), &report::SWEEP_HEADER, &report::sweep_rows(&rows))?;
    if let Some(rr) = &refined_rows {
        report::write_csv(&ctx.path("sweep_refined.csv"), &report::SWEEP_HEADER, &report::sweep_rows(rr))?;
    }
    let out = SweepOutput {
        parameter: sw.parameter,
        rows,
        refined_rows,
    };
    report::write_json(&ctx.path("sweep.json"), "sweep", ctx.cfg, &out)?;
    Ok(if aborted { Outcome::Aborted } else { Outcome::Done })
}

#[derive(Serialize)]
struct PlateauCheck {
    r0: f64,
    eta_dot: f64,
    expected: f64,
    relative_error: f64,
}

#[derive(Serialize)]
struct TransformOutput {
    scaling_setup: EquivalenceSetup,
    scaling: EquivalenceReport,
    accel_setup: EquivalenceSetup,
    accel: EquivalenceReport,
    plateau: PlateauCheck,
}

const TRANSFORM_HEADER: [&str; 3] = ["experiment", "t", "l2_deviation"];

fn verify_transform(ctx: &Ctx) -> Result<Outcome> {
    let t = &ctx.cfg.transform;
    let spec = ctx.cfg.barrier;
    let scaling_setup = EquivalenceSetup::scaling(spec, t.scaling_protocol, t.scaling_dt)?;
    let accel_setup = EquivalenceSetup::acceleration(spec, t.accel_protocol, t.accel_dt)?;
    let scaling = transforms::scale_frame_equivalence(&scaling_setup, t.checkpoints)?;
    let accel = transforms::accel_frame_equivalence(&accel_setup, t.checkpoints)?;
    let plateau = plateau_check(&t.accel_protocol)?;
    ctx.say(format!(
        "scaling frame: max L2 deviation {:.3e}",
        scaling.max_l2_deviation
    ));
    ctx.say(format!("accelerated frame: max L2 deviation {:.3e}", accel.max_l2_deviation));
    ctx.say(format!(
        "plateau velocity {:.10} vs 1/r0 = {:.10} ({:.2e} relative)",
        plateau.eta_dot, plateau.expected, plateau.relative_error
    ));
    let mut rows = Vec::new();
    for rep in [&scaling, &accel] {
        for (tt, d) in rep.times.iter().zip(&rep.l2_deviation) {
            rows.push(vec![rep.label.clone(), format_number(*tt), format_number(*d)]);
        }
    }
    report::write_csv(&ctx.path("transform.csv"), &TRANSFORM_HEADER, &rows)?;
    let out = TransformOutput {
        scaling_setup,
        scaling,
        accel_setup,
        accel,
        plateau,
    };
    report::write_json(&ctx.path("transform.json"), "verify-transform", ctx.cfg, &out)?;
    Ok(Outcome::Done)
}

fn plateau_check(p: &crate::model::DriveProtocol) -> Result<PlateauCheck> {
    let history = EtaTrajectory::new(p, -p.t0, 0.0)?;
    let eta_dot = history.frame(0.0)?.eta_dot;
    let expected = 1.0 / p.pulse_r0();
    Ok(PlateauCheck {
        r0: p.r0,
        eta_dot,
        expected,
        relative_error: (eta_dot - expected).abs() / expected,
    })
}

const POTENTIAL_HEADER: [&str; 3] = ["x", "potential", "potential_at_floor"];
const SCHEDULE_HEADER: [&str; 6] = ["t", "r", "r_dot", "field", "eta", "eta_dot"];
const DUMP_POINTS: usize = 4001;

#[derive(Serialize)]
struct ModelOutput<'a> {
    resolved: &'a scenario::ResolvedScenario,
    barrier_top: f64,
    support: (f64, f64),
    well: (f64, f64),
    t1: f64,
    pulse_width: f64,
    max_relative_rate: f64,
}

fn model_dump(ctx: &Ctx) -> Result<Outcome> {
    let spec = ctx.cfg.barrier;
    let p = ctx.cfg.protocol;
    let floor = p.scale(0.0).r;
    let (lo, hi) = spec.support();
    let pad = 0.1 * (hi - lo);
    let span = |a: f64, b: f64| (0..DUMP_POINTS).map(move |i| a + (b - a) * i as f64 / (DUMP_POINTS - 1) as f64);
    let mut pot = Vec::with_capacity(DUMP_POINTS);
    for x in span(lo - pad, hi + pad) {
        pot.push(vec![x, spec.potential(x), spec.scaled_potential(floor, x)?]);
    }
    let reach = p.t0 + 3.0 / p.omega_drive;
    let sched = span(-reach, reach).map(|t| {
        let s = p.scale(t);
        let (eta, eta_dot) = if t <= 0.0 {
            transforms::eta_closed_form(&p, t)
        } else {
            transforms::eta_braking_closed_form(&p, t)
        };
        vec![t, s.r, s.r_dot, p.field(t), eta, eta_dot]
    });
    let resolved = ctx.cfg.scenario_config().resolve()?;
    report::write_csv(&ctx.path("potential.csv"), &POTENTIAL_HEADER, &numeric_rows(pot))?;
    report::write_csv(&ctx.path("schedule.csv"), &SCHEDULE_HEADER, &numeric_rows(sched))?;
    let out = ModelOutput {
        resolved: &resolved,
        barrier_top: spec.top(),
        support: (lo, hi),
        well: spec.well(),
        t1: p.t1(),
        pulse_width: p.pulse_width(),
        max_relative_rate: p.max_relative_rate(),
    };
    report::write_json(&ctx.path("model.json"), "model-dump", ctx.cfg, &out)?;
    ctx.say(format!(
        "grid [{:.2}, {:.2}] with {} points, packet k0 = {:.6}, sigma = {}",
        resolved.grid.x_min, resolved.grid.x_max, resolved.grid.n_points, resolved.packet.k0, resolved.packet.sigma
    ));
    Ok(Outcome::Done)
}
