//! Acceptance suite: one pass/fail line per criterion, tolerances as pinned
//! below. Runs as a plain binary (`harness = false`) so the expensive
//! scenarios are shared between criteria and run once, in order.
//!
//! `ACCEPTANCE_ONLY=7,8` restricts the run to the listed criteria.

use std::time::Instant;

use num_complex::Complex64;
use tunnelsim::config::TransformSection;
use tunnelsim::scatter::{self, BarrierScattering, Piecewise};
use tunnelsim::scenario::{
    self, default_barrier, default_driven_config, PacketConfig, ResolvedScenario, RunStatus, ScenarioConfig,
    ScenarioKind, ScenarioReport, SweepParameter,
};
use tunnelsim::tdse::{self, FreeSpace, Grid, Propagator, StepPolicy};
use tunnelsim::transforms::{self, EquivalenceSetup, EtaTrajectory};
use tunnelsim::wkb;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn criterion_1() -> Outcome {
    let (v0, d) = (5.0, 2.0);
    let barrier = Piecewise::new(0.0, vec![(d, Complex64::new(v0, 0.0))]);
    let mut worst = 0.0f64;
    for i in 1..=100 {
        let e = v0 * i as f64 / 101.0;
        let exact = scatter::rectangular_transmission(v0, d, e);
        worst = worst.max(rel(barrier.transmit(e).0, exact));
    }
    outcome(worst <= 1e-9, format!("max relative error {worst:.2e} (tol 1e-9)"))
}

fn criterion_2() -> Outcome {
    let spec = default_barrier();
    let res = match scatter::resonances_below_top(&spec, 2000, scatter::DEFAULT_SEGMENTS) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("resonance search failed: {e}")),
    };
    let Some(r) = res.first() else {
        return outcome(false, "no resonance found".into());
    };
    let opacity = wkb::wkb_double_transmission(r.wkb_action);
    let ratio = r.width_over_wkb_width;
    let pass = opacity <= 1e-4 && r.t_peak >= 0.999 && r.fit_residual <= 0.1 && (0.2..=5.0).contains(&ratio);
    outcome(
        pass,
        format!(
            "E_R = {:.7}, t_peak = {:.6}, residual = {:.3}, Gamma/(E_R e^-A) = {:.3}, exp(-2A) = {:.2e}",
            r.e_r, r.t_peak, r.fit_residual, ratio, opacity
        ),
    )
}

fn criterion_3() -> Outcome {
    let spec = default_barrier();
    let mut worst = 0.0f64;
    for r in [0.5, 0.1] {
        match scatter::scaled_spectrum_check(&spec, r, 2000, scatter::DEFAULT_SEGMENTS) {
            Ok(c) => worst = worst.max(c.max_deviation()),
            Err(e) => return outcome(false, format!("r = {r}: {e}")),
        }
    }
    outcome(worst <= 1e-6, format!("max relative deviation {worst:.2e} (tol 1e-6)"))
}

fn criterion_4() -> Outcome {
    // Free spreading and norm over 10^4 fixed steps.
    let grid = Grid::new(-200.0, 200.0, 4096).unwrap();
    let sigma = 3.0;
    let mut psi = tdse::make_gaussian_packet(&grid, -50.0, 1.0, sigma, 0.0).unwrap();
    let mut prop = Propagator::new(grid, StepPolicy::Fixed { dt: 0.01 }, None).unwrap();
    let norm0 = psi.norm();
    let mut spread_err = 0.0f64;
    for chunk in 1..=10 {
        let t = chunk as f64 * 10.0;
        prop.advance(&mut psi, &FreeSpace, t).unwrap();
        let expected = sigma * (1.0 + (t / (2.0 * sigma * sigma)).powi(2)).sqrt();
        spread_err = spread_err.max(rel(psi.position_moments().1, expected));
    }
    let norm_err = (psi.norm() - norm0).abs();
    let steps = prop.stats.steps;

    // Narrow-band packet through the static barrier against the spectrum.
    let spec = default_barrier();
    let (k0, width) = ((2.0f64 * 1.8).sqrt(), 40.0);
    let mut packet = PacketConfig::new(width);
    packet.k0 = Some(k0);
    let config = ScenarioConfig {
        kind: ScenarioKind::Static,
        spec,
        protocol: default_driven_config().protocol,
        packet,
        grid: None,
        schedule: None,
        regions: None,
    };
    let dynamic = match scenario::run_static_resonance(&config) {
        Ok(r) => r.transmitted_fraction,
        Err(e) => return outcome(false, format!("static run failed: {e}")),
    };
    let solver = BarrierScattering::new(&spec, scatter::DEFAULT_SEGMENTS).unwrap();
    let sk = 1.0 / (2.0 * width);
    let n = 4001;
    let (lo, hi) = (k0 - 8.0 * sk, k0 + 8.0 * sk);
    let h = (hi - lo) / (n - 1) as f64;
    let oracle: f64 = (0..n)
        .map(|i| {
            let k = lo + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let density = (-(k - k0).powi(2) / (2.0 * sk * sk)).exp() / (sk * (2.0 * std::f64::consts::PI).sqrt());
            w * h * density * solver.transmission(0.5 * k * k)
        })
        .sum();
    let band_err = (dynamic - oracle).abs();
    let pass = spread_err <= 1e-5 && steps >= 10_000 && norm_err <= 1e-10 && band_err <= 1e-2;
    outcome(
        pass,
        format!(
            "spreading {spread_err:.2e} (tol 1e-5), norm drift {norm_err:.2e} over {steps} steps (tol 1e-10), \
             T = {dynamic:.5} vs spectrum {oracle:.5} (tol 1e-2)"
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = TransformSection::default();
    let setup = EquivalenceSetup::scaling(default_barrier(), t.scaling_protocol, t.scaling_dt).unwrap();
    match transforms::scale_frame_equivalence(&setup, t.checkpoints) {
        Ok(r) => outcome(
            r.max_l2_deviation <= 1e-5,
            format!("max L2 deviation {:.2e} over t in [{}, {}] (tol 1e-5)", r.max_l2_deviation, setup.t_start, setup.t_end),
        ),
        Err(e) => outcome(false, format!("failed: {e}")),
    }
}

fn criterion_6() -> Outcome {
    let t = TransformSection::default();
    let p = t.accel_protocol;
    let setup = EquivalenceSetup::acceleration(default_barrier(), p, t.accel_dt).unwrap();
    let r = match transforms::accel_frame_equivalence(&setup, t.checkpoints) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("failed: {e}")),
    };
    let eta_dot = EtaTrajectory::new(&p, -p.t0, 0.0).unwrap().frame(0.0).unwrap().eta_dot;
    let plateau = rel(eta_dot, 1.0 / p.r0);
    outcome(
        r.max_l2_deviation <= 1e-5 && plateau <= 1e-4,
        format!(
            "max L2 deviation {:.2e} (tol 1e-5), plateau velocity {:.8} vs 1/r0 = {:.8}: {plateau:.2e} (tol 1e-4)",
            r.max_l2_deviation,
            eta_dot,
            1.0 / p.r0
        ),
    )
}

fn static_config(sigma: f64, resonant: bool, detuning: f64) -> ScenarioConfig {
    let mut packet = PacketConfig::new(sigma);
    packet.resonant = resonant;
    packet.detuning_gammas = detuning;
    ScenarioConfig {
        kind: ScenarioKind::Static,
        spec: default_barrier(),
        protocol: default_driven_config().protocol,
        packet,
        grid: None,
        schedule: None,
        regions: None,
    }
}

struct Run {
    resolved: ResolvedScenario,
    report: ScenarioReport,
}

fn run(config: &ScenarioConfig) -> tunnelsim::Result<Run> {
    let resolved = config.resolve()?;
    let report = resolved.run()?;
    Ok(Run { resolved, report })
}

struct StaticRuns {
    long: Run,
    short: Run,
    detuned: Run,
}

fn static_runs() -> tunnelsim::Result<StaticRuns> {
    let spec = default_barrier();
    let target = scatter::resonances_below_top(&spec, 2000, scatter::DEFAULT_SEGMENTS)?[0];
    let (l0, _) = wkb::min_packet_scales(target.e_r, target.wkb_action, 1.0);
    Ok(StaticRuns {
        long: run(&static_config(1.3 * l0, true, 0.0))?,
        short: run(&static_config(l0 / 100.0, false, 0.0))?,
        detuned: run(&static_config(1.3 * l0, true, 20.0))?,
    })
}

fn bw_oracle(r: &Run) -> f64 {
    let p = &r.resolved.packet;
    scenario::packet_averaged_transmission(&p.target, p.k0, p.sigma, 1.0)
}

fn criterion_7(runs: &tunnelsim::Result<StaticRuns>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("static runs failed: {e}")),
    };
    let t_long = runs.long.report.transmitted_fraction;
    let t_short = runs.short.report.transmitted_fraction;
    let t_det = runs.detuned.report.transmitted_fraction;
    let mut worst_oracle = 1.0f64;
    let mut oracle_text = Vec::new();
    for (name, r) in [("long", &runs.long), ("short", &runs.short), ("detuned", &runs.detuned)] {
        let o = bw_oracle(r);
        let t = r.report.transmitted_fraction;
        let f = (t / o).max(o / t);
        worst_oracle = worst_oracle.max(f);
        oracle_text.push(format!("{name} {t:.4e}/{o:.4e}"));
    }
    let completed = [&runs.long, &runs.short, &runs.detuned]
        .iter()
        .all(|r| r.report.status == RunStatus::Completed);
    let pass = completed
        && t_long >= 0.5
        && t_long >= 20.0 * t_short
        && t_long >= 100.0 * t_det
        && worst_oracle <= 2.0;
    outcome(
        pass,
        format!(
            "T(sigma = {:.1}) = {t_long:.4} (>= 0.5), short reduction {:.1}x (>= 20), detuned reduction {:.1}x (>= 100), \
             dynamics/Breit-Wigner [{}] worst factor {worst_oracle:.2} (<= 2)",
            runs.long.resolved.packet.sigma,
            t_long / t_short,
            t_long / t_det,
            oracle_text.join(", ")
        ),
    )
}

struct DrivenRuns {
    tuned: Run,
    control: ScenarioReport,
}

fn driven_runs() -> tunnelsim::Result<DrivenRuns> {
    let config = default_driven_config();
    let tuned = run(&config)?;
    let control = config.field_off_control(&tuned.resolved).resolve()?.run()?;
    Ok(DrivenRuns { tuned, control })
}

fn criterion_8(runs: &tunnelsim::Result<DrivenRuns>) -> Outcome {
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("driven runs failed: {e}")),
    };
    let rep = &runs.tuned.report;
    let Some(ad) = &rep.adiabaticity else {
        return outcome(false, "no adiabaticity ledger".into());
    };
    let photon = rep.photon_assist_bound.unwrap_or(f64::INFINITY);
    let c = &runs.control;
    let pass = rep.status == RunStatus::Completed
        && rep.transmitted_fraction >= 0.1
        && rep.max_opacity_bound <= 1e-4
        && ad.max_relative_rate <= ad.omega_drive
        && ad.omega_drive < ad.intrinsic_omega
        && photon <= 1e-3 * rep.transmitted_fraction
        && c.transmitted_fraction <= 10.0 * rep.max_opacity_bound;
    outcome(
        pass,
        format!(
            "T = {:.4} (>= 0.1), max exp(-2A) = {:.2e} (<= 1e-4), max|r'/r| = {:.4} <= Omega = {} < omega = {}, \
             photon-assist {:.1e} (<= 1e-3 T), field-off T = {:.2e} (<= {:.2e}; its own centre-energy floor {:.2e})",
            rep.transmitted_fraction,
            rep.max_opacity_bound,
            ad.max_relative_rate,
            ad.omega_drive,
            ad.intrinsic_omega,
            photon,
            c.transmitted_fraction,
            10.0 * rep.max_opacity_bound,
            c.max_opacity_bound
        ),
    )
}

fn mistuned_values() -> Vec<f64> {
    let r0 = default_driven_config().protocol.r0;
    vec![0.9 * r0, 1.1 * r0]
}

fn criterion_9(driven: &tunnelsim::Result<DrivenRuns>, rows: &tunnelsim::Result<Vec<scenario::SweepRow>>) -> Outcome {
    let (driven, rows) = match (driven, rows) {
        (Ok(d), Ok(r)) => (d, r),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("runs failed: {e}")),
    };
    let peak = driven.tuned.report.transmitted_fraction;
    let mut pass = rows.len() == 2;
    let mut text = Vec::new();
    for r in rows {
        match r.transmitted_fraction {
            Some(t) => {
                pass &= t * 10.0 <= peak;
                text.push(format!("r0 = {:.4}: T = {t:.3e} ({:.0}x)", r.value, peak / t));
            }
            None => {
                pass = false;
                text.push(format!("r0 = {:.4}: {}", r.value, r.error.clone().unwrap_or_default()));
            }
        }
    }
    outcome(pass, format!("tuned T = {peak:.4}; {} (each >= 10x)", text.join(", ")))
}

fn criterion_10(
    statics: &tunnelsim::Result<StaticRuns>,
    driven: &tunnelsim::Result<DrivenRuns>,
    rows: &tunnelsim::Result<Vec<scenario::SweepRow>>,
) -> Outcome {
    let (statics, driven, rows) = match (statics, driven, rows) {
        (Ok(s), Ok(d), Ok(r)) => (s, d, r),
        _ => return outcome(false, "base runs failed".into()),
    };
    let mut changes: Vec<(String, f64)> = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in [
        ("static long", &statics.long),
        ("static short", &statics.short),
        ("static detuned", &statics.detuned),
        ("driven tuned", &driven.tuned),
    ] {
        match scenario::resolution_check(&r.resolved, &r.report) {
            Ok(c) => changes.push((name.into(), c.relative_change)),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    match scenario::sweep(&default_driven_config(), SweepParameter::R0, &mistuned_values(), true) {
        Ok(fine) => {
            for (base, f) in rows.iter().zip(&fine) {
                match (base.transmitted_fraction, f.transmitted_fraction) {
                    (Some(a), Some(b)) => changes.push((format!("r0 = {:.4}", base.value), rel(b, a))),
                    _ => failures.push(format!("r0 = {:.4}: refined run failed", base.value)),
                }
            }
        }
        Err(e) => failures.push(format!("refined sweep: {e}")),
    }
    let worst = changes.iter().map(|c| c.1).fold(0.0, f64::max);
    let text: Vec<String> = changes.iter().map(|(n, c)| format!("{n} {c:.2e}")).collect();
    outcome(
        failures.is_empty() && worst <= 0.05,
        format!("relative changes [{}] (tol 5e-2){}", text.join(", "), if failures.is_empty() {
            String::new()
        } else {
            format!("; failures: {}", failures.join("; "))
        }),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().map_or(true, |o| o.contains(&n));
    let mut failed = Vec::new();
    let mut report = |n: u32, name: &str, start: Instant, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {verdict} {name}: {} [{:.1} s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    };
    let simple: [(u32, &str, fn() -> Outcome); 6] = [
        (1, "transfer-matrix exactness", criterion_1),
        (2, "Wigner resonance", criterion_2),
        (3, "scaling symmetry", criterion_3),
        (4, "propagator validity", criterion_4),
        (5, "scaling-frame equivalence", criterion_5),
        (6, "accelerated-frame equivalence", criterion_6),
    ];
    for (n, name, f) in simple {
        if wanted(n) {
            let start = Instant::now();
            report(n, name, start, f());
        }
    }
    let need_static = wanted(7) || wanted(10);
    let need_driven = wanted(8) || wanted(9) || wanted(10);
    let start = Instant::now();
    let statics = if need_static {
        static_runs()
    } else {
        Err(tunnelsim::Error::invalid("static", "not requested"))
    };
    if wanted(7) {
        report(7, "static resonant transmission", start, criterion_7(&statics));
    }
    let start = Instant::now();
    let driven = if need_driven {
        driven_runs()
    } else {
        Err(tunnelsim::Error::invalid("driven", "not requested"))
    };
    if wanted(8) {
        report(8, "driven end-to-end", start, criterion_8(&driven));
    }
    let start = Instant::now();
    let rows = if wanted(9) || wanted(10) {
        scenario::sweep(&default_driven_config(), SweepParameter::R0, &mistuned_values(), false)
    } else {
        Ok(Vec::new())
    };
    if wanted(9) {
        report(9, "sensitivity to r0", start, criterion_9(&driven, &rows));
    }
    if wanted(10) {
        let start = Instant::now();
        report(10, "resolution robustness", start, criterion_10(&statics, &driven, &rows));
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
