use std::path::Path;
use std::process::{Command, Output};

const BARRIER: &str = r#"
[barrier]
v0 = 2.0
barrier_width = 1.6
well_width = 2.4
edge_smoothing = 0.5
"#;

fn tunnelsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tunnelsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{BARRIER}{body}")).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small static run with an explicit grid and schedule.
const SMALL_STATIC: &str = r#"
[scenario]
kind = "static"

[packet]
sigma = 3.0
k0 = 0.6

[grid]
x_min = -120.0
x_max = 80.0
n_points = 2048

[schedule]
t_start = 0.0
sample_interval = 1.0
absorber_width = 30.0
stop_when_converged = true

[[schedule.phases]]
name = "propagate"
end = 150.0
step = { kind = "fixed", dt = 0.02 }
"#;

#[test]
fn spectrum_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[packet]\nsigma = 14.0\n[spectrum]\npoints = 400\ncheck_scales = [0.5, 0.5]\n");
    let out = dir.path().join("out");
    let o = tunnelsim(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run_spectrum.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["config"]["spectrum"]["points"], 400);
    assert!(!json["result"]["resonances"].as_array().unwrap().is_empty());
    let mut rd = csv::Reader::from_path(out.join("run_spectrum.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().len(), 3);
    assert_eq!(rd.records().count(), 400);
}

#[test]
fn unknown_flag_names_the_flag() {
    let o = tunnelsim(&["spectrum", "--config", "x.toml", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("--frobnicate"), "{err}");
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = tunnelsim(&["tunnel-faster"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("tunnel-faster") && err.contains("Usage"), "{err}");
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let o = tunnelsim(&["wkb"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn invalid_parameter_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[packet]\nsigma = 14.0\n[protocol]\nomega_drive = 0.01\nt0 = 300.0\nr0 = -0.1\n",
    );
    let o = tunnelsim(&["model-dump", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("protocol.r0") && err.contains("(0, 1)"), "{err}");
}

#[test]
fn sweep_without_section_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[packet]\nsigma = 14.0\n");
    let o = tunnelsim(&["sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[sweep]"));
}

#[test]
fn scenario_writes_report_and_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_STATIC);
    let out = dir.path().join("out");
    let o = tunnelsim(&["scenario", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_scenario.json")).unwrap()).unwrap();
    let t = json["result"]["transmitted_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&t));
    assert_eq!(json["result"]["resolved"]["grid"]["n_points"], 2048);
    let mut rd = csv::Reader::from_path(out.join("run_scenario_series.csv")).unwrap();
    let width = rd.headers().unwrap().len();
    for rec in rd.records() {
        assert_eq!(rec.unwrap().len(), width);
    }
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_STATIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tunnelsim(&["propagate", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for file in ["run_propagate.json", "run_propagate_wavefunction.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn norm_drift_exits_two_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_STATIC.replace("stop_when_converged = true", "stop_when_converged = true\nnorm_tolerance = 1e-18");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = tunnelsim(&["scenario", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_scenario.json")).unwrap()).unwrap();
    assert_eq!(json["result"]["status"], "aborted");
    assert!(json["result"]["message"].as_str().unwrap().starts_with("aborted"));
}

#[test]
fn shipped_configs_resolve() {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["driven.toml", "static.toml", "sweep.toml"] {
        let cfg = configs.join(name);
        let o = tunnelsim(&["model-dump", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}
