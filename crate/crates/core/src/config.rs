//! TOML run configuration. Unknown keys are rejected; missing sections fall
//! back to the defaults documented on each field.
//!
//! ```toml
//! [barrier]
//! v0 = 2.0
//! barrier_width = 1.6
//! well_width = 2.4
//! edge_smoothing = 0.5
//!
//! [packet]
//! sigma = 14.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BarrierSpec, DriveProtocol, UnitSystem};
use crate::scenario::{self, PacketConfig, ScenarioConfig, ScenarioKind, ScheduleConfig, SweepParameter};
use crate::tdse::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub units: UnitSystem,
    pub barrier: BarrierSpec,
    /// Defaults to the tuned driven protocol (`Omega = 0.01, t0 = 300, r0 = 0.13`).
    #[serde(default = "default_protocol")]
    pub protocol: DriveProtocol,
    pub packet: PacketConfig,
    #[serde(default)]
    pub scenario: ScenarioSection,
    /// Derived from the packet and protocol when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    /// Derived from the protocol when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub transform: TransformSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
    /// Re-run scenarios with doubled grid points and halved steps.
    #[serde(default)]
    pub resolution_check: bool,
}

fn default_protocol() -> DriveProtocol {
    scenario::default_driven_config().protocol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "default_kind")]
    pub kind: ScenarioKind,
    /// Region boundaries of the unscaled barrier; barrier midpoints when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<(f64, f64)>,
    /// Also run the driven scenario with the field switched off.
    #[serde(default)]
    pub field_off_control: bool,
}

fn default_kind() -> ScenarioKind {
    ScenarioKind::Driven
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            kind: default_kind(),
            regions: None,
            field_off_control: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    /// Energy range as fractions of the barrier height.
    #[serde(default = "default_e_min")]
    pub e_min_fraction: f64,
    #[serde(default = "default_e_max")]
    pub e_max_fraction: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_segments")]
    pub segments: usize,
    /// Scales at which the scaling check is run.
    #[serde(default = "default_check_scales")]
    pub check_scales: [f64; 2],
}

fn default_e_min() -> f64 {
    1e-3
}

fn default_e_max() -> f64 {
    0.999
}

fn default_points() -> usize {
    2000
}

fn default_segments() -> usize {
    crate::scatter::DEFAULT_SEGMENTS
}

fn default_check_scales() -> [f64; 2] {
    [0.5, 0.1]
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            e_min_fraction: default_e_min(),
            e_max_fraction: default_e_max(),
            points: default_points(),
            segments: default_segments(),
            check_scales: default_check_scales(),
        }
    }
}

/// Settings of the two frame-equivalence experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    /// Protocol of the scaling-frame run (`Omega = 0.1, t0 = 20, r0 = 0.5`).
    #[serde(default = "default_scaling_protocol")]
    pub scaling_protocol: DriveProtocol,
    /// Protocol of the accelerated-frame run (`Omega = 0.1, t0 = 20, r0 = 0.1`).
    #[serde(default = "default_accel_protocol")]
    pub accel_protocol: DriveProtocol,
    #[serde(default = "default_scaling_dt")]
    pub scaling_dt: f64,
    #[serde(default = "default_accel_dt")]
    pub accel_dt: f64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

fn default_scaling_protocol() -> DriveProtocol {
    DriveProtocol {
        omega_drive: 0.1,
        t0: 20.0,
        r0: 0.5,
        field_r0: None,
        field_enabled: true,
    }
}

fn default_accel_protocol() -> DriveProtocol {
    DriveProtocol {
        r0: 0.1,
        ..default_scaling_protocol()
    }
}

fn default_scaling_dt() -> f64 {
    0.0025
}

fn default_accel_dt() -> f64 {
    1e-4
}

fn default_checkpoints() -> usize {
    6
}

impl Default for TransformSection {
    fn default() -> Self {
        TransformSection {
            scaling_protocol: default_scaling_protocol(),
            accel_protocol: default_accel_protocol(),
            scaling_dt: default_scaling_dt(),
            accel_dt: default_accel_dt(),
            checkpoints: default_checkpoints(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// File name prefix of every written report.
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_prefix() -> String {
    "run".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            prefix: default_prefix(),
        }
    }
}

fn range_check(field: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(v > lo && v < hi) {
        return Err(Error::invalid(field, format!("must lie in ({lo}, {hi}), got {v}")));
    }
    Ok(())
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "document".into()),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { path: at, reason } => Error::Config {
                path: format!("{} ({at})", path.display()),
                reason,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            path: "document".into(),
            reason: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.units.validate()?;
        self.scenario_config().validate()?;
        if self.scenario.kind == ScenarioKind::Static {
            // The protocol is unused but must still be a valid schedule.
            self.protocol.validate()?;
        }
        let s = &self.spectrum;
        range_check("spectrum.e_min_fraction", s.e_min_fraction, 0.0, 1.0)?;
        range_check("spectrum.e_max_fraction", s.e_max_fraction, s.e_min_fraction, 1.0)?;
        if s.points < 3 {
            return Err(Error::invalid("spectrum.points", format!("must be >= 3, got {}", s.points)));
        }
        if s.segments < 2000 {
            return Err(Error::invalid(
                "spectrum.segments",
                format!("must be >= 2000, got {}", s.segments),
            ));
        }
        for (i, r) in s.check_scales.iter().enumerate() {
            range_check(&format!("spectrum.check_scales[{i}]"), *r, 0.0, f64::INFINITY)?;
        }
        let t = &self.transform;
        t.scaling_protocol.validate().map_err(|e| prefix_field(e, "transform.scaling_protocol"))?;
        t.accel_protocol.validate().map_err(|e| prefix_field(e, "transform.accel_protocol"))?;
        range_check("transform.scaling_dt", t.scaling_dt, 0.0, 1.0)?;
        range_check("transform.accel_dt", t.accel_dt, 0.0, 1.0)?;
        if t.checkpoints == 0 {
            return Err(Error::invalid("transform.checkpoints", "must be >= 1"));
        }
        if let Some(sw) = &self.sweep {
            if let Some(v) = sw.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid("sweep.values", format!("must be finite, got {v}")));
            }
        }
        if self.output.prefix.is_empty() || self.output.prefix.contains(['/', '\\']) {
            return Err(Error::invalid(
                "output.prefix",
                format!("must be a plain non-empty file name, got {:?}", self.output.prefix),
            ));
        }
        Ok(())
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            kind: self.scenario.kind,
            spec: self.barrier,
            protocol: self.protocol,
            packet: self.packet,
            grid: self.grid,
            schedule: self.schedule.clone(),
            regions: self.scenario.regions,
        }
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => {
            let tail = field.strip_prefix("protocol.").unwrap_or(&field).to_string();
            Error::InvalidParameter {
                field: format!("{prefix}.{tail}"),
                reason,
            }
        }
        other => other,
    }
}
