//! Scenario files (TOML) and `key=value` overrides.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::{Path as FsPath, PathBuf};

use crate::autopilot::AutopilotGains;
use crate::error::{Error, Result};
use crate::guidance::GuidanceParams;
use crate::model::VehicleParams;
use crate::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub dt: f64,
    pub t_end: f64,
    /// Seed for the optional initial-position perturbation.
    pub seed: u64,
    /// Keep every k-th step in the log.
    pub record_every: usize,
    /// Inertial ocean current `V_c` [m/s].
    pub current: [f64; 3],
    pub path: Path,
    /// Initial value of the path parameter.
    pub xi0: f64,
    pub guidance: GuidanceParams,
    pub autopilot: AutopilotGains,
    pub reference_filter: ReferenceFilter,
    /// Inline vehicle parameters; ignored when `vehicle_file` is set.
    pub vehicle: VehicleParams,
    /// TOML file with vehicle parameters, relative to the scenario file.
    pub vehicle_file: Option<PathBuf>,
    pub formation: Formation,
    pub initial: Initial,
    /// Abort once any |θ| exceeds π/2 minus this margin [rad].
    pub pitch_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceFilter {
    /// Natural frequency of the critically damped second-order filter [rad/s].
    pub omega: f64,
}

impl Default for ReferenceFilter {
    fn default() -> Self {
        Self { omega: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Formation {
    /// Desired positions relative to the barycenter, path frame. One entry
    /// per vehicle; they must sum to zero.
    pub offsets: Vec<[f64; 3]>,
    /// Safety distance reported by the metrics [m].
    pub d_min: f64,
}

impl Default for Formation {
    fn default() -> Self {
        Self {
            offsets: vec![[0.0, 10.0, 5.0], [0.0, -10.0, 5.0], [0.0, 0.0, -10.0]],
            d_min: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Initial {
    /// Initial barycenter, inertial frame.
    pub p0: [f64; 3],
    /// Explicit initial positions. When absent the vehicles start at the
    /// negated formation offsets around `p0`.
    pub positions: Option<Vec<[f64; 3]>>,
    /// Uniform random offset added to each position coordinate [m].
    pub perturbation: f64,
    /// Initial surge speed relative to the water [m/s].
    pub u0: f64,
    /// Initial pitch and yaw offsets from the path tangent [rad].
    pub theta_offset: f64,
    pub psi_offset: f64,
}

impl Default for Initial {
    fn default() -> Self {
        Self {
            p0: [0.0; 3],
            positions: None,
            perturbation: 0.0,
            u0: 0.0,
            theta_offset: 0.0,
            psi_offset: 0.0,
        }
    }
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "spiral_three".into(),
            dt: 0.01,
            t_end: 150.0,
            seed: 0,
            record_every: 1,
            current: [0.0, 0.25, 0.05],
            path: Path::spiral_default(),
            xi0: 0.0,
            guidance: GuidanceParams::default(),
            autopilot: AutopilotGains::default(),
            reference_filter: ReferenceFilter::default(),
            vehicle: VehicleParams::surrogate(),
            vehicle_file: None,
            formation: Formation::default(),
            initial: Initial::default(),
            pitch_margin: 5f64.to_radians(),
        }
    }
}

impl Scenario {
    pub fn n_vehicles(&self) -> usize {
        self.formation.offsets.len()
    }

    pub fn current_vec(&self) -> Vector3<f64> {
        Vector3::from(self.current)
    }

    pub fn offsets(&self) -> Vec<Vector3<f64>> {
        self.formation.offsets.iter().map(|o| Vector3::from(*o)).collect()
    }

    /// Parses TOML text; relative `vehicle_file` paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: Option<&FsPath>, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut sc: Scenario = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        sc.resolve_vehicle_file(base)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_file(path: &FsPath, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent(), overrides)
    }

    /// Defaults plus overrides, no file.
    pub fn with_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_toml_str("", None, overrides)
    }

    fn resolve_vehicle_file(&mut self, base: Option<&FsPath>) -> Result<()> {
        if let Some(f) = &self.vehicle_file {
            let full = match base {
                Some(b) if f.is_relative() => b.join(f),
                _ => f.clone(),
            };
            let text = std::fs::read_to_string(&full)
                .map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
            self.vehicle = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
            self.vehicle_file = Some(full);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) || self.t_end < self.dt {
            return Err(Error::Config(format!("t_end = {} must be at least dt", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if self.current.iter().any(|c| !c.is_finite()) || !self.xi0.is_finite() {
            return Err(Error::Config("current and xi0 must be finite".into()));
        }
        if !(self.reference_filter.omega > 0.0 && self.reference_filter.omega.is_finite()) {
            return Err(Error::Config("reference_filter.omega must be positive".into()));
        }
        if !(self.pitch_margin > 0.0 && self.pitch_margin < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("pitch_margin must be in (0, pi/2)".into()));
        }
        self.path.validate()?;
        self.guidance.validate()?;
        self.autopilot.validate()?;
        self.vehicle.validate()?;

        let n = self.n_vehicles();
        if n == 0 {
            return Err(Error::Config("formation.offsets must list at least one vehicle".into()));
        }
        let offs = self.offsets();
        if offs.iter().any(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("formation offsets must be finite".into()));
        }
        let sum: Vector3<f64> = offs.iter().sum();
        let scale = offs.iter().map(|o| o.norm()).fold(1.0, f64::max);
        if sum.norm() > 1e-9 * scale {
            return Err(Error::Config(format!(
                "formation offsets must sum to zero (sum = [{:.3}, {:.3}, {:.3}])",
                sum[0], sum[1], sum[2]
            )));
        }
        if let Some(p) = &self.initial.positions {
            if p.len() != n {
                return Err(Error::Config(format!(
                    "initial.positions has {} entries, formation has {n}",
                    p.len()
                )));
            }
        }
        if !(self.initial.perturbation >= 0.0) {
            return Err(Error::Config("initial.perturbation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Applies `a.b.c=value`. The value is parsed as a TOML value and falls back
/// to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
