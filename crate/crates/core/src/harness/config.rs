use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adversary::{AttackKind, AttackScenario, AttackSchedule};
use crate::constellation::{enu_to_ecef, geodetic_to_ecef, Geodetic, OrbitShell};
use crate::guard::GateConfig;
use crate::observation::ErrorModel;
use crate::rover::{Dynamics, RtkConfig, SppConfig};
use crate::station::StationConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    InProcess,
    Tcp,
}

impl std::str::FromStr for Transport {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inprocess" => Ok(Transport::InProcess),
            "tcp" => Ok(Transport::Tcp),
            other => Err(format!("unknown transport {other:?} (expected tcp or inprocess)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShellPreset {
    Gps,
    Galileo,
}

impl ShellPreset {
    pub fn shell(self) -> OrbitShell {
        match self {
            ShellPreset::Gps => OrbitShell::gps_like(),
            ShellPreset::Galileo => OrbitShell::galileo_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationSpec {
    pub id: u16,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
    pub mountpoint: String,
    pub user: String,
    pub password: String,
    /// Address the `caster` subcommand listens on.
    pub listen: String,
    pub self_monitor: bool,
    pub position_alarm_m: f64,
    pub clock_alarm_s: f64,
    pub elevation_mask_deg: f64,
    /// s
    pub initial_clock_bias: f64,
}

impl Default for StationSpec {
    fn default() -> Self {
        StationSpec {
            id: 1,
            lat_deg: 45.07,
            lon_deg: 7.66,
            height_m: 250.0,
            mountpoint: "NETRTK".into(),
            user: "rover".into(),
            password: "rover".into(),
            listen: "127.0.0.1:2101".into(),
            self_monitor: false,
            position_alarm_m: 5.0,
            clock_alarm_s: 1e-6,
            elevation_mask_deg: 10.0,
            initial_clock_bias: 2e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoverSpec {
    pub id: u16,
    /// Direction of the baseline from the station, deg from north.
    pub azimuth_deg: f64,
    /// m above the station
    pub up_m: f64,
    /// ENU m/s; zero for a static rover.
    pub velocity_enu: [f64; 3],
    pub dynamics: Dynamics,
    pub ratio_threshold: f64,
    /// s
    pub max_age: f64,
    pub fix_and_hold: bool,
    /// s
    pub initial_clock_bias: f64,
}

impl Default for RoverSpec {
    fn default() -> Self {
        RoverSpec {
            id: 2,
            azimuth_deg: 60.0,
            up_m: 0.0,
            velocity_enu: [0.0; 3],
            dynamics: Dynamics::Static,
            ratio_threshold: 3.0,
            max_age: 10.0,
            fix_and_hold: true,
            initial_clock_bias: -3e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub t_start: f64,
    pub t_end: f64,
    /// ENU m relative to the station.
    #[serde(default)]
    pub target_enu: Option<[f64; 3]>,
    #[serde(default)]
    pub target_clock_offset_s: f64,
    #[serde(default = "default_drag_rate")]
    pub drag_rate: f64,
    #[serde(default = "default_power_advantage")]
    pub power_advantage: f64,
    /// Defaults to 0 for syncspoof and 300 m for asyncspoof.
    #[serde(default)]
    pub code_offset_at_start: Option<f64>,
    #[serde(default)]
    pub jsr: f64,
    #[serde(default = "default_true")]
    pub phase_coherent: bool,
    #[serde(default = "default_probability")]
    pub capture_probability: f64,
}

fn default_drag_rate() -> f64 {
    5.0
}
fn default_power_advantage() -> f64 {
    6.0
}
fn default_true() -> bool {
    true
}
fn default_probability() -> f64 {
    1.0
}
fn default_name() -> String {
    "scenario".into()
}
fn default_rate() -> f64 {
    1.0
}
fn default_baseline() -> f64 {
    1.0
}
fn default_shells() -> Vec<ShellPreset> {
    vec![ShellPreset::Gps, ShellPreset::Galileo]
}

impl AttackSpec {
    pub fn to_scenario(&self, station: &Vector3<f64>) -> AttackScenario {
        let target = self.target_enu.map(|e| station + enu_to_ecef(&Vector3::from(e), station));
        let code_offset = self.code_offset_at_start.unwrap_or(match self.kind {
            AttackKind::AsyncSpoof => 300.0,
            _ => 0.0,
        });
        AttackScenario {
            kind: self.kind,
            t_start: self.t_start,
            t_end: self.t_end,
            target_position: target,
            target_clock_offset: self.target_clock_offset_s,
            drag_rate: self.drag_rate,
            power_advantage: self.power_advantage,
            code_offset_at_start: code_offset,
            jsr: self.jsr,
            phase_coherent: self.phase_coherent,
            capture_probability: self.capture_probability,
        }
    }
}

/// A scenario file. Every table except the top-level `seed` and
/// `duration_s` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub epoch_rate_hz: f64,
    #[serde(default = "default_baseline")]
    pub baseline_km: f64,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default = "default_shells")]
    pub constellations: Vec<ShellPreset>,
    #[serde(default)]
    pub errors: ErrorModel,
    #[serde(default)]
    pub station: StationSpec,
    #[serde(default)]
    pub rover: RoverSpec,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default, rename = "attack")]
    pub attacks: Vec<AttackSpec>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.duration_s > 0.0 && self.epoch_rate_hz > 0.0) {
            return bad("duration_s and epoch_rate_hz must be positive");
        }
        if !(self.baseline_km >= 0.0 && self.baseline_km <= 100.0) {
            return bad("baseline_km must lie in [0, 100]");
        }
        if self.constellations.is_empty() {
            return bad("at least one constellation is required");
        }
        if self.attacks.iter().any(|a| a.t_start < 0.0 || a.t_end > self.duration_s) {
            return bad("attack windows must lie within [0, duration_s]");
        }
        self.errors.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.gate.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.station_config().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.schedule()?;
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        (self.duration_s * self.epoch_rate_hz).round() as usize
    }

    pub fn epoch_time(&self, k: usize) -> f64 {
        k as f64 / self.epoch_rate_hz
    }

    pub fn shells(&self) -> Vec<OrbitShell> {
        self.constellations.iter().map(|s| s.shell()).collect()
    }

    pub fn station_ecef(&self) -> Vector3<f64> {
        let s = &self.station;
        geodetic_to_ecef(Geodetic::from_degrees(s.lat_deg, s.lon_deg, s.height_m))
    }

    pub fn station_config(&self) -> StationConfig {
        let s = &self.station;
        StationConfig {
            station_id: s.id,
            surveyed_ecef: self.station_ecef(),
            mountpoint: s.mountpoint.clone(),
            epoch_rate: self.epoch_rate_hz,
            self_monitor_enabled: s.self_monitor,
            position_alarm_threshold: s.position_alarm_m,
            clock_alarm_threshold: s.clock_alarm_s,
            elevation_mask_deg: s.elevation_mask_deg,
        }
    }

    /// Error model with the scenario seed and the ionospheric gradient
    /// anchored at the station.
    pub fn error_model(&self) -> ErrorModel {
        ErrorModel { seed: self.seed, iono_origin: Some(self.station_ecef()), ..self.errors.clone() }
    }

    pub fn rtk_config(&self) -> RtkConfig {
        RtkConfig {
            dynamics: self.rover.dynamics,
            ratio_threshold: self.rover.ratio_threshold,
            max_age: self.rover.max_age,
            fix_and_hold: self.rover.fix_and_hold,
            ..RtkConfig::from_model(&self.error_model())
        }
    }

    pub fn spp_config(&self) -> SppConfig {
        SppConfig::from_model(&self.error_model())
    }

    pub fn baseline_enu(&self) -> Vector3<f64> {
        let b = self.baseline_km * 1000.0;
        let az = self.rover.azimuth_deg.to_radians();
        Vector3::new(b * az.sin(), b * az.cos(), self.rover.up_m)
    }

    /// Rover truth position at `t`.
    pub fn rover_truth(&self, t: f64) -> Vector3<f64> {
        let station = self.station_ecef();
        let enu = self.baseline_enu() + Vector3::from(self.rover.velocity_enu) * t;
        station + enu_to_ecef(&enu, &station)
    }

    pub fn schedule(&self) -> Result<AttackSchedule, HarnessError> {
        let station = self.station_ecef();
        AttackSchedule::new(self.attacks.iter().map(|a| a.to_scenario(&station)).collect())
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Union of the attack windows as (first start, last end).
    pub fn attack_span(&self) -> Option<(f64, f64)> {
        let start = self.attacks.iter().map(|a| a.t_start).reduce(f64::min)?;
        let end = self.attacks.iter().map(|a| a.t_end).reduce(f64::max)?;
        Some((start, end))
    }

    pub fn attack_at(&self, t: f64) -> Option<AttackKind> {
        self.attacks.iter().find(|a| a.t_start <= t && t < a.t_end).map(|a| a.kind)
    }
}
