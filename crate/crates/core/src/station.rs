//! Reference station: receiver at a surveyed position, optional on-station
//! SPP self-check, and the frame feed for the caster.

use nalgebra::Vector3;

use crate::adversary::{ReceiverTrackingState, RfEnvironment, SpoofContext};
pub use crate::adversary::{ChannelState, SignalSource};
use crate::constellation::{height_above_ellipsoid, visible, SatState};
use crate::observation::{EpochObservations, ErrorModel, ObservationGenerator};
use crate::rover::{spp_solve, NavSolution, SppConfig};
use crate::wire::{Message, ObservationEpochMsg, StationInfo};

/// GPS week the simulation clock starts in; t = 0 is the start of that week.
pub const GPS_START_WEEK: u16 = 2300;
const WEEK_SECONDS: f64 = 604_800.0;

/// Simulation time to (GPS week, time of week in ms).
pub fn sim_to_gps(t: f64) -> (u16, u32) {
    let weeks = (t / WEEK_SECONDS).floor();
    let tow_ms = ((t - weeks * WEEK_SECONDS) * 1000.0).round() as u32;
    (GPS_START_WEEK + weeks as u16, tow_ms)
}

pub fn gps_to_sim(week: u16, tow_ms: u32) -> f64 {
    (week as f64 - GPS_START_WEEK as f64) * WEEK_SECONDS + tow_ms as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StationError {
    #[error("surveyed position is {0:.0} m from the ellipsoid (limit 100 km)")]
    OffSurface(f64),
    #[error("epoch rate must be positive")]
    EpochRate,
    #[error("alarm thresholds must be positive")]
    Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationConfig {
    pub station_id: u16,
    pub surveyed_ecef: Vector3<f64>,
    pub mountpoint: String,
    /// Hz
    pub epoch_rate: f64,
    pub self_monitor_enabled: bool,
    /// m
    pub position_alarm_threshold: f64,
    /// s per epoch
    pub clock_alarm_threshold: f64,
    /// deg
    pub elevation_mask_deg: f64,
}

impl StationConfig {
    pub fn new(station_id: u16, surveyed_ecef: Vector3<f64>) -> Self {
        StationConfig {
            station_id,
            surveyed_ecef,
            mountpoint: "NETRTK".into(),
            epoch_rate: 1.0,
            self_monitor_enabled: false,
            position_alarm_threshold: 5.0,
            clock_alarm_threshold: 1e-6,
            elevation_mask_deg: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), StationError> {
        let h = height_above_ellipsoid(&self.surveyed_ecef);
        if !(h.abs() <= 100e3) {
            return Err(StationError::OffSurface(h));
        }
        if !(self.epoch_rate > 0.0) {
            return Err(StationError::EpochRate);
        }
        if !(self.position_alarm_threshold > 0.0 && self.clock_alarm_threshold > 0.0) {
            return Err(StationError::Threshold);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HealthFault {
    Insufficient,
    /// m from the surveyed position
    Position(f64),
    /// s between consecutive epochs
    ClockJump(f64),
}

#[derive(Debug, Clone)]
pub struct HealthReport {
    pub healthy: bool,
    pub fault: Option<HealthFault>,
    pub spp: Option<NavSolution>,
}

/// Standalone self-check against the surveyed coordinates. `previous_clock`
/// is the clock estimate of the last epoch that produced one.
pub fn self_monitor(
    cfg: &StationConfig,
    epoch: &EpochObservations,
    sats: &[SatState],
    spp_cfg: &SppConfig,
    previous_clock: Option<f64>,
) -> HealthReport {
    let unhealthy = |fault, spp| HealthReport { healthy: false, fault: Some(fault), spp };
    if epoch.locked_count() < 4 {
        return unhealthy(HealthFault::Insufficient, None);
    }
    let Ok(spp) = spp_solve(epoch, sats, spp_cfg) else {
        return unhealthy(HealthFault::Insufficient, None);
    };
    let offset = (spp.position_ecef - cfg.surveyed_ecef).norm();
    if offset > cfg.position_alarm_threshold {
        return unhealthy(HealthFault::Position(offset), Some(spp));
    }
    if let Some(prev) = previous_clock {
        let jump = (spp.clock_bias - prev).abs();
        if jump > cfg.clock_alarm_threshold {
            return unhealthy(HealthFault::ClockJump(jump), Some(spp));
        }
    }
    HealthReport { healthy: true, fault: None, spp: Some(spp) }
}

/// One station epoch: what was measured and what goes on the wire.
#[derive(Debug, Clone)]
pub struct StationOutput {
    pub epoch: EpochObservations,
    pub health: Option<HealthReport>,
    pub healthy: bool,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone)]
pub struct Station {
    cfg: StationConfig,
    model: ErrorModel,
    spp_cfg: SppConfig,
    generator: ObservationGenerator,
    tracking: ReceiverTrackingState,
    epochs_broadcast: u64,
    last_healthy: Option<bool>,
    last_clock: Option<f64>,
}

impl Station {
    pub fn new(cfg: StationConfig, model: ErrorModel, spp_cfg: SppConfig, initial_clock_bias: f64) -> Result<Self, StationError> {
        cfg.validate()?;
        let generator = ObservationGenerator::new(cfg.station_id, model.clone(), initial_clock_bias);
        let tracking = ReceiverTrackingState::new(model.seed ^ 0x5354_4154);
        Ok(Station { cfg, model, spp_cfg, generator, tracking, epochs_broadcast: 0, last_healthy: None, last_clock: None })
    }

    pub fn config(&self) -> &StationConfig {
        &self.cfg
    }

    pub fn tracking(&self) -> &ReceiverTrackingState {
        &self.tracking
    }

    pub fn generator(&self) -> &ObservationGenerator {
        &self.generator
    }

    /// Authentic observables at the surveyed position passed through `env`.
    pub fn station_epoch(&mut self, t: f64, sats: &[SatState], env: &RfEnvironment) -> EpochObservations {
        let pos = self.cfg.surveyed_ecef;
        let in_view = visible(&pos, sats, self.cfg.elevation_mask_deg.to_radians());
        let authentic = self.generator.next_epoch(&pos, &in_view, t);
        let ctx = SpoofContext { surveyed: pos, model: &self.model };
        self.tracking.apply(&authentic, env, &ctx, &in_view, &mut self.generator)
    }

    /// Runs the self-check when enabled; a disabled monitor reports healthy.
    pub fn self_monitor(&mut self, epoch: &EpochObservations, sats: &[SatState]) -> Option<HealthReport> {
        if !self.cfg.self_monitor_enabled {
            return None;
        }
        let report = self_monitor(&self.cfg, epoch, sats, &self.spp_cfg, self.last_clock);
        if let Some(spp) = &report.spp {
            self.last_clock = Some(spp.clock_bias);
        }
        Some(report)
    }

    /// StationInfo on every 10th epoch and on health change, then the
    /// observation epoch (empty when nothing is tracked).
    pub fn broadcast(&mut self, epoch: &EpochObservations, healthy: bool) -> Vec<Message> {
        let mut out = Vec::with_capacity(2);
        if self.epochs_broadcast.is_multiple_of(10) || self.last_healthy != Some(healthy) {
            out.push(Message::StationInfo(self.station_info(healthy)));
        }
        let (week, tow_ms) = sim_to_gps(epoch.t);
        out.push(Message::ObservationEpoch(ObservationEpochMsg::from_epoch(week, tow_ms, epoch)));
        self.epochs_broadcast += 1;
        self.last_healthy = Some(healthy);
        out
    }

    pub fn station_info(&self, healthy: bool) -> StationInfo {
        StationInfo::from_ecef(self.cfg.station_id, &self.cfg.surveyed_ecef, healthy)
    }

    pub fn step(&mut self, t: f64, sats: &[SatState], env: &RfEnvironment) -> StationOutput {
        let epoch = self.station_epoch(t, sats, env);
        let health = self.self_monitor(&epoch, sats);
        let healthy = health.as_ref().is_none_or(|h| h.healthy);
        let messages = self.broadcast(&epoch, healthy);
        StationOutput { epoch, health, healthy, messages }
    }
}
