use nalgebra::Vector3;

use super::{dgnss_solve, spp_solve, FilterState, FixedSolution, NavSolution, RtkConfig, SolutionMode, SppConfig};
use crate::constellation::{ecef_to_enu, SatState};
use crate::guard::{Gate, GateVerdict, StationView};
use crate::observation::EpochObservations;
use crate::wire::{ObservationEpochMsg, StationInfo};

/// Latest correction data received from the station.
#[derive(Debug, Clone, Default)]
pub struct CorrectionState {
    pub station_info: Option<StationInfo>,
    pub message: Option<ObservationEpochMsg>,
    pub epoch: Option<EpochObservations>,
}

impl CorrectionState {
    pub fn set_station_info(&mut self, info: StationInfo) {
        self.station_info = Some(info);
    }

    /// Stores an observation message received for simulation time `t`.
    pub fn set_observations(&mut self, msg: ObservationEpochMsg, t: f64) {
        let id = self.station_info.map_or(0, |i| i.station_id);
        self.epoch = Some(msg.to_epoch(t, id));
        self.message = Some(msg);
    }

    pub fn station_position(&self) -> Option<Vector3<f64>> {
        self.station_info.map(|i| i.ecef())
    }

    /// Age of the newest observations at time `t`, if any arrived.
    pub fn age(&self, t: f64) -> Option<f64> {
        self.epoch.as_ref().map(|e| t - e.t)
    }
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub solution: NavSolution,
    pub spp: Option<NavSolution>,
    /// Best differential solution before gating.
    pub candidate: Option<NavSolution>,
    pub verdict: GateVerdict,
    pub stale: bool,
}

/// Sequential rover state machine: one `step` per epoch.
#[derive(Debug, Clone)]
pub struct RoverEngine {
    pub rtk: RtkConfig,
    pub spp: SppConfig,
    filter: FilterState,
    last_fix: Option<FixedSolution>,
}

impl RoverEngine {
    pub fn new(rtk: RtkConfig, spp: SppConfig) -> Self {
        RoverEngine { rtk, spp, filter: FilterState::new(), last_fix: None }
    }

    pub fn filter(&self) -> &FilterState {
        &self.filter
    }

    /// Fixed solution of the most recent epoch that reached Fixed.
    pub fn last_fix(&self) -> Option<&FixedSolution> {
        self.last_fix.as_ref()
    }

    fn differential(
        &mut self,
        rover: &EpochObservations,
        station: &EpochObservations,
        station_pos: &Vector3<f64>,
        sats: &[SatState],
    ) -> Option<NavSolution> {
        match self.filter.float_update(rover, station, station_pos, sats, &self.rtk) {
            Ok(float) => match self.filter.resolve(&self.rtk) {
                Ok(fixed) => {
                    let solution = fixed.solution.clone();
                    self.last_fix = Some(fixed);
                    Some(solution)
                }
                Err(_) => Some(float),
            },
            Err(e) => {
                log::debug!("t={} float update failed: {e}", rover.t);
                self.filter.reset();
                dgnss_solve(rover, station, station_pos, sats, &self.rtk).ok()
            }
        }
    }

    /// Mode ladder: Fixed, Float, DGNSS, Standalone, None. A gate rejection
    /// caps the ladder at Standalone and resets the filter.
    pub fn step(
        &mut self,
        rover: &EpochObservations,
        sats: &[SatState],
        corrections: &CorrectionState,
        gate: &mut Gate,
    ) -> EpochOutcome {
        let t = rover.t;
        let spp = spp_solve(rover, sats, &self.spp).ok();
        let station_pos = corrections.station_position();
        let stale = station_pos.is_none() || corrections.age(t).is_none_or(|a| a > self.rtk.max_age);
        let candidate = match (&corrections.epoch, station_pos) {
            (Some(station), Some(pos)) if !stale => self.differential(rover, station, &pos, sats),
            _ => {
                self.filter.reset();
                None
            }
        };
        let view = StationView {
            info: corrections.station_info.as_ref(),
            observations: corrections.message.as_ref(),
            stale,
        };
        let verdict = gate.gate_epoch(spp.as_ref(), candidate.as_ref(), &view, sats, &self.spp);
        let chosen = if verdict.accept {
            candidate.clone().or_else(|| spp.clone())
        } else {
            self.filter.reset();
            spp.clone()
        };
        let mut solution = chosen.unwrap_or_else(|| NavSolution::none(t));
        if solution.mode != SolutionMode::Standalone && solution.mode != SolutionMode::None {
            solution.clock_bias = spp.as_ref().map_or(f64::NAN, |s| s.clock_bias);
        }
        if solution.mode == SolutionMode::Standalone {
            solution.baseline_enu = station_pos.map_or(Vector3::repeat(f64::NAN), |p| {
                ecef_to_enu(&(solution.position_ecef - p), &p)
            });
        }
        EpochOutcome { solution, spp, candidate, verdict, stale }
    }
}
