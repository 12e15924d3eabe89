//! Rover-side correction gate. Corrections are only used while the
//! differential solution agrees with standalone positioning and the station
//! stream is self-consistent.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::constellation::SatState;
use crate::rover::{chi2_quantile, spp_solve, NavSolution, SolveError, SppConfig};
use crate::wire::{ObservationEpochMsg, StationInfo};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub enabled: bool,
    pub consistency_k: f64,
    pub chi2_quantile: f64,
    /// m
    pub station_check_threshold: f64,
    pub hold_epochs: u32,
    pub check_consistency: bool,
    pub check_residual: bool,
    pub check_station: bool,
    pub check_health: bool,
    pub check_stale: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            enabled: false,
            consistency_k: 3.0,
            chi2_quantile: 0.999,
            station_check_threshold: 10.0,
            hold_epochs: 5,
            check_consistency: true,
            check_residual: true,
            check_station: true,
            check_health: true,
            check_stale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GateConfigError {
    #[error("consistency_k must be positive")]
    ConsistencyK,
    #[error("chi2_quantile must lie in (0, 1)")]
    Quantile,
    #[error("station_check_threshold must be positive")]
    StationThreshold,
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), GateConfigError> {
        if !(self.consistency_k > 0.0) {
            return Err(GateConfigError::ConsistencyK);
        }
        if !(self.chi2_quantile > 0.0 && self.chi2_quantile < 1.0) {
            return Err(GateConfigError::Quantile);
        }
        if !(self.station_check_threshold > 0.0) {
            return Err(GateConfigError::StationThreshold);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    SolutionDivergence,
    ResidualChi2,
    StationSelfInconsistent,
    StationUnhealthyFlag,
    Stale,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::SolutionDivergence => "divergence",
            RejectReason::ResidualChi2 => "chi2",
            RejectReason::StationSelfInconsistent => "station",
            RejectReason::StationUnhealthyFlag => "unhealthy",
            RejectReason::Stale => "stale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GateVerdict {
    pub accept: bool,
    pub reasons: BTreeSet<RejectReason>,
    /// A rule fired this epoch (as opposed to a latched rejection).
    pub triggered: bool,
    /// Accepted without a standalone reference to check against.
    pub low_confidence: bool,
}

impl GateVerdict {
    pub fn accepted() -> Self {
        GateVerdict { accept: true, ..Default::default() }
    }

    /// Reasons joined by `|`, or `-` when accepted.
    pub fn reasons_label(&self) -> String {
        if self.reasons.is_empty() {
            "-".to_string()
        } else {
            self.reasons.iter().map(|r| r.as_str()).collect::<Vec<_>>().join("|")
        }
    }
}

/// What the rover currently knows about the station.
#[derive(Debug, Clone, Copy, Default)]
pub struct StationView<'a> {
    pub info: Option<&'a StationInfo>,
    pub observations: Option<&'a ObservationEpochMsg>,
    pub stale: bool,
}

/// Standalone solution of the station computed from its own broadcast observables.
pub fn station_stream_spp(
    msg: &ObservationEpochMsg,
    sats: &[SatState],
    cfg: &SppConfig,
) -> Result<NavSolution, SolveError> {
    spp_solve(&msg.to_epoch(0.0, 0), sats, cfg)
}

/// Stateful gate; owns the rejection latch.
#[derive(Debug, Clone)]
pub struct Gate {
    cfg: GateConfig,
    hold_remaining: u32,
    latched: BTreeSet<RejectReason>,
}

impl Gate {
    pub fn new(cfg: GateConfig) -> Self {
        Gate { cfg, hold_remaining: 0, latched: BTreeSet::new() }
    }

    pub fn config(&self) -> &GateConfig {
        &self.cfg
    }

    /// Rules that fire on this epoch's inputs, without latching.
    pub fn rules(
        &self,
        spp: &NavSolution,
        rtk: Option<&NavSolution>,
        station: &StationView<'_>,
        sats: &[SatState],
        spp_cfg: &SppConfig,
    ) -> BTreeSet<RejectReason> {
        let cfg = &self.cfg;
        let mut reasons = BTreeSet::new();
        if let Some(rtk) = rtk {
            let limit = cfg.consistency_k * spp.covariance.trace().sqrt();
            if cfg.check_consistency && (rtk.position_ecef - spp.position_ecef).norm() > limit {
                reasons.insert(RejectReason::SolutionDivergence);
            }
            if cfg.check_residual && rtk.dof > 0 && rtk.dd_residual_chi2 > chi2_quantile(cfg.chi2_quantile, rtk.dof) {
                reasons.insert(RejectReason::ResidualChi2);
            }
        }
        if cfg.check_station {
            if let (Some(info), Some(obs)) = (station.info, station.observations) {
                if let Ok(own) = station_stream_spp(obs, sats, spp_cfg) {
                    if (own.position_ecef - info.ecef()).norm() > cfg.station_check_threshold {
                        reasons.insert(RejectReason::StationSelfInconsistent);
                    }
                }
            }
        }
        if cfg.check_health && station.info.is_some_and(|i| !i.healthy) {
            reasons.insert(RejectReason::StationUnhealthyFlag);
        }
        if cfg.check_stale && station.stale {
            reasons.insert(RejectReason::Stale);
        }
        reasons
    }

    pub fn gate_epoch(
        &mut self,
        spp: Option<&NavSolution>,
        rtk: Option<&NavSolution>,
        station: &StationView<'_>,
        sats: &[SatState],
        spp_cfg: &SppConfig,
    ) -> GateVerdict {
        if !self.cfg.enabled {
            return GateVerdict::accepted();
        }
        let Some(spp) = spp else {
            return GateVerdict { low_confidence: true, ..GateVerdict::accepted() };
        };
        let reasons = self.rules(spp, rtk, station, sats, spp_cfg);
        if !reasons.is_empty() {
            self.hold_remaining = self.cfg.hold_epochs;
            self.latched = reasons.clone();
            return GateVerdict { accept: false, reasons, triggered: true, low_confidence: false };
        }
        if self.hold_remaining > 0 {
            self.hold_remaining -= 1;
            return GateVerdict { accept: false, reasons: self.latched.clone(), triggered: false, low_confidence: false };
        }
        GateVerdict::accepted()
    }
}
