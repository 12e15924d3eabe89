use std::sync::mpsc;
use std::time::Duration;

use nalgebra::Vector3;

use super::{summarize, EpochRecord, HarnessError, RunSummary, ScenarioConfig, Transport};
use crate::adversary::AttackSchedule;
use crate::constellation::{ecef_to_enu, propagate_all, visible, OrbitShell, SatState};
use crate::guard::Gate;
use crate::observation::ObservationGenerator;
use crate::rover::{CorrectionState, RoverEngine};
use crate::station::{gps_to_sim, Station};
use crate::wire::{Caster, CorrectionFrame, Credentials, LoopbackLink, Message, NtripClient};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<EpochRecord>,
    pub summary: RunSummary,
}

/// Station, receiver tracking and adversary schedule.
pub struct StationSide {
    station: Station,
    schedule: AttackSchedule,
    shells: Vec<OrbitShell>,
}

impl StationSide {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, HarnessError> {
        let station = Station::new(
            cfg.station_config(),
            cfg.error_model(),
            cfg.spp_config(),
            cfg.station.initial_clock_bias,
        )
        .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(StationSide { station, schedule: cfg.schedule()?, shells: cfg.shells() })
    }

    pub fn station(&self) -> &Station {
        &self.station
    }

    /// Frame handed to clients before the first epoch.
    pub fn initial_info(&self) -> Message {
        Message::StationInfo(self.station.station_info(true))
    }

    pub fn epoch(&mut self, t: f64) -> Vec<Message> {
        let sats = propagate_all(&self.shells, t);
        let env = self.schedule.environment_at(t);
        self.station.step(t, &sats, &env).messages
    }
}

/// Rover receiver, RTK engine and gate, fed by decoded correction frames.
pub struct RoverSide {
    cfg: ScenarioConfig,
    shells: Vec<OrbitShell>,
    generator: ObservationGenerator,
    engine: RoverEngine,
    gate: Gate,
    corrections: CorrectionState,
}

impl RoverSide {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let cfg = cfg.clone();
        RoverSide {
            shells: cfg.shells(),
            generator: ObservationGenerator::new(cfg.rover.id, cfg.error_model(), cfg.rover.initial_clock_bias),
            engine: RoverEngine::new(cfg.rtk_config(), cfg.spp_config()),
            gate: Gate::new(cfg.gate),
            corrections: CorrectionState::default(),
            cfg,
        }
    }

    /// Applies one frame; returns the epoch time when it completed an
    /// observation epoch.
    pub fn ingest(&mut self, frame: &CorrectionFrame) -> Result<Option<f64>, HarnessError> {
        match Message::from_frame(frame)? {
            Message::StationInfo(info) => {
                self.corrections.set_station_info(info);
                Ok(None)
            }
            Message::ObservationEpoch(msg) => {
                let t = gps_to_sim(msg.week, msg.tow_ms);
                self.corrections.set_observations(msg, t);
                Ok(Some(t))
            }
        }
    }

    pub fn step(&mut self, t: f64) -> EpochRecord {
        let sats: Vec<SatState> = propagate_all(&self.shells, t);
        let truth = self.cfg.rover_truth(t);
        let mask = self.engine.rtk.elevation_mask_deg.to_radians();
        let in_view = visible(&truth, &sats, mask);
        let obs = self.generator.next_epoch(&truth, &in_view, t);
        let outcome = self.engine.step(&obs, &sats, &self.corrections, &mut self.gate);
        let error = |p: &Vector3<f64>| ecef_to_enu(&(p - truth), &truth);
        let sol = outcome.solution;
        let enu_error = if sol.has_position() { error(&sol.position_ecef) } else { Vector3::repeat(f64::NAN) };
        let spp_error = outcome.spp.as_ref().map_or(f64::NAN, |s| (s.position_ecef - truth).norm());
        EpochRecord {
            t,
            truth,
            enu_error,
            spp_error,
            mode: sol.mode,
            solution: sol,
            verdict: outcome.verdict,
            station_healthy: self.corrections.station_info.is_some_and(|i| i.healthy),
            station_tracked: self.corrections.message.as_ref().map_or(0, |m| m.records.len()),
            attack: self.cfg.attack_at(t),
        }
    }
}

fn check_epoch(expected: f64, got: f64) -> Result<(), HarnessError> {
    if (expected - got).abs() > 1e-3 {
        return Err(HarnessError::Transport(format!("station epoch t={got} while rover expected t={expected}")));
    }
    Ok(())
}

fn run_in_process(cfg: &ScenarioConfig) -> Result<Vec<EpochRecord>, HarnessError> {
    let mut station = StationSide::new(cfg)?;
    let mut rover = RoverSide::new(cfg);
    let mut link = LoopbackLink::new();
    link.send(&station.initial_info().encode()?);
    let mut records = Vec::with_capacity(cfg.epochs());
    for k in 0..cfg.epochs() {
        let t = cfg.epoch_time(k);
        for msg in station.epoch(t) {
            link.send(&msg.encode()?);
        }
        let mut got = None;
        while let Some(frame) = link.recv() {
            got = rover.ingest(&frame)?.or(got);
        }
        check_epoch(t, got.ok_or_else(|| HarnessError::Transport(format!("no observation epoch at t={t}")))?)?;
        records.push(rover.step(t));
    }
    Ok(records)
}

/// Station and caster on one thread, NTRIP client and rover on another,
/// advancing in lockstep: the station publishes epoch k only after the
/// rover acknowledged epoch k-1.
fn run_tcp(cfg: &ScenarioConfig) -> Result<Vec<EpochRecord>, HarnessError> {
    let mut station = StationSide::new(cfg)?;
    let mut rover = RoverSide::new(cfg);
    let creds = Credentials::new(&cfg.station.user, &cfg.station.password);
    let caster = Caster::serve("127.0.0.1:0", &cfg.station.mountpoint, creds.clone())?;
    caster.set_station_info(station.initial_info().encode()?);
    let mut client = NtripClient::connect(caster.local_addr(), &cfg.station.mountpoint, &creds, Duration::from_secs(30))?;
    if !caster.wait_for_clients(1, Duration::from_secs(5)) {
        return Err(HarnessError::Transport("rover never reached the caster".into()));
    }
    let epochs = cfg.epochs();
    let (ack_tx, ack_rx) = mpsc::channel::<()>();
    let result = std::thread::scope(|scope| {
        let caster = &caster;
        let publisher = scope.spawn(move || -> Result<(), HarnessError> {
            for k in 0..epochs {
                let t = cfg.epoch_time(k);
                for msg in station.epoch(t) {
                    let bytes = msg.encode()?;
                    if matches!(msg, Message::StationInfo(_)) {
                        caster.set_station_info(bytes.clone());
                    }
                    caster.publish(&bytes);
                }
                if ack_rx.recv().is_err() {
                    break;
                }
            }
            Ok(())
        });
        let mut records = Vec::with_capacity(epochs);
        let rover_result = (|| -> Result<(), HarnessError> {
            for k in 0..epochs {
                let t = cfg.epoch_time(k);
                let got = loop {
                    let frame = client.next_frame()?;
                    if let Some(got) = rover.ingest(&frame.frame)? {
                        break got;
                    }
                };
                check_epoch(t, got)?;
                records.push(rover.step(t));
                let _ = ack_tx.send(());
            }
            Ok(())
        })();
        drop(ack_tx);
        let published = publisher.join().map_err(|_| HarnessError::Transport("station thread panicked".into()))?;
        rover_result?;
        published?;
        Ok(records)
    });
    client.disconnect();
    caster.shutdown();
    result
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let records = match cfg.transport {
        Transport::InProcess => run_in_process(cfg)?,
        Transport::Tcp => run_tcp(cfg)?,
    };
    let summary = summarize(&records, cfg);
    Ok(RunOutput { records, summary })
}
