//! Observable-domain attack models acting on the reference station's
//! receiver: synchronous lift-off spoofing with a coordinated drag,
//! asynchronous spoofing that only captures on reacquisition, and barrage
//! jamming with tracking/acquisition hysteresis.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::{look_at, SatKey, SatState};
use crate::observation::{EpochObservations, ErrorModel, Fixed32, ObservationGenerator, SPEED_OF_LIGHT, WAVELENGTH};

/// C/A code chip length, m.
pub const CHIP_LENGTH: f64 = SPEED_OF_LIGHT / 1.023e6;
/// Largest code misalignment a lift-off can pull a tracking loop across.
pub const CAPTURE_MAX_OFFSET: f64 = CHIP_LENGTH / 2.0;
/// dB
pub const CAPTURE_MIN_ADVANTAGE: f64 = 3.0;
/// dB-Hz below which a tracked channel loses lock.
pub const TRACKING_THRESHOLD: f64 = 28.0;
/// dB-Hz needed to (re)acquire a channel.
pub const ACQUISITION_THRESHOLD: f64 = 33.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    SyncSpoof,
    AsyncSpoof,
    Jam,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::SyncSpoof => "syncspoof",
            AttackKind::AsyncSpoof => "asyncspoof",
            AttackKind::Jam => "jam",
        }
    }

    pub fn is_spoof(self) -> bool {
        matches!(self, AttackKind::SyncSpoof | AttackKind::AsyncSpoof)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("attack window must satisfy t_start < t_end")]
    EmptyWindow,
    #[error("spoofing attacks need a positive drag rate")]
    DragRate,
    #[error("spoofing attacks need a target position")]
    MissingTarget,
    #[error("jammer-to-signal ratio must be >= 0")]
    Jsr,
    #[error("capture probability must lie in [0, 1]")]
    CaptureProbability,
    #[error("attack windows overlap")]
    Overlap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    pub kind: AttackKind,
    /// s, inclusive
    pub t_start: f64,
    /// s, exclusive
    pub t_end: f64,
    /// ECEF, m
    pub target_position: Option<Vector3<f64>>,
    /// s
    pub target_clock_offset: f64,
    /// m/s
    pub drag_rate: f64,
    /// dB
    pub power_advantage: f64,
    /// m
    pub code_offset_at_start: f64,
    /// dB
    pub jsr: f64,
    /// Spoofed carrier follows the spoofed code; otherwise it stays authentic.
    pub phase_coherent: bool,
    /// Probability that one capture attempt succeeds.
    pub capture_probability: f64,
}

impl AttackScenario {
    fn base(kind: AttackKind, t_start: f64, t_end: f64) -> Self {
        AttackScenario {
            kind,
            t_start,
            t_end,
            target_position: None,
            target_clock_offset: 0.0,
            drag_rate: 5.0,
            power_advantage: 6.0,
            code_offset_at_start: 0.0,
            jsr: 0.0,
            phase_coherent: true,
            capture_probability: 1.0,
        }
    }

    pub fn sync_spoof(t_start: f64, t_end: f64, target: Vector3<f64>) -> Self {
        AttackScenario { target_position: Some(target), ..Self::base(AttackKind::SyncSpoof, t_start, t_end) }
    }

    pub fn async_spoof(t_start: f64, t_end: f64, target: Vector3<f64>) -> Self {
        AttackScenario {
            target_position: Some(target),
            code_offset_at_start: 300.0,
            ..Self::base(AttackKind::AsyncSpoof, t_start, t_end)
        }
    }

    pub fn jam(t_start: f64, t_end: f64, jsr: f64) -> Self {
        AttackScenario { jsr, ..Self::base(AttackKind::Jam, t_start, t_end) }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.t_start < self.t_end) {
            return Err(AttackError::EmptyWindow);
        }
        if self.kind.is_spoof() {
            if !(self.drag_rate > 0.0) {
                return Err(AttackError::DragRate);
            }
            if self.target_position.is_none() {
                return Err(AttackError::MissingTarget);
            }
        }
        if !(self.jsr >= 0.0) {
            return Err(AttackError::Jsr);
        }
        if !(0.0..=1.0).contains(&self.capture_probability) {
            return Err(AttackError::CaptureProbability);
        }
        Ok(())
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.t_start <= t && t < self.t_end
    }

    /// Attacker's commanded station position: a straight drag from the
    /// surveyed position toward the target at `drag_rate`.
    pub fn commanded_position(&self, surveyed: &Vector3<f64>, t: f64) -> Vector3<f64> {
        let Some(target) = self.target_position else { return *surveyed };
        let d = target - surveyed;
        let dist = d.norm();
        let moved = (self.drag_rate * (t - self.t_start).max(0.0)).min(dist);
        if dist == 0.0 || moved == 0.0 {
            return *surveyed;
        }
        surveyed + d * (moved / dist)
    }

    /// Commanded receiver clock offset, s; ramps at `drag_rate / c`.
    pub fn commanded_clock(&self, t: f64) -> f64 {
        let ramp = self.drag_rate / SPEED_OF_LIGHT * (t - self.t_start).max(0.0);
        ramp.min(self.target_clock_offset.abs()).copysign(self.target_clock_offset)
    }
}

/// What the station antenna receives at one instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RfEnvironment {
    pub active_attack: Option<AttackScenario>,
}

impl RfEnvironment {
    pub fn benign() -> Self {
        Self::default()
    }

    pub fn jsr(&self) -> f64 {
        self.active_attack.as_ref().filter(|a| a.kind == AttackKind::Jam).map_or(0.0, |a| a.jsr)
    }

    pub fn spoofer(&self) -> Option<&AttackScenario> {
        self.active_attack.as_ref().filter(|a| a.kind.is_spoof())
    }
}

/// Ordered, non-overlapping attack windows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackSchedule {
    attacks: Vec<AttackScenario>,
}

impl AttackSchedule {
    pub fn new(mut attacks: Vec<AttackScenario>) -> Result<Self, AttackError> {
        for a in &attacks {
            a.validate()?;
        }
        attacks.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        if attacks.windows(2).any(|w| w[1].t_start < w[0].t_end) {
            return Err(AttackError::Overlap);
        }
        Ok(AttackSchedule { attacks })
    }

    pub fn attacks(&self) -> &[AttackScenario] {
        &self.attacks
    }

    pub fn environment_at(&self, t: f64) -> RfEnvironment {
        RfEnvironment { active_attack: self.attacks.iter().find(|a| a.active_at(t)).cloned() }
    }
}

/// Geometry the spoofer needs to forge consistent observables.
#[derive(Debug, Clone, Copy)]
pub struct SpoofContext<'a> {
    pub surveyed: Vector3<f64>,
    pub model: &'a ErrorModel,
}

/// Code and carrier (both m) the spoofer adds to the authentic observables of
/// `sat` so they match the commanded position and clock.
pub fn spoof_delta(scenario: &AttackScenario, ctx: &SpoofContext<'_>, sat: &SatState, t: f64) -> (f64, f64) {
    let p = scenario.commanded_position(&ctx.surveyed, t);
    let clock = SPEED_OF_LIGHT * scenario.commanded_clock(t);
    if p == ctx.surveyed && clock == 0.0 && scenario.code_offset_at_start == 0.0 {
        return (0.0, 0.0);
    }
    let terms = |pos: &Vector3<f64>| {
        let g = look_at(pos, &sat.pos_ecef);
        let el = g.elevation.max(0.05);
        (g.range, ctx.model.tropo_delay(el), ctx.model.iono_delay(pos, el))
    };
    let (rho_p, tropo_p, iono_p) = terms(&p);
    let (rho_s, tropo_s, iono_s) = terms(&ctx.surveyed);
    let common = rho_p - rho_s + tropo_p - tropo_s + clock + scenario.code_offset_at_start;
    let code = common + iono_p - iono_s;
    let phase = if scenario.phase_coherent { common - (iono_p - iono_s) } else { 0.0 };
    (code, phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalSource {
    Authentic,
    Spoofed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub locked: bool,
    pub tracked_source: SignalSource,
    /// dB-Hz
    pub cn0: f64,
    pub loss_count: u32,
}

/// Lift-off condition: enough power advantage and a code misalignment
/// within half a chip. A captured channel stays captured.
pub fn capture_check(channel: &ChannelState, code_offset: f64, power_advantage: f64) -> bool {
    if channel.tracked_source == SignalSource::Spoofed {
        return true;
    }
    power_advantage >= CAPTURE_MIN_ADVANTAGE && code_offset.abs() <= CAPTURE_MAX_OFFSET
}

fn spoofed(epoch: &EpochObservations, scenario: &AttackScenario, ctx: &SpoofContext<'_>, sats: &[SatState], t: f64, captured: impl Fn(SatKey) -> bool) -> EpochObservations {
    let mut out = epoch.clone();
    for o in out.obs.iter_mut().filter(|o| o.lock && captured(o.key)) {
        let Some(sat) = sats.iter().find(|s| s.key == o.key) else { continue };
        let (code, phase) = spoof_delta(scenario, ctx, sat, t);
        o.pseudorange = o.pseudorange + Fixed32::from_f64(code);
        o.carrier_phase = o.carrier_phase + Fixed32::from_f64(phase / WAVELENGTH);
        o.cn0 = (o.cn0 + scenario.power_advantage).min(60.0);
    }
    out
}

/// Every locked channel replaced by the coherent spoofed constellation.
pub fn sync_spoof_observables(
    epoch: &EpochObservations,
    scenario: &AttackScenario,
    ctx: &SpoofContext<'_>,
    sats: &[SatState],
    t: f64,
) -> EpochObservations {
    spoofed(epoch, scenario, ctx, sats, t, |_| true)
}

/// Only channels the tracking state reports as captured carry spoofed values.
pub fn async_spoof_observables(
    epoch: &EpochObservations,
    scenario: &AttackScenario,
    ctx: &SpoofContext<'_>,
    sats: &[SatState],
    t: f64,
    tracking: &ReceiverTrackingState,
) -> EpochObservations {
    spoofed(epoch, scenario, ctx, sats, t, |k| {
        tracking.channel(k).is_some_and(|c| c.locked && c.tracked_source == SignalSource::Spoofed)
    })
}

/// Stateless jamming: each channel is judged against the tracking threshold
/// as if it had been locked before.
pub fn jam_observables(epoch: &EpochObservations, jsr: f64) -> EpochObservations {
    let mut out = epoch.clone();
    if jsr == 0.0 {
        return out;
    }
    for o in out.obs.iter_mut() {
        o.cn0 = (o.cn0 - jsr).clamp(0.0, 60.0);
        if o.cn0 < TRACKING_THRESHOLD {
            o.lock = false;
        }
    }
    out
}

/// Per-channel tracking state of a receiver under a changing RF environment.
#[derive(Debug, Clone)]
pub struct ReceiverTrackingState {
    channels: BTreeMap<SatKey, ChannelState>,
    rng: ChaCha8Rng,
}

impl ReceiverTrackingState {
    pub fn new(seed: u64) -> Self {
        ReceiverTrackingState { channels: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn channel(&self, key: SatKey) -> Option<&ChannelState> {
        self.channels.get(&key)
    }

    pub fn channels(&self) -> impl Iterator<Item = (&SatKey, &ChannelState)> {
        self.channels.iter()
    }

    pub fn captured_count(&self) -> usize {
        self.channels.values().filter(|c| c.locked && c.tracked_source == SignalSource::Spoofed).count()
    }

    fn attempt(&mut self, probability: f64) -> bool {
        probability >= 1.0 || self.rng.gen::<f64>() < probability
    }

    /// Runs the channel state machines for one epoch and returns what the
    /// receiver reports. `authentic` must come from `generator`, which is
    /// told about every loss of lock so the next lock draws a new ambiguity.
    pub fn apply(
        &mut self,
        authentic: &EpochObservations,
        env: &RfEnvironment,
        ctx: &SpoofContext<'_>,
        sats: &[SatState],
        generator: &mut ObservationGenerator,
    ) -> EpochObservations {
        let t = authentic.t;
        let jsr = env.jsr();
        let spoofer = env.spoofer();
        self.channels.retain(|k, _| authentic.get(*k).is_some());
        let mut out = authentic.clone();
        for o in out.obs.iter_mut() {
            let clean = o.cn0;
            let effective = (clean - jsr).clamp(0.0, 60.0);
            let sat = sats.iter().find(|s| s.key == o.key);
            let mut ch = self.channels.get(&o.key).copied().unwrap_or(ChannelState {
                locked: false,
                tracked_source: SignalSource::Authentic,
                cn0: clean,
                loss_count: o.loss_of_lock_count,
            });
            if ch.locked {
                if effective < TRACKING_THRESHOLD {
                    ch.locked = false;
                    ch.tracked_source = SignalSource::Authentic;
                    generator.drop_lock(o.key);
                } else if ch.tracked_source == SignalSource::Spoofed && spoofer.is_none() {
                    // Spoofer gone: the loop loses the signal it followed.
                    ch.locked = false;
                    ch.tracked_source = SignalSource::Authentic;
                    generator.drop_lock(o.key);
                } else if let (SignalSource::Authentic, Some(s), Some(sat)) = (ch.tracked_source, spoofer, sat) {
                    // An asynchronous spoofer runs on its own time base: its
                    // misalignment against a tracked code stays at the start offset.
                    let offset = match s.kind {
                        AttackKind::AsyncSpoof => s.code_offset_at_start,
                        _ => spoof_delta(s, ctx, sat, t).0,
                    };
                    if capture_check(&ch, offset, s.power_advantage) && self.attempt(s.capture_probability) {
                        ch.tracked_source = SignalSource::Spoofed;
                    }
                }
            } else if effective >= ACQUISITION_THRESHOLD {
                ch.locked = true;
                ch.tracked_source = match spoofer {
                    Some(s) if s.power_advantage >= CAPTURE_MIN_ADVANTAGE && self.attempt(s.capture_probability) => {
                        SignalSource::Spoofed
                    }
                    _ => SignalSource::Authentic,
                };
            }
            ch.loss_count = o.loss_of_lock_count;
            ch.cn0 = effective;
            self.channels.insert(o.key, ch);
            o.lock = ch.locked;
            o.cn0 = effective;
        }
        match spoofer {
            Some(s) => {
                let captured = |k: SatKey| {
                    self.channels.get(&k).is_some_and(|c| c.locked && c.tracked_source == SignalSource::Spoofed)
                };
                let result = spoofed(&out, s, ctx, sats, t, captured);
                for o in &result.obs {
                    if let Some(c) = self.channels.get_mut(&o.key) {
                        c.cn0 = o.cn0;
                    }
                }
                result
            }
            None => out,
        }
    }
}
