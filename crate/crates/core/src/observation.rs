//! Synthetic GNSS observables and the between-receiver / between-satellite
//! differencing operators.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constellation::{ecef_to_geodetic, enu_rotation, look_geometry, SatKey, SatState};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const L1_FREQUENCY: f64 = 1_575.42e6;
/// Carrier wavelength shared by both simulated constellations.
pub const WAVELENGTH: f64 = SPEED_OF_LIGHT / L1_FREQUENCY;

const AMBIGUITY_RANGE: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModel {
    /// m
    pub tropo_zenith: f64,
    /// m
    pub iono_zenith: f64,
    /// m of zenith delay per km of horizontal distance from `iono_origin`.
    pub iono_spatial_gradient: f64,
    /// Anchor of the ionospheric gradient, ECEF m. Without one the zenith delay
    /// is spatially uniform.
    #[serde(skip)]
    pub iono_origin: Option<Vector3<f64>>,
    pub code_noise_sigma_zenith: f64,
    pub phase_noise_sigma_zenith: f64,
    /// s per sqrt(s)
    pub rx_clock_rw_sigma: f64,
    pub sat_clock_enabled: bool,
    pub seed: u64,
}

impl Default for ErrorModel {
    fn default() -> Self {
        ErrorModel {
            tropo_zenith: 2.4,
            iono_zenith: 5.0,
            iono_spatial_gradient: 0.002,
            iono_origin: None,
            code_noise_sigma_zenith: 0.3,
            phase_noise_sigma_zenith: 0.003,
            rx_clock_rw_sigma: 1e-9,
            sat_clock_enabled: true,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObsError {
    #[error("satellite {0} missing or unlocked in one of the epochs")]
    MissingSatellite(SatKey),
    #[error("reference and target satellite are both {0}")]
    SameSatellite(SatKey),
    #[error("invalid error model: {0}")]
    InvalidModel(&'static str),
}

impl ErrorModel {
    /// Every error term off; observables equal geometry plus clocks plus ambiguity.
    pub fn error_free() -> Self {
        ErrorModel {
            tropo_zenith: 0.0,
            iono_zenith: 0.0,
            iono_spatial_gradient: 0.0,
            iono_origin: None,
            code_noise_sigma_zenith: 0.0,
            phase_noise_sigma_zenith: 0.0,
            rx_clock_rw_sigma: 0.0,
            sat_clock_enabled: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ObsError> {
        let terms = [
            self.tropo_zenith,
            self.iono_zenith,
            self.iono_spatial_gradient,
            self.code_noise_sigma_zenith,
            self.phase_noise_sigma_zenith,
            self.rx_clock_rw_sigma,
        ];
        if terms.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ObsError::InvalidModel("sigmas and zenith delays must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn tropo_delay(&self, elevation: f64) -> f64 {
        self.tropo_zenith / elevation.sin()
    }

    /// Zenith ionospheric delay above `pos`.
    pub fn iono_zenith_at(&self, pos: &Vector3<f64>) -> f64 {
        match self.iono_origin {
            Some(origin) => {
                let enu = enu_rotation(ecef_to_geodetic(&origin)) * (pos - origin);
                let horizontal_km = (enu.x * enu.x + enu.y * enu.y).sqrt() / 1000.0;
                self.iono_zenith + self.iono_spatial_gradient * horizontal_km
            }
            None => self.iono_zenith,
        }
    }

    pub fn iono_delay(&self, pos: &Vector3<f64>, elevation: f64) -> f64 {
        self.iono_zenith_at(pos) / elevation.sin()
    }

    pub fn code_sigma(&self, elevation: f64) -> f64 {
        self.code_noise_sigma_zenith / elevation.sin()
    }

    pub fn phase_sigma(&self, elevation: f64) -> f64 {
        self.phase_noise_sigma_zenith / elevation.sin()
    }
}

/// Clean C/N0 as a function of elevation, dB-Hz.
pub fn clean_cn0(elevation: f64) -> f64 {
    38.0 + 12.0 * elevation.max(0.0).sin()
}

/// Fixed-point observable value with 32 fractional bits (meters for code,
/// cycles for phase). Differences are exact integer arithmetic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed32(pub i64);

impl Fixed32 {
    pub const ONE: i64 = 1 << 32;

    pub fn from_f64(v: f64) -> Self {
        Fixed32((v * Self::ONE as f64).round() as i64)
    }

    pub fn from_int(v: i64) -> Self {
        Fixed32(v << 32)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::ONE as f64
    }

    /// Nearest fixed value to `units / divisor`.
    pub fn from_ratio(units: i64, divisor: i64) -> Self {
        let num = units as i128 * Self::ONE as i128;
        let d = divisor as i128;
        let half = d / 2;
        let q = if num >= 0 { (num + half) / d } else { (num - half) / d };
        Fixed32(q as i64)
    }

    /// Nearest integer count of `1 / divisor` units.
    pub fn to_units(self, divisor: i64) -> i64 {
        let num = self.0 as i128 * divisor as i128;
        let one = Self::ONE as i128;
        let half = one / 2;
        let q = if num >= 0 { (num + half) / one } else { (num - half) / one };
        q as i64
    }
}

impl std::ops::Add for Fixed32 {
    type Output = Fixed32;
    fn add(self, rhs: Fixed32) -> Fixed32 {
        Fixed32(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Fixed32 {
    type Output = Fixed32;
    fn sub(self, rhs: Fixed32) -> Fixed32 {
        Fixed32(self.0 - rhs.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub key: SatKey,
    /// m
    pub pseudorange: Fixed32,
    /// cycles
    pub carrier_phase: Fixed32,
    /// dB-Hz
    pub cn0: f64,
    pub lock: bool,
    pub loss_of_lock_count: u32,
}

impl Observation {
    pub fn pseudorange_m(&self) -> f64 {
        self.pseudorange.to_f64()
    }

    pub fn phase_cycles(&self) -> f64 {
        self.carrier_phase.to_f64()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochObservations {
    pub t: f64,
    pub receiver_id: u16,
    /// Sorted by satellite key, at most one entry per satellite.
    pub obs: Vec<Observation>,
    /// Truth, for oracles only.
    pub rx_clock_bias: f64,
}

impl EpochObservations {
    pub fn get(&self, key: SatKey) -> Option<&Observation> {
        self.obs
            .binary_search_by_key(&key, |o| o.key)
            .ok()
            .map(|i| &self.obs[i])
    }

    pub fn locked(&self, key: SatKey) -> Option<&Observation> {
        self.get(key).filter(|o| o.lock)
    }

    pub fn locked_count(&self) -> usize {
        self.obs.iter().filter(|o| o.lock).count()
    }

    pub fn locked_obs(&self) -> impl Iterator<Item = &Observation> {
        self.obs.iter().filter(|o| o.lock)
    }
}

#[derive(Debug, Clone, Copy)]
struct Channel {
    ambiguity: i64,
    loss_count: u32,
    locked: bool,
}

/// Per-receiver observable generator. Owns the seeded random stream, the
/// receiver clock random walk and the carrier ambiguity bookkeeping; one
/// instance per receiver, never shared.
#[derive(Debug, Clone)]
pub struct ObservationGenerator {
    receiver_id: u16,
    model: ErrorModel,
    rng: ChaCha8Rng,
    channels: BTreeMap<SatKey, Channel>,
    clock_bias: f64,
    last_t: Option<f64>,
}

impl ObservationGenerator {
    pub fn new(receiver_id: u16, model: ErrorModel, initial_clock_bias: f64) -> Self {
        let seed = model.seed ^ (receiver_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ObservationGenerator {
            receiver_id,
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            channels: BTreeMap::new(),
            clock_bias: initial_clock_bias,
            last_t: None,
        }
    }

    pub fn model(&self) -> &ErrorModel {
        &self.model
    }

    pub fn clock_bias(&self) -> f64 {
        self.clock_bias
    }

    /// Integer ambiguity currently held for `key`, if the channel is locked.
    pub fn ambiguity(&self, key: SatKey) -> Option<i64> {
        self.channels.get(&key).filter(|c| c.locked).map(|c| c.ambiguity)
    }

    /// Marks the channel as having lost lock; the next epoch that observes
    /// the satellite draws a fresh ambiguity and bumps the loss counter.
    pub fn drop_lock(&mut self, key: SatKey) {
        if let Some(c) = self.channels.get_mut(&key) {
            c.locked = false;
        }
    }

    fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Advances the receiver clock random walk to `t` and synthesizes the epoch.
    pub fn next_epoch(&mut self, receiver_ecef: &Vector3<f64>, sats: &[SatState], t: f64) -> EpochObservations {
        if let Some(last) = self.last_t {
            let dt = (t - last).max(0.0);
            if self.model.rx_clock_rw_sigma > 0.0 && dt > 0.0 {
                self.clock_bias += self.model.rx_clock_rw_sigma * dt.sqrt() * self.gaussian();
            }
        }
        self.last_t = Some(t);
        let bias = self.clock_bias;
        self.synthesize(receiver_ecef, bias, sats, t)
    }

    /// Observables of every satellite in `sats` at `receiver_ecef`:
    ///
    /// P = rho + c (dtr - dts) + T + I + eP,
    /// phase [m] = rho + c (dtr - dts) + T - I + lambda N + ePhi.
    ///
    /// Satellites absent from `sats` lose lock.
    pub fn synthesize(
        &mut self,
        receiver_ecef: &Vector3<f64>,
        rx_clock_bias: f64,
        sats: &[SatState],
        t: f64,
    ) -> EpochObservations {
        let mut sorted: Vec<&SatState> = sats.iter().collect();
        sorted.sort_by_key(|s| s.key);
        for (key, ch) in self.channels.iter_mut() {
            if sorted.binary_search_by_key(key, |s| s.key).is_err() {
                ch.locked = false;
            }
        }
        let mut obs = Vec::with_capacity(sorted.len());
        for sat in sorted {
            let geom = look_geometry(receiver_ecef, sat);
            let el = geom.elevation;
            let channel = match self.channels.get(&sat.key).copied() {
                Some(ch) if ch.locked => ch,
                previous => {
                    let ambiguity = self.rng.gen_range(-AMBIGUITY_RANGE..=AMBIGUITY_RANGE);
                    let loss_count = previous.map_or(0, |p| p.loss_count.wrapping_add(1));
                    let ch = Channel { ambiguity, loss_count, locked: true };
                    self.channels.insert(sat.key, ch);
                    ch
                }
            };
            let code_noise = self.model.code_sigma(el) * self.gaussian();
            let phase_noise = self.model.phase_sigma(el) * self.gaussian();
            let sat_clock = if self.model.sat_clock_enabled { sat.clock_bias } else { 0.0 };
            let tropo = self.model.tropo_delay(el);
            let iono = self.model.iono_delay(receiver_ecef, el);
            // Clock terms are quantized on their own so they cancel exactly
            // in the differences.
            let rx_code = Fixed32::from_f64(SPEED_OF_LIGHT * rx_clock_bias);
            let sat_code = Fixed32::from_f64(SPEED_OF_LIGHT * sat_clock);
            let rx_phase = Fixed32::from_f64(SPEED_OF_LIGHT * rx_clock_bias / WAVELENGTH);
            let sat_phase = Fixed32::from_f64(SPEED_OF_LIGHT * sat_clock / WAVELENGTH);
            let pseudorange =
                Fixed32::from_f64(geom.range + tropo + iono + code_noise) + rx_code - sat_code;
            let carrier_phase = Fixed32::from_f64((geom.range + tropo - iono + phase_noise) / WAVELENGTH)
                + Fixed32::from_int(channel.ambiguity)
                + rx_phase
                - sat_phase;
            obs.push(Observation {
                key: sat.key,
                pseudorange,
                carrier_phase,
                cn0: clean_cn0(el),
                lock: true,
                loss_of_lock_count: channel.loss_count,
            });
        }
        EpochObservations { t, receiver_id: self.receiver_id, obs, rx_clock_bias }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleDifference {
    /// m
    pub code_sd: f64,
    /// cycles
    pub phase_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleDifference {
    /// m
    pub code_dd: f64,
    /// cycles
    pub phase_dd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RawDifference {
    code: Fixed32,
    phase: Fixed32,
}

fn raw_single_difference(
    a: &EpochObservations,
    b: &EpochObservations,
    key: SatKey,
) -> Result<RawDifference, ObsError> {
    let oa = a.locked(key).ok_or(ObsError::MissingSatellite(key))?;
    let ob = b.locked(key).ok_or(ObsError::MissingSatellite(key))?;
    Ok(RawDifference {
        code: oa.pseudorange - ob.pseudorange,
        phase: oa.carrier_phase - ob.carrier_phase,
    })
}

/// Between-receiver difference `a - b` for one satellite.
pub fn single_difference(
    a: &EpochObservations,
    b: &EpochObservations,
    key: SatKey,
) -> Result<SingleDifference, ObsError> {
    let sd = raw_single_difference(a, b, key)?;
    Ok(SingleDifference { code_sd: sd.code.to_f64(), phase_sd: sd.phase.to_f64() })
}

/// `SD(sat) - SD(ref_sat)`, formed in exact integer arithmetic.
pub fn double_difference(
    a: &EpochObservations,
    b: &EpochObservations,
    ref_sat: SatKey,
    sat: SatKey,
) -> Result<DoubleDifference, ObsError> {
    if ref_sat == sat {
        return Err(ObsError::SameSatellite(sat));
    }
    let s = raw_single_difference(a, b, sat)?;
    let r = raw_single_difference(a, b, ref_sat)?;
    Ok(DoubleDifference {
        code_dd: (s.code - r.code).to_f64(),
        phase_dd: (s.phase - r.phase).to_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{
        geodetic_to_ecef, propagate_all, visible, Geodetic, OrbitShell, DEFAULT_ELEVATION_MASK,
    };
    use proptest::prelude::*;

    fn station() -> Vector3<f64> {
        geodetic_to_ecef(Geodetic::from_degrees(59.35, 18.07, 30.0))
    }

    fn rover() -> Vector3<f64> {
        geodetic_to_ecef(Geodetic::from_degrees(59.356, 18.08, 35.0))
    }

    fn sats_at(t: f64) -> Vec<SatState> {
        let all = propagate_all(&[OrbitShell::gps_like(), OrbitShell::galileo_like()], t);
        visible(&station(), &all, DEFAULT_ELEVATION_MASK)
    }

    #[test]
    fn error_free_pseudorange_is_geometric_range() {
        let sats = sats_at(100.0);
        let mut gen = ObservationGenerator::new(1, ErrorModel::error_free(), 0.0);
        let ep = gen.synthesize(&station(), 0.0, &sats, 100.0);
        for (o, s) in ep.obs.iter().zip(&sats) {
            let rho = (s.pos_ecef - station()).norm();
            assert!((o.pseudorange_m() - rho).abs() < 1e-9);
            let n = gen.ambiguity(o.key).unwrap() as f64;
            let lhs = o.phase_cycles() * WAVELENGTH - o.pseudorange_m();
            assert!((lhs - WAVELENGTH * n).abs() < 1e-6, "{lhs} vs {}", WAVELENGTH * n);
        }
    }

    #[test]
    fn receiver_clock_is_common_mode() {
        let sats = sats_at(100.0);
        let mut g0 = ObservationGenerator::new(1, ErrorModel::error_free(), 0.0);
        let mut g1 = ObservationGenerator::new(1, ErrorModel::error_free(), 0.0);
        let e0 = g0.synthesize(&station(), 0.0, &sats, 100.0);
        let e1 = g1.synthesize(&station(), 1e-3, &sats, 100.0);
        for (a, b) in e0.obs.iter().zip(&e1.obs) {
            assert!(((b.pseudorange - a.pseudorange).to_f64() - 299_792.458).abs() < 1e-9);
        }
    }

    #[test]
    fn code_minus_phase_is_twice_iono_minus_ambiguity() {
        let model = ErrorModel { seed: 7, rx_clock_rw_sigma: 0.0, ..ErrorModel::default() };
        let mut gen = ObservationGenerator::new(1, model.clone(), 0.0);
        let sats = sats_at(0.0);
        let key = sats[0].key;
        let mut sum = 0.0;
        for k in 0..1000 {
            let ep = gen.synthesize(&station(), 0.0, &sats, k as f64 * 1e-3);
            let sat = &sats[0];
            let el = look_geometry(&station(), sat).elevation;
            let o = ep.get(key).unwrap();
            let iono = model.iono_delay(&station(), el);
            let n = gen.ambiguity(key).unwrap() as f64;
            let cmc = o.pseudorange_m() - WAVELENGTH * o.phase_cycles();
            let expected = 2.0 * iono - WAVELENGTH * n;
            let sigma = (model.code_sigma(el).powi(2) + model.phase_sigma(el).powi(2)).sqrt();
            assert!((cmc - expected).abs() < 5.0 * sigma);
            sum += cmc - expected;
        }
        assert!((sum / 1000.0).abs() < 5.0 * model.code_sigma(0.2) / 1000f64.sqrt());
    }

    #[test]
    fn single_difference_cancels_satellite_clock() {
        let sats = sats_at(50.0);
        let model = ErrorModel { sat_clock_enabled: true, ..ErrorModel::error_free() };
        let mut ga = ObservationGenerator::new(1, model.clone(), 0.0);
        let mut gb = ObservationGenerator::new(2, model, 0.0);
        let a = ga.synthesize(&rover(), 2e-4, &sats, 50.0);
        let b = gb.synthesize(&station(), -3e-5, &sats, 50.0);
        for s in &sats {
            let sd = single_difference(&a, &b, s.key).unwrap();
            let expected = (s.pos_ecef - rover()).norm() - (s.pos_ecef - station()).norm()
                + SPEED_OF_LIGHT * (2e-4 + 3e-5);
            assert!((sd.code_sd - expected).abs() < 1e-6);
        }
        let same = single_difference(&a, &a, sats[0].key).unwrap();
        assert_eq!(same, SingleDifference { code_sd: 0.0, phase_sd: 0.0 });
    }

    #[test]
    fn missing_and_same_satellite_errors() {
        let sats = sats_at(50.0);
        let mut ga = ObservationGenerator::new(1, ErrorModel::error_free(), 0.0);
        let mut gb = ObservationGenerator::new(2, ErrorModel::error_free(), 0.0);
        let a = ga.synthesize(&rover(), 0.0, &sats, 50.0);
        let b = gb.synthesize(&station(), 0.0, &sats[1..], 50.0);
        assert_eq!(single_difference(&a, &b, sats[0].key), Err(ObsError::MissingSatellite(sats[0].key)));
        assert_eq!(
            double_difference(&a, &b, sats[1].key, sats[1].key),
            Err(ObsError::SameSatellite(sats[1].key))
        );
    }

    #[test]
    fn double_difference_matches_geometry() {
        let sats = sats_at(300.0);
        let mut ga = ObservationGenerator::new(1, ErrorModel::error_free(), 0.0);
        let mut gb = ObservationGenerator::new(2, ErrorModel::error_free(), 0.0);
        let a = ga.synthesize(&rover(), 0.0, &sats, 300.0);
        let b = gb.synthesize(&station(), 0.0, &sats, 300.0);
        let r = &sats[0];
        let geo = |s: &SatState| (s.pos_ecef - rover()).norm() - (s.pos_ecef - station()).norm();
        for s in &sats[1..] {
            let dd = double_difference(&a, &b, r.key, s.key).unwrap();
            assert!((dd.code_dd - (geo(s) - geo(r))).abs() < 1e-9, "{}", dd.code_dd - (geo(s) - geo(r)));
        }
    }

    #[test]
    fn ten_ms_clock_at_one_receiver_leaves_dd_unchanged() {
        let sats = sats_at(300.0);
        let mut ga = ObservationGenerator::new(1, ErrorModel::error_free(), 0.0);
        let mut ga2 = ObservationGenerator::new(1, ErrorModel::error_free(), 0.0);
        let mut gb = ObservationGenerator::new(2, ErrorModel::error_free(), 0.0);
        let a = ga.synthesize(&rover(), 0.0, &sats, 300.0);
        let a2 = ga2.synthesize(&rover(), 0.01, &sats, 300.0);
        let b = gb.synthesize(&station(), 0.0, &sats, 300.0);
        for s in &sats[1..] {
            let d0 = double_difference(&a, &b, sats[0].key, s.key).unwrap();
            let d1 = double_difference(&a2, &b, sats[0].key, s.key).unwrap();
            assert_eq!(d0, d1);
        }
    }

    #[test]
    fn dd_phase_ambiguity_is_integer_and_constant_under_lock() {
        let model = ErrorModel { phase_noise_sigma_zenith: 0.0, code_noise_sigma_zenith: 0.0, ..ErrorModel::default() };
        let mut ga = ObservationGenerator::new(1, model.clone(), 0.0);
        let mut gb = ObservationGenerator::new(2, model, 0.0);
        let all_t0 = sats_at(0.0);
        let keys: Vec<SatKey> = all_t0.iter().map(|s| s.key).collect();
        let mut first: Option<Vec<f64>> = None;
        for k in 0..20 {
            let t = k as f64;
            let sats: Vec<SatState> = propagate_all(&[OrbitShell::gps_like(), OrbitShell::galileo_like()], t)
                .into_iter()
                .filter(|s| keys.contains(&s.key))
                .collect();
            let a = ga.next_epoch(&rover(), &sats, t);
            let b = gb.next_epoch(&station(), &sats, t);
            let geo = |s: &SatState| {
                let tr = |p: &Vector3<f64>| {
                    let el = look_geometry(p, s).elevation;
                    (s.pos_ecef - p).norm() + ga.model().tropo_delay(el) - ga.model().iono_delay(p, el)
                };
                tr(&rover()) - tr(&station())
            };
            let amb: Vec<f64> = sats[1..]
                .iter()
                .map(|s| {
                    let dd = double_difference(&a, &b, sats[0].key, s.key).unwrap();
                    dd.phase_dd - (geo(s) - geo(&sats[0])) / WAVELENGTH
                })
                .collect();
            for v in &amb {
                assert!((v - v.round()).abs() < 1e-6, "{v}");
            }
            match &first {
                None => first = Some(amb),
                Some(f) => assert_eq!(f.iter().map(|v| v.round()).collect::<Vec<_>>(), amb.iter().map(|v| v.round()).collect::<Vec<_>>()),
            }
        }
    }

    #[test]
    fn code_noise_scales_with_elevation() {
        let model = ErrorModel { seed: 3, ..ErrorModel::default() };
        let mut gen = ObservationGenerator::new(1, model.clone(), 0.0);
        let sats = sats_at(0.0);
        let clean = ErrorModel { code_noise_sigma_zenith: 0.0, phase_noise_sigma_zenith: 0.0, ..model.clone() };
        let mut truth = ObservationGenerator::new(1, clean, 0.0).synthesize(&station(), 0.0, &sats, 0.0);
        truth.obs.sort_by_key(|o| o.key);
        let n = 10_000;
        let mut acc = vec![0.0; sats.len()];
        for _ in 0..n {
            let ep = gen.synthesize(&station(), 0.0, &sats, 0.0);
            for (i, (o, t)) in ep.obs.iter().zip(&truth.obs).enumerate() {
                acc[i] += (o.pseudorange - t.pseudorange).to_f64().powi(2);
            }
        }
        for (i, s) in sats.iter().enumerate() {
            let el = look_geometry(&station(), s).elevation;
            let sd = (acc[i] / n as f64).sqrt();
            let expected = model.code_sigma(el);
            assert!((sd / expected - 1.0).abs() < 0.15, "{} {sd} {expected}", s.key);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let sats = sats_at(10.0);
        let model = ErrorModel { seed: 99, ..ErrorModel::default() };
        let run = || {
            let mut g = ObservationGenerator::new(4, model.clone(), 1e-5);
            (0..5).map(|k| g.next_epoch(&station(), &sats, 10.0 + k as f64)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn drop_lock_draws_new_ambiguity_and_counts() {
        let sats = sats_at(10.0);
        let mut g = ObservationGenerator::new(1, ErrorModel::default(), 0.0);
        let e0 = g.next_epoch(&station(), &sats, 0.0);
        let key = sats[0].key;
        let n0 = g.ambiguity(key).unwrap();
        g.drop_lock(key);
        assert_eq!(g.ambiguity(key), None);
        let e1 = g.next_epoch(&station(), &sats, 1.0);
        assert_ne!(g.ambiguity(key).unwrap(), n0);
        assert_eq!(e0.get(key).unwrap().loss_of_lock_count + 1, e1.get(key).unwrap().loss_of_lock_count);
    }

    #[test]
    fn model_validation_rejects_negative_sigma() {
        let m = ErrorModel { code_noise_sigma_zenith: -1.0, ..ErrorModel::default() };
        assert!(m.validate().is_err());
        assert!(ErrorModel::default().validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dd_invariant_under_any_clock_biases(
            dta in -1e-3f64..1e-3, dtb in -1e-3f64..1e-3, seed in 0u64..1000,
        ) {
            let sats = sats_at(200.0);
            let model = ErrorModel { seed, ..ErrorModel::default() };
            let mut a0 = ObservationGenerator::new(1, model.clone(), 0.0);
            let mut b0 = ObservationGenerator::new(2, model.clone(), 0.0);
            let mut a1 = ObservationGenerator::new(1, model.clone(), 0.0);
            let mut b1 = ObservationGenerator::new(2, model, 0.0);
            let ea0 = a0.synthesize(&rover(), 0.0, &sats, 200.0);
            let eb0 = b0.synthesize(&station(), 0.0, &sats, 200.0);
            let ea1 = a1.synthesize(&rover(), dta, &sats, 200.0);
            let eb1 = b1.synthesize(&station(), dtb, &sats, 200.0);
            for s in &sats[1..] {
                let d0 = double_difference(&ea0, &eb0, sats[0].key, s.key).unwrap();
                let d1 = double_difference(&ea1, &eb1, sats[0].key, s.key).unwrap();
                prop_assert_eq!(d0, d1);
            }
        }
    }
}
