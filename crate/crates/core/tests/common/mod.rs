#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use netrtk::constellation::{
    ecef_to_enu, ecef_to_geodetic, enu_rotation, enu_to_ecef, geodetic_to_ecef, propagate_all, visible, Geodetic,
    OrbitShell, SatState, DEFAULT_ELEVATION_MASK,
};
use netrtk::observation::{EpochObservations, ErrorModel, ObservationGenerator};

pub fn station_pos() -> Vector3<f64> {
    geodetic_to_ecef(Geodetic::from_degrees(45.07, 7.66, 250.0))
}

/// Rover `east`/`north` meters from the station.
pub fn rover_pos(east: f64, north: f64) -> Vector3<f64> {
    let s = station_pos();
    s + enu_to_ecef(&Vector3::new(east, north, 0.0), &s)
}

pub fn shells() -> Vec<OrbitShell> {
    vec![OrbitShell::gps_like(), OrbitShell::galileo_like()]
}

pub fn sats_at(t: f64) -> Vec<SatState> {
    propagate_all(&shells(), t)
}

pub fn in_view(pos: &Vector3<f64>, sats: &[SatState]) -> Vec<SatState> {
    visible(pos, sats, DEFAULT_ELEVATION_MASK)
}

pub fn model(seed: u64) -> ErrorModel {
    ErrorModel { seed, iono_origin: Some(station_pos()), ..ErrorModel::default() }
}

pub fn enu_error(p: &Vector3<f64>, truth: &Vector3<f64>) -> Vector3<f64> {
    ecef_to_enu(&(p - truth), truth)
}

pub fn enu_covariance(cov: &Matrix3<f64>, at: &Vector3<f64>) -> Matrix3<f64> {
    let r = enu_rotation(ecef_to_geodetic(at));
    r * cov * r.transpose()
}

/// Station and rover receivers sharing one error model.
pub struct Pair {
    pub station: Vector3<f64>,
    pub rover: Vector3<f64>,
    pub gs: ObservationGenerator,
    pub gr: ObservationGenerator,
}

impl Pair {
    pub fn new(model: ErrorModel, east: f64, north: f64) -> Self {
        Pair {
            station: station_pos(),
            rover: rover_pos(east, north),
            gs: ObservationGenerator::new(1, model.clone(), 1e-4),
            gr: ObservationGenerator::new(2, model, -3e-4),
        }
    }

    pub fn epoch(&mut self, t: f64) -> (EpochObservations, EpochObservations, Vec<SatState>) {
        let sats = sats_at(t);
        let es = self.gs.next_epoch(&self.station, &in_view(&self.station, &sats), t);
        let er = self.gr.next_epoch(&self.rover, &in_view(&self.rover, &sats), t);
        (er, es, sats)
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn scenario(name: &str) -> netrtk::harness::ScenarioConfig {
    let path = format!("{}/scenarios/{name}.scn", env!("CARGO_MANIFEST_DIR"));
    netrtk::harness::ScenarioConfig::load(path).unwrap()
}

pub fn csv(records: &[netrtk::harness::EpochRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    netrtk::harness::write_records_csv(records, &mut out).unwrap();
    out
}
