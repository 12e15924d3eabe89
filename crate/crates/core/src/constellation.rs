//! Satellite geometry: circular-orbit shells, Earth-fixed propagation and
//! receiver-relative look angles.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Earth gravitational parameter, m^3/s^2.
pub const GM: f64 = 3.986005e14;
/// Earth rotation rate, rad/s.
pub const EARTH_ROTATION: f64 = 7.2921151467e-5;
/// WGS-84 semi-major axis, m.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

pub const DEFAULT_ELEVATION_MASK: f64 = 10.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationId {
    Gps,
    Galileo,
}

impl ConstellationId {
    /// Numeric code used on the wire (4 bits).
    pub fn code(self) -> u8 {
        match self {
            ConstellationId::Gps => 0,
            ConstellationId::Galileo => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ConstellationId::Gps),
            2 => Some(ConstellationId::Galileo),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            ConstellationId::Gps => 'G',
            ConstellationId::Galileo => 'E',
        }
    }
}

/// Identity of a satellite across constellations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SatKey {
    pub constellation: ConstellationId,
    pub sat_id: u8,
}

impl SatKey {
    pub fn new(constellation: ConstellationId, sat_id: u8) -> Self {
        SatKey { constellation, sat_id }
    }
}

impl std::fmt::Display for SatKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{:02}", self.constellation.letter(), self.sat_id)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ShellError {
    #[error("semi-major axis {0} m is not above the Earth surface")]
    BelowSurface(f64),
    #[error("{sats} satellites cannot be split evenly over {planes} planes")]
    UnevenPlanes { sats: usize, planes: usize },
    #[error("expected {expected} {what} offsets, got {got}")]
    OffsetCount { what: &'static str, expected: usize, got: usize },
}

/// A circular-orbit constellation shell.
///
/// Satellite `i` (zero based) sits in plane `i / (sat_count / plane_count)` and
/// carries its own argument-of-latitude offset `anomaly_offsets[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitShell {
    pub constellation_id: ConstellationId,
    pub sat_count: usize,
    pub plane_count: usize,
    pub semi_major_axis: f64,
    pub inclination: f64,
    pub raan_offsets: Vec<f64>,
    pub anomaly_offsets: Vec<f64>,
}

impl OrbitShell {
    pub fn new(
        constellation_id: ConstellationId,
        sat_count: usize,
        plane_count: usize,
        semi_major_axis: f64,
        inclination: f64,
        raan_offsets: Vec<f64>,
        anomaly_offsets: Vec<f64>,
    ) -> Result<Self, ShellError> {
        if semi_major_axis <= WGS84_A {
            return Err(ShellError::BelowSurface(semi_major_axis));
        }
        if plane_count == 0 || !sat_count.is_multiple_of(plane_count) {
            return Err(ShellError::UnevenPlanes { sats: sat_count, planes: plane_count });
        }
        if raan_offsets.len() != plane_count {
            return Err(ShellError::OffsetCount {
                what: "raan",
                expected: plane_count,
                got: raan_offsets.len(),
            });
        }
        if anomaly_offsets.len() != sat_count {
            return Err(ShellError::OffsetCount {
                what: "anomaly",
                expected: sat_count,
                got: anomaly_offsets.len(),
            });
        }
        Ok(OrbitShell {
            constellation_id,
            sat_count,
            plane_count,
            semi_major_axis,
            inclination,
            raan_offsets,
            anomaly_offsets,
        })
    }

    /// Walker-delta layout `sat_count/plane_count/phasing`.
    pub fn walker(
        constellation_id: ConstellationId,
        sat_count: usize,
        plane_count: usize,
        phasing: usize,
        semi_major_axis: f64,
        inclination: f64,
    ) -> Result<Self, ShellError> {
        if plane_count == 0 || !sat_count.is_multiple_of(plane_count) {
            return Err(ShellError::UnevenPlanes { sats: sat_count, planes: plane_count });
        }
        let per_plane = sat_count / plane_count;
        let raan = (0..plane_count)
            .map(|p| 2.0 * PI * p as f64 / plane_count as f64)
            .collect();
        let anomaly = (0..sat_count)
            .map(|i| {
                let plane = i / per_plane;
                let slot = i % per_plane;
                2.0 * PI * slot as f64 / per_plane as f64
                    + 2.0 * PI * (phasing * plane) as f64 / sat_count as f64
            })
            .collect();
        Self::new(constellation_id, sat_count, plane_count, semi_major_axis, inclination, raan, anomaly)
    }

    /// Walker 30/6/1, a = 26 559 700 m, 55 deg inclination.
    pub fn gps_like() -> Self {
        Self::walker(ConstellationId::Gps, 30, 6, 1, 26_559_700.0, 55f64.to_radians())
            .expect("static shell parameters")
    }

    /// 24 satellites in 3 planes, a = 29 599 800 m, 56 deg inclination.
    pub fn galileo_like() -> Self {
        Self::walker(ConstellationId::Galileo, 24, 3, 1, 29_599_800.0, 56f64.to_radians())
            .expect("static shell parameters")
    }

    pub fn mean_motion(&self) -> f64 {
        (GM / self.semi_major_axis.powi(3)).sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.mean_motion()
    }

    fn plane_of(&self, index: usize) -> usize {
        index / (self.sat_count / self.plane_count)
    }

    /// Inertial position and velocity of satellite `index` at time `t`.
    pub fn inertial_state(&self, index: usize, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let a = self.semi_major_axis;
        let n = self.mean_motion();
        let u = self.anomaly_offsets[index] + n * t;
        let raan = self.raan_offsets[self.plane_of(index)];
        let r_orb = Vector3::new(a * u.cos(), a * u.sin(), 0.0);
        let v_orb = Vector3::new(-a * n * u.sin(), a * n * u.cos(), 0.0);
        let rot = rot_z(raan) * rot_x(self.inclination);
        (rot * r_orb, rot * v_orb)
    }
}

/// Deterministic per-satellite clock polynomial: (bias at t=0, drift).
pub fn sat_clock_coefficients(key: SatKey) -> (f64, f64) {
    let k = key.sat_id as f64 + 37.0 * key.constellation.code() as f64;
    (2.0e-5 * (1.7 * k).sin(), 3.0e-11 * (2.3 * k).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatState {
    pub key: SatKey,
    pub pos_ecef: Vector3<f64>,
    pub vel_ecef: Vector3<f64>,
    pub clock_bias: f64,
    pub clock_drift: f64,
}

impl SatState {
    pub fn sat_id(&self) -> u8 {
        self.key.sat_id
    }
}

/// Rotation about z by `angle` (active).
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Propagates every satellite of `shell` to simulation time `t` (seconds, t >= 0),
/// returning Earth-fixed states ordered by satellite id.
pub fn propagate(shell: &OrbitShell, t: f64) -> Vec<SatState> {
    let theta = EARTH_ROTATION * t;
    let to_ecef = rot_z(-theta);
    let omega = Vector3::new(0.0, 0.0, EARTH_ROTATION);
    (0..shell.sat_count)
        .map(|i| {
            let (r_eci, v_eci) = shell.inertial_state(i, t);
            let pos = to_ecef * r_eci;
            let vel = to_ecef * v_eci - omega.cross(&pos);
            let key = SatKey::new(shell.constellation_id, (i + 1) as u8);
            let (bias0, drift) = sat_clock_coefficients(key);
            SatState {
                key,
                pos_ecef: pos,
                vel_ecef: vel,
                clock_bias: bias0 + drift * t,
                clock_drift: drift,
            }
        })
        .collect()
}

/// Propagates several shells; output ordered by (constellation, sat id).
pub fn propagate_all(shells: &[OrbitShell], t: f64) -> Vec<SatState> {
    let mut sats: Vec<SatState> = shells.iter().flat_map(|s| propagate(s, t)).collect();
    sats.sort_by_key(|s| s.key);
    sats
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodetic {
    /// radians
    pub lat: f64,
    /// radians
    pub lon: f64,
    /// meters above the ellipsoid
    pub height: f64,
}

impl Geodetic {
    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height: f64) -> Self {
        Geodetic { lat: lat_deg.to_radians(), lon: lon_deg.to_radians(), height }
    }
}

pub fn geodetic_to_ecef(g: Geodetic) -> Vector3<f64> {
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let (slat, clat) = g.lat.sin_cos();
    let (slon, clon) = g.lon.sin_cos();
    let n = WGS84_A / (1.0 - e2 * slat * slat).sqrt();
    Vector3::new(
        (n + g.height) * clat * clon,
        (n + g.height) * clat * slon,
        (n * (1.0 - e2) + g.height) * slat,
    )
}

pub fn ecef_to_geodetic(p: &Vector3<f64>) -> Geodetic {
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let r2 = p.x * p.x + p.y * p.y;
    let mut z = p.z;
    let mut zk = 0.0;
    let mut v = WGS84_A;
    // fixed-point iteration on z + N e^2 sin(lat)
    for _ in 0..20 {
        if (z - zk).abs() < 1e-6 {
            break;
        }
        zk = z;
        let sinp = z / (r2 + z * z).sqrt();
        v = WGS84_A / (1.0 - e2 * sinp * sinp).sqrt();
        z = p.z + v * e2 * sinp;
    }
    let lat = if r2 > 1e-12 {
        (z / r2.sqrt()).atan()
    } else if p.z > 0.0 {
        PI / 2.0
    } else {
        -PI / 2.0
    };
    let lon = if r2 > 1e-12 { p.y.atan2(p.x) } else { 0.0 };
    Geodetic { lat, lon, height: (r2 + z * z).sqrt() - v }
}

/// Rotation taking ECEF vectors into local East-North-Up at `g`.
pub fn enu_rotation(g: Geodetic) -> Matrix3<f64> {
    let (slat, clat) = g.lat.sin_cos();
    let (slon, clon) = g.lon.sin_cos();
    Matrix3::new(
        -slon, clon, 0.0,
        -slat * clon, -slat * slon, clat,
        clat * clon, clat * slon, slat,
    )
}

pub fn ecef_to_enu(delta: &Vector3<f64>, origin: &Vector3<f64>) -> Vector3<f64> {
    enu_rotation(ecef_to_geodetic(origin)) * delta
}

pub fn enu_to_ecef(enu: &Vector3<f64>, origin: &Vector3<f64>) -> Vector3<f64> {
    enu_rotation(ecef_to_geodetic(origin)).transpose() * enu
}

/// Height above the WGS-84 ellipsoid.
pub fn height_above_ellipsoid(p: &Vector3<f64>) -> f64 {
    ecef_to_geodetic(p).height
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookGeometry {
    pub range: f64,
    pub elevation: f64,
    pub azimuth: f64,
    /// Unit line of sight from receiver to satellite, ECEF.
    pub unit_los: Vector3<f64>,
}

pub fn look_geometry(receiver_ecef: &Vector3<f64>, sat: &SatState) -> LookGeometry {
    look_at(receiver_ecef, &sat.pos_ecef)
}

pub fn look_at(receiver_ecef: &Vector3<f64>, target: &Vector3<f64>) -> LookGeometry {
    let d = target - receiver_ecef;
    let range = d.norm();
    let unit_los = d / range;
    let enu = enu_rotation(ecef_to_geodetic(receiver_ecef)) * unit_los;
    let elevation = enu.z.clamp(-1.0, 1.0).asin();
    let mut azimuth = enu.x.atan2(enu.y);
    if azimuth < 0.0 {
        azimuth += 2.0 * PI;
    }
    LookGeometry { range, elevation, azimuth, unit_los }
}

/// Satellites at or above `mask` radians as seen from `receiver_ecef`, in input order.
pub fn visible(receiver_ecef: &Vector3<f64>, sats: &[SatState], mask: f64) -> Vec<SatState> {
    let mut out: Vec<SatState> = sats
        .iter()
        .filter(|s| look_geometry(receiver_ecef, s).elevation >= mask)
        .copied()
        .collect();
    out.sort_by_key(|s| s.key);
    out
}
