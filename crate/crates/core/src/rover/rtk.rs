//! Double-difference positioning against a reference station: code-only
//! DGNSS and the carrier-phase float filter with integer fixing.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{ambiguity_fix, sat_state, NavSolution, NoFix, SolutionMode, SolveError};
use crate::constellation::{ecef_to_enu, ecef_to_geodetic, look_geometry, SatKey, SatState};
use crate::observation::{double_difference, EpochObservations, ErrorModel, WAVELENGTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    /// Baseline held constant up to a tiny numerical process noise.
    Static,
    /// White-noise position with `kinematic_sigma` per epoch.
    Kinematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtkConfig {
    /// m
    pub code_sigma_zenith: f64,
    /// m
    pub phase_sigma_zenith: f64,
    /// Nominal zenith tropospheric delay, m.
    pub tropo_zenith: f64,
    /// Nominal zenith ionospheric delay, m.
    pub iono_zenith: f64,
    /// Spatial ionospheric gradient, m of zenith delay per km of baseline.
    pub iono_gradient: f64,
    pub dynamics: Dynamics,
    /// m per sqrt(epoch)
    pub kinematic_sigma: f64,
    pub ratio_threshold: f64,
    /// s
    pub max_age: f64,
    pub elevation_mask_deg: f64,
    /// m
    pub initial_baseline_sigma: f64,
    /// cycles
    pub initial_ambiguity_sigma: f64,
    /// Innovation test quantile above which the filter is declared divergent.
    pub divergence_quantile: f64,
    /// Quantile for the fixed carrier residual check.
    pub validation_quantile: f64,
    pub fix_and_hold: bool,
    /// Lowest-elevation ambiguities that may be left float to reach a fix.
    pub partial_fix_max_drop: usize,
}

impl Default for RtkConfig {
    fn default() -> Self {
        RtkConfig::from_model(&ErrorModel::default())
    }
}

impl RtkConfig {
    pub fn from_model(model: &ErrorModel) -> Self {
        RtkConfig {
            code_sigma_zenith: model.code_noise_sigma_zenith,
            phase_sigma_zenith: model.phase_noise_sigma_zenith,
            tropo_zenith: model.tropo_zenith,
            iono_zenith: model.iono_zenith,
            iono_gradient: model.iono_spatial_gradient,
            dynamics: Dynamics::Kinematic,
            kinematic_sigma: 1.0,
            ratio_threshold: 3.0,
            max_age: 10.0,
            elevation_mask_deg: 10.0,
            initial_baseline_sigma: 30.0,
            initial_ambiguity_sigma: 100.0,
            divergence_quantile: 0.999_999,
            validation_quantile: 0.9999,
            fix_and_hold: true,
            partial_fix_max_drop: 4,
        }
    }
}

const CODE_SIGMA_FLOOR: f64 = 1e-3;
const PHASE_SIGMA_FLOOR: f64 = 1e-4;
const STATIC_PROCESS_VAR: f64 = 1e-8;
const HOLD_VAR: f64 = 1e-3;
const REFERENCE_HYSTERESIS_DEG: f64 = 2.0;

/// Upper `q` quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_quantile(q: f64, dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    ChiSquared::new(dof as f64).map_or(f64::INFINITY, |d| d.inverse_cdf(q))
}

#[derive(Debug, Clone, Copy)]
struct CommonSat {
    key: SatKey,
    pos: Vector3<f64>,
    elevation: f64,
    rover_loss: u32,
    base_loss: u32,
}

fn common_sats(
    rover: &EpochObservations,
    station: &EpochObservations,
    station_pos: &Vector3<f64>,
    sats: &[SatState],
    mask: f64,
) -> Vec<CommonSat> {
    rover
        .locked_obs()
        .filter_map(|ro| {
            let so = station.locked(ro.key)?;
            let sat = sat_state(sats, ro.key)?;
            let elevation = look_geometry(station_pos, sat).elevation;
            (elevation >= mask).then_some(CommonSat {
                key: ro.key,
                pos: sat.pos_ecef,
                elevation,
                rover_loss: ro.loss_of_lock_count,
                base_loss: so.loss_of_lock_count,
            })
        })
        .collect()
}

fn highest(common: &[CommonSat]) -> Option<&CommonSat> {
    common.iter().max_by(|a, b| a.elevation.total_cmp(&b.elevation).then(b.key.cmp(&a.key)))
}

#[derive(Debug, Clone, Copy)]
struct Atmosphere {
    tropo_zenith: f64,
    iono_zenith: f64,
}

impl Atmosphere {
    fn of(cfg: &RtkConfig) -> Self {
        Atmosphere { tropo_zenith: cfg.tropo_zenith, iono_zenith: cfg.iono_zenith }
    }
}

struct DdModel {
    code: DVector<f64>,
    phase: DVector<f64>,
    h: DMatrix<f64>,
}

fn up_vector(p: &Vector3<f64>) -> Vector3<f64> {
    let g = ecef_to_geodetic(p);
    Vector3::new(g.lat.cos() * g.lon.cos(), g.lat.cos() * g.lon.sin(), g.lat.sin())
}

#[derive(Debug, Clone)]
struct DdRow {
    key: SatKey,
    pos: Vector3<f64>,
    elevation: f64,
    /// m
    code: f64,
    /// cycles
    phase: f64,
}

#[derive(Debug, Clone)]
struct DdSet {
    reference: SatKey,
    ref_pos: Vector3<f64>,
    ref_elevation: f64,
    rows: Vec<DdRow>,
}

impl DdSet {
    fn build(
        rover: &EpochObservations,
        station: &EpochObservations,
        common: &[CommonSat],
        reference: SatKey,
    ) -> DdSet {
        let r = common.iter().find(|c| c.key == reference).expect("reference is common");
        let rows = common
            .iter()
            .filter(|c| c.key != reference)
            .map(|c| {
                let dd = double_difference(rover, station, reference, c.key).expect("locked at both receivers");
                DdRow { key: c.key, pos: c.pos, elevation: c.elevation, code: dd.code_dd, phase: dd.phase_dd }
            })
            .collect();
        DdSet { reference, ref_pos: r.pos, ref_elevation: r.elevation, rows }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Covariance of the double differences for a zenith sigma per receiver,
    /// plus the between-receiver ionospheric decorrelation `iono_zenith` (m).
    fn covariance(&self, sigma_zenith: f64, floor: f64, iono_zenith: f64) -> DMatrix<f64> {
        let var = |el: f64| 2.0 * (sigma_zenith / el.sin()).max(floor).powi(2) + (iono_zenith / el.sin()).powi(2);
        let v_ref = var(self.ref_elevation);
        let m = self.len();
        DMatrix::from_fn(m, m, |i, j| if i == j { var(self.rows[i].elevation) + v_ref } else { v_ref })
    }

    /// Modelled code and carrier double differences (m, ambiguity excluded)
    /// and their Jacobian for baseline `b`. Nominal zenith delays are mapped
    /// at each receiver so elevation differences across the baseline are
    /// accounted for.
    fn model(&self, base: &Vector3<f64>, b: &Vector3<f64>, atmos: &Atmosphere) -> DdModel {
        let rov = base + b;
        let up_rov = up_vector(&rov);
        let up_base = up_vector(base);
        let single = |sat: &Vector3<f64>| {
            let d_rov = sat - rov;
            let d_base = sat - base;
            let (r_rov, r_base) = (d_rov.norm(), d_base.norm());
            let e = d_rov / r_rov;
            let map_rov = 1.0 / up_rov.dot(&e).max(0.05);
            let map_base = 1.0 / up_base.dot(&(d_base / r_base)).max(0.05);
            let geom = r_rov - r_base + atmos.tropo_zenith * (map_rov - map_base);
            let iono = atmos.iono_zenith * (map_rov - map_base);
            (geom + iono, geom - iono, e)
        };
        let (ref_code, ref_phase, e_ref) = single(&self.ref_pos);
        let m = self.len();
        let mut code = DVector::zeros(m);
        let mut phase = DVector::zeros(m);
        let mut h = DMatrix::zeros(m, 3);
        for (i, row) in self.rows.iter().enumerate() {
            let (c, p, e) = single(&row.pos);
            code[i] = c - ref_code;
            phase[i] = p - ref_phase;
            h.fixed_view_mut::<1, 3>(i, 0).copy_from(&(-(e - e_ref)).transpose());
        }
        DdModel { code, phase, h }
    }

    fn code(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.rows.iter().map(|r| r.code))
    }
}

fn check_age(rover: &EpochObservations, station: &EpochObservations, max_age: f64) -> Result<(), SolveError> {
    let age = rover.t - station.t;
    if age > max_age {
        return Err(SolveError::StaleCorrections { age });
    }
    Ok(())
}

fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, SolveError> {
    m.clone().cholesky().map(|c| c.inverse()).ok_or(SolveError::Singular)
}

struct CodeFit {
    baseline: Vector3<f64>,
    covariance: Matrix3<f64>,
    chi2: f64,
    dof: usize,
}

fn code_fit(set: &DdSet, base: &Vector3<f64>, cfg: &RtkConfig) -> Result<CodeFit, SolveError> {
    if set.len() < 3 {
        return Err(SolveError::InsufficientCommonSats { have: set.len() + 1 });
    }
    let c_inv = inverse_spd(&set.covariance(cfg.code_sigma_zenith, CODE_SIGMA_FLOOR, 0.0))?;
    let z = set.code();
    let mut b = Vector3::zeros();
    let atmos = Atmosphere::of(cfg);
    for _ in 0..10 {
        let DdModel { code: g, h, .. } = set.model(base, &b, &atmos);
        let ht_c = h.transpose() * &c_inv;
        let n = &ht_c * &h;
        let db = n.cholesky().ok_or(SolveError::Singular)?.solve(&(&ht_c * (&z - g)));
        b += Vector3::new(db[0], db[1], db[2]);
        if db.norm() < 1e-10 {
            break;
        }
    }
    let DdModel { code: g, h, .. } = set.model(base, &b, &atmos);
    let v = &z - g;
    let chi2 = (v.transpose() * &c_inv * &v)[(0, 0)];
    let dof = set.len() - 3;
    let n_inv = inverse_spd(&(h.transpose() * &c_inv * &h))?;
    let factor = if dof > 0 { (chi2 / dof as f64).max(1.0) } else { 1.0 };
    let cov: Matrix3<f64> = n_inv.fixed_view::<3, 3>(0, 0).into_owned() * factor;
    Ok(CodeFit { baseline: b, covariance: (cov + cov.transpose()) * 0.5, chi2, dof })
}

fn rtk_solution(
    t: f64,
    base: &Vector3<f64>,
    b: &Vector3<f64>,
    covariance: Matrix3<f64>,
    mode: SolutionMode,
    n_sats: usize,
    chi2: f64,
    dof: usize,
) -> NavSolution {
    NavSolution {
        t,
        position_ecef: base + b,
        clock_bias: f64::NAN,
        mode,
        covariance,
        n_sats,
        ratio: 0.0,
        dd_residual_chi2: chi2,
        dof,
        baseline_enu: ecef_to_enu(b, base),
    }
}

/// Weighted least squares on code double differences for the baseline;
/// the reference satellite is the highest common one at the station.
pub fn dgnss_solve(
    rover: &EpochObservations,
    station: &EpochObservations,
    station_pos: &Vector3<f64>,
    sats: &[SatState],
    cfg: &RtkConfig,
) -> Result<NavSolution, SolveError> {
    check_age(rover, station, cfg.max_age)?;
    let common = common_sats(rover, station, station_pos, sats, cfg.elevation_mask_deg.to_radians());
    if common.len() < 4 {
        return Err(SolveError::InsufficientCommonSats { have: common.len() });
    }
    let reference = highest(&common).expect("non-empty").key;
    let set = DdSet::build(rover, station, &common, reference);
    let fit = code_fit(&set, station_pos, cfg)?;
    Ok(rtk_solution(
        rover.t,
        station_pos,
        &fit.baseline,
        fit.covariance,
        SolutionMode::Dgnss,
        common.len(),
        fit.chi2,
        fit.dof,
    ))
}

/// Integer-fixed baseline together with the ambiguities it was conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedSolution {
    pub solution: NavSolution,
    pub reference: SatKey,
    pub keys: Vec<SatKey>,
    /// Double-difference integers, one per entry of `keys`, cycles.
    pub ambiguities: Vec<i64>,
    pub ratio: f64,
}

/// Float filter state: baseline (m) followed by one double-difference
/// ambiguity (cycles) per non-reference satellite.
#[derive(Debug, Clone, Default)]
pub struct FilterState {
    x: DVector<f64>,
    p: DMatrix<f64>,
    keys: Vec<SatKey>,
    reference: Option<SatKey>,
    locks: BTreeMap<SatKey, (u32, u32)>,
    updates: u64,
    last: Option<LastUpdate>,
}

#[derive(Debug, Clone)]
struct LastUpdate {
    t: f64,
    station_pos: Vector3<f64>,
    set: DdSet,
    n_sats: usize,
    chi2: f64,
    dof: usize,
}

impl FilterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::new();
    }

    pub fn is_initialized(&self) -> bool {
        !self.x.is_empty()
    }

    pub fn baseline(&self) -> Option<Vector3<f64>> {
        self.is_initialized().then(|| Vector3::new(self.x[0], self.x[1], self.x[2]))
    }

    pub fn baseline_covariance(&self) -> Option<Matrix3<f64>> {
        self.is_initialized().then(|| self.p.fixed_view::<3, 3>(0, 0).into_owned())
    }

    pub fn reference(&self) -> Option<SatKey> {
        self.reference
    }

    pub fn ambiguity_keys(&self) -> &[SatKey] {
        &self.keys
    }

    /// Float ambiguity estimates in the order of `ambiguity_keys`.
    pub fn float_ambiguities(&self) -> Vec<f64> {
        if self.is_initialized() {
            self.x.rows(3, self.keys.len()).iter().copied().collect()
        } else {
            Vec::new()
        }
    }

    /// Re-expresses the ambiguity states against `new_ref`, dropping states
    /// of satellites that left the common set or slipped.
    fn rebase(&mut self, new_ref: SatKey, usable: &BTreeSet<SatKey>) {
        let n_old = self.x.len();
        let index = |k: SatKey| self.keys.iter().position(|&s| s == k).map(|i| 3 + i);
        let mut rows: Vec<(SatKey, Vec<(usize, f64)>)> = Vec::new();
        if self.reference == Some(new_ref) {
            for &k in &self.keys {
                if usable.contains(&k) {
                    rows.push((k, vec![(index(k).unwrap(), 1.0)]));
                }
            }
        } else if let (Some(j), true) = (index(new_ref), usable.contains(&new_ref)) {
            for &k in &self.keys {
                if k != new_ref && usable.contains(&k) {
                    rows.push((k, vec![(index(k).unwrap(), 1.0), (j, -1.0)]));
                }
            }
            if let Some(old) = self.reference.filter(|r| usable.contains(r)) {
                rows.push((old, vec![(j, -1.0)]));
            }
        }
        rows.sort_by_key(|r| r.0);
        let mut t = DMatrix::zeros(3 + rows.len(), n_old);
        for i in 0..3 {
            t[(i, i)] = 1.0;
        }
        for (r, (_, coefs)) in rows.iter().enumerate() {
            for &(c, v) in coefs {
                t[(3 + r, c)] = v;
            }
        }
        self.x = &t * &self.x;
        self.p = &t * &self.p * t.transpose();
        self.keys = rows.into_iter().map(|r| r.0).collect();
    }

    /// Kalman update with code and carrier double differences.
    pub fn float_update(
        &mut self,
        rover: &EpochObservations,
        station: &EpochObservations,
        station_pos: &Vector3<f64>,
        sats: &[SatState],
        cfg: &RtkConfig,
    ) -> Result<NavSolution, SolveError> {
        check_age(rover, station, cfg.max_age)?;
        let mask = cfg.elevation_mask_deg.to_radians();
        let common = common_sats(rover, station, station_pos, sats, mask);
        if common.len() < 4 {
            return Err(SolveError::InsufficientCommonSats { have: common.len() });
        }
        let slipped =
            |c: &CommonSat| self.locks.get(&c.key).is_some_and(|&l| l != (c.rover_loss, c.base_loss));
        let usable: BTreeSet<SatKey> = common.iter().filter(|c| !slipped(c)).map(|c| c.key).collect();
        let hold_min = mask + REFERENCE_HYSTERESIS_DEG.to_radians();
        let kept = self
            .reference
            .and_then(|r| common.iter().find(|c| c.key == r))
            .filter(|c| usable.contains(&c.key) && c.elevation >= hold_min);
        let new_ref = match kept {
            Some(c) => c.key,
            None => {
                let clean: Vec<CommonSat> = common.iter().copied().filter(|c| usable.contains(&c.key)).collect();
                highest(&clean).or_else(|| highest(&common)).expect("non-empty").key
            }
        };
        let set = DdSet::build(rover, station, &common, new_ref);

        if self.is_initialized() {
            self.rebase(new_ref, &usable);
            let q = match cfg.dynamics {
                Dynamics::Static => STATIC_PROCESS_VAR,
                Dynamics::Kinematic => cfg.kinematic_sigma.powi(2),
            };
            for i in 0..3 {
                self.p[(i, i)] += q;
            }
        } else {
            let fit = code_fit(&set, station_pos, cfg)?;
            self.x = DVector::from_column_slice(fit.baseline.as_slice());
            self.p = DMatrix::identity(3, 3) * cfg.initial_baseline_sigma.powi(2);
            self.keys.clear();
            self.updates = 0;
        }
        self.reference = Some(new_ref);

        for row in &set.rows {
            if !self.keys.contains(&row.key) {
                let n = self.x.len();
                self.x = self.x.clone().insert_row(n, row.phase - row.code / WAVELENGTH);
                self.p = self.p.clone().insert_row(n, 0.0).insert_column(n, 0.0);
                self.p[(n, n)] = cfg.initial_ambiguity_sigma.powi(2);
                self.keys.push(row.key);
            }
        }
        let amb_index: Vec<usize> = set
            .rows
            .iter()
            .map(|r| 3 + self.keys.iter().position(|&k| k == r.key).expect("state exists"))
            .collect();

        let m = set.len();
        let dim = self.x.len();
        let b = Vector3::new(self.x[0], self.x[1], self.x[2]);
        let atmos = Atmosphere::of(cfg);
        let DdModel { code: g_code, phase: g_phase, h: jac } = set.model(station_pos, &b, &atmos);
        let mut h = DMatrix::zeros(2 * m, dim);
        let mut v = DVector::zeros(2 * m);
        for i in 0..m {
            let row = &set.rows[i];
            for c in 0..3 {
                h[(i, c)] = jac[(i, c)];
                h[(m + i, c)] = jac[(i, c)];
            }
            h[(m + i, amb_index[i])] = WAVELENGTH;
            v[i] = row.code - g_code[i];
            v[m + i] = row.phase * WAVELENGTH - (g_phase[i] + WAVELENGTH * self.x[amb_index[i]]);
        }
        let iono = cfg.iono_gradient * b.norm() / 1000.0;
        let c_code = set.covariance(cfg.code_sigma_zenith, CODE_SIGMA_FLOOR, iono);
        let c_phase = set.covariance(cfg.phase_sigma_zenith, PHASE_SIGMA_FLOOR, iono);
        let mut r = DMatrix::zeros(2 * m, 2 * m);
        r.view_mut((0, 0), (m, m)).copy_from(&c_code);
        r.view_mut((m, m), (m, m)).copy_from(&c_phase);

        let ph = &h * &self.p;
        let s = &ph * h.transpose() + &r;
        let s_chol = s.cholesky().ok_or(SolveError::Singular)?;
        let s_inv_v = s_chol.solve(&v);
        let nis = v.dot(&s_inv_v);
        if self.updates > 0 {
            let limit = chi2_quantile(cfg.divergence_quantile, 2 * m);
            if nis > limit {
                return Err(SolveError::Divergence { nis, limit });
            }
        }
        let k = s_chol.solve(&ph).transpose();
        self.x += &k * v;
        let i_kh = DMatrix::identity(dim, dim) - &k * &h;
        let p = &i_kh * &self.p * i_kh.transpose() + &k * &r * k.transpose();
        self.p = (&p + p.transpose()) * 0.5;

        let b = Vector3::new(self.x[0], self.x[1], self.x[2]);
        let resid = set.code() - set.model(station_pos, &b, &atmos).code;
        let chi2 = (resid.transpose() * inverse_spd(&c_code)? * &resid)[(0, 0)];
        // The baseline is carried by the carrier data, so the code residuals
        // keep all their degrees of freedom.
        let dof = m;

        self.locks = common.iter().map(|c| (c.key, (c.rover_loss, c.base_loss))).collect();
        self.updates += 1;
        self.last = Some(LastUpdate { t: rover.t, station_pos: *station_pos, set, n_sats: common.len(), chi2, dof });
        Ok(rtk_solution(
            rover.t,
            station_pos,
            &b,
            self.p.fixed_view::<3, 3>(0, 0).into_owned(),
            SolutionMode::Float,
            common.len(),
            chi2,
            dof,
        ))
    }

    /// Fixes the ambiguities of the last update. Falls back to subsets that
    /// leave the lowest satellites float when the full set fails.
    pub fn resolve(&mut self, cfg: &RtkConfig) -> Result<FixedSolution, NoFix> {
        let Some(last) = self.last.clone() else {
            return Err(NoFix::TooFew { have: 0, need: 4 });
        };
        let elevation = |k: SatKey| last.set.rows.iter().find(|r| r.key == k).map_or(0.0, |r| r.elevation);
        let mut subset: Vec<usize> = (0..self.keys.len()).collect();
        let mut outcome = Err(NoFix::TooFew { have: subset.len(), need: 4 });
        for _ in 0..=cfg.partial_fix_max_drop {
            if subset.len() < 4 {
                break;
            }
            outcome = self.try_fix(&subset, &last, cfg);
            if outcome.is_ok() {
                break;
            }
            let lowest = subset
                .iter()
                .enumerate()
                .min_by(|a, b| elevation(self.keys[*a.1]).total_cmp(&elevation(self.keys[*b.1])))
                .map(|(i, _)| i)
                .expect("non-empty");
            subset.remove(lowest);
        }
        outcome
    }

    fn try_fix(&mut self, subset: &[usize], last: &LastUpdate, cfg: &RtkConfig) -> Result<FixedSolution, NoFix> {
        let n = subset.len();
        let a_hat = DVector::from_iterator(n, subset.iter().map(|&i| self.x[3 + i]));
        let q_aa = DMatrix::from_fn(n, n, |i, j| self.p[(3 + subset[i], 3 + subset[j])]);
        let q_ba = DMatrix::from_fn(3, n, |i, j| self.p[(i, 3 + subset[j])]);
        let fix = ambiguity_fix(&a_hat, &q_aa, cfg.ratio_threshold)?;
        let fixed = DVector::from_iterator(n, fix.fixed.iter().map(|&v| v as f64));
        let chol = q_aa.clone().cholesky().ok_or(NoFix::NotPositiveDefinite)?;
        let b_float = Vector3::new(self.x[0], self.x[1], self.x[2]);
        let shift = &q_ba * chol.solve(&(&a_hat - &fixed));
        let b_fix = b_float - Vector3::new(shift[0], shift[1], shift[2]);
        let q_bb = self.p.fixed_view::<3, 3>(0, 0).into_owned();
        let cond = &q_ba * chol.solve(&q_ba.transpose());
        let cov = q_bb - Matrix3::from_fn(|i, j| cond[(i, j)]);

        let keys: Vec<SatKey> = subset.iter().map(|&i| self.keys[i]).collect();
        let rows: Vec<usize> = keys
            .iter()
            .map(|k| last.set.rows.iter().position(|r| r.key == *k).expect("fixed key in last set"))
            .collect();
        let mdl = last.set.model(&last.station_pos, &b_fix, &Atmosphere::of(cfg));
        let g = &mdl.phase;
        let resid = DVector::from_fn(n, |i, _| {
            last.set.rows[rows[i]].phase * WAVELENGTH - g[rows[i]] - WAVELENGTH * fixed[i]
        });
        let iono = cfg.iono_gradient * b_fix.norm() / 1000.0;
        let c_full = last.set.covariance(cfg.phase_sigma_zenith, PHASE_SIGMA_FLOOR, iono);
        let c = DMatrix::from_fn(n, n, |i, j| c_full[(rows[i], rows[j])]);
        let c_chol = c.cholesky().ok_or(NoFix::NotPositiveDefinite)?;
        let chi2 = resid.dot(&c_chol.solve(&resid));
        if chi2 > chi2_quantile(cfg.validation_quantile, n) {
            return Err(NoFix::Validation);
        }
        // The conditional covariance only carries noise, which holding
        // averages away; add the baseline bias an unmodelled ionospheric
        // gradient of the configured size would produce in this geometry.
        let h = DMatrix::from_fn(n, 3, |i, j| mdl.h[(rows[i], j)]);
        let white = last.set.covariance(cfg.phase_sigma_zenith, PHASE_SIGMA_FLOOR, 0.0);
        let white = DMatrix::from_fn(n, n, |i, j| white[(rows[i], rows[j])]);
        let w_chol = white.cholesky().ok_or(NoFix::NotPositiveDefinite)?;
        let map_ref = 1.0 / last.set.ref_elevation.sin();
        let d = DVector::from_fn(n, |i, _| iono * (1.0 / last.set.rows[rows[i]].elevation.sin() - map_ref));
        let ht_w = w_chol.solve(&h).transpose();
        let bias = (&ht_w * &h)
            .try_inverse()
            .map(|n_inv| n_inv * (&ht_w * &d))
            .map_or(Vector3::zeros(), |v| Vector3::new(v[0], v[1], v[2]));
        let cov = cov + bias * bias.transpose();

        if cfg.fix_and_hold {
            self.hold(subset, &fixed);
        }
        let mut solution = rtk_solution(
            last.t,
            &last.station_pos,
            &b_fix,
            (cov + cov.transpose()) * 0.5,
            SolutionMode::Fixed,
            last.n_sats,
            last.chi2,
            last.dof,
        );
        solution.ratio = fix.ratio;
        Ok(FixedSolution {
            solution,
            reference: last.set.reference,
            keys,
            ambiguities: fix.fixed,
            ratio: fix.ratio,
        })
    }

    /// Pseudo-measurement pinning the fixed ambiguities in the float filter.
    fn hold(&mut self, subset: &[usize], fixed: &DVector<f64>) {
        let n = subset.len();
        let dim = self.x.len();
        let mut h = DMatrix::zeros(n, dim);
        for (i, &s) in subset.iter().enumerate() {
            h[(i, 3 + s)] = 1.0;
        }
        let v = fixed - &h * &self.x;
        let ph = &h * &self.p;
        let s = &ph * h.transpose() + DMatrix::identity(n, n) * HOLD_VAR;
        let Some(s_chol) = s.cholesky() else { return };
        let k = s_chol.solve(&ph).transpose();
        self.x += &k * v;
        let p = &self.p - &k * ph;
        self.p = (&p + p.transpose()) * 0.5;
    }
}
