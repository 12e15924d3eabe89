//! Standalone code positioning.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{sat_state, NavSolution, SolutionMode, SolveError};
use crate::constellation::{look_geometry, SatState};
use crate::observation::{EpochObservations, ErrorModel, SPEED_OF_LIGHT};

/// Weighting and atmospheric correction used by the standalone solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SppConfig {
    /// m
    pub code_sigma_zenith: f64,
    /// Nominal zenith tropospheric delay removed from each pseudorange, m.
    pub tropo_zenith: f64,
    /// Nominal zenith ionospheric delay, m.
    pub iono_zenith: f64,
    /// Share of the nominal ionospheric delay the broadcast model removes;
    /// the remainder is carried as measurement variance.
    pub iono_model_fraction: f64,
    pub sat_clock_correction: bool,
    pub max_iterations: usize,
    /// m
    pub convergence: f64,
}

impl Default for SppConfig {
    fn default() -> Self {
        SppConfig::from_model(&ErrorModel::default())
    }
}

impl SppConfig {
    pub fn from_model(model: &ErrorModel) -> Self {
        SppConfig {
            code_sigma_zenith: model.code_noise_sigma_zenith,
            tropo_zenith: model.tropo_zenith,
            iono_zenith: model.iono_zenith,
            iono_model_fraction: 0.92,
            sat_clock_correction: model.sat_clock_enabled,
            max_iterations: 10,
            convergence: 1e-4,
        }
    }
}

/// Lower bound on the per-measurement sigma so exact data still has finite weights.
const SIGMA_FLOOR: f64 = 1e-3;
/// Linearisation points closer to the geocenter than this get no elevation model.
const NEAR_EARTH: f64 = 6.0e6;

struct Linearized {
    h: DMatrix<f64>,
    v: DVector<f64>,
    w: DVector<f64>,
}

fn linearize(
    epoch: &EpochObservations,
    used: &[&SatState],
    x: &Vector4<f64>,
    cfg: &SppConfig,
) -> Linearized {
    let n = used.len();
    let rx = x.xyz();
    let mut h = DMatrix::zeros(n, 4);
    let mut v = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    for (i, sat) in used.iter().enumerate() {
        let obs = epoch.locked(sat.key).expect("selected from locked set");
        let diff = sat.pos_ecef - rx;
        let range = diff.norm();
        let los = diff / range;
        let (atmos, sigma) = if rx.norm() > NEAR_EARTH {
            let sin_el = look_geometry(&rx, sat).elevation.sin().max(0.1);
            let atmos = (cfg.tropo_zenith + cfg.iono_model_fraction * cfg.iono_zenith) / sin_el;
            let iono_residual = (1.0 - cfg.iono_model_fraction).abs() * cfg.iono_zenith / sin_el;
            (atmos, (cfg.code_sigma_zenith / sin_el).hypot(iono_residual))
        } else {
            (0.0, cfg.code_sigma_zenith)
        };
        let sat_clock = if cfg.sat_clock_correction { SPEED_OF_LIGHT * sat.clock_bias } else { 0.0 };
        let predicted = range + x[3] - sat_clock + atmos;
        v[i] = obs.pseudorange_m() - predicted;
        h[(i, 0)] = -los.x;
        h[(i, 1)] = -los.y;
        h[(i, 2)] = -los.z;
        h[(i, 3)] = 1.0;
        w[i] = 1.0 / sigma.max(SIGMA_FLOOR).powi(2);
    }
    Linearized { h, v, w }
}

fn normal_matrix(lin: &Linearized) -> DMatrix<f64> {
    let hw = DMatrix::from_fn(lin.h.nrows(), 4, |r, c| lin.h[(r, c)] * lin.w[r]);
    hw.transpose() * &lin.h
}

/// Weighted Gauss-Newton on pseudoranges for position and receiver clock,
/// started from the geocenter.
pub fn spp_solve(
    epoch: &EpochObservations,
    sats: &[SatState],
    cfg: &SppConfig,
) -> Result<NavSolution, SolveError> {
    let used: Vec<&SatState> = epoch.locked_obs().filter_map(|o| sat_state(sats, o.key)).collect();
    if used.len() < 4 {
        return Err(SolveError::InsufficientSats { have: used.len(), need: 4 });
    }
    let mut x = Vector4::zeros();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        let lin = linearize(epoch, &used, &x, cfg);
        let n = normal_matrix(&lin);
        let hwv = lin.h.transpose() * lin.v.component_mul(&lin.w);
        let dx = n.cholesky().ok_or(SolveError::Singular)?.solve(&hwv);
        x += Vector4::new(dx[0], dx[1], dx[2], dx[3]);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SolveError::NoConvergence);
        }
        if Vector3::new(dx[0], dx[1], dx[2]).norm() < cfg.convergence {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolveError::NoConvergence);
    }
    let lin = linearize(epoch, &used, &x, cfg);
    let n_inv = normal_matrix(&lin).try_inverse().ok_or(SolveError::Singular)?;
    let chi2: f64 = lin.v.iter().zip(lin.w.iter()).map(|(v, w)| v * v * w).sum();
    let dof = used.len() - 4;
    let variance_factor = if dof > 0 { (chi2 / dof as f64).max(1.0) } else { 1.0 };
    let covariance: Matrix3<f64> = n_inv.fixed_view::<3, 3>(0, 0).into_owned() * variance_factor;
    Ok(NavSolution {
        t: epoch.t,
        position_ecef: x.xyz(),
        clock_bias: x[3] / SPEED_OF_LIGHT,
        mode: SolutionMode::Standalone,
        covariance: (covariance + covariance.transpose()) * 0.5,
        n_sats: used.len(),
        ratio: 0.0,
        dd_residual_chi2: chi2,
        dof,
        baseline_enu: Vector3::zeros(),
    })
}
