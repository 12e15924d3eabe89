//! Rover positioning engine: standalone code solution, code double-difference
//! DGNSS, a carrier-phase float filter with integer ambiguity resolution, and
//! the per-epoch mode ladder.

mod ambiguity;
mod engine;
mod rtk;
mod spp;

pub use ambiguity::*;
pub use engine::*;
pub use rtk::*;
pub use spp::*;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constellation::{SatKey, SatState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SolutionMode {
    None,
    Standalone,
    Dgnss,
    Float,
    Fixed,
}

impl SolutionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SolutionMode::None => "none",
            SolutionMode::Standalone => "standalone",
            SolutionMode::Dgnss => "dgnss",
            SolutionMode::Float => "float",
            SolutionMode::Fixed => "fixed",
        }
    }
}

impl std::fmt::Display for SolutionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavSolution {
    pub t: f64,
    pub position_ecef: Vector3<f64>,
    /// s
    pub clock_bias: f64,
    pub mode: SolutionMode,
    /// m²
    pub covariance: Matrix3<f64>,
    pub n_sats: usize,
    pub ratio: f64,
    /// Post-fit weighted residual sum of squares of the code measurements.
    pub dd_residual_chi2: f64,
    /// Degrees of freedom of `dd_residual_chi2`.
    pub dof: usize,
    /// Position relative to the reference station, ENU at the station.
    pub baseline_enu: Vector3<f64>,
}

impl NavSolution {
    /// Placeholder for epochs with no usable measurements.
    pub fn none(t: f64) -> Self {
        NavSolution {
            t,
            position_ecef: Vector3::repeat(f64::NAN),
            clock_bias: f64::NAN,
            mode: SolutionMode::None,
            covariance: Matrix3::repeat(f64::NAN),
            n_sats: 0,
            ratio: 0.0,
            dd_residual_chi2: 0.0,
            dof: 0,
            baseline_enu: Vector3::repeat(f64::NAN),
        }
    }

    pub fn has_position(&self) -> bool {
        self.mode != SolutionMode::None
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("{have} usable satellites, need {need}")]
    InsufficientSats { have: usize, need: usize },
    #[error("{have} common satellites between rover and station, need 4")]
    InsufficientCommonSats { have: usize },
    #[error("corrections are {age:.1} s old")]
    StaleCorrections { age: f64 },
    #[error("least squares did not converge")]
    NoConvergence,
    #[error("singular normal equations")]
    Singular,
    #[error("filter innovations inconsistent with its state (nis {nis:.1} > {limit:.1})")]
    Divergence { nis: f64, limit: f64 },
}

pub(crate) fn sat_state(sats: &[SatState], key: SatKey) -> Option<&SatState> {
    sats.iter().find(|s| s.key == key)
}
