//! The eavesdropper: recoverability analysis, global reconstruction, passive
//! and active local identification, and recovery of the equation from an
//! identified realization.

mod active;
mod global;
mod observation;
mod passive;
mod recover;

pub use active::{
    active_identify, make_probe, stability_margin, ActiveIdentification, ProbeSignal, Settling,
    StabilityReport, DEFAULT_PROBE_CONDITION, MAX_PROBE_ATTEMPTS, MIN_GAP_RATIO, SETTLE_TOL,
};
pub use global::{
    global_attack_cpa, global_attack_pca, recoverability_report, NodeRecoverability, RecoveredEquation,
    RecoveredRow, RecoveryMethod,
};
pub use observation::ObservationModel;
pub use passive::{block_rows, consecutive_times, passive_identify, MAX_CONDITION};
pub use recover::{build_vectorized_system, recover_equation, RecoverOptions, RecoverResult, VectorizedSystem};

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::linalg;

/// Identified pair similar to the closed loop: `F★ = T⁻¹ F T`, `C★ = (E_i ⊗ I) T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub f_star: DMatrix<f64>,
    pub c_star: DMatrix<f64>,
}

impl Realization {
    pub fn sorted_eigenvalues(&self) -> Vec<Complex<f64>> {
        linalg::sorted_eigenvalues(&self.f_star)
    }

    /// Largest distance between the sorted spectra of `F★` and `f`.
    pub fn spectrum_error(&self, f: &DMatrix<f64>) -> f64 {
        linalg::spectrum_distance(&self.sorted_eigenvalues(), &linalg::sorted_eigenvalues(f))
    }
}
