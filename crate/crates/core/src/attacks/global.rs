use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lae::{canonical_row, CanonicalEquation};
use crate::netcore::WeightMatrix;
use crate::protocols::Trajectory;

/// Relative threshold below which a vector counts as zero.
pub const ZERO_TOL: f64 = 1e-9;

/// Per-node recoverability evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecoverability {
    /// First `t` with a visible local correction.
    pub condition_a_time: Option<usize>,
    /// Affine rank of `{x_i(t)}`.
    pub condition_b_rank: usize,
    pub recoverable: bool,
}

fn check_inputs(traj: &Trajectory, w: &WeightMatrix) -> Result<()> {
    if traj.len() < 2 {
        return Err(Error::InvalidParameter("trajectory needs at least two states".into()));
    }
    if w.n() != traj.n() {
        return Err(Error::Dimension("W and trajectory sizes differ".into()));
    }
    Ok(())
}

/// `x_i(t+1) − Σ_j w_ij x_j(t)` and the mixed point `Σ_j w_ij x_j(t)`.
fn correction(traj: &Trajectory, w: &WeightMatrix, i: usize, t: usize) -> (DVector<f64>, DVector<f64>) {
    let mixed = (w.matrix().row(i) * traj.state(t)).transpose();
    (traj.node(t + 1, i) - &mixed, mixed)
}

fn is_zero(d: &DVector<f64>, scale: f64) -> bool {
    d.norm() <= ZERO_TOL * (1.0 + scale)
}

fn first_correction(traj: &Trajectory, w: &WeightMatrix, i: usize) -> Option<usize> {
    (0..traj.steps()).find(|&t| {
        let (d, mixed) = correction(traj, w, i, t);
        !is_zero(&d, traj.node(t + 1, i).norm().max(mixed.norm()))
    })
}

/// Consecutive differences `x_i(t+1) − x_i(t)` as rows, over the points
/// `x_i(0..T)` whose next step is observed.
fn differences(traj: &Trajectory, i: usize) -> DMatrix<f64> {
    let m = traj.m();
    let rows = traj.steps() - 1;
    let mut u = DMatrix::zeros(rows, m);
    for t in 0..rows {
        u.set_row(t, &(traj.node(t + 1, i) - traj.node(t, i)).transpose());
    }
    u
}

fn affine_rank(traj: &Trajectory, i: usize) -> usize {
    let u = differences(traj, i);
    if u.nrows() == 0 {
        return 0;
    }
    let scale = (0..traj.len()).map(|t| traj.node(t, i).norm()).fold(0.0, f64::max);
    u.singular_values()
        .iter()
        .filter(|&&s| s > ZERO_TOL * (1.0 + scale))
        .count()
}

/// Which rows a global eavesdropper can reconstruct from `traj`.
pub fn recoverability_report(traj: &Trajectory, w: &WeightMatrix) -> Result<Vec<NodeRecoverability>> {
    check_inputs(traj, w)?;
    let m = traj.m();
    Ok((0..traj.n())
        .map(|i| {
            let condition_a_time = first_correction(traj, w, i);
            let condition_b_rank = affine_rank(traj, i);
            NodeRecoverability {
                condition_a_time,
                condition_b_rank,
                recoverable: condition_a_time.is_some() || condition_b_rank + 1 >= m,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RecoveryMethod {
    ConditionA { time: usize },
    ConditionB { rank: usize },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredRow {
    pub h: Vec<f64>,
    pub z: f64,
}

/// Output of a global reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredEquation {
    /// Present only when every row was recovered.
    pub equation: Option<CanonicalEquation>,
    pub rows: Vec<Option<RecoveredRow>>,
    pub per_node_method: Vec<RecoveryMethod>,
    /// `|Ĥ_iᵀ y♮ − ẑ_i|` at the final node average `y♮`; `None` for failed rows.
    pub per_node_residual: Vec<Option<f64>>,
    /// Largest per-node residual over recovered rows.
    pub residual: f64,
}

impl RecoveredEquation {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(Option::is_none)
    }

    pub fn is_complete(&self) -> bool {
        self.equation.is_some()
    }
}

fn assemble(traj: &Trajectory, rows: Vec<Option<RecoveredRow>>, methods: Vec<RecoveryMethod>) -> RecoveredEquation {
    let probe = traj.node_average(traj.steps());
    let per_node_residual: Vec<Option<f64>> = rows
        .iter()
        .map(|r| {
            r.as_ref().map(|r| {
                (r.h.iter().zip(probe.iter()).map(|(a, b)| a * b).sum::<f64>() - r.z).abs()
            })
        })
        .collect();
    let residual = per_node_residual.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
    let equation = if rows.iter().all(Option::is_some) {
        let (h, z) = rows
            .iter()
            .map(|r| {
                let r = r.as_ref().expect("checked");
                (r.h.clone(), r.z)
            })
            .unzip();
        Some(CanonicalEquation { h, z })
    } else {
        None
    };
    RecoveredEquation {
        equation,
        rows,
        per_node_method: methods,
        per_node_residual,
        residual,
    }
}

fn canonical(h: &DVector<f64>, z: f64) -> Option<RecoveredRow> {
    canonical_row(h.as_slice(), z)
        .ok()
        .map(|(h, z)| RecoveredRow { h, z })
}

/// Hyperplane through affinely independent points `x_i(t)`: normal is the
/// least right singular vector of the difference matrix.
fn from_affine_points(traj: &Trajectory, i: usize) -> Option<RecoveredRow> {
    let m = traj.m();
    let u = differences(traj, i);
    let mut padded = DMatrix::zeros(u.nrows().max(m), m);
    padded.view_mut((0, 0), (u.nrows(), m)).copy_from(&u);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t?;
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)?;
    let h = v_t.row(k).transpose();
    let z = h.dot(&traj.node(0, i));
    canonical(&h, z)
}

fn attack(
    traj: &Trajectory,
    w: &WeightMatrix,
    offset: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64,
) -> Result<RecoveredEquation> {
    let report = recoverability_report(traj, w)?;
    let mut rows = Vec::with_capacity(traj.n());
    let mut methods = Vec::with_capacity(traj.n());
    for (i, r) in report.iter().enumerate() {
        if let Some(s) = r.condition_a_time {
            let (d, mixed) = correction(traj, w, i, s);
            let z = offset(&d, &traj.node(s, i), &mixed);
            rows.push(canonical(&d, z));
            methods.push(RecoveryMethod::ConditionA { time: s });
        } else if r.recoverable {
            let row = from_affine_points(traj, i);
            methods.push(if row.is_some() {
                RecoveryMethod::ConditionB { rank: r.condition_b_rank }
            } else {
                RecoveryMethod::Failed
            });
            rows.push(row);
        } else {
            rows.push(None);
            methods.push(RecoveryMethod::Failed);
        }
    }
    Ok(assemble(traj, rows, methods))
}

/// Reconstruction from a consensus + projection trajectory with public `W` and `α`.
pub fn global_attack_cpa(traj: &Trajectory, w: &WeightMatrix, alpha: f64) -> Result<RecoveredEquation> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    attack(traj, w, |d, x, _| d.dot(x) + d.norm_squared() / alpha)
}

/// Reconstruction from a projection-consensus trajectory using
/// `ẑ_i = dᵀ(Σ_j w_ij x_j) + ‖d‖²`. This holds exactly when the node's neighbors
/// contribute no correction of their own; the residuals expose other cases.
pub fn global_attack_pca(traj: &Trajectory, w: &WeightMatrix) -> Result<RecoveredEquation> {
    attack(traj, w, |d, _, mixed| d.dot(mixed) + d.norm_squared())
}
