use nalgebra::{DMatrix, DVector};

use super::{ObservationModel, Realization};
use crate::error::{Error, Result};
use crate::linalg;
use crate::protocols::Trajectory;

/// `S Y̲` with a larger condition number is treated as singular.
pub const MAX_CONDITION: f64 = 1e10;

/// Block rows `p` of the stacked output matrices.
pub fn block_rows(n: usize, m: usize, observed: usize) -> usize {
    (n * m).div_ceil(observed * m) + 1
}

/// Default observation times `t_k = k − 1`.
pub fn consecutive_times(n: usize, m: usize) -> Vec<usize> {
    (0..n * m).collect()
}

/// Greedy row selection: the first `forced` rows, then repeatedly the row with
/// the largest component outside the span of those already chosen.
fn select_rows(y: &DMatrix<f64>, forced: usize, count: usize) -> Result<Vec<usize>> {
    let scale = y.amax().max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(count);
    let mut chosen = Vec::with_capacity(count);
    let residual = |v: DVector<f64>, basis: &[DVector<f64>]| {
        basis.iter().fold(v, |acc, q| {
            let c = q.dot(&acc);
            acc - q * c
        })
    };
    let take = |r: usize, basis: &mut Vec<DVector<f64>>, chosen: &mut Vec<usize>| -> Result<()> {
        let v = residual(y.row(r).transpose(), basis);
        let norm = v.norm();
        if !(norm > 1e-14 * scale * (y.ncols() as f64).sqrt()) {
            return Err(Error::IdentificationFailed(
                "stacked outputs are rank deficient".into(),
            ));
        }
        basis.push(v / norm);
        chosen.push(r);
        Ok(())
    };
    for r in 0..forced {
        take(r, &mut basis, &mut chosen)?;
    }
    while chosen.len() < count {
        let best = (0..y.nrows())
            .filter(|r| !chosen.contains(r))
            .max_by(|&a, &b| {
                let na = residual(y.row(a).transpose(), &basis).norm();
                let nb = residual(y.row(b).transpose(), &basis).norm();
                na.total_cmp(&nb)
            })
            .ok_or_else(|| Error::IdentificationFailed("ran out of rows".into()))?;
        take(best, &mut basis, &mut chosen)?;
    }
    Ok(chosen)
}

/// Identifies `(F★, C★)` from the observed part of a noiseless trajectory.
///
/// Outputs are taken relative to the known solution, `y(t) = E_i x(t) − 1 ⊗ y*`.
pub fn passive_identify(obs: &ObservationModel, traj: &Trajectory, times: &[usize]) -> Result<Realization> {
    let (n, m) = (traj.n(), traj.m());
    if obs.n != n {
        return Err(Error::Dimension("observation model and trajectory sizes differ".into()));
    }
    let nm = n * m;
    if times.len() != nm {
        return Err(Error::InvalidParameter(format!(
            "need {nm} observation times, got {}",
            times.len()
        )));
    }
    let y_star = obs.solution()?;
    if y_star.len() != m {
        return Err(Error::Dimension("known solution has the wrong length".into()));
    }
    let no = obs.count() * m;
    let p = block_rows(n, m, obs.count());
    let last = times.iter().max().copied().unwrap_or(0) + p;
    if last > traj.steps() {
        return Err(Error::InvalidParameter(format!(
            "trajectory has {} steps, identification needs {last}",
            traj.steps()
        )));
    }
    let offset = DVector::from_iterator(no, (0..no).map(|k| y_star[k % m]));
    let output = |t: usize| obs.observe(traj.state(t)) - &offset;
    let mut lower = DMatrix::zeros(p * no, nm);
    let mut upper = DMatrix::zeros(p * no, nm);
    for (k, &t) in times.iter().enumerate() {
        for r in 0..p {
            lower.view_mut((r * no, k), (no, 1)).copy_from(&output(t + r));
            upper.view_mut((r * no, k), (no, 1)).copy_from(&output(t + r + 1));
        }
    }
    let rows = select_rows(&lower, no, nm)?;
    let s_lower = lower.select_rows(&rows);
    let s_upper = upper.select_rows(&rows);
    let cond = linalg::condition_number(&s_lower);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IdentificationFailed(format!(
            "selected output matrix has condition number {cond:e}"
        )));
    }
    let inv = s_lower
        .try_inverse()
        .ok_or_else(|| Error::IdentificationFailed("selected output matrix is singular".into()))?;
    let f_star = s_upper * inv;
    let mut c_star = DMatrix::zeros(no, nm);
    c_star.view_mut((0, 0), (no, no)).fill_with_identity();
    Ok(Realization { f_star, c_star })
}
