use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lae::LinearEquation;
use crate::linalg;
use crate::netcore::WeightMatrix;

/// Affine form `x(t+1) = F x(t) + α z_H` of the consensus + projection recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    pub f: DMatrix<f64>,
    pub z_h: DVector<f64>,
    pub alpha: f64,
}

/// Block-diagonal `Z_H` of the row projectors.
pub fn projector_block_diag(e: &LinearEquation) -> DMatrix<f64> {
    let (n, m) = (e.n(), e.m());
    let mut z = DMatrix::zeros(n * m, n * m);
    for i in 0..n {
        z.view_mut((i * m, i * m), (m, m)).copy_from(&e.row_projector(i));
    }
    z
}

/// Stacked offsets `z_i H_i / ‖H_i‖²`.
pub fn stacked_offsets(e: &LinearEquation) -> DVector<f64> {
    let (n, m) = (e.n(), e.m());
    let mut v = DVector::zeros(n * m);
    for i in 0..n {
        let h = e.row(i);
        v.rows_mut(i * m, m).copy_from(&(&h * (e.z()[i] / h.norm_squared())));
    }
    v
}

pub fn closed_loop(w: &WeightMatrix, e: &LinearEquation, alpha: f64) -> Result<ClosedLoopSystem> {
    if w.n() != e.n() {
        return Err(Error::Dimension(format!(
            "W is {}x{}, equation has {} rows",
            w.n(),
            w.n(),
            e.n()
        )));
    }
    let f = linalg::kron_identity(w.matrix(), e.m()) - projector_block_diag(e) * alpha;
    Ok(ClosedLoopSystem {
        f,
        z_h: stacked_offsets(e),
        alpha,
    })
}

impl ClosedLoopSystem {
    pub fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.f * x + &self.z_h * self.alpha
    }

    /// States `x(0..=steps)` of the affine recursion.
    pub fn simulate(&self, x0: &DVector<f64>, steps: usize) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0.clone());
        for _ in 0..steps {
            let next = self.step(out.last().expect("non-empty"));
            out.push(next);
        }
        out
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.f)
    }
}
