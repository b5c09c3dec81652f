use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lae::matrix_rows;

/// Local objectives `f_i(x) = ½‖A_i x − b_i‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RawQuadratic>", into = "Vec<RawQuadratic>")]
pub struct QuadraticObjectiveSet {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawQuadratic {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<Vec<RawQuadratic>> for QuadraticObjectiveSet {
    type Error = Error;

    fn try_from(raw: Vec<RawQuadratic>) -> Result<Self> {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for q in raw {
            let p = q.a.len();
            let m = q.a.first().map_or(0, Vec::len);
            if q.a.iter().any(|r| r.len() != m) {
                return Err(Error::Dimension("ragged objective matrix".into()));
            }
            let flat: Vec<f64> = q.a.into_iter().flatten().collect();
            a.push(DMatrix::from_row_slice(p, m, &flat));
            b.push(DVector::from_vec(q.b));
        }
        Self::new(a, b)
    }
}

impl From<QuadraticObjectiveSet> for Vec<RawQuadratic> {
    fn from(q: QuadraticObjectiveSet) -> Self {
        q.a.iter()
            .zip(&q.b)
            .map(|(a, b)| RawQuadratic {
                a: matrix_rows(a),
                b: b.iter().copied().collect(),
            })
            .collect()
    }
}

impl QuadraticObjectiveSet {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::Dimension("one (A_i, b_i) pair per node expected".into()));
        }
        let m = a[0].ncols();
        if m == 0 {
            return Err(Error::Dimension("objectives need m >= 1".into()));
        }
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.ncols() != m || ai.nrows() != bi.len() || ai.nrows() == 0 {
                return Err(Error::Dimension(format!("objective {i} has inconsistent shape")));
            }
        }
        Ok(Self { a, b })
    }

    /// `f_i(x) = ½‖x‖²` at every node.
    pub fn isotropic(n: usize, m: usize) -> Self {
        Self::new(vec![DMatrix::identity(m, m); n], vec![DVector::zeros(m); n])
            .expect("consistent shapes")
    }

    /// Gaussian `A_i` (`p x m`) and `b_i`.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, p: usize, rng: &mut R) -> Self {
        let mut gauss = || {
            let normal = rand_distr::StandardNormal;
            rng.sample::<f64, _>(normal)
        };
        let a = (0..n).map(|_| DMatrix::from_fn(p, m, |_, _| gauss())).collect();
        let b = (0..n).map(|_| DVector::from_fn(p, |_, _| gauss())).collect();
        Self::new(a, b).expect("consistent shapes")
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn m(&self) -> usize {
        self.a[0].ncols()
    }

    pub fn a(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }

    pub fn b(&self, i: usize) -> &DVector<f64> {
        &self.b[i]
    }

    pub fn value(&self, i: usize, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a[i] * x - &self.b[i]).norm_squared()
    }

    /// `∇f_i(x) = A_iᵀ(A_i x − b_i)`.
    pub fn gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        self.a[i].transpose() * (&self.a[i] * x - &self.b[i])
    }

    /// Minimizer of `Σ_i f_i` from the normal equations.
    pub fn joint_minimizer(&self) -> Result<DVector<f64>> {
        let m = self.m();
        let mut lhs = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for (a, b) in self.a.iter().zip(&self.b) {
            lhs += a.transpose() * a;
            rhs += a.transpose() * b;
        }
        lhs.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::InvalidParameter("sum of objectives is not strictly convex".into()))
    }
}
