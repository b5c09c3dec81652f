use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Graph;

/// What a local eavesdropper attached to `observer` can see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub observer: usize,
    /// Observed nodes in increasing order.
    pub observed: Vec<usize>,
    pub n: usize,
    pub known_solution: Option<Vec<f64>>,
}

impl ObservationModel {
    /// Sees the observer's own state and its neighbors' states.
    pub fn new(g: &Graph, observer: usize) -> Result<Self> {
        Self::build(g, observer, true)
    }

    /// Sees only the neighbors' states.
    pub fn neighbors_only(g: &Graph, observer: usize) -> Result<Self> {
        Self::build(g, observer, false)
    }

    fn build(g: &Graph, observer: usize, include_observer: bool) -> Result<Self> {
        if observer >= g.n() {
            return Err(Error::NodeOutOfRange { index: observer, n: g.n() });
        }
        let mut observed = g.neighbors(observer).to_vec();
        if include_observer {
            observed.push(observer);
        }
        observed.sort_unstable();
        if observed.is_empty() {
            return Err(Error::InvalidParameter(format!("node {observer} observes nothing")));
        }
        Ok(Self {
            observer,
            observed,
            n: g.n(),
            known_solution: None,
        })
    }

    pub fn with_solution(mut self, y: &DVector<f64>) -> Self {
        self.known_solution = Some(y.iter().copied().collect());
        self
    }

    pub fn solution(&self) -> Result<DVector<f64>> {
        self.known_solution
            .as_ref()
            .map(|v| DVector::from_column_slice(v))
            .ok_or_else(|| Error::InvalidParameter("the eavesdropper needs a known solution".into()))
    }

    /// `|N_i|`, the number of observed nodes.
    pub fn count(&self) -> usize {
        self.observed.len()
    }

    /// Row selector `E_i` (`|N_i| x n`).
    pub fn selector(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.count(), self.n);
        for (k, &j) in self.observed.iter().enumerate() {
            e[(k, j)] = 1.0;
        }
        e
    }

    /// `E_i ⊗ I_m`.
    pub fn output_matrix(&self, m: usize) -> DMatrix<f64> {
        self.selector().kronecker(&DMatrix::identity(m, m))
    }

    /// Stacked observed states of an `n x m` network state.
    pub fn observe(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let m = x.ncols();
        DVector::from_iterator(
            self.count() * m,
            self.observed.iter().flat_map(|&j| x.row(j).iter().copied().collect::<Vec<_>>()),
        )
    }

    /// Indices of the stacked state (`0..nm`) that are observed.
    pub fn observed_indices(&self, m: usize) -> Vec<usize> {
        self.observed.iter().flat_map(|&j| (j * m)..(j * m + m)).collect()
    }
}
