//! Fixed network instances used by the reproductions, tests and benches.

use nalgebra::{DMatrix, DVector};

use crate::lae::LinearEquation;
use crate::netcore::{Graph, WeightMatrix, DEFAULT_WEIGHT_TOL};

/// A star network with its weights, step size and equation.
#[derive(Debug, Clone)]
pub struct Preset {
    pub graph: Graph,
    pub weights: DMatrix<f64>,
    pub alpha: f64,
    pub equation: LinearEquation,
    pub solution: DVector<f64>,
}

impl Preset {
    pub fn weight_matrix(&self) -> WeightMatrix {
        WeightMatrix::new(self.weights.clone(), &self.graph, DEFAULT_WEIGHT_TOL)
            .expect("preset weights are valid")
    }
}

fn star_weights() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.1, 0.3, 0.2, 0.4, //
            0.3, 0.7, 0.0, 0.0, //
            0.2, 0.0, 0.8, 0.0, //
            0.4, 0.0, 0.0, 0.6,
        ],
    )
}

fn star() -> Graph {
    Graph::star(4, 0).expect("static graph")
}

/// 4-node star centered at node 0, two-dimensional unknown, solution `(1, -2)`.
pub fn example2() -> Preset {
    let equation = LinearEquation::from_rows(
        &[&[3.0, -1.0], &[1.5, 0.8], &[-2.0, 1.5], &[-1.2, 4.0]],
        &[5.0, -0.1, -5.0, -9.2],
    )
    .expect("static equation");
    Preset {
        graph: star(),
        weights: star_weights(),
        alpha: 0.1,
        equation,
        solution: DVector::from_column_slice(&[1.0, -2.0]),
    }
}

/// Same network with a badly scaled equation, solution `(-1, 2)`.
pub fn example4() -> Preset {
    let equation = LinearEquation::from_rows(
        &[&[71.5, -65.5], &[-95.0, 47.1], &[-35.5, 100.0], &[86.5, -69.0]],
        &[-202.5, 189.2, 235.5, -224.5],
    )
    .expect("static equation");
    Preset {
        graph: star(),
        weights: star_weights(),
        alpha: 0.1,
        equation,
        solution: DVector::from_column_slice(&[-1.0, 2.0]),
    }
}

/// Observer used with [`example4`] (second node, a leaf of the star).
pub const EXAMPLE4_OBSERVER: usize = 1;

/// Published identified state matrix for [`example4`], rounded to two decimals.
pub fn example4_published_a_star() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        8,
        8,
        &[
            0.86, 1.09, -0.87, -0.73, 0.47, 0.05, 0.61, -0.87, //
            0.61, 0.59, -0.47, -0.16, -0.36, -0.70, -0.61, 0.20, //
            0.78, 1.10, -0.94, -1.06, 0.06, -0.65, 0.15, -0.75, //
            1.03, 0.64, -1.12, 0.27, -0.28, -0.85, -0.68, 0.09, //
            -0.73, -1.37, 1.72, 1.18, 0.30, 0.38, -0.53, 1.19, //
            -1.22, -0.78, 1.40, 0.84, 0.47, 2.10, 0.92, -0.01, //
            2.03, 1.60, -2.97, -1.82, -0.33, -1.94, 0.03, -0.96, //
            0.36, 0.19, -0.35, -0.21, -0.12, -0.39, -0.30, 0.80,
        ],
    )
}
