//! Communication graphs, doubly stochastic weight matrices and their spectra.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance for stochasticity and sparsity checks.
pub const DEFAULT_WEIGHT_TOL: f64 = 1e-9;

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    connected: bool,
}

impl Graph {
    /// Builds a graph from unordered pairs. Duplicates (in either orientation)
    /// collapse into one edge.
    pub fn new(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in pairs {
            for idx in [a, b] {
                if idx >= n {
                    return Err(Error::NodeOutOfRange { index: idx, n });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let connected = bfs_connected(n, &neighbors);
        Ok(Self {
            n,
            edges,
            neighbors,
            connected,
        })
    }

    /// Star graph with `center` joined to every other node.
    pub fn star(n: usize, center: usize) -> Result<Self> {
        let pairs: Vec<_> = (0..n).filter(|&j| j != center).map(|j| (center, j)).collect();
        if center >= n {
            return Err(Error::NodeOutOfRange { index: center, n });
        }
        Self::new(n, &pairs)
    }

    pub fn path(n: usize) -> Result<Self> {
        let pairs: Vec<_> = (1..n).map(|j| (j - 1, j)).collect();
        Self::new(n, &pairs)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((i, j));
            }
        }
        Self::new(n, &pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Normalized edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor set `N_i` (excludes `i`).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && i < self.n && self.neighbors[i].binary_search(&j).is_ok()
    }
}

fn bfs_connected(n: usize, neighbors: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &neighbors[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == n
}

/// One failed weight-matrix invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Shape { expected: usize, rows: usize, cols: usize },
    NonFinite { i: usize, j: usize },
    RowSum { row: usize, sum: f64 },
    ColumnSum { col: usize, sum: f64 },
    MissingEdgeWeight { i: usize, j: usize, value: f64 },
    WeightWithoutEdge { i: usize, j: usize, value: f64 },
    NonPositiveDiagonal { i: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { expected, rows, cols } => {
                write!(f, "expected {expected}x{expected}, got {rows}x{cols}")
            }
            Violation::NonFinite { i, j } => write!(f, "w[{i}][{j}] is not finite"),
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}"),
            Violation::ColumnSum { col, sum } => write!(f, "column {col} sums to {sum}"),
            Violation::MissingEdgeWeight { i, j, value } => {
                write!(f, "edge {{{i},{j}}} has non-positive weight {value}")
            }
            Violation::WeightWithoutEdge { i, j, value } => {
                write!(f, "non-edge ({i},{j}) carries weight {value}")
            }
            Violation::NonPositiveDiagonal { i, value } => {
                write!(f, "diagonal w[{i}][{i}] = {value} is not positive")
            }
        }
    }
}

/// Result of checking a matrix against a graph. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks double stochasticity and graph compliance of `w`.
pub fn validate_weight_matrix(w: &DMatrix<f64>, g: &Graph, tol: f64) -> ValidationReport {
    let n = g.n();
    let mut violations = Vec::new();
    if w.nrows() != n || w.ncols() != n {
        violations.push(Violation::Shape {
            expected: n,
            rows: w.nrows(),
            cols: w.ncols(),
        });
        return ValidationReport { violations };
    }
    for i in 0..n {
        for j in 0..n {
            if !w[(i, j)].is_finite() {
                violations.push(Violation::NonFinite { i, j });
            }
        }
    }
    if !violations.is_empty() {
        return ValidationReport { violations };
    }
    for i in 0..n {
        let sum = w.row(i).sum();
        if (sum - 1.0).abs() > tol {
            violations.push(Violation::RowSum { row: i, sum });
        }
    }
    for j in 0..n {
        let sum = w.column(j).sum();
        if (sum - 1.0).abs() > tol {
            violations.push(Violation::ColumnSum { col: j, sum });
        }
    }
    for i in 0..n {
        for j in 0..n {
            let value = w[(i, j)];
            if i == j {
                if value <= tol {
                    violations.push(Violation::NonPositiveDiagonal { i, value });
                }
            } else if g.has_edge(i, j) {
                if value <= tol {
                    violations.push(Violation::MissingEdgeWeight { i, j, value });
                }
            } else if value.abs() > tol {
                violations.push(Violation::WeightWithoutEdge { i, j, value });
            }
        }
    }
    ValidationReport { violations }
}

/// A validated doubly stochastic matrix together with the graph it complies with.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    matrix: DMatrix<f64>,
    graph: Graph,
    tol: f64,
}

impl WeightMatrix {
    pub fn new(matrix: DMatrix<f64>, graph: &Graph, tol: f64) -> Result<Self> {
        let report = validate_weight_matrix(&matrix, graph, tol);
        if !report.is_valid() {
            return Err(Error::InvalidWeights(report));
        }
        Ok(Self {
            matrix,
            graph: graph.clone(),
            tol,
        })
    }

    /// Validates `matrix` against the graph implied by its off-diagonal support.
    pub fn from_matrix(matrix: DMatrix<f64>, tol: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension(format!(
                "weight matrix is {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let n = matrix.nrows();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if matrix[(i, j)].abs() > tol || matrix[(j, i)].abs() > tol {
                    pairs.push((i, j));
                }
            }
        }
        let graph = Graph::new(n, &pairs)?;
        Self::new(matrix, &graph, tol)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn is_symmetric(&self) -> bool {
        linalg::asymmetry(&self.matrix) <= self.tol
    }
}

/// Metropolis–Hastings weights `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// with the diagonal absorbing the remainder of each row.
pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        let v = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::new(w, g, DEFAULT_WEIGHT_TOL)
}

/// Network as read from configuration files: `{"n", "edges", "weights"?}`.
/// Without explicit weights the Metropolis weights are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsSpec>,
}

/// Explicit weights, either as rows or as one flat row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl NetworkSpec {
    pub fn from_graph(g: &Graph, w: Option<&WeightMatrix>) -> Self {
        Self {
            n: g.n(),
            edges: g.edges().to_vec(),
            weights: w.map(|w| WeightsSpec::Rows(crate::lae::matrix_rows(w.matrix()))),
        }
    }

    pub fn graph(&self) -> Result<Graph> {
        Graph::new(self.n, &self.edges)
    }

    pub fn weight_matrix(&self) -> Result<WeightMatrix> {
        let g = self.graph()?;
        let n = self.n;
        let flat: Vec<f64> = match &self.weights {
            None => return metropolis_weights(&g),
            Some(WeightsSpec::Rows(rows)) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension(format!("weights must be {n}x{n}")));
                }
                rows.concat()
            }
            Some(WeightsSpec::Flat(v)) => v.clone(),
        };
        if flat.len() != n * n {
            return Err(Error::Dimension(format!("weights must have {} entries", n * n)));
        }
        WeightMatrix::new(DMatrix::from_row_slice(n, n, &flat), &g, DEFAULT_WEIGHT_TOL)
    }
}

/// Eigenvalue summary of a symmetric weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralStats {
    /// Smallest eigenvalue `λ_m(W)`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Smallest absolute eigenvalue `σ_m(W)`.
    pub sigma_min: f64,
    /// Largest absolute eigenvalue `σ_M(W)`.
    pub sigma_max: f64,
    pub full_rank: bool,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
}

pub fn spectral_stats(w: &WeightMatrix) -> Result<SpectralStats> {
    symmetric_spectral_stats(w.matrix(), w.tol())
}

/// Spectral statistics of any symmetric matrix; `tol` bounds both the accepted
/// asymmetry and the rank threshold.
pub fn symmetric_spectral_stats(a: &DMatrix<f64>, tol: f64) -> Result<SpectralStats> {
    let asym = linalg::asymmetry(a);
    if asym > tol {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (a + a.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|x, y| x.total_cmp(y));
    let lambda_min = eigenvalues[0];
    let lambda_max = eigenvalues[eigenvalues.len() - 1];
    let sigma_min = eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let sigma_max = eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(SpectralStats {
        lambda_min,
        lambda_max,
        sigma_min,
        sigma_max,
        full_rank: sigma_min > tol,
        eigenvalues,
    })
}
