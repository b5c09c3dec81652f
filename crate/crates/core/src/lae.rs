//! Linear-equation datasets `H y = z`, row projections, canonical representatives
//! of the row-scaling equivalence classes, adjacency radii and convex sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Rows with a smaller norm are rejected as modeling errors.
pub const ZERO_ROW_TOL: f64 = 1e-12;

/// Components below this magnitude never decide the canonical sign.
pub const SIGN_TOL: f64 = 1e-12;

/// Tolerance used when deciding whether two single rows are equivalent.
pub const ROW_EQUIV_TOL: f64 = 1e-10;

/// Relative residual above which `solve_exact` reports the system unsolvable.
pub const SOLVABLE_TOL: f64 = 1e-8;

/// The network dataset: node `i` holds row `H_i` and scalar `z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEquation", into = "RawEquation")]
pub struct LinearEquation {
    h: DMatrix<f64>,
    z: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawEquation {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    z: Vec<f64>,
}

impl TryFrom<RawEquation> for LinearEquation {
    type Error = Error;

    fn try_from(raw: RawEquation) -> Result<Self> {
        let n = raw.h.len();
        let m = raw.h.first().map_or(0, Vec::len);
        if raw.h.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("rows of H have different lengths".into()));
        }
        let flat: Vec<f64> = raw.h.into_iter().flatten().collect();
        Self::new(DMatrix::from_row_slice(n, m, &flat), DVector::from_vec(raw.z))
    }
}

impl From<LinearEquation> for RawEquation {
    fn from(e: LinearEquation) -> Self {
        RawEquation {
            h: matrix_rows(&e.h),
            z: e.z.iter().copied().collect(),
        }
    }
}

pub(crate) fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl LinearEquation {
    pub fn new(h: DMatrix<f64>, z: DVector<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Dimension("H must be non-empty".into()));
        }
        if h.nrows() != z.len() {
            return Err(Error::Dimension(format!(
                "H has {} rows but z has {} entries",
                h.nrows(),
                z.len()
            )));
        }
        if h.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("equation has non-finite entries".into()));
        }
        for i in 0..h.nrows() {
            if h.row(i).norm() <= ZERO_ROW_TOL {
                return Err(Error::ZeroRow(i));
            }
        }
        Ok(Self { h, z })
    }

    pub fn from_rows(rows: &[&[f64]], z: &[f64]) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("rows of H have different lengths".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(
            DMatrix::from_row_slice(rows.len(), m, &flat),
            DVector::from_column_slice(z),
        )
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Number of rows (nodes).
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    /// Unknown dimension.
    pub fn m(&self) -> usize {
        self.h.ncols()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    /// `H_i` as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.h.row(i).transpose()
    }

    /// Projection of `x` onto the hyperplane of row `i`.
    pub fn project(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        project_unchecked(&self.row(i), self.z[i], x)
    }

    /// Rank-one projector `H_i H_iᵀ / H_iᵀ H_i`.
    pub fn row_projector(&self, i: usize) -> DMatrix<f64> {
        let h = self.row(i);
        &h * h.transpose() / h.norm_squared()
    }

    /// Every row scaled by the matching entry of `scales`.
    pub fn scaled(&self, scales: &[f64]) -> Result<Self> {
        if scales.len() != self.n() {
            return Err(Error::Dimension("one scale per row expected".into()));
        }
        let mut h = self.h.clone();
        let mut z = self.z.clone();
        for (i, &s) in scales.iter().enumerate() {
            h.row_mut(i).scale_mut(s);
            z[i] *= s;
        }
        Self::new(h, z)
    }

    /// Row `i` replaced by `(row, zi)`.
    pub fn with_row(&self, i: usize, row: &[f64], zi: f64) -> Result<Self> {
        if row.len() != self.m() {
            return Err(Error::Dimension("replacement row has wrong length".into()));
        }
        let mut h = self.h.clone();
        let mut z = self.z.clone();
        for (k, &v) in row.iter().enumerate() {
            h[(i, k)] = v;
        }
        z[i] = zi;
        Self::new(h, z)
    }

    /// Largest absolute row residual `|H_iᵀ y − z_i|`.
    pub fn residual(&self, y: &DVector<f64>) -> f64 {
        (&self.h * y - &self.z).amax()
    }
}

fn project_unchecked(h: &DVector<f64>, z: f64, x: &DVector<f64>) -> DVector<f64> {
    let coef = (h.dot(x) - z) / h.norm_squared();
    x - h * coef
}

/// Euclidean projection of `x` onto `{y : hᵀy = z}`.
pub fn row_projection(h: &DVector<f64>, z: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if h.len() != x.len() {
        return Err(Error::Dimension(format!(
            "row has length {}, point has length {}",
            h.len(),
            x.len()
        )));
    }
    if h.norm() <= ZERO_ROW_TOL {
        return Err(Error::ZeroRow(0));
    }
    Ok(project_unchecked(h, z, x))
}

/// Representative of an equivalence class: unit rows, first significant
/// component positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEquation {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

impl CanonicalEquation {
    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn m(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }

    /// Largest entrywise difference; infinite on shape mismatch.
    pub fn max_deviation(&self, other: &CanonicalEquation) -> f64 {
        if self.n() != other.n() || self.m() != other.m() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            worst = worst.max(row_deviation(&self.h[i], self.z[i], &other.h[i], other.z[i]));
        }
        worst
    }

    /// Back to a plain equation (always valid since rows are unit).
    pub fn to_equation(&self) -> Result<LinearEquation> {
        let rows: Vec<&[f64]> = self.h.iter().map(Vec::as_slice).collect();
        LinearEquation::from_rows(&rows, &self.z)
    }

    /// CSV with columns `node,h_1..h_m,z`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["node".to_string()];
        header.extend((1..=self.m()).map(|k| format!("h_{k}")));
        header.push("z".into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.h[i].iter().map(f64::to_string));
            rec.push(self.z[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn row_deviation(h1: &[f64], z1: f64, h2: &[f64], z2: f64) -> f64 {
    h1.iter()
        .zip(h2)
        .map(|(a, b)| (a - b).abs())
        .fold((z1 - z2).abs(), f64::max)
}

/// Canonical form of a single row.
pub fn canonical_row(h: &[f64], z: f64) -> Result<(Vec<f64>, f64)> {
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > ZERO_ROW_TOL) {
        return Err(Error::ZeroRow(0));
    }
    let mut s = 1.0 / norm;
    if let Some(first) = h.iter().find(|v| (**v * s).abs() > SIGN_TOL) {
        if *first < 0.0 {
            s = -s;
        }
    }
    Ok((h.iter().map(|v| v * s).collect(), z * s))
}

pub fn canonical_form(e: &LinearEquation) -> CanonicalEquation {
    let mut h = Vec::with_capacity(e.n());
    let mut z = Vec::with_capacity(e.n());
    for i in 0..e.n() {
        let row: Vec<f64> = e.h.row(i).iter().copied().collect();
        let (hr, zr) = canonical_row(&row, e.z[i]).expect("rows are validated nonzero");
        h.push(hr);
        z.push(zr);
    }
    CanonicalEquation { h, z }
}

/// True iff the canonical forms agree entrywise within `tol`.
pub fn equations_equivalent(a: &LinearEquation, b: &LinearEquation, tol: f64) -> Result<bool> {
    check_same_shape(a, b)?;
    Ok(canonical_form(a).max_deviation(&canonical_form(b)) <= tol)
}

fn check_same_shape(a: &LinearEquation, b: &LinearEquation) -> Result<()> {
    if a.n() != b.n() || a.m() != b.m() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.n(),
            a.m(),
            b.n(),
            b.m()
        )));
    }
    Ok(())
}

/// How far apart two datasets are in the single-row sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adjacency {
    /// Every row equivalent; `(δ_A, δ_b) = (0, 0)`.
    Identical,
    Adjacent { index: usize, delta_a: f64, delta_b: f64 },
    NotAdjacent { differing_rows: usize },
}

pub fn adjacency_distance(a: &LinearEquation, b: &LinearEquation) -> Result<Adjacency> {
    check_same_shape(a, b)?;
    let ca = canonical_form(a);
    let cb = canonical_form(b);
    let differing: Vec<usize> = (0..a.n())
        .filter(|&i| row_deviation(&ca.h[i], ca.z[i], &cb.h[i], cb.z[i]) > ROW_EQUIV_TOL)
        .collect();
    match differing.as_slice() {
        [] => Ok(Adjacency::Identical),
        [i] => {
            let i = *i;
            let diff = a.row_projector(i) - b.row_projector(i);
            let delta_a = SymmetricEigen::new(diff).eigenvalues.amax();
            let (ha, hb) = (a.row(i), b.row(i));
            let offset = &ha * (a.z[i] / ha.norm_squared()) - &hb * (b.z[i] / hb.norm_squared());
            Ok(Adjacency::Adjacent {
                index: i,
                delta_a,
                delta_b: offset.norm(),
            })
        }
        rows => Ok(Adjacency::NotAdjacent {
            differing_rows: rows.len(),
        }),
    }
}

/// Outcome of the direct (non-iterative) solve.
#[derive(Debug, Clone, PartialEq)]
pub enum ExactSolution {
    Solved { solution: DVector<f64>, unique: bool },
    Unsolvable { residual: f64 },
}

impl ExactSolution {
    pub fn solution(&self) -> Option<&DVector<f64>> {
        match self {
            ExactSolution::Solved { solution, .. } => Some(solution),
            ExactSolution::Unsolvable { .. } => None,
        }
    }

    pub fn is_unique(&self) -> bool {
        matches!(self, ExactSolution::Solved { unique: true, .. })
    }
}

/// Minimum-norm least-squares solve by SVD.
pub fn solve_exact(e: &LinearEquation) -> ExactSolution {
    let (y, rank) = linalg::min_norm_solve(&e.h, &e.z);
    let residual = (&e.h * &y - &e.z).norm();
    if residual > SOLVABLE_TOL * (1.0 + e.z.norm()) {
        return ExactSolution::Unsolvable { residual };
    }
    ExactSolution::Solved {
        solution: y,
        unique: rank == e.m(),
    }
}

/// Compact convex constraint set `Ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ConvexSet {
    pub fn ball(center: &[f64], radius: f64) -> Result<Self> {
        let s = ConvexSet::Ball {
            center: center.to_vec(),
            radius,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn boxed(lower: &[f64], upper: &[f64]) -> Result<Self> {
        let s = ConvexSet::Box {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Ball { center, radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidParameter(format!("ball radius {radius}")));
                }
                if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("ball center".into()));
                }
            }
            ConvexSet::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Dimension("box bounds differ in length".into()));
                }
                if lower
                    .iter()
                    .zip(upper)
                    .any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
                {
                    return Err(Error::InvalidParameter("box needs lower <= upper".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Box { lower, .. } => lower.len(),
        }
    }

    /// Closest point of the set (the argmin of the distance).
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has length {}, set has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(match self {
            ConvexSet::Ball { center, radius } => {
                let c = DVector::from_column_slice(center);
                let d = x - &c;
                let dist = d.norm();
                if dist <= *radius {
                    x.clone()
                } else {
                    c + d * (radius / dist)
                }
            }
            ConvexSet::Box { lower, upper } => {
                DVector::from_iterator(x.len(), (0..x.len()).map(|k| x[k].clamp(lower[k], upper[k])))
            }
        })
    }

    /// `sup_{v ∈ Ω} ‖v‖`.
    pub fn sup_norm_bound(&self) -> f64 {
        match self {
            ConvexSet::Ball { center, radius } => {
                center.iter().map(|v| v * v).sum::<f64>().sqrt() + radius
            }
            // The farthest corner picks the larger magnitude per coordinate.
            ConvexSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (l * l).max(u * u))
                .sum::<f64>()
                .sqrt(),
        }
    }
}
