//! Small dense linear-algebra helpers shared by the solvers and the attacks.

use nalgebra::{Complex, DMatrix, DVector};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `W ⊗ I_m`.
pub fn kron_identity(w: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    kron(w, &DMatrix::identity(m, m))
}

/// Numerical rank from the singular values, relative to the largest one.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Default relative rank tolerance for a matrix of the given shape.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON * 16.0
}

/// 2-norm condition number; infinite for singular or empty matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let sv = a.singular_values();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

/// Minimum-norm least-squares solution of `a x = b` with its rank.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return (DVector::zeros(cols), 0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let max = svd.singular_values.max();
    let tol = default_rank_tol(rows, cols) * max;
    let mut x = DVector::zeros(cols);
    let mut r = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            r += 1;
            let coef = u.column(k).dot(b) / s;
            x += v_t.row(k).transpose() * coef;
        }
    }
    (x, r)
}

/// Moore–Penrose pseudo-inverse.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let max = if a.is_empty() { 0.0 } else { a.singular_values().max() };
    let tol = default_rank_tol(rows, cols) * max;
    a.clone()
        .pseudo_inverse(tol.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(cols, rows))
}

/// Eigenvalues of a general square matrix, sorted by (real, imaginary) part.
pub fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    ev
}

/// Largest pairwise distance between two spectra after sorting both.
///
/// Returns `f64::INFINITY` when the lengths differ.
pub fn spectrum_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest absolute entry of `a - a^T`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Column-major vectorization.
pub fn vec_of(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Node-major stacking `[x_1; ...; x_n]` of an `n x m` state whose row `i` is `x_i`.
pub fn stack(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.transpose().as_slice())
}

/// Inverse of [`stack`].
pub fn unstack(v: &DVector<f64>, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, m, v.as_slice())
}
