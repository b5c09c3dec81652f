use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ObservationModel, Realization};
use crate::error::{Error, Result};
use crate::lae::{canonical_form, CanonicalEquation, LinearEquation};
use crate::linalg;
use crate::netcore::WeightMatrix;
use crate::rng;

/// The linear system in `[vec T; vec Q]` obtained by vectorizing
/// `(W ⊗ I) T − α Q = T F★` and `(E_i ⊗ I) T = C★`, with `Q = Z_H T`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub solution: DVector<f64>,
    /// Dimension of the solution space.
    pub rank_deficiency: usize,
    /// `‖A x − b‖` at the minimum-norm solution.
    pub residual: f64,
}

impl VectorizedSystem {
    pub fn residual_at(&self, x: &DVector<f64>) -> f64 {
        (&self.matrix * x - &self.rhs).norm()
    }
}

fn realization_dims(r: &Realization, w: &WeightMatrix, obs: &ObservationModel) -> Result<(usize, usize)> {
    let nm = r.f_star.nrows();
    let n = w.n();
    if r.f_star.ncols() != nm || nm % n != 0 || obs.n != n {
        return Err(Error::Dimension("realization does not match the network".into()));
    }
    let m = nm / n;
    if r.c_star.shape() != (obs.count() * m, nm) {
        return Err(Error::Dimension("C★ does not match the observation model".into()));
    }
    Ok((n, m))
}

pub fn build_vectorized_system(
    r: &Realization,
    w: &WeightMatrix,
    alpha: f64,
    obs: &ObservationModel,
) -> Result<VectorizedSystem> {
    let (_, m) = realization_dims(r, w, obs)?;
    let nm = r.f_star.nrows();
    let big = nm * nm;
    let eye = DMatrix::<f64>::identity(nm, nm);
    let s_star = linalg::kron(&eye, &linalg::kron_identity(w.matrix(), m))
        - linalg::kron(&r.f_star.transpose(), &eye);
    let constraint = linalg::kron(&eye, &obs.output_matrix(m));
    let rows = big + constraint.nrows();
    let mut matrix = DMatrix::zeros(rows, 2 * big);
    matrix.view_mut((0, 0), (big, big)).copy_from(&s_star);
    matrix.view_mut((0, big), (big, big)).fill_diagonal(-alpha);
    matrix
        .view_mut((big, 0), (constraint.nrows(), big))
        .copy_from(&constraint);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(big, constraint.nrows()).copy_from(&linalg::vec_of(&r.c_star));
    let (solution, rank) = linalg::min_norm_solve(&matrix, &rhs);
    let residual = (&matrix * &solution - &rhs).norm();
    Ok(VectorizedSystem {
        matrix,
        rhs,
        solution,
        rank_deficiency: 2 * big - rank,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoverOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverResult {
    /// Canonical `(Ĥ, Ĥ y*)`.
    pub h_hat: CanonicalEquation,
    /// `‖(W ⊗ I − α Z_Ĥ) T − T F★‖²_F` at the returned point.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Restart that produced the returned point.
    pub best_start: usize,
}

/// Fitting problem with the observed rows of `T` pinned to `C★`.
struct Fit<'a> {
    wk: DMatrix<f64>,
    a_star: &'a DMatrix<f64>,
    alpha: f64,
    n: usize,
    m: usize,
    fixed: Vec<usize>,
    free: Vec<usize>,
    c_star: &'a DMatrix<f64>,
}

impl Fit<'_> {
    fn nm(&self) -> usize {
        self.n * self.m
    }

    fn t_matrix(&self, t_free: &DMatrix<f64>) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.nm(), self.nm());
        for (k, &r) in self.fixed.iter().enumerate() {
            t.set_row(r, &self.c_star.row(k));
        }
        for (k, &r) in self.free.iter().enumerate() {
            t.set_row(r, &t_free.row(k));
        }
        t
    }

    fn g_matrix(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = self.wk.clone();
        let m = self.m;
        for i in 0..self.n {
            let row = h.row(i).transpose();
            let p = &row * row.transpose() / row.norm_squared();
            let mut block = g.view_mut((i * m, i * m), (m, m));
            block -= p * self.alpha;
        }
        g
    }

    fn residual(&self, h: &DMatrix<f64>, t_free: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.t_matrix(t_free);
        self.g_matrix(h) * &t - &t * self.a_star
    }

    /// Jacobian of `vec(residual)` with respect to the free rows of `T`
    /// (ordered row-major over `t_free`).
    fn jacobian_t(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let nm = self.nm();
        let mut j = DMatrix::zeros(nm * nm, self.free.len() * nm);
        for (k, &a) in self.free.iter().enumerate() {
            for b in 0..nm {
                let col = k * nm + b;
                // d/dT[a,b] of G T − T A★ is G[:,a] e_bᵀ − e_a A★[b,:].
                for r in 0..nm {
                    j[(b * nm + r, col)] += g[(r, a)];
                }
                for c in 0..nm {
                    j[(c * nm + a, col)] -= self.a_star[(b, c)];
                }
            }
        }
        j
    }

    /// Jacobian with respect to the rows of `H` (unit rows assumed), ordered row-major.
    fn jacobian_h(&self, h: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m, nm) = (self.n, self.m, self.nm());
        let mut j = DMatrix::zeros(nm * nm, n * m);
        for i in 0..n {
            let hv = h.row(i).transpose();
            let t_block = t.view((i * m, 0), (m, nm));
            for k in 0..m {
                let mut dp = &hv * hv.transpose() * (-2.0 * hv[k]);
                for c in 0..m {
                    dp[(k, c)] += hv[c];
                    dp[(c, k)] += hv[c];
                }
                let d = dp * t_block * (-self.alpha);
                let col = i * m + k;
                for c in 0..nm {
                    for r in 0..m {
                        j[(c * nm + i * m + r, col)] = d[(r, c)];
                    }
                }
            }
        }
        j
    }

    /// Least-squares `T` rows for fixed `H`.
    fn best_t(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let zero = DMatrix::zeros(self.free.len(), self.nm());
        if self.free.is_empty() {
            return zero;
        }
        let r0 = linalg::vec_of(&self.residual(h, &zero));
        let j = self.jacobian_t(&self.g_matrix(h));
        let (x, _) = linalg::min_norm_solve(&j, &(-r0));
        DMatrix::from_row_slice(self.free.len(), self.nm(), x.as_slice())
    }

    fn objective(&self, h: &DMatrix<f64>, t_free: &DMatrix<f64>) -> f64 {
        self.residual(h, t_free).norm_squared()
    }

    /// Damped Gauss–Newton over `(H, T_free)` with row normalization of `H`
    /// after every accepted step.
    fn solve(&self, h0: &DMatrix<f64>, max_iter: usize, tol: f64) -> (DMatrix<f64>, f64, usize) {
        let mut h = normalize_rows(h0);
        let mut t_free = self.best_t(&h);
        let mut cost = self.objective(&h, &t_free);
        let mut mu = 1e-3;
        let nh = self.n * self.m;
        let nt = self.free.len() * self.nm();
        let mut iter = 0;
        while iter < max_iter && cost >= tol * 1e-4 {
            iter += 1;
            let t = self.t_matrix(&t_free);
            let g = self.g_matrix(&h);
            let r = linalg::vec_of(&(&g * &t - &t * self.a_star));
            let mut j = DMatrix::zeros(r.len(), nh + nt);
            j.view_mut((0, 0), (r.len(), nh)).copy_from(&self.jacobian_h(&h, &t));
            if nt > 0 {
                j.view_mut((0, nh), (r.len(), nt)).copy_from(&self.jacobian_t(&g));
            }
            let jt = j.transpose();
            let jtj = &jt * &j;
            let grad = &jt * &r;
            let mut accepted = false;
            while mu < 1e12 {
                let mut lhs = jtj.clone();
                for d in 0..lhs.nrows() {
                    lhs[(d, d)] += mu * (1.0 + jtj[(d, d)]);
                }
                let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&grad))) else {
                    mu *= 4.0;
                    continue;
                };
                let h_try = normalize_rows(&(&h + DMatrix::from_row_slice(self.n, self.m, &step.as_slice()[..nh])));
                let t_try = &t_free + DMatrix::from_row_slice(self.free.len(), self.nm(), &step.as_slice()[nh..]);
                let c_try = self.objective(&h_try, &t_try);
                if c_try < cost {
                    h = h_try;
                    t_free = t_try;
                    let gain = cost - c_try;
                    cost = c_try;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    if gain <= 1e-15 * cost {
                        iter = max_iter;
                    }
                    break;
                }
                mu *= 4.0;
            }
            if !accepted {
                break;
            }
        }
        (h, cost, iter)
    }
}

fn normalize_rows(h: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = h.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Searches for `H` (and a similarity `T`) consistent with an identified
/// realization, then completes the offsets as `ẑ = Ĥ y*`.
pub fn recover_equation(
    r: &Realization,
    w: &WeightMatrix,
    alpha: f64,
    obs: &ObservationModel,
    y_star: &DVector<f64>,
    init_h: &DMatrix<f64>,
    opt: &RecoverOptions,
) -> Result<RecoverResult> {
    let (n, m) = realization_dims(r, w, obs)?;
    if init_h.shape() != (n, m) || y_star.len() != m {
        return Err(Error::Dimension("initial H or y* has the wrong shape".into()));
    }
    for i in 0..n {
        if init_h.row(i).norm() <= crate::lae::ZERO_ROW_TOL {
            return Err(Error::ZeroRow(i));
        }
    }
    if opt.restarts == 0 {
        return Err(Error::InvalidParameter("at least one start is needed".into()));
    }
    let fixed = obs.observed_indices(m);
    let free: Vec<usize> = (0..n * m).filter(|k| !fixed.contains(k)).collect();
    let fit = Fit {
        wk: linalg::kron_identity(w.matrix(), m),
        a_star: &r.f_star,
        alpha,
        n,
        m,
        fixed,
        free,
        c_star: &r.c_star,
    };
    let scale = init_h.norm();
    let mut best: Option<(DMatrix<f64>, f64, usize, usize)> = None;
    for start in 0..opt.restarts {
        let h0 = if start == 0 {
            init_h.clone()
        } else {
            let mut g = rng::stream(opt.seed, &[start as u64]);
            let d = DMatrix::from_fn(n, m, |_, _| g.sample::<f64, _>(StandardNormal));
            let k = 0.1 * scale / d.norm().max(f64::MIN_POSITIVE);
            init_h + d * k
        };
        let (h, cost, iters) = fit.solve(&h0, opt.max_iter, opt.tol);
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((h, cost, iters, start));
        }
        if cost < opt.tol {
            break;
        }
    }
    let (h, objective, iterations, best_start) = best.expect("at least one start");
    let z = &h * y_star;
    let eq = LinearEquation::new(h, z)?;
    Ok(RecoverResult {
        h_hat: canonical_form(&eq),
        objective,
        converged: objective < opt.tol,
        iterations,
        best_start,
    })
}
