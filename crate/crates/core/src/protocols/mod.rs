//! The distributed recursions as trajectory generators.

mod closed_loop;
mod objectives;
mod trajectory;

pub use closed_loop::{closed_loop, projector_block_diag, stacked_offsets, ClosedLoopSystem};
pub use objectives::QuadraticObjectiveSet;
pub use trajectory::{RunMeta, Trajectory, DIVERGENCE_LIMIT};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lae::{solve_exact, ConvexSet, LinearEquation};
use crate::netcore::{spectral_stats, Graph, WeightMatrix};
use crate::ppsc::SummationMechanism;
use crate::rng;

fn check_state(x0: &DMatrix<f64>, n: usize, m: usize) -> Result<()> {
    if x0.shape() != (n, m) {
        return Err(Error::Dimension(format!(
            "initial state is {}x{}, expected {n}x{m}",
            x0.nrows(),
            x0.ncols()
        )));
    }
    Ok(())
}

fn check_network(w: &WeightMatrix, n: usize) -> Result<()> {
    if w.n() != n {
        return Err(Error::Dimension(format!("W has {} nodes, data has {n}", w.n())));
    }
    Ok(())
}

/// Row-wise projection `x_i ↦ P_i(x_i)`.
fn project_rows(e: &LinearEquation, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for i in 0..x.nrows() {
        let p = e.project(i, &x.row(i).transpose());
        out.set_row(i, &p.transpose());
    }
    out
}

/// `x(t+1) = (W ⊗ I_m) x(t)`.
pub fn run_average_consensus(w: &WeightMatrix, beta: &DMatrix<f64>, steps: usize) -> Result<Trajectory> {
    check_network(w, beta.nrows())?;
    let mut traj = Trajectory::new(beta.clone(), RunMeta::new("consensus").param("steps", steps))?;
    for _ in 0..steps {
        let next = w.matrix() * traj.last();
        if !traj.push(next)? {
            break;
        }
    }
    Ok(traj)
}

/// Consensus plus a local projection correction with step `alpha`.
pub fn run_cpa(
    w: &WeightMatrix,
    e: &LinearEquation,
    alpha: f64,
    x0: &DMatrix<f64>,
    steps: usize,
) -> Result<Trajectory> {
    check_network(w, e.n())?;
    check_state(x0, e.n(), e.m())?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let meta = RunMeta::new("cpa").param("alpha", alpha).param("steps", steps);
    let mut traj = Trajectory::new(x0.clone(), meta)?;
    for _ in 0..steps {
        let x = traj.last();
        let next = w.matrix() * x + (project_rows(e, x) - x) * alpha;
        if !traj.push(next)? {
            break;
        }
    }
    Ok(traj)
}

/// Averaging of the neighbors' projected states.
pub fn run_pca(w: &WeightMatrix, e: &LinearEquation, x0: &DMatrix<f64>, steps: usize) -> Result<Trajectory> {
    check_network(w, e.n())?;
    check_state(x0, e.n(), e.m())?;
    let mut traj = Trajectory::new(x0.clone(), RunMeta::new("pca").param("steps", steps))?;
    for _ in 0..steps {
        let next = w.matrix() * project_rows(e, traj.last());
        if !traj.push(next)? {
            break;
        }
    }
    Ok(traj)
}

/// Diminishing step `ε_t = 1/√(t+1)`.
pub fn dgd_step_size(t: usize) -> f64 {
    1.0 / ((t + 1) as f64).sqrt()
}

fn gradients(obj: &QuadraticObjectiveSet, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        g.set_row(i, &obj.gradient(i, &x.row(i).transpose()).transpose());
    }
    g
}

/// Distributed gradient descent.
pub fn run_dgd(
    w: &WeightMatrix,
    obj: &QuadraticObjectiveSet,
    x0: &DMatrix<f64>,
    steps: usize,
) -> Result<Trajectory> {
    check_network(w, obj.n())?;
    check_state(x0, obj.n(), obj.m())?;
    let mut traj = Trajectory::new(x0.clone(), RunMeta::new("dgd").param("steps", steps))?;
    for t in 0..steps {
        let x = traj.last();
        let next = w.matrix() * x - gradients(obj, x) * dgd_step_size(t);
        if !traj.push(next)? {
            break;
        }
    }
    Ok(traj)
}

/// Noise and step schedules of the differentially private solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub c: f64,
    pub phi: f64,
    pub lambda: f64,
    pub psi: f64,
    pub omega: ConvexSet,
}

impl DpParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.phi) || !open_unit(self.psi) {
            return Err(Error::InvalidParameter(format!(
                "phi and psi must lie in (0,1), got {} and {}",
                self.phi, self.psi
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) || !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter("c and lambda must be positive".into()));
        }
        self.omega.validate()
    }

    /// Laplace scale `c φ^t`.
    pub fn noise_scale(&self, t: usize) -> f64 {
        self.c * self.phi.powi(t as i32)
    }

    /// Step `α(t) = λ ψ^t`.
    pub fn step(&self, t: usize) -> f64 {
        self.lambda * self.psi.powi(t as i32)
    }
}

/// Laplace noise `ω_i(t)` with scale `b`, drawn from the `(seed, node, t)` substream.
pub fn dp_noise(seed: u64, node: usize, t: usize, m: usize, b: f64) -> DVector<f64> {
    let mut r = rng::stream(seed, &[node as u64, t as u64]);
    DVector::from_fn(m, |_, _| rng::laplace(&mut r, b))
}

/// Differentially private solver; the mixing sum includes each node's own
/// broadcast.
pub fn run_dp_dles(
    w: &WeightMatrix,
    e: &LinearEquation,
    dp: &DpParams,
    x0: &DMatrix<f64>,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    run_dp_dles_with(w, e, dp, x0, steps, seed, true)
}

/// As [`run_dp_dles`], with the self term of the mixing sum optional.
pub fn run_dp_dles_with(
    w: &WeightMatrix,
    e: &LinearEquation,
    dp: &DpParams,
    x0: &DMatrix<f64>,
    steps: usize,
    seed: u64,
    include_self: bool,
) -> Result<Trajectory> {
    check_network(w, e.n())?;
    check_state(x0, e.n(), e.m())?;
    dp.validate()?;
    if dp.omega.dim() != e.m() {
        return Err(Error::Dimension("constraint set dimension differs from m".into()));
    }
    let (n, m) = (e.n(), e.m());
    let mut meta = RunMeta::new("dp_dles")
        .param("c", dp.c)
        .param("phi", dp.phi)
        .param("lambda", dp.lambda)
        .param("psi", dp.psi)
        .param("include_self", include_self)
        .param("steps", steps)
        .seed(seed);
    match spectral_stats(w) {
        Ok(s) if !s.full_rank => meta.warnings.push("W is rank deficient".into()),
        Ok(_) => {}
        Err(err) => meta.warnings.push(format!("spectral check skipped: {err}")),
    }
    let mut mix = w.matrix().clone();
    if !include_self {
        mix.fill_diagonal(0.0);
    }
    let mut traj = Trajectory::new(x0.clone(), meta)?;
    for t in 0..steps {
        let x = traj.last();
        let mut flat = DMatrix::zeros(n, m);
        for i in 0..n {
            flat.set_row(i, &dp.omega.project(&x.row(i).transpose())?.transpose());
        }
        let b = dp.noise_scale(t);
        let mut sharp = flat.clone();
        for i in 0..n {
            let noise = dp_noise(seed, i, t, m, b);
            for k in 0..m {
                sharp[(i, k)] += noise[k];
            }
        }
        let next = &mix * sharp + (project_rows(e, &flat) - &flat) * dp.step(t);
        if !traj.push(next)? {
            break;
        }
    }
    Ok(traj)
}

/// How nodes obtain the network average of the masked values.
#[derive(Debug, Clone, Default)]
pub enum Averaging {
    /// Exact `Σ_j y♯_j / n`.
    #[default]
    Exact,
    /// `K` steps of consensus with the given weights; node `i` uses its own estimate.
    Inner { weights: WeightMatrix, steps: usize },
}

/// A privacy-preserving run: node states plus the true average of the masked values.
#[derive(Debug, Clone)]
pub struct PpscRun {
    pub trajectory: Trajectory,
    /// `ȳ(t)` for `t = 0..rounds`.
    pub averages: Vec<DVector<f64>>,
}

fn check_mechanism(g: &Graph, mech: &dyn SummationMechanism) -> Result<()> {
    if let Some(mg) = mech.graph() {
        if mg != g {
            return Err(Error::InvalidParameter(
                "mechanism graph differs from the network graph".into(),
            ));
        }
    }
    Ok(())
}

fn averaged(beta_sharp: &DMatrix<f64>, how: &Averaging) -> (DVector<f64>, DMatrix<f64>) {
    let mean = beta_sharp.row_mean().transpose();
    let per_node = match how {
        Averaging::Exact => DMatrix::from_fn(beta_sharp.nrows(), beta_sharp.ncols(), |_, k| mean[k]),
        Averaging::Inner { weights, steps } => {
            let mut v = beta_sharp.clone();
            for _ in 0..*steps {
                v = weights.matrix() * v;
            }
            v
        }
    };
    (mean, per_node)
}

/// Projected-average solver on top of a summation mechanism.
pub fn run_ppsc_les(
    g: &Graph,
    e: &LinearEquation,
    mech: &dyn SummationMechanism,
    y0: &DMatrix<f64>,
    rounds: usize,
    seed: u64,
) -> Result<PpscRun> {
    run_ppsc_les_with(g, e, mech, y0, rounds, seed, &Averaging::Exact)
}

pub fn run_ppsc_les_with(
    g: &Graph,
    e: &LinearEquation,
    mech: &dyn SummationMechanism,
    y0: &DMatrix<f64>,
    rounds: usize,
    seed: u64,
    how: &Averaging,
) -> Result<PpscRun> {
    if g.n() != e.n() {
        return Err(Error::Dimension("graph and equation sizes differ".into()));
    }
    check_state(y0, e.n(), e.m())?;
    check_mechanism(g, mech)?;
    let mut meta = RunMeta::new("ppsc_les").param("rounds", rounds).seed(seed);
    if solve_exact(e).solution().is_none() {
        meta.warnings.push("equation is not solvable".into());
    }
    let mut traj = Trajectory::new(y0.clone(), meta)?;
    let mut averages = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let out = mech.apply(traj.last(), seed, t)?;
        let (mean, per_node) = averaged(&out.beta_sharp, how);
        averages.push(mean);
        let next = project_rows(e, &per_node);
        if !traj.push(next)? {
            break;
        }
    }
    Ok(PpscRun {
        trajectory: traj,
        averages,
    })
}

/// Gradient step, then the masked average.
pub fn run_ppsc_dgd(
    g: &Graph,
    obj: &QuadraticObjectiveSet,
    mech: &dyn SummationMechanism,
    y0: &DMatrix<f64>,
    rounds: usize,
    seed: u64,
) -> Result<PpscRun> {
    if g.n() != obj.n() {
        return Err(Error::Dimension("graph and objective counts differ".into()));
    }
    check_state(y0, obj.n(), obj.m())?;
    check_mechanism(g, mech)?;
    let meta = RunMeta::new("ppsc_dgd").param("rounds", rounds).seed(seed);
    let mut traj = Trajectory::new(y0.clone(), meta)?;
    let mut averages = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let y = traj.last();
        let flat = y - gradients(obj, y) * dgd_step_size(t);
        let out = mech.apply(&flat, seed, t)?;
        let (mean, per_node) = averaged(&out.beta_sharp, &Averaging::Exact);
        averages.push(mean);
        if !traj.push(per_node)? {
            break;
        }
    }
    Ok(PpscRun {
        trajectory: traj,
        averages,
    })
}

#[cfg(test)]
mod tests;
