use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ObservationModel, Realization};
use crate::error::{Error, Result};
use crate::lae::{solve_exact, LinearEquation};
use crate::linalg;
use crate::netcore::{spectral_stats, WeightMatrix};
use crate::protocols::closed_loop;
use crate::rng;

pub const DEFAULT_PROBE_CONDITION: f64 = 1e6;
pub const MAX_PROBE_ATTEMPTS: usize = 100;
/// Period-over-period output change that counts as steady state.
pub const SETTLE_TOL: f64 = 1e-9;
/// Upper bound on simulated periods in automatic settling mode.
pub const MAX_SETTLE_PERIODS: usize = 100_000;
/// Singular-value ratio below which the model order is ambiguous.
pub const MIN_GAP_RATIO: f64 = 10.0;

/// Periodic probe. Sample `r(t)` is `m x m`: column `e` is the input of the
/// `e`-th experiment, so the `m` experiments together excite every input direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSignal {
    pub period: usize,
    pub samples: Vec<DMatrix<f64>>,
    /// Block circulant with block `(l', l) = r((l − l') mod T)`.
    pub r_matrix: DMatrix<f64>,
    pub condition_number: f64,
}

impl ProbeSignal {
    pub fn from_samples(samples: Vec<DMatrix<f64>>, cond_threshold: f64) -> Result<Self> {
        let period = samples.len();
        let m = samples.first().map_or(0, |s| s.nrows());
        if period == 0 || m == 0 || samples.iter().any(|s| s.shape() != (m, m)) {
            return Err(Error::Probe("samples must be non-empty square matrices of one size".into()));
        }
        let mut r = DMatrix::zeros(m * period, m * period);
        for lp in 0..period {
            for l in 0..period {
                let k = (l + period - lp) % period;
                r.view_mut((lp * m, l * m), (m, m)).copy_from(&samples[k]);
            }
        }
        let condition_number = linalg::condition_number(&r);
        if !(condition_number < cond_threshold) {
            return Err(Error::Probe(format!(
                "circulant has condition number {condition_number:e}"
            )));
        }
        Ok(Self {
            period,
            samples,
            r_matrix: r,
            condition_number,
        })
    }

    pub fn m(&self) -> usize {
        self.samples[0].nrows()
    }
}

/// Random probe of period `2nm + 1` with uniform `[-1, 1]` entries.
pub fn make_probe(n: usize, m: usize, seed: u64, cond_threshold: f64) -> Result<ProbeSignal> {
    let period = 2 * n * m + 1;
    let mut last = String::new();
    for attempt in 0..MAX_PROBE_ATTEMPTS {
        let mut r = rng::stream(seed, &[attempt as u64]);
        let samples = (0..period)
            .map(|_| DMatrix::from_fn(m, m, |_, _| r.random_range(-1.0..=1.0)))
            .collect();
        match ProbeSignal::from_samples(samples, cond_threshold) {
            Ok(p) => return Ok(p),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::Probe(format!(
        "no acceptable probe after {MAX_PROBE_ATTEMPTS} attempts ({last})"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rho: f64,
    pub stable: bool,
    /// `λ_m(W) + 1`.
    pub alpha_bound: f64,
    /// Unique solution and `0 < α < λ_m(W) + 1`.
    pub lemma_applies: bool,
}

/// Spectral radius of the closed loop and the step-size bound.
pub fn stability_margin(w: &WeightMatrix, e: &LinearEquation, alpha: f64) -> Result<StabilityReport> {
    let cl = closed_loop(w, e, alpha)?;
    let rho = if linalg::asymmetry(&cl.f) <= 1e-12 {
        let sym = (&cl.f + cl.f.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.amax()
    } else {
        linalg::spectral_radius(&cl.f)
    };
    let alpha_bound = spectral_stats(w).map(|s| s.lambda_min + 1.0).unwrap_or(f64::NAN);
    let lemma_applies = solve_exact(e).is_unique() && alpha > 0.0 && alpha < alpha_bound;
    Ok(StabilityReport {
        rho,
        stable: rho < 1.0 - 1e-9,
        alpha_bound,
        lemma_applies,
    })
}

/// How long to run before reading the periodic response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Settling {
    /// Stop once consecutive periods differ by less than [`SETTLE_TOL`].
    Auto,
    Periods(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveIdentification {
    pub realization: Realization,
    pub singular_values: Vec<f64>,
    /// `σ_nm / σ_{nm+1}`.
    pub gap_ratio: f64,
    pub warnings: Vec<String>,
    /// Periods simulated per experiment before the recorded one.
    pub settle_periods: usize,
}

/// Identifies `(F★, C★)` by injecting a periodic probe at the observer and
/// reading the steady-state response of the observed nodes.
pub fn active_identify(
    obs: &ObservationModel,
    w: &WeightMatrix,
    e: &LinearEquation,
    alpha: f64,
    probe: &ProbeSignal,
    settling: Settling,
    seed: u64,
) -> Result<ActiveIdentification> {
    let (n, m) = (e.n(), e.m());
    let nm = n * m;
    if obs.n != n || w.n() != n {
        return Err(Error::Dimension("network sizes differ".into()));
    }
    if probe.m() != m {
        return Err(Error::Dimension("probe input dimension differs from m".into()));
    }
    let period = probe.period;
    if period < 2 * nm + 1 {
        return Err(Error::Probe(format!("period {period} is below 2nm+1 = {}", 2 * nm + 1)));
    }
    let y_star = obs.solution()?;
    let cl = closed_loop(w, e, alpha)?;
    let rho = stability_margin(w, e, alpha)?.rho;
    if rho >= 1.0 - 1e-9 {
        return Err(Error::Unstable(rho));
    }
    let c = obs.output_matrix(m);
    let no = c.nrows();
    let injected = obs.observer * m;
    let offset = DVector::from_iterator(nm, (0..nm).map(|k| y_star[k % m]));
    let drive = &cl.z_h * alpha;

    let mut responses = DMatrix::zeros(no, m * period);
    let mut settled_after = 0;
    for exp in 0..m {
        let mut r = rng::stream(seed, &[exp as u64]);
        let mut x = DVector::from_fn(nm, |_, _| r.random_range(-1.0..1.0));
        let mut prev: Option<DMatrix<f64>> = None;
        let mut periods = 0;
        loop {
            let mut cur = DMatrix::zeros(no, period);
            for l in 0..period {
                cur.set_column(l, &(&c * (&x - &offset)));
                let mut next = &cl.f * &x + &drive;
                for k in 0..m {
                    next[injected + k] += probe.samples[l][(k, exp)];
                }
                x = next;
            }
            let done = match settling {
                Settling::Periods(k) => periods >= k,
                Settling::Auto => prev.as_ref().is_some_and(|p| (p - &cur).norm() < SETTLE_TOL),
            };
            if done {
                for l in 0..period {
                    responses.set_column(l * m + exp, &cur.column(l));
                }
                break;
            }
            periods += 1;
            if periods > MAX_SETTLE_PERIODS {
                return Err(Error::IdentificationFailed("response did not settle".into()));
            }
            prev = Some(cur);
        }
        settled_after = settled_after.max(periods);
    }

    let inv = probe
        .r_matrix
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Probe("circulant is singular".into()))?;
    let g = responses * inv;
    let block = |j: usize| g.view((0, j * m), (no, m)).into_owned();
    let p = nm + 1;
    let q = period - p;
    let mut hankel = DMatrix::zeros(p * no, q * m);
    for a in 0..p {
        for b in 0..q {
            hankel.view_mut((a * no, b * m), (no, m)).copy_from(&block(a + b + 1));
        }
    }
    let svd = hankel.svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    if singular_values.len() < nm {
        return Err(Error::IdentificationFailed("Hankel matrix too small".into()));
    }
    let u = svd.u.expect("u requested");
    let us = DMatrix::from_columns(&order[..nm].iter().map(|&k| u.column(k)).collect::<Vec<_>>());
    let rows = us.nrows();
    let top = us.view((0, 0), (rows - no, nm)).into_owned();
    let bottom = us.view((no, 0), (rows - no, nm)).into_owned();
    let f_star = linalg::pinv(&top) * bottom;
    let c_star = us.view((0, 0), (no, nm)).into_owned();

    let gap_ratio = match singular_values.get(nm) {
        Some(&next) if next > 0.0 => singular_values[nm - 1] / next,
        _ => f64::INFINITY,
    };
    let mut warnings = Vec::new();
    if gap_ratio < MIN_GAP_RATIO {
        warnings.push(format!("model order ambiguous: singular value gap {gap_ratio:.3}"));
    }
    Ok(ActiveIdentification {
        realization: Realization { f_star, c_star },
        singular_values,
        gap_ratio,
        warnings,
        settle_periods: settled_after,
    })
}
