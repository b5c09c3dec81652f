//! Privacy-preserving summation: maps `β ↦ β♯` that keep `Σ β` while hiding
//! individual entries, plus checkers for graph compliance, sum consistency and
//! identifiability.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Graph;
use crate::rng;

/// One message of a mechanism run. Payload values are deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub receiver: usize,
    pub round: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageLog {
    pub records: Vec<Message>,
}

impl MessageLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

/// Output of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOutput {
    pub beta_sharp: DMatrix<f64>,
    pub log: MessageLog,
    /// Values that crossed the wire, aligned with `log.records`.
    pub payloads: Vec<DVector<f64>>,
}

/// Anything that turns `β` into `β♯`. Implemented by [`PpscMechanism`] and by
/// test doubles.
pub trait SummationMechanism: Sync {
    /// Graph the mechanism communicates over, when it has one.
    fn graph(&self) -> Option<&Graph>;

    fn apply(&self, beta: &DMatrix<f64>, seed: u64, round: usize) -> Result<MaskOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismSpec {
    EdgeMask { sigma: f64 },
    Ideal { sigma: f64 },
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpscMechanism {
    spec: MechanismSpec,
    graph: Option<Graph>,
}

impl PpscMechanism {
    /// Pairwise Gaussian masks exchanged over the edges of `g`.
    pub fn edge_mask(g: &Graph, sigma: f64) -> Result<Self> {
        Self::from_spec(MechanismSpec::EdgeMask { sigma }, Some(g))
    }

    /// Centralized reference: the exact mean plus zero-sum Gaussian noise.
    pub fn ideal(sigma: f64) -> Result<Self> {
        Self::from_spec(MechanismSpec::Ideal { sigma }, None)
    }

    pub fn identity() -> Self {
        Self {
            spec: MechanismSpec::Identity,
            graph: None,
        }
    }

    pub fn from_spec(spec: MechanismSpec, graph: Option<&Graph>) -> Result<Self> {
        match spec {
            MechanismSpec::EdgeMask { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!("edge_mask sigma {sigma}")));
                }
                let g = graph.ok_or_else(|| {
                    Error::InvalidParameter("edge_mask needs a graph".into())
                })?;
                if !g.is_connected() {
                    return Err(Error::Disconnected);
                }
            }
            MechanismSpec::Ideal { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!("ideal sigma {sigma}")));
                }
            }
            MechanismSpec::Identity => {}
        }
        Ok(Self {
            spec,
            graph: graph.cloned(),
        })
    }

    pub fn from_json(s: &str, graph: Option<&Graph>) -> Result<Self> {
        Self::from_spec(serde_json::from_str(s)?, graph)
    }

    pub fn spec(&self) -> MechanismSpec {
        self.spec
    }
}

impl SummationMechanism for PpscMechanism {
    fn graph(&self) -> Option<&Graph> {
        match self.spec {
            MechanismSpec::EdgeMask { .. } => self.graph.as_ref(),
            _ => None,
        }
    }

    fn apply(&self, beta: &DMatrix<f64>, seed: u64, round: usize) -> Result<MaskOutput> {
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("beta has non-finite entries".into()));
        }
        let (n, m) = beta.shape();
        let mut rng = rng::stream(seed, &[round as u64]);
        match self.spec {
            MechanismSpec::Identity => Ok(MaskOutput {
                beta_sharp: beta.clone(),
                log: MessageLog::default(),
                payloads: Vec::new(),
            }),
            MechanismSpec::Ideal { sigma } => {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                let mut zeta = DMatrix::from_fn(n, m, |_, _| normal.sample(&mut rng));
                let col_means = zeta.row_mean();
                for mut row in zeta.row_iter_mut() {
                    row -= &col_means;
                }
                let mean = beta.row_mean();
                let mut out = zeta;
                for mut row in out.row_iter_mut() {
                    row += &mean;
                }
                Ok(MaskOutput {
                    beta_sharp: out,
                    log: MessageLog::default(),
                    payloads: Vec::new(),
                })
            }
            MechanismSpec::EdgeMask { sigma } => {
                let g = self.graph.as_ref().expect("validated graph");
                if g.n() != n {
                    return Err(Error::Dimension(format!(
                        "mechanism graph has {} nodes, beta has {n} rows",
                        g.n()
                    )));
                }
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                let mut out = beta.clone();
                let mut log = MessageLog::default();
                let mut payloads = Vec::with_capacity(g.edges().len());
                for &(i, j) in g.edges() {
                    let nu = DVector::from_fn(m, |_, _| normal.sample(&mut rng));
                    for k in 0..m {
                        out[(i, k)] += nu[k];
                        out[(j, k)] -= nu[k];
                    }
                    log.records.push(Message {
                        sender: i,
                        receiver: j,
                        round,
                        dim: m,
                    });
                    payloads.push(nu);
                }
                Ok(MaskOutput {
                    beta_sharp: out,
                    log,
                    payloads,
                })
            }
        }
    }
}

/// `β♯` for a single invocation (round 0).
pub fn ppsc_apply(mech: &dyn SummationMechanism, beta: &DMatrix<f64>, seed: u64) -> Result<MaskOutput> {
    mech.apply(beta, seed, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumConsistencyReport {
    pub trials: usize,
    pub max_rel_error: f64,
}

/// Worst `‖Σβ♯ − Σβ‖ / (1 + ‖Σβ‖)` over independent invocations.
pub fn check_sum_consistency(
    mech: &dyn SummationMechanism,
    beta: &DMatrix<f64>,
    trials: usize,
    seed: u64,
) -> Result<SumConsistencyReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let total = beta.row_sum();
    let scale = 1.0 + total.norm();
    let mut worst = 0.0f64;
    for k in 0..trials {
        let out = mech.apply(beta, rng::mix_seed(seed, &[k as u64]), 0)?;
        worst = worst.max((out.beta_sharp.row_sum() - &total).norm() / scale);
    }
    Ok(SumConsistencyReport {
        trials,
        max_rel_error: worst,
    })
}

/// True iff every logged message travels along an edge of `g` (or stays local).
pub fn check_graph_compliance(log: &MessageLog, g: &Graph) -> bool {
    log.records
        .iter()
        .all(|r| (r.sender == r.receiver && r.sender < g.n()) || g.has_edge(r.sender, r.receiver))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub samples: usize,
    /// `‖mean β♯_i(a) − mean β♯_i(b)‖` per node.
    pub mean_gap: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub distinguishable: bool,
}

/// Running mean and variance (Welford) of one node's output.
struct Moments {
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Moments {
    fn new(m: usize) -> Self {
        Self {
            mean: DVector::zeros(m),
            m2: DVector::zeros(m),
        }
    }

    fn add(&mut self, k: usize, x: &DVector<f64>) {
        let delta = x - &self.mean;
        self.mean += &delta / (k as f64 + 1.0);
        let delta2 = x - &self.mean;
        self.m2 += delta.component_mul(&delta2);
    }
}

/// Compares output means under two same-sum inputs, using the same seed for
/// both inputs at each sample. Distinguishable when some node's gap exceeds
/// four standard errors.
pub fn empirical_identifiability(
    mech: &dyn SummationMechanism,
    beta_a: &DMatrix<f64>,
    beta_b: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<IdentifiabilityReport> {
    if samples < 100 {
        return Err(Error::InvalidParameter("at least 100 samples needed".into()));
    }
    if beta_a.shape() != beta_b.shape() {
        return Err(Error::Dimension("inputs differ in shape".into()));
    }
    let (sa, sb) = (beta_a.row_sum(), beta_b.row_sum());
    let gap = (&sa - &sb).norm();
    if gap > 1e-9 * (1.0 + sa.norm()) {
        return Err(Error::SumMismatch(gap));
    }
    let (n, m) = beta_a.shape();
    let mut ma: Vec<Moments> = (0..n).map(|_| Moments::new(m)).collect();
    let mut mb: Vec<Moments> = (0..n).map(|_| Moments::new(m)).collect();
    for k in 0..samples {
        let s = rng::mix_seed(seed, &[k as u64]);
        let oa = mech.apply(beta_a, s, 0)?.beta_sharp;
        let ob = mech.apply(beta_b, s, 0)?.beta_sharp;
        for i in 0..n {
            ma[i].add(k, &oa.row(i).transpose());
            mb[i].add(k, &ob.row(i).transpose());
        }
    }
    let denom = (samples - 1) as f64 * samples as f64;
    let mut mean_gap = Vec::with_capacity(n);
    let mut standard_error = Vec::with_capacity(n);
    for i in 0..n {
        mean_gap.push((&ma[i].mean - &mb[i].mean).norm());
        standard_error.push(((ma[i].m2.sum() + mb[i].m2.sum()) / denom).sqrt());
    }
    let distinguishable = mean_gap
        .iter()
        .zip(&standard_error)
        .any(|(g, se)| *g > 4.0 * se);
    Ok(IdentifiabilityReport {
        samples,
        mean_gap,
        standard_error,
        distinguishable,
    })
}
