//! Property checks of a summation mechanism on a given network.

use dcpriv_core::netcore::NetworkSpec;
use dcpriv_core::ppsc::{
    check_graph_compliance, check_sum_consistency, empirical_identifiability, IdentifiabilityReport, MechanismSpec,
    PpscMechanism, SumConsistencyReport, SummationMechanism,
};
use dcpriv_core::rng;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// Largest relative sum error accepted as exact.
pub const SUM_TOL: f64 = 1e-9;

fn one() -> usize {
    1
}

fn thousand() -> usize {
    1000
}

fn ten_thousand() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpscCheckConfig {
    pub graph: NetworkSpec,
    pub mechanism: MechanismSpec,
    /// Input rows; drawn uniformly from `[-5, 5)` when absent.
    #[serde(default)]
    pub beta: Option<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "thousand")]
    pub trials: usize,
    #[serde(default = "ten_thousand")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpscCheckReport {
    pub mechanism: MechanismSpec,
    pub sum_consistency: SumConsistencyReport,
    pub sum_consistent: bool,
    pub graph_compliant: bool,
    /// Same seed, same column sums, different inputs: identical outputs.
    pub matched_seed_identical: bool,
    /// Output means under two same-sum inputs; absent for a single node.
    pub identifiability: Option<IdentifiabilityReport>,
    pub passed: bool,
}

pub fn ppsc_check(cfg: &PpscCheckConfig) -> Result<PpscCheckReport> {
    let core = |field: &'static str| move |e: dcpriv_core::Error| HarnessError::config(field, e);
    let graph = cfg.graph.graph().map_err(core("graph"))?;
    let mech = PpscMechanism::from_spec(cfg.mechanism, Some(&graph)).map_err(core("mechanism"))?;
    let n = graph.n();
    let beta = match &cfg.beta {
        Some(rows) => {
            let m = rows.first().map_or(0, Vec::len);
            if rows.len() != n || m == 0 || rows.iter().any(|r| r.len() != m) {
                return Err(HarnessError::config("beta", format!("must be {n} rows of equal nonzero length")));
            }
            DMatrix::from_row_slice(n, m, &rows.concat())
        }
        None => {
            if cfg.m == 0 {
                return Err(HarnessError::config("m", "must be at least 1"));
            }
            let mut r = rng::stream(cfg.seed, &[0]);
            DMatrix::from_fn(n, cfg.m, |_, _| r.random_range(-5.0..5.0))
        }
    };
    if cfg.trials == 0 {
        return Err(HarnessError::config("trials", "must be at least 1"));
    }
    if cfg.samples < 100 {
        return Err(HarnessError::config("samples", "must be at least 100"));
    }
    let sum_consistency = check_sum_consistency(&mech, &beta, cfg.trials, cfg.seed)?;
    let mut graph_compliant = true;
    for k in 0..cfg.trials {
        let out = mech.apply(&beta, rng::mix_seed(cfg.seed, &[k as u64]), 0)?;
        graph_compliant &= check_graph_compliance(&out.log, &graph);
    }
    let (matched_seed_identical, identifiability) = if n >= 2 {
        let shift = beta.row(0).map(|v| 1.0 + v.abs());
        let mut other = beta.clone();
        other.set_row(0, &(beta.row(0) + &shift));
        other.set_row(n - 1, &(beta.row(n - 1) - &shift));
        let identical = (0..cfg.trials).all(|k| {
            let s = rng::mix_seed(cfg.seed ^ 0x5eed, &[k as u64]);
            match (mech.apply(&beta, s, 0), mech.apply(&other, s, 0)) {
                (Ok(a), Ok(b)) => (a.beta_sharp - b.beta_sharp).amax() <= 1e-12,
                _ => false,
            }
        });
        let rep = empirical_identifiability(&mech, &beta, &other, cfg.samples, cfg.seed)?;
        (identical, Some(rep))
    } else {
        (true, None)
    };
    let sum_consistent = sum_consistency.max_rel_error <= SUM_TOL;
    Ok(PpscCheckReport {
        mechanism: cfg.mechanism,
        sum_consistency,
        sum_consistent,
        graph_compliant,
        matched_seed_identical,
        identifiability,
        passed: sum_consistent && graph_compliant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: &str) -> PpscCheckConfig {
        crate::parse_json(
            &format!(
                r#"{{"graph": {{"n": 4, "edges": [[0, 1], [0, 2], [0, 3]]}}, "mechanism": {kind}, "m": 2, "trials": 50, "samples": 2000}}"#
            ),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn mechanisms_pass_the_exactness_checks() {
        for kind in [r#"{"kind": "edge_mask", "sigma": 1.0}"#, r#"{"kind": "ideal", "sigma": 1.0}"#, r#"{"kind": "identity"}"#] {
            let rep = ppsc_check(&cfg(kind)).unwrap();
            assert!(rep.passed, "{kind}");
        }
    }

    #[test]
    fn only_the_ideal_mechanism_hides_the_split() {
        let ideal = ppsc_check(&cfg(r#"{"kind": "ideal", "sigma": 1.0}"#)).unwrap();
        assert!(ideal.matched_seed_identical);
        assert!(!ideal.identifiability.unwrap().distinguishable);
        let mask = ppsc_check(&cfg(r#"{"kind": "edge_mask", "sigma": 1.0}"#)).unwrap();
        assert!(!mask.matched_seed_identical);
        assert!(mask.identifiability.unwrap().distinguishable);
    }

    #[test]
    fn ragged_beta_is_a_config_error() {
        let mut c = cfg(r#"{"kind": "identity"}"#);
        c.beta = Some(vec![vec![1.0], vec![1.0, 2.0], vec![0.0], vec![0.0]]);
        assert_eq!(ppsc_check(&c).unwrap_err().exit_code(), 2);
    }
}
