//! Experiment configuration files.

use std::path::{Path, PathBuf};

use dcpriv_core::dpbudget::{calibrate_c, BudgetInput};
use dcpriv_core::lae::{solve_exact, ConvexSet, LinearEquation};
use dcpriv_core::netcore::{spectral_stats, Graph, NetworkSpec, WeightMatrix};
use dcpriv_core::ppsc::{MechanismSpec, PpscMechanism};
use dcpriv_core::protocols::{closed_loop, DpParams, QuadraticObjectiveSet};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{parse_json, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSpec {
    Consensus {
        steps: usize,
        m: usize,
    },
    Cpa {
        alpha: f64,
        steps: usize,
    },
    Pca {
        steps: usize,
    },
    Dgd {
        steps: usize,
    },
    /// Exactly one of `c` and `epsilon` is given; `epsilon` calibrates `c`
    /// with unit adjacency radii.
    DpDles {
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        epsilon: Option<f64>,
        phi: f64,
        lambda: f64,
        psi: f64,
        omega: ConvexSet,
        steps: usize,
        #[serde(default = "yes")]
        include_self: bool,
    },
    PpscLes {
        mechanism: MechanismSpec,
        rounds: usize,
    },
    PpscDgd {
        mechanism: MechanismSpec,
        rounds: usize,
    },
}

fn yes() -> bool {
    true
}

impl ProtocolSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Consensus { .. } => "consensus",
            Self::Cpa { .. } => "cpa",
            Self::Pca { .. } => "pca",
            Self::Dgd { .. } => "dgd",
            Self::DpDles { .. } => "dp_dles",
            Self::PpscLes { .. } => "ppsc_les",
            Self::PpscDgd { .. } => "ppsc_dgd",
        }
    }

    fn needs_equation(&self) -> bool {
        matches!(
            self,
            Self::Cpa { .. } | Self::Pca { .. } | Self::DpDles { .. } | Self::PpscLes { .. }
        )
    }

    fn needs_objectives(&self) -> bool {
        matches!(self, Self::Dgd { .. } | Self::PpscDgd { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    /// Reconstruction from all node states (CPA or PCA runs).
    Global,
    /// Identification from one neighborhood of a CPA run.
    Passive {
        observer: usize,
        #[serde(default)]
        neighbors_only: bool,
    },
    /// Identification by probing at the observer (CPA parameters).
    Active {
        observer: usize,
        #[serde(default)]
        probe_seed: u64,
        #[serde(default)]
        settle_periods: Option<usize>,
    },
}

impl AttackSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::Passive { .. } => "passive",
            Self::Active { .. } => "active",
        }
    }
}

/// Initial states are drawn uniformly from `[low, high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitRange {
    pub low: f64,
    pub high: f64,
}

impl Default for InitRange {
    fn default() -> Self {
        Self { low: -5.0, high: 5.0 }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub graph: NetworkSpec,
    #[serde(default)]
    pub equation: Option<LinearEquation>,
    #[serde(default)]
    pub objectives: Option<QuadraticObjectiveSet>,
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub init: InitRange,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

/// A validated configuration with its network objects built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub graph: Graph,
    pub weights: WeightMatrix,
    pub m: usize,
    pub dp: Option<DpParams>,
    pub mechanism: Option<PpscMechanism>,
    /// Point the nodes should agree on, when one is known in advance.
    pub reference: Option<DVector<f64>>,
    /// Closed loop of a CPA run, for identification attacks.
    pub closed_loop: Option<DMatrix<f64>>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::config(field, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        parse_json(text, source_name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::read_json(path)
    }

    fn equation(&self) -> Result<&LinearEquation> {
        self.equation.as_ref().ok_or_else(|| {
            HarnessError::config("equation", format!("required by protocol {}", self.protocol.label()))
        })
    }

    pub fn validate(&self) -> Result<Experiment> {
        let core = |field: &'static str| move |e: dcpriv_core::Error| HarnessError::config(field, e);
        if self.trials == 0 {
            return Err(HarnessError::config("trials", "must be at least 1"));
        }
        if !(self.init.low < self.init.high) {
            return Err(HarnessError::config("init", "low must be below high"));
        }
        let graph = self.graph.graph().map_err(core("graph"))?;
        let weights = self.graph.weight_matrix().map_err(core("graph.weights"))?;
        let n = graph.n();
        let p = &self.protocol;
        if p.needs_equation() && self.equation()?.n() != n {
            return Err(HarnessError::config("equation", format!("needs {n} rows, one per node")));
        }
        if p.needs_objectives() {
            let obj = self
                .objectives
                .as_ref()
                .ok_or_else(|| HarnessError::config("objectives", format!("required by protocol {}", p.label())))?;
            if obj.n() != n {
                return Err(HarnessError::config("objectives", format!("needs {n} entries, one per node")));
            }
        }
        let m = match p {
            ProtocolSpec::Consensus { m, .. } => {
                if *m == 0 {
                    return Err(HarnessError::config("protocol.m", "must be at least 1"));
                }
                *m
            }
            _ if p.needs_objectives() => self.objectives.as_ref().map_or(0, QuadraticObjectiveSet::m),
            _ => self.equation()?.m(),
        };
        let reference = if p.needs_objectives() {
            self.objectives.as_ref().and_then(|o| o.joint_minimizer().ok())
        } else if p.needs_equation() {
            let sol = solve_exact(self.equation()?);
            sol.is_unique().then(|| sol.solution().cloned()).flatten()
        } else {
            None
        };

        let mut dp = None;
        let mut mechanism = None;
        match p {
            ProtocolSpec::Cpa { alpha, .. } => positive("protocol.alpha", *alpha)?,
            ProtocolSpec::DpDles {
                c,
                epsilon,
                phi,
                lambda,
                psi,
                omega,
                ..
            } => {
                if omega.dim() != m {
                    return Err(HarnessError::config("protocol.omega", format!("must have dimension {m}")));
                }
                let c = match (c, epsilon) {
                    (Some(c), None) => *c,
                    (None, Some(eps)) => {
                        let sigma = spectral_stats(&weights).map_err(core("graph.weights"))?.sigma_min;
                        let inp = BudgetInput {
                            n,
                            m,
                            lambda: *lambda,
                            psi: *psi,
                            c: None,
                            phi: *phi,
                            sup_norm: omega.sup_norm_bound(),
                            delta_a: 1.0,
                            delta_b: 1.0,
                            sigma_min_w: sigma,
                        };
                        calibrate_c(*eps, &inp).map_err(core("protocol.epsilon"))?
                    }
                    _ => return Err(HarnessError::config("protocol", "give exactly one of c and epsilon")),
                };
                let params = DpParams {
                    c,
                    phi: *phi,
                    lambda: *lambda,
                    psi: *psi,
                    omega: omega.clone(),
                };
                params.validate().map_err(core("protocol"))?;
                dp = Some(params);
            }
            ProtocolSpec::PpscLes { mechanism: spec, .. } | ProtocolSpec::PpscDgd { mechanism: spec, .. } => {
                mechanism = Some(PpscMechanism::from_spec(*spec, Some(&graph)).map_err(core("protocol.mechanism"))?);
            }
            _ => {}
        }

        let mut cl = None;
        if let Some(attack) = &self.attack {
            let cpa_alpha = match p {
                ProtocolSpec::Cpa { alpha, .. } => Some(*alpha),
                _ => None,
            };
            match attack {
                AttackSpec::Global => {
                    if !matches!(p, ProtocolSpec::Cpa { .. } | ProtocolSpec::Pca { .. }) {
                        return Err(HarnessError::config("attack", "global attack needs a cpa or pca run"));
                    }
                }
                AttackSpec::Passive { observer, .. } | AttackSpec::Active { observer, .. } => {
                    let alpha = cpa_alpha
                        .ok_or_else(|| HarnessError::config("attack", "identification attacks need a cpa run"))?;
                    if *observer >= n {
                        return Err(HarnessError::config("attack.observer", format!("must be below {n}")));
                    }
                    if reference.is_none() {
                        return Err(HarnessError::config("equation", "identification needs a unique solution"));
                    }
                    let f = closed_loop(&weights, self.equation()?, alpha).map_err(core("protocol"))?.f;
                    cl = Some(f);
                }
            }
        }

        Ok(Experiment {
            config: self.clone(),
            graph,
            weights,
            m,
            dp,
            mechanism,
            reference,
            closed_loop: cl,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
  "name": "t",
  "graph": {"n": 2, "edges": [[0, 1]]},
  "equation": {"H": [[1.0], [2.0]], "z": [1.0, 2.0]},
  "protocol": {"name": "cpa", "alpha": 0.5, "steps": 5}
}"#;

    #[test]
    fn minimal_config_validates() {
        let cfg = ExperimentConfig::from_json(BASE, "t.json").unwrap();
        assert_eq!(cfg.trials, 1);
        let ex = cfg.validate().unwrap();
        assert_eq!(ex.m, 1);
        assert!((ex.reference.unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = BASE.replace("\"alpha\": 0.5", "\"alpha\": 0.5,,");
        match ExperimentConfig::from_json(&text, "t.json") {
            Err(HarnessError::ConfigSyntax { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected_with_location() {
        let text = BASE.replace("\"steps\": 5", "\"steps\": 5, \"stpes\": 4");
        let err = ExperimentConfig::from_json(&text, "t.json").unwrap_err();
        // Tagged sections report at their closing brace.
        assert!(matches!(err, HarnessError::ConfigSyntax { line: 5 | 6, .. }), "{err}");
        assert!(err.to_string().contains("stpes"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let text = BASE.replace("\"alpha\": 0.5", "\"alpha\": -1");
        let err = ExperimentConfig::from_json(&text, "t.json").unwrap().validate().unwrap_err();
        assert!(matches!(&err, HarnessError::Config { field, .. } if field == "protocol.alpha"));
        let text = BASE.replace("\"protocol\": {\"name\": \"cpa\", \"alpha\": 0.5, \"steps\": 5}", "\"protocol\": {\"name\": \"dgd\", \"steps\": 5}");
        let err = ExperimentConfig::from_json(&text, "t.json").unwrap().validate().unwrap_err();
        assert!(matches!(&err, HarnessError::Config { field, .. } if field == "objectives"));
    }

    #[test]
    fn attack_requires_a_matching_protocol() {
        let text = BASE.replace("\"cpa\", \"alpha\": 0.5,", "\"pca\",").replace(
            "\"steps\": 5}",
            "\"steps\": 5},\n  \"attack\": {\"name\": \"passive\", \"observer\": 0}",
        );
        let err = ExperimentConfig::from_json(&text, "t.json").unwrap().validate().unwrap_err();
        assert!(matches!(&err, HarnessError::Config { field, .. } if field == "attack"));
    }

    #[test]
    fn dp_epsilon_is_calibrated() {
        let text = BASE.replace("[[0, 1]]}", "[[0, 1]], \"weights\": [[0.7, 0.3], [0.3, 0.7]]}").replace(
            "{\"name\": \"cpa\", \"alpha\": 0.5, \"steps\": 5}",
            r#"{"name": "dp_dles", "epsilon": 4, "phi": 0.9, "lambda": 0.5, "psi": 0.45,
                "omega": {"kind": "ball", "center": [1.0], "radius": 1.0}, "steps": 5}"#,
        );
        let ex = ExperimentConfig::from_json(&text, "t.json").unwrap().validate().unwrap();
        let dp = ex.dp.unwrap();
        let both = text.replace("\"epsilon\": 4", "\"epsilon\": 4, \"c\": 1");
        assert!(ExperimentConfig::from_json(&both, "t.json").unwrap().validate().is_err());
        assert!(dp.c > 0.0);
    }
}
