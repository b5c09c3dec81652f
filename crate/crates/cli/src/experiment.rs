//! Batch runs of one configuration.

use std::fmt::Write;

use dcpriv_core::attacks::{
    active_identify, consecutive_times, global_attack_cpa, global_attack_pca, make_probe, passive_identify,
    recoverability_report, ObservationModel, Realization, Settling, DEFAULT_PROBE_CONDITION,
};
use dcpriv_core::lae::equations_equivalent;
use dcpriv_core::protocols::{
    run_average_consensus, run_cpa, run_dgd, run_dp_dles_with, run_pca, run_ppsc_dgd, run_ppsc_les, Trajectory,
};
use dcpriv_core::{linalg, rng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{ArtifactWriter, RunArtifacts};
use crate::config::{AttackSpec, Experiment, ExperimentConfig, ProtocolSpec};
use crate::svg::{line_chart, Series};
use crate::{resolve_out_dir, Result};

/// Tolerance for calling a recovered equation or spectrum correct.
const MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub success: bool,
    #[serde(default)]
    pub equivalent_to_truth: Option<bool>,
    #[serde(default)]
    pub recovered_rows: Option<usize>,
    #[serde(default)]
    pub spectrum_error: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub steps: usize,
    pub diverged: bool,
    /// Largest node distance to the reference point (or to the network
    /// mean when there is none) at the last step.
    pub final_error: f64,
    pub disagreement: f64,
    pub attack: Option<AttackMetrics>,
}

struct TrialOutput {
    summary: TrialSummary,
    trajectory: Trajectory,
    errors: Vec<f64>,
    report: Option<serde_json::Value>,
    eigen_csv: Option<String>,
}

fn disagreement(x: &DMatrix<f64>) -> f64 {
    let mean = x.row_mean();
    (0..x.nrows()).map(|i| (x.row(i) - &mean).norm()).fold(0.0, f64::max)
}

fn initial_state(ex: &Experiment, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, &[0]);
    let init = ex.config.init;
    DMatrix::from_fn(ex.graph.n(), ex.m, |_, _| r.random_range(init.low..init.high))
}

fn run_protocol(ex: &Experiment, x0: &DMatrix<f64>, seed: u64) -> Result<Trajectory> {
    let cfg = &ex.config;
    let w = &ex.weights;
    let eq = || cfg.equation.as_ref().expect("validated");
    let obj = || cfg.objectives.as_ref().expect("validated");
    let mech = || ex.mechanism.as_ref().expect("validated");
    let traj = match &cfg.protocol {
        ProtocolSpec::Consensus { steps, .. } => run_average_consensus(w, x0, *steps)?,
        ProtocolSpec::Cpa { alpha, steps } => run_cpa(w, eq(), *alpha, x0, *steps)?,
        ProtocolSpec::Pca { steps } => run_pca(w, eq(), x0, *steps)?,
        ProtocolSpec::Dgd { steps } => run_dgd(w, obj(), x0, *steps)?,
        ProtocolSpec::DpDles {
            steps, include_self, ..
        } => run_dp_dles_with(w, eq(), ex.dp.as_ref().expect("validated"), x0, *steps, seed, *include_self)?,
        ProtocolSpec::PpscLes { rounds, .. } => run_ppsc_les(&ex.graph, eq(), mech(), x0, *rounds, seed)?.trajectory,
        ProtocolSpec::PpscDgd { rounds, .. } => run_ppsc_dgd(&ex.graph, obj(), mech(), x0, *rounds, seed)?.trajectory,
    };
    Ok(traj)
}

fn eigen_csv(real: &Realization, f: &DMatrix<f64>) -> String {
    let truth = linalg::sorted_eigenvalues(f);
    let found = real.sorted_eigenvalues();
    let mut out = String::from("index,f_re,f_im,identified_re,identified_im,abs_error\n");
    for (k, (a, b)) in truth.iter().zip(&found).enumerate() {
        let _ = writeln!(out, "{k},{},{},{},{},{}", a.re, a.im, b.re, b.im, (a - b).norm());
    }
    out
}

fn observation(ex: &Experiment, observer: usize, neighbors_only: bool) -> Result<ObservationModel> {
    let obs = if neighbors_only {
        ObservationModel::neighbors_only(&ex.graph, observer)?
    } else {
        ObservationModel::new(&ex.graph, observer)?
    };
    Ok(obs.with_solution(ex.reference.as_ref().expect("validated")))
}

fn run_attack(
    ex: &Experiment,
    attack: &AttackSpec,
    traj: &Trajectory,
    seed: u64,
) -> Result<(AttackMetrics, serde_json::Value, Option<String>)> {
    let cfg = &ex.config;
    match attack {
        AttackSpec::Global => {
            let rec = match &cfg.protocol {
                ProtocolSpec::Cpa { alpha, .. } => global_attack_cpa(traj, &ex.weights, *alpha)?,
                _ => global_attack_pca(traj, &ex.weights)?,
            };
            let truth = cfg.equation.as_ref().expect("validated");
            let equivalent = match &rec.equation {
                Some(c) => equations_equivalent(&c.to_equation()?, truth, MATCH_TOL)?,
                None => false,
            };
            let report = json!({
                "attack": "global",
                "recoverability": recoverability_report(traj, &ex.weights)?,
                "recovered": rec,
                "equivalent_to_truth": equivalent,
            });
            let metrics = AttackMetrics {
                success: equivalent,
                equivalent_to_truth: Some(equivalent),
                recovered_rows: Some(rec.rows.iter().filter(|r| r.is_some()).count()),
                spectrum_error: None,
                residual: rec.residual,
            };
            Ok((metrics, report, None))
        }
        AttackSpec::Passive {
            observer,
            neighbors_only,
        } => {
            let obs = observation(ex, *observer, *neighbors_only)?;
            let f = ex.closed_loop.as_ref().expect("validated");
            let (n, m) = (traj.n(), traj.m());
            Ok(match passive_identify(&obs, traj, &consecutive_times(n, m)) {
                Ok(real) => {
                    let err = real.spectrum_error(f);
                    let report = json!({"attack": "passive", "observer": observer, "realization": real, "spectrum_error": err});
                    let metrics = AttackMetrics {
                        success: err <= MATCH_TOL,
                        equivalent_to_truth: None,
                        recovered_rows: None,
                        spectrum_error: Some(err),
                        residual: err,
                    };
                    (metrics, report, Some(eigen_csv(&real, f)))
                }
                Err(e) => {
                    let report = json!({"attack": "passive", "observer": observer, "error": e.to_string()});
                    let metrics = AttackMetrics {
                        success: false,
                        equivalent_to_truth: None,
                        recovered_rows: None,
                        spectrum_error: None,
                        residual: f64::INFINITY,
                    };
                    (metrics, report, None)
                }
            })
        }
        AttackSpec::Active {
            observer,
            probe_seed,
            settle_periods,
        } => {
            let obs = observation(ex, *observer, false)?;
            let f = ex.closed_loop.as_ref().expect("validated");
            let eq = cfg.equation.as_ref().expect("validated");
            let alpha = match cfg.protocol {
                ProtocolSpec::Cpa { alpha, .. } => alpha,
                _ => unreachable!("validated"),
            };
            let probe = make_probe(eq.n(), eq.m(), *probe_seed, DEFAULT_PROBE_CONDITION)?;
            let settling = settle_periods.map_or(Settling::Auto, Settling::Periods);
            let id = active_identify(&obs, &ex.weights, eq, alpha, &probe, settling, seed)?;
            let err = id.realization.spectrum_error(f);
            let csv = eigen_csv(&id.realization, f);
            let report = json!({"attack": "active", "observer": observer, "period": probe.period, "identification": id, "spectrum_error": err});
            let metrics = AttackMetrics {
                success: err <= MATCH_TOL,
                equivalent_to_truth: None,
                recovered_rows: None,
                spectrum_error: Some(err),
                residual: err,
            };
            Ok((metrics, report, Some(csv)))
        }
    }
}

fn run_trial(ex: &Experiment, trial: usize) -> Result<TrialOutput> {
    let seed = rng::mix_seed(ex.config.seed, &[trial as u64]);
    let x0 = initial_state(ex, seed);
    let mut trajectory = run_protocol(ex, &x0, seed)?;
    trajectory.meta.seed = Some(seed);
    let target: Option<DVector<f64>> = match &ex.config.protocol {
        ProtocolSpec::Consensus { .. } => Some(x0.row_mean().transpose()),
        _ => ex.reference.clone(),
    };
    let errors: Vec<f64> = (0..trajectory.len())
        .map(|t| match &target {
            Some(y) => trajectory.max_error(t, y),
            None => disagreement(trajectory.state(t)),
        })
        .collect();
    let (attack, report, eigen_csv) = match &ex.config.attack {
        Some(a) => {
            let (m, r, c) = run_attack(ex, a, &trajectory, seed)?;
            (Some(m), Some(r), c)
        }
        None => (None, None, None),
    };
    let summary = TrialSummary {
        trial,
        seed,
        steps: trajectory.steps(),
        diverged: trajectory.meta.diverged,
        final_error: *errors.last().expect("nonempty"),
        disagreement: disagreement(trajectory.last()),
        attack,
    };
    Ok(TrialOutput {
        summary,
        trajectory,
        errors,
        report,
        eigen_csv,
    })
}

fn summary_csv(ex: &Experiment, trials: &[TrialSummary]) -> String {
    let mut out = String::from("trial,seed,steps,diverged,final_error,disagreement");
    let attack = ex.config.attack.as_ref();
    match attack {
        Some(AttackSpec::Global) => out.push_str(",equivalent_to_truth,recovered_rows,attack_residual"),
        Some(_) => out.push_str(",identified,spectrum_error"),
        None => {}
    }
    out.push('\n');
    for t in trials {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            t.trial, t.seed, t.steps, t.diverged, t.final_error, t.disagreement
        );
        if let Some(a) = &t.attack {
            match attack {
                Some(AttackSpec::Global) => {
                    let _ = write!(
                        out,
                        ",{},{},{}",
                        a.equivalent_to_truth.unwrap_or(false),
                        a.recovered_rows.unwrap_or(0),
                        a.residual
                    );
                }
                _ => {
                    let err = a.spectrum_error.map_or(String::new(), |e| e.to_string());
                    let _ = write!(out, ",{},{err}", a.success);
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Mean over trials of the per-step error, ignoring trials that stopped early.
fn mean_errors(outputs: &[TrialOutput]) -> Vec<(f64, f64)> {
    let len = outputs.iter().map(|o| o.errors.len()).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = outputs.iter().filter_map(|o| o.errors.get(t).copied()).collect();
            (t as f64, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Runs every trial (in parallel) and writes trajectories, attack reports,
/// the summary, an error plot and the manifest under the output directory.
pub fn run_experiment(ex: &Experiment) -> Result<RunArtifacts> {
    let cfg = &ex.config;
    let outputs: Vec<TrialOutput> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| run_trial(ex, k))
        .collect::<Result<_>>()?;

    let root = resolve_out_dir(None, cfg.outputs.clone());
    let mut w = ArtifactWriter::new(&root)?;
    let mut art = RunArtifacts {
        root: root.clone(),
        ..RunArtifacts::default()
    };
    // Without the output directory, so identical runs hash identically.
    w.write_json("config.json", &ExperimentConfig { outputs: None, ..cfg.clone() })?;
    for o in &outputs {
        let k = o.summary.trial;
        let csv = o.trajectory.to_csv_string()?;
        art.trajectories
            .push(w.write(&format!("trajectories/trial_{k:04}.csv"), csv.as_bytes())?);
        w.write(
            &format!("trajectories/trial_{k:04}.meta.json"),
            (o.trajectory.meta_json()? + "\n").as_bytes(),
        )?;
        if let Some(r) = &o.report {
            art.attack_reports
                .push(w.write_json(&format!("attacks/trial_{k:04}.json"), r)?);
        }
        if let Some(c) = &o.eigen_csv {
            art.tables
                .push(w.write(&format!("attacks/trial_{k:04}_eigenvalues.csv"), c.as_bytes())?);
        }
    }
    art.trials = outputs.iter().map(|o| o.summary.clone()).collect();
    art.summary = Some(w.write("summary.csv", summary_csv(ex, &art.trials).as_bytes())?);

    let mean = mean_errors(&outputs);
    let mut table = String::from("t,mean_error\n");
    for (t, e) in &mean {
        let _ = writeln!(table, "{t},{e}");
    }
    art.tables.push(w.write("error_vs_t.csv", table.as_bytes())?);
    let svg = line_chart(
        &format!("{} ({} trials)", cfg.name, cfg.trials),
        "t",
        "mean error",
        &[Series::new(cfg.protocol.label(), mean)],
        true,
    );
    art.plots.push(w.write("error_vs_t.svg", svg.as_bytes())?);

    let (manifest, files) = w.finish(&cfg.name, cfg.seed)?;
    art.manifest = manifest;
    art.files = files;
    Ok(art)
}
