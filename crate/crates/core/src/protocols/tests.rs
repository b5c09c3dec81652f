use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::*;
use crate::lae::{solve_exact, ConvexSet};
use crate::netcore::{metropolis_weights, Graph, WeightMatrix, DEFAULT_WEIGHT_TOL};
use crate::ppsc::PpscMechanism;
use crate::{linalg, presets, rng};

fn random_state(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, &[]);
    DMatrix::from_fn(n, m, |_, _| r.random_range(-5.0..5.0))
}

fn rows_at(y: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, y.len(), |_, k| y[k])
}

fn random_instance(seed: u64) -> (WeightMatrix, LinearEquation, DVector<f64>) {
    let mut r = rng::stream(seed, &[1]);
    let n = r.random_range(2..=5);
    let m = r.random_range(1..=3);
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|j| (r.random_range(0..j), j)).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if r.random_bool(0.3) {
                pairs.push((i, j));
            }
        }
    }
    let g = Graph::new(n, &pairs).unwrap();
    let w = metropolis_weights(&g).unwrap();
    let h = DMatrix::from_fn(n, m, |_, _| r.random_range(-3.0..3.0));
    let y = DVector::from_fn(m, |_, _| r.random_range(-2.0..2.0));
    let z = &h * &y;
    (w, LinearEquation::new(h, z).unwrap(), y)
}

#[test]
fn consensus_reaches_the_average() {
    let ex = presets::example2();
    let beta = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
    let traj = run_average_consensus(&ex.weight_matrix(), &beta, 200).unwrap();
    assert!(traj.max_error(200, &DVector::from_element(1, 2.5)) < 1e-6);
    for t in 0..=200 {
        assert!((traj.node_average(t)[0] - 2.5).abs() < 1e-12);
    }
}

#[test]
fn consensus_fixed_point() {
    let w = metropolis_weights(&Graph::complete(3).unwrap()).unwrap();
    let beta = DMatrix::from_element(3, 2, 0.7);
    let traj = run_average_consensus(&w, &beta, 10).unwrap();
    assert!(traj.states().iter().all(|x| x == &beta));
}

#[test]
fn consensus_one_step_on_a_pair() {
    let w = metropolis_weights(&Graph::path(2).unwrap()).unwrap();
    let traj = run_average_consensus(&w, &DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), 1).unwrap();
    assert_eq!(traj.state(1).as_slice(), &[0.5, 0.5]);
}

#[test]
fn cpa_converges_on_example() {
    let ex = presets::example2();
    let traj = run_cpa(&ex.weight_matrix(), &ex.equation, ex.alpha, &random_state(4, 2, 3), 500).unwrap();
    let y = solve_exact(&ex.equation).solution().unwrap().clone();
    assert!(traj.max_error(500, &y) < 1e-4);
}

#[test]
fn cpa_stationary_at_solution() {
    let ex = presets::example2();
    let x0 = rows_at(&ex.solution, 4);
    let traj = run_cpa(&ex.weight_matrix(), &ex.equation, ex.alpha, &x0, 20).unwrap();
    assert!(traj.states().iter().all(|x| (x - &x0).amax() < 1e-14));
}

#[test]
fn cpa_rejects_nonpositive_alpha() {
    let ex = presets::example2();
    assert!(run_cpa(&ex.weight_matrix(), &ex.equation, 0.0, &random_state(4, 2, 1), 5).is_err());
}

#[test]
fn cpa_matches_affine_form() {
    for seed in 0..20 {
        let (w, e, _) = random_instance(seed);
        let x0 = random_state(e.n(), e.m(), seed);
        let traj = run_cpa(&w, &e, 0.3, &x0, 20).unwrap();
        let cl = closed_loop(&w, &e, 0.3).unwrap();
        let affine = cl.simulate(&linalg::stack(&x0), 20);
        for t in 0..=20 {
            assert!((traj.stacked(t) - &affine[t]).norm() <= 1e-10);
        }
    }
}

#[test]
fn trajectories_are_row_scaling_invariant() {
    for seed in 0..10 {
        let (w, e, _) = random_instance(seed);
        let mut r = rng::stream(seed, &[9]);
        let scales: Vec<f64> = (0..e.n())
            .map(|_| r.random_range(0.2..5.0) * if r.random_bool(0.5) { -1.0 } else { 1.0 })
            .collect();
        let e2 = e.scaled(&scales).unwrap();
        let x0 = random_state(e.n(), e.m(), seed);
        let a = run_cpa(&w, &e, 0.2, &x0, 30).unwrap();
        let b = run_cpa(&w, &e2, 0.2, &x0, 30).unwrap();
        let c = run_pca(&w, &e, &x0, 30).unwrap();
        let d = run_pca(&w, &e2, &x0, 30).unwrap();
        for t in 0..=30 {
            assert!((a.state(t) - b.state(t)).amax() <= 1e-12 * (1.0 + a.state(t).amax()));
            assert!((c.state(t) - d.state(t)).amax() <= 1e-12 * (1.0 + c.state(t).amax()));
        }
    }
}

#[test]
fn cpa_converges_within_spectral_budget() {
    for seed in 0..20 {
        let (w, e, y) = random_instance(seed + 100);
        if !solve_exact(&e).is_unique() {
            continue;
        }
        let stats = spectral_stats(&w).unwrap();
        let alpha = 0.5 * (stats.lambda_min + 1.0).min(1.0);
        let rho = closed_loop(&w, &e, alpha).unwrap().spectral_radius();
        assert!(rho < 1.0);
        let x0 = random_state(e.n(), e.m(), seed);
        let err0 = (0..e.n()).map(|i| (x0.row(i).transpose() - &y).norm()).fold(0.0, f64::max);
        let budget = ((1e-6 / (err0 * e.n() as f64 * 100.0)).ln() / rho.ln()).ceil() as usize;
        let traj = run_cpa(&w, &e, alpha, &x0, budget.max(1)).unwrap();
        assert!(traj.max_error(traj.steps(), &y) < 1e-6, "seed {seed}");
    }
}

#[test]
fn pca_converges_on_example() {
    let ex = presets::example2();
    let traj = run_pca(&ex.weight_matrix(), &ex.equation, &random_state(4, 2, 5), 500).unwrap();
    assert!(traj.max_error(500, &ex.solution) < 1e-4);
}

#[test]
fn pca_single_node_is_one_projection() {
    let g = Graph::new(1, &[]).unwrap();
    let w = WeightMatrix::new(DMatrix::identity(1, 1), &g, DEFAULT_WEIGHT_TOL).unwrap();
    let e = LinearEquation::from_rows(&[&[1.0, 2.0]], &[3.0]).unwrap();
    let traj = run_pca(&w, &e, &DMatrix::from_row_slice(1, 2, &[5.0, -1.0]), 3).unwrap();
    assert!((traj.state(1) - traj.state(2)).amax() < 1e-15);
    assert!((traj.state(1) * DVector::from_column_slice(&[1.0, 2.0]))[0] - 3.0 < 1e-12);
}

#[test]
fn pca_stationary_at_solution() {
    let ex = presets::example2();
    let x0 = rows_at(&ex.solution, 4);
    let traj = run_pca(&ex.weight_matrix(), &ex.equation, &x0, 10).unwrap();
    assert!((traj.last() - &x0).amax() < 1e-14);
}

#[test]
fn dgd_decays_for_isotropic_objectives() {
    let ex = presets::example2();
    let obj = QuadraticObjectiveSet::isotropic(4, 2);
    let traj = run_dgd(&ex.weight_matrix(), &obj, &random_state(4, 2, 2), 100).unwrap();
    assert!(traj.last().amax() < 1e-6);
}

#[test]
fn dgd_approaches_joint_minimizer() {
    let ex = presets::example2();
    let mut r = rng::stream(21, &[]);
    let obj = QuadraticObjectiveSet::random(4, 2, 3, &mut r);
    let y = obj.joint_minimizer().unwrap();
    let traj = run_dgd(&ex.weight_matrix(), &obj, &random_state(4, 2, 2), 5000).unwrap();
    assert!((traj.node_average(5000) - y).norm() < 1e-2);
}

#[test]
fn dgd_with_zero_gradients_is_consensus() {
    let ex = presets::example2();
    let x0 = DMatrix::from_element(4, 2, 0.3);
    let a: Vec<DMatrix<f64>> = (0..4).map(|_| DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).collect();
    let b = vec![DVector::from_element(1, 0.0); 4];
    let obj = QuadraticObjectiveSet::new(a, b).unwrap();
    let dgd = run_dgd(&ex.weight_matrix(), &obj, &x0, 20).unwrap();
    let cons = run_average_consensus(&ex.weight_matrix(), &x0, 20).unwrap();
    assert_eq!(dgd.states(), cons.states());
}

fn example3_params(c: f64) -> DpParams {
    DpParams {
        c,
        phi: 0.9,
        lambda: 0.5,
        psi: 0.45,
        omega: ConvexSet::ball(&[1.0, -2.0], 1.0).unwrap(),
    }
}

#[test]
fn dp_dles_is_deterministic() {
    let ex = presets::example2();
    let x0 = random_state(4, 2, 7);
    let a = run_dp_dles(&ex.weight_matrix(), &ex.equation, &example3_params(1.0), &x0, 30, 99).unwrap();
    let b = run_dp_dles(&ex.weight_matrix(), &ex.equation, &example3_params(1.0), &x0, 30, 99).unwrap();
    assert_eq!(a.states(), b.states());
    let c = run_dp_dles(&ex.weight_matrix(), &ex.equation, &example3_params(1.0), &x0, 30, 100).unwrap();
    assert_ne!(a.states(), c.states());
}

#[test]
fn dp_dles_vanishing_noise_matches_noiseless_recursion() {
    let ex = presets::example2();
    let p = example3_params(1e-300);
    let x0 = random_state(4, 2, 7);
    let w = ex.weight_matrix();
    let traj = run_dp_dles(&w, &ex.equation, &p, &x0, 40, 3).unwrap();
    let mut x = x0.clone();
    for t in 0..40 {
        let mut flat = x.clone();
        for i in 0..4 {
            flat.set_row(i, &p.omega.project(&x.row(i).transpose()).unwrap().transpose());
        }
        x = w.matrix() * &flat + (project_rows(&ex.equation, &flat) - &flat) * p.step(t);
        assert!((traj.state(t + 1) - &x).amax() < 1e-6);
    }
}

#[test]
fn dp_dles_self_term_flag_changes_the_run() {
    let ex = presets::example2();
    let x0 = random_state(4, 2, 7);
    let w = ex.weight_matrix();
    let a = run_dp_dles_with(&w, &ex.equation, &example3_params(0.1), &x0, 5, 1, true).unwrap();
    let b = run_dp_dles_with(&w, &ex.equation, &example3_params(0.1), &x0, 5, 1, false).unwrap();
    assert_ne!(a.states(), b.states());
    assert_eq!(b.meta.params["include_self"], false);
}

#[test]
fn dp_dles_warns_on_rank_deficient_weights() {
    let w = metropolis_weights(&Graph::path(2).unwrap()).unwrap();
    let e = LinearEquation::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]], &[1.0, -2.0]).unwrap();
    let traj = run_dp_dles(&w, &e, &example3_params(0.1), &random_state(2, 2, 1), 3, 1).unwrap();
    assert!(!traj.meta.warnings.is_empty());
}

#[test]
fn dp_params_are_validated() {
    let mut p = example3_params(1.0);
    p.phi = 1.0;
    assert!(p.validate().is_err());
    let ex = presets::example2();
    assert!(run_dp_dles(&ex.weight_matrix(), &ex.equation, &p, &random_state(4, 2, 1), 3, 1).is_err());
}

#[test]
fn ppsc_les_converges_and_is_transparent() {
    let ex = presets::example2();
    let y0 = random_state(4, 2, 13);
    let mask = PpscMechanism::edge_mask(&ex.graph, 1.0).unwrap();
    let id = PpscMechanism::identity();
    let a = run_ppsc_les(&ex.graph, &ex.equation, &mask, &y0, 200, 4).unwrap();
    let b = run_ppsc_les(&ex.graph, &ex.equation, &id, &y0, 200, 4).unwrap();
    for (x, y) in a.averages.iter().zip(&b.averages) {
        assert!((x - y).norm() <= 1e-9);
    }
    assert!(a.trajectory.max_error(200, &ex.solution) < 1e-6);
}

#[test]
fn ppsc_les_stationary_at_solution() {
    let ex = presets::example2();
    let y0 = rows_at(&ex.solution, 4);
    let run = run_ppsc_les(&ex.graph, &ex.equation, &PpscMechanism::identity(), &y0, 5, 0).unwrap();
    assert!((run.trajectory.last() - &y0).amax() < 1e-12);
}

#[test]
fn ppsc_les_inner_consensus_mode_runs() {
    let ex = presets::example2();
    let y0 = random_state(4, 2, 13);
    let how = Averaging::Inner {
        weights: ex.weight_matrix(),
        steps: 60,
    };
    let run = run_ppsc_les_with(&ex.graph, &ex.equation, &PpscMechanism::identity(), &y0, 100, 0, &how).unwrap();
    assert!(run.trajectory.max_error(100, &ex.solution) < 1e-3);
}

#[test]
fn ppsc_les_rejects_foreign_mechanism_graph() {
    let ex = presets::example2();
    let other = Graph::path(4).unwrap();
    let mask = PpscMechanism::edge_mask(&other, 1.0).unwrap();
    assert!(run_ppsc_les(&ex.graph, &ex.equation, &mask, &random_state(4, 2, 1), 3, 0).is_err());
}

#[test]
fn ppsc_dgd_identity_is_centralized_average() {
    let ex = presets::example2();
    let mut r = rng::stream(31, &[]);
    let obj = QuadraticObjectiveSet::random(4, 2, 3, &mut r);
    let y0 = random_state(4, 2, 3);
    let run = run_ppsc_dgd(&ex.graph, &obj, &PpscMechanism::identity(), &y0, 3, 0).unwrap();
    let mut y = y0.clone();
    for t in 0..3 {
        let flat = &y - gradients(&obj, &y) * dgd_step_size(t);
        let mean = flat.row_mean();
        y = DMatrix::from_fn(4, 2, |_, k| mean[k]);
        assert!((run.trajectory.state(t + 1) - &y).amax() < 1e-14);
    }
}

#[test]
fn ppsc_dgd_reaches_minimizer_and_is_transparent() {
    let ex = presets::example2();
    let mut r = rng::stream(32, &[]);
    let obj = QuadraticObjectiveSet::random(4, 2, 3, &mut r);
    let y0 = random_state(4, 2, 3);
    let mask = PpscMechanism::edge_mask(&ex.graph, 1.0).unwrap();
    let a = run_ppsc_dgd(&ex.graph, &obj, &mask, &y0, 5000, 8).unwrap();
    let b = run_ppsc_dgd(&ex.graph, &obj, &PpscMechanism::identity(), &y0, 5000, 8).unwrap();
    for (x, y) in a.averages.iter().zip(&b.averages) {
        assert!((x - y).norm() <= 1e-9);
    }
    assert!((a.averages.last().unwrap() - obj.joint_minimizer().unwrap()).norm() < 1e-2);
}

#[test]
fn closed_loop_examples() {
    let g = Graph::new(1, &[]).unwrap();
    let w = WeightMatrix::new(DMatrix::identity(1, 1), &g, DEFAULT_WEIGHT_TOL).unwrap();
    let e = LinearEquation::from_rows(&[&[1.0, 0.0]], &[0.0]).unwrap();
    let cl = closed_loop(&w, &e, 0.5).unwrap();
    assert_eq!(cl.f, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]));

    let ex = presets::example2();
    let cl0 = closed_loop(&ex.weight_matrix(), &ex.equation, 0.0).unwrap();
    assert_eq!(cl0.f, linalg::kron_identity(&ex.weights, 2));

    let rho = closed_loop(&ex.weight_matrix(), &ex.equation, 0.1).unwrap().spectral_radius();
    assert!(rho < 1.0);
    assert!((rho - 0.974_33).abs() < 1e-5);
}

#[test]
fn projector_blocks_are_idempotent_with_unit_trace() {
    let e = presets::example4().equation;
    let z = projector_block_diag(&e);
    for i in 0..4 {
        let b = z.view((2 * i, 2 * i), (2, 2)).into_owned();
        assert!((&b * &b - &b).amax() < 1e-14);
        assert!((b.trace() - 1.0).abs() < 1e-14);
        assert!(linalg::asymmetry(&b) < 1e-15);
    }
}
