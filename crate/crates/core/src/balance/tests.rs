use super::*;
use crate::kernel::{estimate_gram_quadrature, GaussianKernel};
use crate::posterior::{posterior_on_grid, BasePosterior, LatentGrid};
use crate::rng::stream;
use crate::scenario::{draw_dataset, ScenarioParams};
use rand::Rng;

fn diag(values: &[f64]) -> Mat<f64> {
    Mat::from_fn(values.len(), values.len(), |i, j| {
        if i == j {
            values[i]
        } else {
            0.0
        }
    })
}

fn random_instance(n: usize, m: usize, seed: u64) -> (Mat<f64>, Vec<usize>, Mat<f64>) {
    let mut rng = stream(seed, 0);
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let k = GaussianKernel::new(0.8).unwrap();
    let q = k.gram(&Points::scalars(z));
    let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let mut policy = Mat::zeros(n, m);
    for i in 0..n {
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for k in 0..m {
            policy[(i, k)] = raw[k] / s;
        }
    }
    (q, t, policy)
}

#[test]
fn perfect_balance_single_treatment() {
    let (q, _, _) = random_instance(2, 1, 1);
    let qp = build_qp_from_matrix(&q, &[0, 0], &Mat::from_fn(2, 1, |_, _| 1.0), 0.0).unwrap();
    assert!(adversarial_objective(&qp, &[1.0, 1.0]).abs() < 1e-12);
}

#[test]
fn hand_computed_instance() {
    let policy = Mat::from_fn(2, 2, |_, _| 0.5);
    let qp = build_qp_from_matrix(&diag(&[1.0, 1.0]), &[0, 1], &policy, 0.0).unwrap();
    assert_eq!(qp.a, vec![1.0, 1.0]);
    assert!((qp.c - 1.0).abs() < 1e-15);
    let w = solve_unconstrained(&qp).unwrap();
    assert!((w.w[0] - 0.5).abs() < 1e-14 && (w.w[1] - 0.5).abs() < 1e-14);
    assert!((w.objective.unwrap() - 0.5).abs() < 1e-14);
}

#[test]
fn build_rejects_bad_inputs() {
    let (q, t, policy) = random_instance(4, 2, 2);
    assert!(build_qp_from_matrix(&q, &t[..3], &policy, 0.1).is_err());
    assert!(build_qp_from_matrix(&q, &t, &policy, -1.0).is_err());
    assert!(build_qp_from_matrix(&q, &[0, 1, 2, 0], &policy, 0.1).is_err());
    let mut bad = policy.clone();
    bad[(0, 0)] += 0.1;
    assert!(build_qp_from_matrix(&q, &t, &bad, 0.1).is_err());
}

#[test]
fn g_is_block_diagonal_with_ridge() {
    let (q, t, policy) = random_instance(12, 2, 3);
    let qp = build_qp_from_matrix(&q, &t, &policy, 0.3).unwrap();
    for i in 0..12 {
        for j in 0..12 {
            let expected =
                if t[i] == t[j] { q[(i, j)] } else { 0.0 } + if i == j { 0.3 } else { 0.0 };
            assert_eq!(qp.g[(i, j)], expected);
        }
    }
    let dense = QpProblem::new(qp.g.clone(), qp.a.clone(), qp.c).unwrap();
    let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
    assert!((dense.objective(&w) - qp.objective(&w)).abs() < 1e-12);
}

#[test]
fn unconstrained_closed_forms() {
    let qp = QpProblem::new(diag(&[1.0; 5]), vec![2.0; 5], 0.0).unwrap();
    assert_eq!(solve_unconstrained(&qp).unwrap().w, vec![1.0; 5]);
    let qp = QpProblem::new(diag(&[2.0, 2.0]), vec![2.0, 4.0], 0.0).unwrap();
    assert_eq!(solve_unconstrained(&qp).unwrap().w, vec![0.5, 1.0]);
}

#[test]
fn unconstrained_beats_random_perturbations() {
    let (q, t, policy) = random_instance(20, 2, 4);
    let qp = build_qp_from_matrix(&q, &t, &policy, 0.05).unwrap();
    let w = solve_unconstrained(&qp).unwrap();
    let best = w.objective.unwrap();
    let mut rng = stream(4, 1);
    for _ in 0..1000 {
        let probe: Vec<f64> =
            w.w.iter()
                .map(|x| x + rng.random_range(-0.1..0.1))
                .collect();
        assert!(qp.objective(&probe) >= best);
    }
    assert!(w.diagnostics.kkt_residual <= 1e-8 * (1.0 + linalg::norm_inf(&qp.a)));
}

#[test]
fn singular_without_ridge() {
    let ones = Mat::from_fn(3, 3, |_, _| 1.0);
    let policy = Mat::from_fn(3, 1, |_, _| 1.0);
    let qp = build_qp_from_matrix(&ones, &[0, 0, 0], &policy, 0.0).unwrap();
    let err = solve_unconstrained(&qp).unwrap_err();
    assert!(matches!(err, Error::Singular { .. }));
    assert!(err.to_string().contains("gamma > 0"));
}

#[test]
fn simplex_projection() {
    assert_eq!(project_simplex(&[1.0, 1.0, 1.0], 3.0), vec![1.0, 1.0, 1.0]);
    assert_eq!(project_simplex(&[5.0, 0.0], 2.0), vec![2.0, 0.0]);
    let p = project_simplex(&[0.3, -2.0, 0.9, 0.1], 1.0);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(p.iter().all(|x| *x >= 0.0));
    assert_eq!(p[1], 0.0);
}

#[test]
fn simplex_min_norm_point() {
    let qp = QpProblem::new(diag(&[1.0; 6]), vec![0.0; 6], 0.0).unwrap();
    let w = solve_simplex(&qp).unwrap();
    for x in &w.w {
        assert!((x - 1.0).abs() < 1e-10);
    }
    assert_eq!(w.constraint, Constraint::Simplex);
}

#[test]
fn simplex_agrees_with_feasible_unconstrained_solution() {
    // a = 2G·1 puts the unconstrained optimum at W = 1.
    let (q, t, policy) = random_instance(10, 2, 5);
    let mut qp = build_qp_from_matrix(&q, &t, &policy, 0.2).unwrap();
    qp.a = qp.g_mul(&[1.0; 10]).iter().map(|v| 2.0 * v).collect();
    let free = solve_unconstrained(&qp).unwrap();
    let boxed = solve_simplex(&qp).unwrap();
    for (a, b) in free.w.iter().zip(&boxed.w) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn simplex_kkt_on_active_instance() {
    let (q, t, policy) = random_instance(40, 2, 6);
    let qp = build_qp_from_matrix(&q, &t, &policy, 0.01).unwrap();
    let w = solve_simplex(&qp).unwrap();
    assert!(w.min() >= -1e-10);
    assert!((w.sum() - 40.0).abs() < 1e-8);
    assert!(w.diagnostics.projected_gradient <= 1e-7);
    assert!(w.diagnostics.complementarity <= 1e-6);
    assert!(w.diagnostics.dual_infeasibility <= 1e-6);
    assert!(w.objective.unwrap() >= solve_unconstrained(&qp).unwrap().objective.unwrap() - 1e-9);
}

#[test]
fn simplex_reports_non_convergence() {
    let (q, t, policy) = random_instance(30, 2, 7);
    let qp = build_qp_from_matrix(&q, &t, &policy, 0.0).unwrap();
    let opts = SimplexOptions {
        max_iterations: 1,
        tolerance: 0.0,
        polish_every: 1000,
    };
    match solve_simplex_with(&qp, opts) {
        Err(Error::NoConvergence {
            best, iterations, ..
        }) => {
            assert_eq!(best.len(), 30);
            assert_eq!(iterations, 1);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn objective_at_zero_is_c() {
    let (q, t, policy) = random_instance(9, 2, 8);
    let qp = build_qp_from_matrix(&q, &t, &policy, 0.5).unwrap();
    assert_eq!(adversarial_objective(&qp, &[0.0; 9]), qp.c);
    assert!(qp.c >= 0.0);
}

#[test]
fn normalized_scale_keeps_the_argmin() {
    let (q, t, policy) = random_instance(15, 2, 9);
    let qp = build_qp_from_matrix(&q, &t, &policy, 0.2).unwrap();
    let w1 = solve_unconstrained(&qp).unwrap();
    let scaled = qp.rescaled(ScaleConvention::Normalized);
    let w2 = solve_unconstrained(&scaled).unwrap();
    for (a, b) in w1.w.iter().zip(&w2.w) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!((w2.objective.unwrap() * 225.0 - w1.objective.unwrap()).abs() < 1e-9);
}

fn latent_instance(
    n: usize,
    seed: u64,
) -> (Vec<LatentPosterior>, GaussianKernel, Vec<usize>, Mat<f64>) {
    let params = ScenarioParams::default();
    let data = draw_dataset(&params, n, &mut stream(seed, 0)).unwrap();
    let bases: Vec<_> = data
        .x
        .rows()
        .map(|x| BasePosterior::new(x, &params).unwrap())
        .collect();
    let grid = LatentGrid::covering(&bases, 64).unwrap();
    let posts: Vec<_> = data
        .x
        .rows()
        .zip(&data.t)
        .map(|(x, &t)| posterior_on_grid(x, t, &params, &grid).unwrap())
        .collect();
    let policy = params.policy().prob_matrix(&data.x);
    (posts, GaussianKernel::new(0.9).unwrap(), data.t, policy)
}

use crate::posterior::LatentPosterior;

#[test]
fn closed_form_matches_brute_force() {
    let (posts, k, t, policy) = latent_instance(8, 10);
    let q = estimate_gram_quadrature(&posts, &k).unwrap();
    let qp = build_qp(&q, &t, &policy, 0.2).unwrap();
    let mut rng = stream(10, 1);
    for _ in 0..100 {
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..3.0)).collect();
        let closed = adversarial_objective(&qp, &w);
        let brute = brute_force_sup_j(&posts, &k, &t, &policy, 0.2, &w).unwrap();
        assert!((closed - brute).abs() <= 1e-6, "{closed} vs {brute}");
    }
}

#[test]
fn brute_force_replicating_weights() {
    let (posts, k, _, _) = latent_instance(5, 11);
    let t = vec![0; 5];
    let policy = Mat::from_fn(5, 1, |_, _| 1.0);
    let w = vec![1.0; 5];
    let v = brute_force_sup_j(&posts, &k, &t, &policy, 0.3, &w).unwrap();
    assert!((v - 0.3 * 5.0).abs() < 1e-9);
    let doubled = brute_force_sup_j(&posts, &k, &t, &policy, 0.6, &w).unwrap();
    assert!((doubled - v - 0.3 * 5.0).abs() < 1e-9);
}

#[test]
fn optx_with_identical_proxies() {
    let x = Points::new(3, vec![0.5; 3 * 6]);
    let t = vec![0, 1, 0, 1, 1, 0];
    let policy = Mat::from_fn(6, 2, |i, k| {
        if k == 0 {
            0.3 + 0.05 * i as f64
        } else {
            0.7 - 0.05 * i as f64
        }
    });
    let k = GaussianKernel::new(1.0).unwrap();
    let w = optx_weights(&x, &t, &policy, &k, 0.5, Constraint::Unconstrained).unwrap();
    assert_eq!(w.method, "optx");
    let ones = Mat::from_fn(6, 6, |_, _| 1.0);
    let qp = build_qp_from_matrix(&ones, &t, &policy, 0.5).unwrap();
    let direct = solve_unconstrained(&qp).unwrap();
    for (a, b) in w.w.iter().zip(&direct.w) {
        assert!((a - b).abs() < 1e-12);
    }
    // Rank one per block: within a treatment all weights coincide.
    assert!((w.w[0] - w.w[2]).abs() < 1e-12 && (w.w[1] - w.w[3]).abs() < 1e-12);
}
