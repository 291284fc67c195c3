mod common;

use std::sync::Arc;

use common::*;
use faer::linalg::solvers::Solve;
use faer::Mat;
use manifold_bayes::kernel::{DiscreteOperator, KernelGeometry};
use manifold_bayes::solver::{
    forward_map, solve, solve_eig, solve_pinv, ObservationMap, SolverKind, SymmetricKernel,
};
use proptest::prelude::*;

fn problem(n: usize, seed: u64, eps: f64) -> (Arc<KernelGeometry>, Vec<f64>, Vec<f64>) {
    let pc = lcg_cloud(n, 2, 1, seed);
    let g = Arc::new(KernelGeometry::from_cloud(&pc, eps).unwrap());
    let aux = lcg_cloud(n, 2, 1, seed ^ 0x5555);
    let kappa: Vec<f64> = (0..n).map(|i| 0.5 + 2.0 * aux.points()[(i, 0)]).collect();
    let f: Vec<f64> = (0..n).map(|i| aux.points()[(i, 1)] - 0.5).collect();
    (g, kappa, f)
}

/// Bordered system `[L 1; (1/q)^T 0] [u; c] = [f - proj f; 0]` solved by LU.
fn bordered_oracle(op: &DiscreteOperator, f: &[f64]) -> Vec<f64> {
    let n = op.n();
    let q = op.density();
    let ones = vec![1.0; n];
    let c = q_inner(f, &ones, q) / q_inner(&ones, &ones, q);
    let a = Mat::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => op.matrix()[(i, j)],
        (true, false) => 1.0,
        (false, true) => 1.0 / q[j],
        (false, false) => 0.0,
    });
    let mut rhs = Mat::from_fn(n + 1, 1, |i, _| if i < n { f[i] - c } else { 0.0 });
    a.partial_piv_lu().solve_in_place(&mut rhs);
    (0..n).map(|i| rhs[(i, 0)]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn all_routes_agree_with_bordered_oracle(n in 4usize..=50, seed in any::<u64>(), eps in 0.02f64..0.5) {
        let (g, kappa, f) = problem(n, seed, eps);
        let op = DiscreteOperator::new(g.clone(), &kappa).unwrap();
        let oracle = bordered_oracle(&op, &f);
        let scale = norm(&oracle).max(1e-12);
        let pinv = solve_pinv(&op, &f).unwrap().u;
        let eig = solve_eig(&op, &f).unwrap().u;
        let chol = SymmetricKernel::new(g).solve(&kappa, &f).unwrap().u;
        for (name, u) in [("pinv", &pinv), ("eig", &eig), ("cholesky", &chol)] {
            let gap: Vec<f64> = u.iter().zip(&oracle).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&gap) <= 1e-7 * scale, "{name}: {}", norm(&gap) / scale);
        }
    }

    #[test]
    fn solution_is_q_mean_zero_and_solves_projected_system(n in 4usize..=40, seed in any::<u64>()) {
        let (g, kappa, f) = problem(n, seed, 0.1);
        let op = DiscreteOperator::new(g, &kappa).unwrap();
        let res = solve(&op, &f, SolverKind::Pinv).unwrap();
        let q = op.density();
        let ones = vec![1.0; n];
        prop_assert!(q_inner(&res.u, &ones, q).abs() <= 1e-10 * norm(&res.u).max(1.0));
        let c = q_inner(&f, &ones, q) / q_inner(&ones, &ones, q);
        let lu = op.apply(&res.u);
        let r: Vec<f64> = lu.iter().zip(&f).map(|(a, b)| a - (b - c)).collect();
        prop_assert!(norm(&r) <= 1e-8 * norm(&f).max(1.0));
    }

    #[test]
    fn shifting_log_kappa_rescales_the_solution(n in 4usize..=30, seed in any::<u64>(), shift in -2.0f64..2.0) {
        let pc = lcg_cloud(n, 2, 1, seed);
        let (_, kappa, f) = problem(n, seed, 0.1);
        let theta: Vec<f64> = kappa.iter().map(|k| k.ln()).collect();
        let shifted: Vec<f64> = theta.iter().map(|t| t + shift).collect();
        let obs = ObservationMap::strided(n / 2, n).unwrap();
        for kind in [SolverKind::Pinv, SolverKind::Eig, SolverKind::Cholesky] {
            let a = forward_map(&theta, &pc, 0.1, &f, &obs, kind).unwrap();
            let b = forward_map(&shifted, &pc, 0.1, &f, &obs, kind).unwrap();
            let expected: Vec<f64> = a.iter().map(|v| (-shift).exp() * v).collect();
            let gap: Vec<f64> = b.iter().zip(&expected).map(|(x, y)| x - y).collect();
            prop_assert!(norm(&gap) <= 1e-8 * norm(&a).max(1e-12));
        }
    }
}

#[test]
fn constant_rhs_gives_zero_solution_and_reports_discard() {
    let (g, kappa, _) = problem(20, 4, 0.1);
    let op = DiscreteOperator::new(g, &kappa).unwrap();
    let res = solve(&op, &[2.0; 20], SolverKind::Pinv).unwrap();
    assert!(norm(&res.u) < 1e-10);
    assert!((res.discarded - 2.0 * 20f64.sqrt()).abs() < 1e-10);
}
