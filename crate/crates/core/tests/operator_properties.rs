mod common;

use std::sync::Arc;

use common::*;
use faer::Mat;
use manifold_bayes::kernel::{DiscreteOperator, KernelGeometry};
use manifold_bayes::pointcloud::{generate_ellipse, pairwise_sq_dists, PointCloud};
use proptest::prelude::*;

fn cloud_strategy() -> impl Strategy<Value = (PointCloud, Vec<f64>, f64)> {
    (3usize..=10, 1usize..=3, any::<u64>(), 0.05f64..2.0).prop_flat_map(|(n, d, seed, eps)| {
        let pc = lcg_cloud(n, d, 1, seed);
        (Just(pc), proptest::collection::vec(0.2f64..5.0, n), Just(eps))
    })
}

fn operator(pc: &PointCloud, kappa: &[f64], eps: f64) -> DiscreteOperator {
    let g = Arc::new(KernelGeometry::from_cloud(pc, eps).unwrap());
    DiscreteOperator::new(g, kappa).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force_kernel_sum((pc, kappa, eps) in cloud_strategy()) {
        let op = operator(&pc, &kappa, eps);
        let oracle = brute_force_operator(&pc, &kappa, eps);
        let scale = (0..pc.n()).map(|i| oracle[(i, i)].abs()).fold(1.0, f64::max);
        prop_assert!(max_abs_diff(op.matrix(), &oracle) <= 1e-12 * scale);
    }

    #[test]
    fn self_adjoint_and_psd_in_q_inner_product(
        (pc, kappa, eps) in cloud_strategy(),
        seed in any::<u64>(),
    ) {
        let op = operator(&pc, &kappa, eps);
        let n = pc.n();
        let r = lcg_cloud(n, 2, 1, seed);
        let u: Vec<f64> = (0..n).map(|i| r.points()[(i, 0)] - 0.5).collect();
        let v: Vec<f64> = (0..n).map(|i| r.points()[(i, 1)] - 0.5).collect();
        let q = op.density();
        let (lu, lv) = (op.apply(&u), op.apply(&v));
        let gap = (q_inner(&lu, &v, q) - q_inner(&u, &lv, q)).abs();
        let scale = q_inner(&lu, &lu, q).sqrt() * q_inner(&v, &v, q).sqrt() + 1.0;
        prop_assert!(gap <= 1e-10 * norm(&u) * norm(&v) * scale, "gap {gap}");
        prop_assert!(q_inner(&lu, &u, q) >= -1e-10 * norm(&u).powi(2) * scale);
    }

    #[test]
    fn constants_in_kernel((pc, kappa, eps) in cloud_strategy()) {
        let op = operator(&pc, &kappa, eps);
        let l1 = op.apply(&vec![1.0; pc.n()]);
        let scale = (0..pc.n()).map(|i| op.matrix()[(i, i)].abs()).fold(1e-300, f64::max);
        prop_assert!(norm(&l1) <= 1e-12 * scale * (pc.n() as f64).sqrt());
    }

    #[test]
    fn scaling_kappa_scales_operator((pc, kappa, eps) in cloud_strategy(), c in 0.1f64..10.0) {
        let a = operator(&pc, &kappa, eps);
        let scaled: Vec<f64> = kappa.iter().map(|k| c * k).collect();
        let b = operator(&pc, &scaled, eps);
        let expected = Mat::from_fn(pc.n(), pc.n(), |i, j| c * a.matrix()[(i, j)]);
        let scale = (0..pc.n()).map(|i| expected[(i, i)].abs()).fold(1e-300, f64::max);
        prop_assert!(max_abs_diff(b.matrix(), &expected) <= 1e-12 * scale);
    }
}

#[test]
fn unit_kappa_reduces_to_density_normalized_graph_laplacian() {
    let pc = generate_ellipse(60, 2.0).unwrap();
    let eps = 0.01;
    let op = operator(&pc, &vec![1.0; 60], eps);
    let sq = pairwise_sq_dists(&pc);
    let h = Mat::from_fn(60, 60, |i, j| (-sq[(i, j)] / (4.0 * eps)).exp());
    let col: Vec<f64> = (0..60).map(|j| (0..60).map(|i| h[(i, j)]).sum()).collect();
    let w = Mat::from_fn(60, 60, |i, j| h[(i, j)] / col[j]);
    let d: Vec<f64> = (0..60).map(|i| (0..60).map(|j| w[(i, j)]).sum()).collect();
    let expected = Mat::from_fn(60, 60, |i, j| (if i == j { d[i] } else { 0.0 } - w[(i, j)]) / eps);
    let scale = (0..60).map(|i| expected[(i, i)].abs()).fold(0.0, f64::max);
    for j in 0..60 {
        for i in 0..60 {
            // equal up to floating-point evaluation order
            assert!((op.matrix()[(i, j)] - expected[(i, j)]).abs() <= 1e-14 * scale, "({i},{j})");
        }
    }
}
