//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use faer::Mat;
use manifold_bayes::pointcloud::PointCloud;

/// Entrywise operator from the pointwise kernel sum: for `i != j`,
/// `L_ij = -exp(-|xi-xj|^2/4eps) sqrt(ki kj) / (sqrt(4 pi) n eps^{m/2+1} q_j)`
/// with `q_j = sum_k exp(-|xj-xk|^2/4eps) / (sqrt(4 pi) n eps^{m/2})`,
/// and rows summing to zero.
pub fn brute_force_operator(pc: &PointCloud, kappa: &[f64], eps: f64) -> Mat<f64> {
    let n = pc.n();
    let m = pc.intrinsic_dim() as f64;
    let c = (4.0 * std::f64::consts::PI).sqrt() * n as f64;
    let sq = |i: usize, j: usize| -> f64 {
        (0..pc.ambient_dim())
            .map(|k| (pc.points()[(i, k)] - pc.points()[(j, k)]).powi(2))
            .sum()
    };
    let mut q = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for k in 0..n {
            s += (-sq(j, k) / (4.0 * eps)).exp();
        }
        q[j] = s / (c * eps.powf(m / 2.0));
    }
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            let w = (-sq(i, j) / (4.0 * eps)).exp() * (kappa[i] * kappa[j]).sqrt()
                / (c * eps.powf(m / 2.0 + 1.0) * q[j]);
            diag += w;
            l[(i, j)] = -w;
        }
        l[(i, i)] += diag;
    }
    l
}

pub fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

/// `(1/n) sum u v / q`.
pub fn q_inner(u: &[f64], v: &[f64], q: &[f64]) -> f64 {
    u.iter().zip(v).zip(q).map(|((a, b), w)| a * b / w).sum::<f64>() / u.len() as f64
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

/// Dense covariance `U diag(lambda) U^T`.
pub fn dense_covariance(vecs: &Mat<f64>, lambda: &[f64]) -> Mat<f64> {
    let n = lambda.len();
    Mat::from_fn(n, n, |i, j| (0..n).map(|k| vecs[(i, k)] * lambda[k] * vecs[(j, k)]).sum())
}

/// Cloud of `n` random points in `[0, 1]^d` from a fixed-seed LCG.
pub fn lcg_cloud(n: usize, d: usize, m: usize, seed: u64) -> PointCloud {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let pts = Mat::from_fn(n, d, |_, _| next());
    PointCloud::from_points(pts, m).unwrap()
}

/// Laplacian of the path graph on `n` nodes.
pub fn path_graph(n: usize) -> std::sync::Arc<manifold_bayes::prior::GraphLaplacian> {
    let mut d = Mat::zeros(n, n);
    for i in 0..n - 1 {
        d[(i, i)] += 1.0;
        d[(i + 1, i + 1)] += 1.0;
        d[(i, i + 1)] -= 1.0;
        d[(i + 1, i)] -= 1.0;
    }
    std::sync::Arc::new(manifold_bayes::prior::GraphLaplacian::from_matrix(d).unwrap())
}

pub type Toy = fn(&[f64]) -> manifold_bayes::Result<Vec<f64>>;

/// Small nonlinear forward map with two outputs.
pub fn toy_forward(theta: &[f64]) -> manifold_bayes::Result<Vec<f64>> {
    Ok(vec![theta[0] + theta[theta.len() - 1].powi(2), theta.iter().map(|t| t.sin()).sum()])
}

/// `log N(x; mean, cov)` up to the constant, from a dense factorization.
pub fn gauss_log(x: &[f64], mean: &[f64], cov: &Mat<f64>) -> f64 {
    use faer::linalg::solvers::Solve;
    let n = x.len();
    let llt = cov.llt(faer::Side::Lower).unwrap();
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut z = Mat::from_fn(n, 1, |i, _| r[i]);
    llt.solve_in_place(&mut z);
    -0.5 * (0..n).map(|i| r[i] * z[(i, 0)]).sum::<f64>()
}

/// Runs `pcn_step` on an `n`-node toy next to a Metropolis-Hastings oracle
/// that keeps the prior and proposal densities, both driven by clones of
/// the same rng. Returns the number of acceptances, or the first step where
/// the decisions or states differ.
pub fn replay_pcn_against_oracle(n: usize, steps: usize, seed: u64) -> Result<usize, String> {
    use manifold_bayes::mcmc::{pcn_step, ChainState, Likelihood, NoiseCovariance, StepOutcome};
    use manifold_bayes::prior::GraphPrior;
    use rand::{Rng, SeedableRng};

    let prior = GraphPrior::new(path_graph(n), 0.3, 2.0).unwrap();
    let cov = dense_covariance(prior.laplacian().eigvecs(), prior.cov_eigvals());
    let y = vec![0.4, -0.2];
    let sigma = 0.3;
    let lik = Likelihood::new(y.clone(), NoiseCovariance::isotropic(sigma).unwrap(), toy_forward as Toy).unwrap();
    let beta = 0.5;
    let rho = (1.0f64 - beta * beta).sqrt();
    let prop_cov = Mat::from_fn(n, n, |i, j| beta * beta * cov[(i, j)]);
    let zero = vec![0.0; n];
    let log_lik = |t: &[f64]| -> f64 {
        let g = toy_forward(t).unwrap();
        -0.5 * g.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (sigma * sigma)
    };

    let mut state = ChainState::new(vec![0.1; n], &lik).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut oracle_rng = rng.clone();
    let mut oracle_theta = state.theta.clone();
    let mut accepted = 0;
    for step in 0..steps {
        let outcome = pcn_step(&mut state, beta, &prior, &lik, &mut rng);

        let xi: Vec<f64> = (0..n).map(|_| oracle_rng.sample(rand_distr::StandardNormal)).collect();
        let draw = prior.sample_from(&xi);
        let prop: Vec<f64> = oracle_theta.iter().zip(&draw).map(|(t, d)| rho * t + beta * d).collect();
        let fwd_mean: Vec<f64> = oracle_theta.iter().map(|t| rho * t).collect();
        let back_mean: Vec<f64> = prop.iter().map(|t| rho * t).collect();
        let log_ratio = log_lik(&prop) + gauss_log(&prop, &zero, &cov) + gauss_log(&oracle_theta, &back_mean, &prop_cov)
            - log_lik(&oracle_theta)
            - gauss_log(&oracle_theta, &zero, &cov)
            - gauss_log(&prop, &fwd_mean, &prop_cov);
        let u: f64 = oracle_rng.random();
        let accept = u.ln() < log_ratio;
        if accept {
            oracle_theta = prop;
            accepted += 1;
        }
        if (outcome == StepOutcome::Accepted) != accept {
            return Err(format!("n={n}: decisions differ at step {step}"));
        }
        if state.theta.iter().zip(&oracle_theta).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs())) {
            return Err(format!("n={n}: states differ at step {step}"));
        }
    }
    Ok(accepted)
}

/// Mean over nodes of the per-node sample variance.
pub fn average_node_variance(draws: &[Vec<f64>]) -> f64 {
    let m = draws.len() as f64;
    let n = draws[0].len();
    (0..n)
        .map(|i| {
            let mean = draws.iter().map(|d| d[i]).sum::<f64>() / m;
            draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / m
        })
        .sum::<f64>()
        / n as f64
}

/// Largest `|mean coeff^2 - lambda| / se` over modes, with
/// `se = lambda sqrt(2 / draws)` for squared centred normals.
pub fn worst_spectrum_deviation(
    laplacian: &manifold_bayes::prior::GraphLaplacian,
    cov_eigvals: &[f64],
    draws: &[Vec<f64>],
) -> f64 {
    let m = draws.len() as f64;
    let mut second = vec![0.0; cov_eigvals.len()];
    for d in draws {
        for (acc, c) in second.iter_mut().zip(laplacian.project(d)) {
            *acc += c * c;
        }
    }
    second
        .iter()
        .zip(cov_eigvals)
        .map(|(&m2, &lam)| (m2 / m - lam).abs() / (lam * (2.0 / m).sqrt()))
        .fold(0.0, f64::max)
}
