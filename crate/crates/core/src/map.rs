//! Maximum a posteriori estimate of the log-diffusion, used to start chains
//! inside the bulk of the posterior.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::mcmc::{ForwardMap, Likelihood};
use crate::prior::GraphPrior;

/// Share of the prior variance carried by the modes that move.
pub const ACTIVE_VARIANCE_FRACTION: f64 = 1.0 - 1e-8;
/// Forward-difference step in whitened coordinates.
const FD_STEP: f64 = 1e-6;
/// Damping retries per iteration before giving up.
const MAX_RETRIES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSettings {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction.
    pub rel_tol: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self {
            max_iters: 30,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub theta: Vec<f64>,
    /// `1/2 |y - G(theta)|^2_Gamma + 1/2 |z|^2` at `theta`.
    pub objective: f64,
    pub iterations: usize,
    pub active_modes: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes the negative log posterior over the whitened coefficients `z`
/// of `theta = sum_i sqrt(lambda_i) z_i phi_i` by Levenberg-Marquardt with a
/// forward-difference Jacobian. Only the leading prior modes move; the rest
/// keep their value from `start`.
pub fn map_estimate<F: ForwardMap>(
    prior: &GraphPrior,
    lik: &Likelihood<F>,
    start: &[f64],
    settings: &MapSettings,
) -> Result<MapEstimate> {
    let n = prior.n();
    if start.len() != n {
        return Err(Error::invalid("MAP start does not match the prior dimension"));
    }
    let lam = prior.cov_eigvals();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lam[b].total_cmp(&lam[a]));
    let total: f64 = lam.iter().sum();
    let mut active = Vec::new();
    let mut acc = 0.0;
    for &i in &order {
        if lam[i] <= 0.0 || acc >= ACTIVE_VARIANCE_FRACTION * total {
            break;
        }
        active.push(i);
        acc += lam[i];
    }
    let mut z: Vec<f64> = prior
        .laplacian()
        .project(start)
        .iter()
        .zip(lam)
        .map(|(c, l)| if *l > 0.0 { c / l.sqrt() } else { 0.0 })
        .collect();

    let residual = |z: &[f64]| -> Result<Vec<f64>> {
        let g = lik.forward_map().evaluate(&prior.sample_from(z))?;
        let r: Vec<f64> = g.iter().zip(lik.data()).map(|(a, b)| a - b).collect();
        Ok(lik.noise().whiten(&r))
    };
    let objective = |r: &[f64], z: &[f64]| 0.5 * (dot(r, r) + dot(z, z));

    let mut r = residual(&z)?;
    let mut obj = objective(&r, &z);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let k = active.len();
    let m = r.len();
    while iterations < settings.max_iters && k > 0 {
        iterations += 1;
        let mut jac = Mat::<f64>::zeros(m, k);
        for (c, &i) in active.iter().enumerate() {
            let mut zp = z.clone();
            zp[i] += FD_STEP;
            let rp = residual(&zp)?;
            for row in 0..m {
                jac[(row, c)] = (rp[row] - r[row]) / FD_STEP;
            }
        }
        let gram = jac.transpose() * &jac;
        let rhs = Mat::from_fn(k, 1, |c, _| {
            -((0..m).map(|row| jac[(row, c)] * r[row]).sum::<f64>() + z[active[c]])
        });
        let previous = obj;
        let mut improved = false;
        for _ in 0..MAX_RETRIES {
            let mut a = gram.clone();
            for c in 0..k {
                a[(c, c)] += 1.0 + mu * (gram[(c, c)] + 1.0);
            }
            let llt = a
                .llt(Side::Lower)
                .map_err(|e| Error::Solver(format!("MAP normal equations: {e:?}")))?;
            let delta = llt.solve(&rhs);
            let mut trial = z.clone();
            for (c, &i) in active.iter().enumerate() {
                trial[i] += delta[(c, 0)];
            }
            // a failed forward solve counts as an infinite objective
            if let Ok(rt) = residual(&trial) {
                let ot = objective(&rt, &trial);
                if ot < obj {
                    z = trial;
                    r = rt;
                    obj = ot;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved || previous - obj <= settings.rel_tol * previous {
            break;
        }
    }
    Ok(MapEstimate {
        theta: prior.sample_from(&z),
        objective: obj,
        iterations,
        active_modes: k,
    })
}
