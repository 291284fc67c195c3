//! Synthetic ground truths `(kappa, u, f)` with `f = -div(kappa grad u)`,
//! observation noise, and error metrics.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{DiscreteOperator, KernelGeometry};
use crate::pointcloud::{Chart, PointCloud};
use crate::prior::{GraphLaplacian, GraphPrior};

/// Required agreement between closed-form and finite-difference right-hand sides.
pub const RHS_CHECK_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMeta {
    pub kind: String,
    /// Max relative disagreement with the finite-difference oracle, when checked.
    pub rhs_check: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub kappa_true: Vec<f64>,
    pub u_true: Vec<f64>,
    pub f: Vec<f64>,
    pub meta: TruthMeta,
}

impl SyntheticTruth {
    pub fn restrict(&self, indices: &[usize]) -> Self {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect();
        Self {
            kappa_true: pick(&self.kappa_true),
            u_true: pick(&self.u_true),
            f: pick(&self.f),
            meta: self.meta.clone(),
        }
    }
}

/// Fourth-order centered difference.
fn d1(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = FD_STEP;
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn check_rhs(kind: &str, closed: &[f64], fd: &[f64]) -> Result<f64> {
    let gap = max_rel_gap(closed, fd);
    if gap > RHS_CHECK_TOL {
        return Err(Error::Truth(format!(
            "{kind}: closed-form rhs disagrees with finite differences (relative gap {gap:.3e})"
        )));
    }
    Ok(gap)
}

fn ellipse_metric(a: f64, w: f64) -> f64 {
    w.sin().powi(2) + a * a * w.cos().powi(2)
}

/// `-(1/sqrt g) d/dw (kappa (1/sqrt g) du/dw)` for the ellipse, closed form.
fn ellipse_rhs_closed(a: f64, w: f64) -> f64 {
    let (s, c) = (w.sin(), w.cos());
    let g = ellipse_metric(a, w);
    let h = g.powf(-0.5);
    let dg = 2.0 * s * c * (1.0 - a * a);
    let dh = -0.5 * g.powf(-1.5) * dg;
    let (kappa, dkappa) = (2.0 + c, -s);
    let (du, ddu) = (-s, -c);
    let dflux = dkappa * h * du + kappa * dh * du + kappa * h * ddu;
    -h * dflux
}

/// Finite-difference evaluation of the same divergence form on the ellipse.
fn ellipse_rhs_fd(
    a: f64,
    kappa: impl Fn(f64) -> f64,
    u: impl Fn(f64) -> f64,
    w: f64,
) -> f64 {
    let inv_sqrt_g = |x: f64| ellipse_metric(a, x).powf(-0.5);
    let flux = |x: f64| kappa(x) * inv_sqrt_g(x) * d1(&u, x);
    -inv_sqrt_g(w) * d1(flux, w)
}

fn ellipse_params(pc: &PointCloud) -> Result<(f64, Vec<f64>)> {
    match (pc.chart(), pc.params()) {
        (Chart::Ellipse { a }, Some(p)) => Ok((a, (0..pc.n()).map(|i| p[(i, 0)]).collect())),
        _ => Err(Error::Truth("ellipse truth needs an analytic ellipse cloud".into())),
    }
}

/// `kappa = 2 + cos w`, `u = cos w` on the ellipse grid.
pub fn ellipse_truth(pc: &PointCloud) -> Result<SyntheticTruth> {
    let (a, w) = ellipse_params(pc)?;
    let kappa_true: Vec<f64> = w.iter().map(|x| 2.0 + x.cos()).collect();
    let u_true: Vec<f64> = w.iter().map(|x| x.cos()).collect();
    let f: Vec<f64> = w.iter().map(|&x| ellipse_rhs_closed(a, x)).collect();
    let fd: Vec<f64> = w
        .iter()
        .map(|&x| ellipse_rhs_fd(a, |t| 2.0 + t.cos(), |t| t.cos(), x))
        .collect();
    let gap = check_rhs("ellipse", &f, &fd)?;
    Ok(SyntheticTruth {
        kappa_true,
        u_true,
        f,
        meta: TruthMeta {
            kind: "ellipse".into(),
            rhs_check: Some(gap),
        },
    })
}

/// Closed-form torus rhs for `kappa = 2 + sin w1 sin w2`, `u = sin w1 sin w2`.
fn torus_rhs_closed(w1: f64, w2: f64) -> f64 {
    let (s1, c1, s2, c2) = (w1.sin(), w1.cos(), w2.sin(), w2.cos());
    let r = 2.0 + c1;
    let kappa = 2.0 + s1 * s2;
    let first = (c1 * s2) * r * (c1 * s2) + kappa * (-s1) * (c1 * s2) + kappa * r * (-s1 * s2);
    let second = ((s1 * c2) * (s1 * c2) + kappa * (-s1 * s2)) / r;
    -(first + second) / r
}

fn torus_rhs_fd(kappa: impl Fn(f64, f64) -> f64, u: impl Fn(f64, f64) -> f64, w1: f64, w2: f64) -> f64 {
    let r = |a: f64| 2.0 + a.cos();
    let flux1 = |a: f64| kappa(a, w2) * r(a) * d1(|t| u(t, w2), a);
    let flux2 = |b: f64| kappa(w1, b) / r(w1) * d1(|t| u(w1, t), b);
    -(d1(flux1, w1) + d1(flux2, w2)) / r(w1)
}

/// `kappa = 2 + sin w1 sin w2`, `u = sin w1 sin w2` on the torus grid.
pub fn torus_truth(pc: &PointCloud) -> Result<SyntheticTruth> {
    let p = match (pc.chart(), pc.params()) {
        (Chart::Torus, Some(p)) => p,
        _ => return Err(Error::Truth("torus truth needs an analytic torus cloud".into())),
    };
    let n = pc.n();
    let ws: Vec<(f64, f64)> = (0..n).map(|i| (p[(i, 0)], p[(i, 1)])).collect();
    let kappa_true = ws.iter().map(|(a, b)| 2.0 + a.sin() * b.sin()).collect();
    let u_true = ws.iter().map(|(a, b)| a.sin() * b.sin()).collect();
    let f: Vec<f64> = ws.iter().map(|&(a, b)| torus_rhs_closed(a, b)).collect();
    let fd: Vec<f64> = ws
        .iter()
        .map(|&(a, b)| torus_rhs_fd(|x, y| 2.0 + x.sin() * y.sin(), |x, y| x.sin() * y.sin(), a, b))
        .collect();
    let gap = check_rhs("torus", &f, &fd)?;
    Ok(SyntheticTruth {
        kappa_true,
        u_true,
        f,
        meta: TruthMeta {
            kind: "torus".into(),
            rhs_check: Some(gap),
        },
    })
}

/// `kappa = exp(cos(freq w))` on the ellipse with fixed forcing
/// `f = amplitude * sin w`. The solution has no closed form; it is computed
/// by a conservative finite-volume solve on a periodic parameter grid
/// `refine` times finer than the cloud, then restricted to the cloud.
pub fn exp_cos_truth(pc: &PointCloud, freq: f64, amplitude: f64, refine: usize) -> Result<SyntheticTruth> {
    let (a, w) = ellipse_params(pc)?;
    let n = pc.n();
    if refine == 0 {
        return Err(Error::Truth("refinement factor must be at least 1".into()));
    }
    let kappa = |x: f64| (freq * x).cos().exp();
    let fine_n = n * refine;
    let h = 2.0 * PI / fine_n as f64;
    let node = |i: usize| h * i as f64;
    let sqrt_g = |x: f64| ellipse_metric(a, x).sqrt();
    // face conductances kappa / (sqrt(g) h) at w_{i+1/2}
    let cond: Vec<f64> = (0..fine_n)
        .map(|i| {
            let mid = node(i) + 0.5 * h;
            kappa(mid) / (sqrt_g(mid) * h)
        })
        .collect();
    let b: Vec<f64> = (0..fine_n)
        .map(|i| sqrt_g(node(i)) * h * amplitude * node(i).sin())
        .collect();
    let b_mean = b.iter().sum::<f64>() / fine_n as f64;
    let mut stiff = Mat::<f64>::zeros(fine_n, fine_n);
    for i in 0..fine_n {
        let j = (i + 1) % fine_n;
        stiff[(i, i)] += cond[i];
        stiff[(j, j)] += cond[i];
        stiff[(i, j)] -= cond[i];
        stiff[(j, i)] -= cond[i];
    }
    let alpha = cond.iter().sum::<f64>() / (fine_n * fine_n) as f64;
    for j in 0..fine_n {
        for i in 0..fine_n {
            stiff[(i, j)] += alpha;
        }
    }
    let llt = stiff
        .llt(Side::Lower)
        .map_err(|e| Error::Truth(format!("fine-grid solve failed: {e:?}")))?;
    let mut rhs = Mat::from_fn(fine_n, 1, |i, _| b[i] - b_mean);
    llt.solve_in_place(&mut rhs);
    let weights: Vec<f64> = (0..fine_n).map(|i| sqrt_g(node(i))).collect();
    let shift = (0..fine_n).map(|i| rhs[(i, 0)] * weights[i]).sum::<f64>() / weights.iter().sum::<f64>();
    let u_true: Vec<f64> = (0..n).map(|i| rhs[(i * refine, 0)] - shift).collect();
    Ok(SyntheticTruth {
        kappa_true: w.iter().map(|&x| kappa(x)).collect(),
        u_true,
        f: w.iter().map(|x| amplitude * x.sin()).collect(),
        meta: TruthMeta {
            kind: format!("exp_cos_{freq}"),
            rhs_check: None,
        },
    })
}

/// Truth generated on a full cloud and restricted to a working subset.
#[derive(Debug, Clone)]
pub struct SubsetTruth {
    pub full: SyntheticTruth,
    pub working: SyntheticTruth,
    pub indices: Vec<usize>,
    pub centering: f64,
}

/// `theta ~ N(0, c(tau)(tau I + Delta_full)^{-s})`, `kappa = exp(theta)`,
/// `u = scale (phi_2 - c)` with `c` making `u` q-mean-zero on the subset,
/// and `f = L^kappa_{eps,full} u` on the full cloud.
#[allow(clippy::too_many_arguments)]
pub fn graph_prior_truth<R: Rng + ?Sized>(
    full: &PointCloud,
    laplacian: Arc<GraphLaplacian>,
    tau: f64,
    s: f64,
    u_scale: f64,
    epsilon_full: f64,
    working_geometry: &KernelGeometry,
    indices: &[usize],
    rng: &mut R,
) -> Result<SubsetTruth> {
    let n = full.n();
    if laplacian.n() != n {
        return Err(Error::Truth("graph Laplacian does not match the full cloud".into()));
    }
    if indices.len() != working_geometry.n() {
        return Err(Error::Truth("subset does not match the working geometry".into()));
    }
    let prior = GraphPrior::new(laplacian.clone(), tau, s)?;
    let theta = prior.sample(rng);
    let kappa_true: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
    let phi2: Vec<f64> = (0..n).map(|i| laplacian.eigvecs()[(i, 1)]).collect();
    let phi2_sub: Vec<f64> = indices.iter().map(|&i| phi2[i]).collect();
    let ones = vec![1.0; indices.len()];
    let centering = working_geometry.inner(&phi2_sub, &ones) / working_geometry.inner(&ones, &ones);
    let u_true: Vec<f64> = phi2.iter().map(|p| u_scale * (p - centering)).collect();
    let geometry = Arc::new(KernelGeometry::from_cloud(full, epsilon_full)?);
    let op = DiscreteOperator::new(geometry, &kappa_true)?;
    let f = op.apply(&u_true);
    let full_truth = SyntheticTruth {
        kappa_true,
        u_true,
        f,
        meta: TruthMeta {
            kind: "graph_prior".into(),
            rhs_check: None,
        },
    };
    Ok(SubsetTruth {
        working: full_truth.restrict(indices),
        full: full_truth,
        indices: indices.to_vec(),
        centering,
    })
}

/// `clean + sigma xi`, `xi` i.i.d. standard normal.
pub fn add_noise<R: Rng + ?Sized>(clean: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise level must be nonnegative, got {sigma}")));
    }
    Ok(clean
        .iter()
        .map(|c| {
            let xi: f64 = rng.sample(StandardNormal);
            c + sigma * xi
        })
        .collect())
}

/// `100 ||estimate - truth||_2 / ||truth||_2`.
pub fn relative_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    let denom = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::invalid("relative error against a zero-norm truth"));
    }
    let num = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * num / denom)
}

/// `100 sqrt(n) sigma / ||u||_2`.
pub fn relative_noise_level(sigma: f64, u_true: &[f64]) -> f64 {
    let norm = u_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    100.0 * (u_true.len() as f64).sqrt() * sigma / norm
}

/// Trapezoid-rule (periodic grid) integral of `values` against the chart
/// volume density, relative to the integral of `|values|`.
pub fn chart_weighted_mean(pc: &PointCloud, values: &[f64]) -> Option<f64> {
    let chart = pc.chart();
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in values.iter().enumerate() {
        let w = chart.volume_density(&pc.param(i)?)?;
        num += v * w;
        den += v.abs() * w;
    }
    Some(num / den)
}
