//! Kernel discretization of `-div(kappa grad u)` on a point cloud.
//!
//! With `H_ij = exp(-|x_i - x_j|^2 / 4 eps)` and `Q_i = sum_j H_ij`, the
//! operator is `L = (D - W) / eps` where `W_ij = H_ij sqrt(kappa_i kappa_j) / Q_j`
//! and `D = diag(W 1)`. `L` is self-adjoint and positive semi-definite
//! under `<u, v>_q = (1/n) sum_i u_i v_i / q_i`, and annihilates constants.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::Mat;

use crate::error::{Error, Result};
use crate::pointcloud::{pairwise_sq_dists, PointCloud};

/// `H_ij = exp(-sq_dists_ij / (4 epsilon))`.
pub fn kernel_matrix(sq_dists: &Mat<f64>, epsilon: f64) -> Result<Mat<f64>> {
    check_epsilon(epsilon)?;
    let n = sq_dists.nrows();
    let scale = -1.0 / (4.0 * epsilon);
    let mut h = Mat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            h[(i, j)] = (sq_dists[(i, j)] * scale).exp();
        }
    }
    Ok(h)
}

/// Kernel density estimate `q_j = sum_k H_jk / (sqrt(4 pi) n eps^{m/2})`.
pub fn density_estimate(h: &Mat<f64>, epsilon: f64, intrinsic_dim: usize) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    let n = h.nrows();
    let norm = density_normalizer(n, epsilon, intrinsic_dim);
    Ok(row_sums(h).into_iter().map(|s| s / norm).collect())
}

fn density_normalizer(n: usize, epsilon: f64, m: usize) -> f64 {
    (4.0 * PI).sqrt() * n as f64 * epsilon.powf(m as f64 / 2.0)
}

fn row_sums(a: &Mat<f64>) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).sum())
        .collect()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("bandwidth must be positive, got {epsilon}")))
    }
}

/// `(1/n) sum_i u_i v_i / q_i`.
pub fn weighted_inner(u: &[f64], v: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    debug_assert_eq!(u.len(), q.len());
    let n = u.len() as f64;
    u.iter()
        .zip(v)
        .zip(q)
        .map(|((a, b), w)| a * b / w)
        .sum::<f64>()
        / n
}

/// The `kappa`-independent part of the discretization: kernel matrix, its
/// row sums and the density estimate at a fixed bandwidth.
#[derive(Debug, Clone)]
pub struct KernelGeometry {
    epsilon: f64,
    intrinsic_dim: usize,
    h: Mat<f64>,
    row_sums: Vec<f64>,
    density: Vec<f64>,
}

impl KernelGeometry {
    pub fn new(sq_dists: &Mat<f64>, epsilon: f64, intrinsic_dim: usize) -> Result<Self> {
        let h = kernel_matrix(sq_dists, epsilon)?;
        let row_sums = row_sums(&h);
        let norm = density_normalizer(h.nrows(), epsilon, intrinsic_dim);
        let density = row_sums.iter().map(|s| s / norm).collect();
        Ok(Self {
            epsilon,
            intrinsic_dim,
            h,
            row_sums,
            density,
        })
    }

    pub fn from_cloud(pc: &PointCloud, epsilon: f64) -> Result<Self> {
        Self::new(&pairwise_sq_dists(pc), epsilon, pc.intrinsic_dim())
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn kernel(&self) -> &Mat<f64> {
        &self.h
    }

    /// `Q`, the row sums of the kernel matrix.
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// `q_eps` at every point.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// `<u, v>_q` with this geometry's density.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        weighted_inner(u, v, &self.density)
    }
}

/// Validates `kappa` and returns `sqrt(kappa)`.
pub(crate) fn sqrt_kappa(kappa: &[f64]) -> Result<Vec<f64>> {
    kappa
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(value.sqrt())
            } else {
                Err(Error::NonPositiveKappa { index, value })
            }
        })
        .collect()
}

/// Assembled `L^kappa_{eps,n}` together with its intermediate matrices.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    geometry: Arc<KernelGeometry>,
    kappa: Vec<f64>,
    w: Mat<f64>,
    degree: Vec<f64>,
    l: Mat<f64>,
}

impl DiscreteOperator {
    pub fn new(geometry: Arc<KernelGeometry>, kappa: &[f64]) -> Result<Self> {
        let n = geometry.n();
        if kappa.len() != n {
            return Err(Error::invalid(format!(
                "kappa has length {}, cloud has {n} points",
                kappa.len()
            )));
        }
        let s = sqrt_kappa(kappa)?;
        let h = geometry.kernel();
        let q = geometry.row_sums();
        let mut w = Mat::zeros(n, n);
        for j in 0..n {
            let cj = s[j] / q[j];
            for i in 0..n {
                w[(i, j)] = h[(i, j)] * s[i] * cj;
            }
        }
        let degree = row_sums(&w);
        let inv_eps = 1.0 / geometry.epsilon();
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                l[(i, j)] = -w[(i, j)] * inv_eps;
            }
        }
        for i in 0..n {
            l[(i, i)] += degree[i] * inv_eps;
        }
        Ok(Self {
            geometry,
            kappa: kappa.to_vec(),
            w,
            degree,
            l,
        })
    }

    pub fn geometry(&self) -> &KernelGeometry {
        &self.geometry
    }

    pub fn n(&self) -> usize {
        self.geometry.n()
    }

    pub fn epsilon(&self) -> f64 {
        self.geometry.epsilon()
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn weights(&self) -> &Mat<f64> {
        &self.w
    }

    /// Row sums of `W` (the diagonal of `D`).
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.l
    }

    pub fn density(&self) -> &[f64] {
        self.geometry.density()
    }

    /// `L u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        matvec(&self.l, u)
    }
}

pub(crate) fn matvec(a: &Mat<f64>, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += a[(i, j)] * uj;
        }
    }
    out
}

/// Builds the operator for `kappa` on `pc` at bandwidth `epsilon`.
pub fn assemble_operator(pc: &PointCloud, kappa: &[f64], epsilon: f64) -> Result<DiscreteOperator> {
    let geometry = Arc::new(KernelGeometry::from_cloud(pc, epsilon)?);
    DiscreteOperator::new(geometry, kappa)
}

/// One row of the bandwidth diagnostic table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthSample {
    pub epsilon: f64,
    pub total: f64,
    /// `d log T / d log eps`.
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct BandwidthDiagnostic {
    pub samples: Vec<BandwidthSample>,
    /// Grid point of steepest log-log slope.
    pub suggested: f64,
}

/// Relative shortfall from `m/2` still counted as the linear regime.
pub const LINEAR_REGIME_TOL: f64 = 0.01;

impl BandwidthDiagnostic {
    /// Smallest grid bandwidth whose slope reaches `m/2` (within
    /// [`LINEAR_REGIME_TOL`]), the small-bandwidth end of the regime where
    /// `T` grows like `eps^{m/2}`. Falls back to `suggested` when the slope
    /// never gets there.
    pub fn linear_onset(&self, intrinsic_dim: usize) -> f64 {
        let target = 0.5 * intrinsic_dim as f64 * (1.0 - LINEAR_REGIME_TOL);
        self.samples
            .iter()
            .find(|s| s.slope >= target)
            .map_or(self.suggested, |s| s.epsilon)
    }
}

/// `T(eps) = sum_{i,j} exp(-|x_i - x_j|^2 / 4 eps)` over a grid, with its
/// log-log slope by centered differences (one-sided at the ends).
pub fn bandwidth_diagnostic(sq_dists: &Mat<f64>, eps_grid: &[f64]) -> Result<BandwidthDiagnostic> {
    if eps_grid.is_empty() {
        return Err(Error::invalid("bandwidth grid is empty"));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid("bandwidth grid must be positive"));
    }
    if eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("bandwidth grid must be strictly increasing"));
    }
    let n = sq_dists.nrows();
    let totals: Vec<f64> = eps_grid
        .iter()
        .map(|&eps| {
            let scale = -1.0 / (4.0 * eps);
            let mut t = 0.0;
            for j in 0..n {
                for i in 0..n {
                    t += (sq_dists[(i, j)] * scale).exp();
                }
            }
            t
        })
        .collect();
    let log_e: Vec<f64> = eps_grid.iter().map(|e| e.ln()).collect();
    let log_t: Vec<f64> = totals.iter().map(|t| t.ln()).collect();
    let k = eps_grid.len();
    let slope = |i: usize| -> f64 {
        if k == 1 {
            return 0.0;
        }
        let (a, b) = match i {
            0 => (0, 1),
            _ if i == k - 1 => (k - 2, k - 1),
            _ => (i - 1, i + 1),
        };
        (log_t[b] - log_t[a]) / (log_e[b] - log_e[a])
    };
    let samples: Vec<BandwidthSample> = (0..k)
        .map(|i| BandwidthSample {
            epsilon: eps_grid[i],
            total: totals[i],
            slope: slope(i),
        })
        .collect();
    let best = samples
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if s.slope > samples[best].slope { i } else { best });
    Ok(BandwidthDiagnostic {
        suggested: samples[best].epsilon,
        samples,
    })
}

/// `count` log-spaced bandwidths from `0.05` times the median squared
/// nearest-neighbour distance up to `10` times the median nonzero squared
/// distance.
pub fn default_eps_grid(sq_dists: &Mat<f64>, count: usize) -> Vec<f64> {
    let n = sq_dists.nrows();
    let mut nonzero: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    let mut nearest: Vec<f64> = Vec::with_capacity(n);
    for j in 0..n {
        let mut best = f64::INFINITY;
        for i in 0..n {
            let d = sq_dists[(i, j)];
            if d > 0.0 {
                best = best.min(d);
                if i < j {
                    nonzero.push(d);
                }
            }
        }
        if best.is_finite() {
            nearest.push(best);
        }
    }
    if nonzero.is_empty() {
        return vec![1.0];
    }
    let hi = 10.0 * median(&mut nonzero);
    let lo = (0.05 * median(&mut nearest)).min(hi * 1e-2);
    log_grid(lo, hi, count)
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    *values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}
