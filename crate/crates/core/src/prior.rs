//! Matérn-type Gaussian priors on point-cloud functions built from the
//! self-tuning graph Laplacian.
//!
//! The prior is `N(0, c(tau) (tau I + Delta)^{-s})`, with `c(tau)` chosen so
//! the average per-node variance is one. The spectrum of `Delta` is computed
//! once; every `(tau, s)` then only rescales eigenvalues.

use std::sync::Arc;

use faer::{Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pointcloud::{pairwise_sq_dists, PointCloud};

/// `Delta = I - A^{-1/2} S A^{-1/2}` and its eigendecomposition.
#[derive(Debug, Clone)]
pub struct GraphLaplacian {
    delta: Mat<f64>,
    eigvals: Vec<f64>,
    eigvecs: Mat<f64>,
    k: usize,
}

impl GraphLaplacian {
    /// Similarities `S_ij = exp(-|x_i - x_j|^2 / (2 d_i d_j))`, where `d_i` is
    /// the distance from `x_i` to its `k`-th nearest neighbour (excluding itself).
    pub fn self_tuning(pc: &PointCloud, k: usize) -> Result<Self> {
        let n = pc.n();
        if k == 0 || k >= n {
            return Err(Error::invalid(format!("neighbour count k={k} must lie in [1, {}]", n - 1)));
        }
        let d2 = pairwise_sq_dists(pc);
        let mut scale = vec![0.0; n];
        let mut row = Vec::with_capacity(n - 1);
        for (i, si) in scale.iter_mut().enumerate() {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| d2[(i, j)]));
            let (_, kth, _) = row.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            if *kth <= 0.0 {
                return Err(Error::DuplicatePoint { index: i, k });
            }
            *si = kth.sqrt();
        }
        let s = Mat::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                (-d2[(i, j)] / (2.0 * scale[i] * scale[j])).exp()
            }
        });
        let a_inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / (0..n).map(|j| s[(i, j)]).sum::<f64>().sqrt())
            .collect();
        let delta = Mat::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - a_inv_sqrt[i] * s[(i, j)] * a_inv_sqrt[j]
        });
        let mut gl = Self::from_matrix(delta)?;
        gl.k = k;
        Ok(gl)
    }

    /// Eigendecomposes an arbitrary symmetric PSD matrix.
    pub fn from_matrix(delta: Mat<f64>) -> Result<Self> {
        let n = delta.nrows();
        if delta.ncols() != n {
            return Err(Error::invalid("graph Laplacian must be square"));
        }
        let evd = delta
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Solver(format!("graph Laplacian eigendecomposition failed: {e:?}")))?;
        let lam = evd.S().column_vector();
        let eigvals: Vec<f64> = (0..n).map(|i| lam[i].max(0.0)).collect();
        let eigvecs = evd.U().to_owned();
        Ok(Self {
            delta,
            eigvals,
            eigvecs,
            k: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.delta.nrows()
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.delta
    }

    /// Nondecreasing, clamped at zero.
    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    /// Orthonormal eigenvectors as columns.
    pub fn eigvecs(&self) -> &Mat<f64> {
        &self.eigvecs
    }

    pub fn neighbours(&self) -> usize {
        self.k
    }

    /// `<theta, phi_i>` for every eigenvector.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|k| (0..n).map(|i| self.eigvecs[(i, k)] * theta[i]).sum())
            .collect()
    }

    /// `sum_i coeffs_i phi_i`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += c * self.eigvecs[(i, k)];
            }
        }
        out
    }
}

/// Covariance eigenvalues `c(tau) (tau + lambda_i)^{-s}` and `c(tau)`.
pub fn covariance_spectrum(eigvals: &[f64], tau: f64, s: f64) -> Result<(Vec<f64>, f64)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::invalid(format!("s must be positive, got {s}")));
    }
    // (tau + lambda)^{-s} relative to its largest entry, to avoid overflow at tiny tau
    let base = tau + eigvals.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let raw: Vec<f64> = eigvals
        .iter()
        .map(|&l| ((tau + l.max(0.0)) / base).powf(-s))
        .collect();
    let n = eigvals.len() as f64;
    let rel_c = n / raw.iter().sum::<f64>();
    let cov: Vec<f64> = raw.iter().map(|r| rel_c * r).collect();
    let c = rel_c * base.powf(s);
    Ok((cov, c))
}

#[derive(Debug, Clone)]
pub struct GraphPrior {
    laplacian: Arc<GraphLaplacian>,
    tau: f64,
    s: f64,
    c: f64,
    cov_eigvals: Vec<f64>,
}

impl GraphPrior {
    pub fn new(laplacian: Arc<GraphLaplacian>, tau: f64, s: f64) -> Result<Self> {
        let (cov_eigvals, c) = covariance_spectrum(laplacian.eigvals(), tau, s)?;
        Ok(Self {
            laplacian,
            tau,
            s,
            c,
            cov_eigvals,
        })
    }

    /// Same Laplacian and smoothness, new `tau`.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.laplacian.clone(), tau, self.s)
    }

    pub fn laplacian(&self) -> &Arc<GraphLaplacian> {
        &self.laplacian
    }

    pub fn n(&self) -> usize {
        self.laplacian.n()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn smoothness(&self) -> f64 {
        self.s
    }

    /// Normalizing constant `c(tau)`.
    pub fn normalizer(&self) -> f64 {
        self.c
    }

    pub fn cov_eigvals(&self) -> &[f64] {
        &self.cov_eigvals
    }

    /// Draw from the prior given the standard-normal coefficients `xi`.
    pub fn sample_from(&self, xi: &[f64]) -> Vec<f64> {
        let coeffs: Vec<f64> = xi
            .iter()
            .zip(&self.cov_eigvals)
            .map(|(x, l)| x * l.sqrt())
            .collect();
        self.laplacian.synthesize(&coeffs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_from(&xi)
    }

    /// `H = sum_i log lambda_i + <theta, phi_i>^2 / lambda_i` with
    /// `lambda_i` the covariance eigenvalues, from precomputed projections.
    pub fn h_from_coeffs(&self, coeffs: &[f64]) -> f64 {
        self.cov_eigvals
            .iter()
            .zip(coeffs)
            .map(|(l, c)| l.ln() + c * c / l)
            .sum()
    }

    /// Projections `<theta, phi_i>` and `H(tau)`.
    pub fn logdensity_terms(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        if theta.len() != self.n() {
            return Err(Error::invalid(format!(
                "theta has length {}, prior has {}",
                theta.len(),
                self.n()
            )));
        }
        if let Some(&bad) = self.cov_eigvals.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::Solver(format!("covariance eigenvalue {bad} is not positive")));
        }
        let coeffs = self.laplacian.project(theta);
        let h = self.h_from_coeffs(&coeffs);
        if !h.is_finite() {
            return Err(Error::Solver("H(tau) is not finite".into()));
        }
        Ok((coeffs, h))
    }
}
