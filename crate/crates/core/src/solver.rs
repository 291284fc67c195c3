//! Mean-zero solves of `L^kappa_{eps,n} u = f` and observation maps.
//!
//! All three routes act on the q-mean-zero part of `f` (the range of `L`),
//! and return the solution shifted so that `<u, 1>_q = 0`:
//!
//! * [`SolverKind::Pinv`]: Moore-Penrose pseudoinverse of `L` through its SVD.
//! * [`SolverKind::Eig`]: expansion in q-orthonormal eigenvectors of `L`.
//! * [`SolverKind::Cholesky`]: `L = diag(Q) M` with `M` symmetric PSD and
//!   `M 1 = 0`, so `(M + alpha 1 1^T) u = f / Q` is SPD. This is the route
//!   used inside samplers, where a solve is needed at every step.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{matvec, sqrt_kappa, weighted_inner, DiscreteOperator, KernelGeometry};

/// Relative cutoff for singular values and eigenvalues treated as zero.
pub const RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Pinv,
    Eig,
    Cholesky,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pinv" => Ok(Self::Pinv),
            "eig" => Ok(Self::Eig),
            "cholesky" => Ok(Self::Cholesky),
            other => Err(Error::invalid(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub u: Vec<f64>,
    /// `||L u - P f||_2`, with `P f` the q-mean-zero part of `f`.
    pub residual: f64,
    /// `|<u, 1>_q|` after the final shift.
    pub meanzero_defect: f64,
    /// Euclidean norm of the constant component removed from `f`.
    pub discarded: f64,
    /// Modes below the cutoff (always at least the constant mode for `Eig`).
    pub skipped_modes: usize,
}

/// Splits `f` into its q-mean-zero part and the coefficient of `1`.
pub fn project_meanzero(f: &[f64], q: &[f64]) -> (Vec<f64>, f64) {
    let ones = vec![1.0; f.len()];
    let c = weighted_inner(f, &ones, q) / weighted_inner(&ones, &ones, q);
    (f.iter().map(|v| v - c).collect(), c)
}

fn shift_meanzero(u: &mut [f64], q: &[f64]) -> f64 {
    let (_, c) = project_meanzero(u, q);
    for v in u.iter_mut() {
        *v -= c;
    }
    let ones = vec![1.0; u.len()];
    weighted_inner(u, &ones, q).abs()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_rhs(n: usize, f: &[f64]) -> Result<()> {
    if f.len() != n {
        return Err(Error::invalid(format!("rhs has length {}, expected {n}", f.len())));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("right-hand side is not finite".into()));
    }
    Ok(())
}

fn finish(op_apply: impl Fn(&[f64]) -> Vec<f64>, mut u: Vec<f64>, fp: &[f64], c: f64, q: &[f64], skipped: usize) -> Result<ForwardResult> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("solution is not finite".into()));
    }
    let meanzero_defect = shift_meanzero(&mut u, q);
    let lu = op_apply(&u);
    let residual = norm(&lu.iter().zip(fp).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(ForwardResult {
        u,
        residual,
        meanzero_defect,
        discarded: c.abs() * (fp.len() as f64).sqrt(),
        skipped_modes: skipped,
    })
}

/// Minimum-norm least-squares solve through the SVD of `L`.
pub fn solve_pinv(op: &DiscreteOperator, f: &[f64]) -> Result<ForwardResult> {
    let n = op.n();
    check_rhs(n, f)?;
    let q = op.density();
    let (fp, c) = project_meanzero(f, q);
    let svd = op
        .matrix()
        .svd()
        .map_err(|e| Error::Solver(format!("SVD failed: {e:?}")))?;
    let (u_mat, v_mat) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let smax = (0..n).map(|i| s[i]).fold(0.0, f64::max);
    let mut u = vec![0.0; n];
    let mut skipped = 0;
    for k in 0..n {
        if s[k] <= RTOL * smax {
            skipped += 1;
            continue;
        }
        let coeff: f64 = (0..n).map(|i| u_mat[(i, k)] * fp[i]).sum::<f64>() / s[k];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui += coeff * v_mat[(i, k)];
        }
    }
    finish(|x| op.apply(x), u, &fp, c, q, skipped)
}

/// Expansion in the q-orthonormal eigenbasis of `L`, computed from the
/// symmetric conjugate `diag(Q)^{-1/2} L diag(Q)^{1/2}`.
pub fn solve_eig(op: &DiscreteOperator, f: &[f64]) -> Result<ForwardResult> {
    let n = op.n();
    check_rhs(n, f)?;
    let q = op.density();
    let (fp, c) = project_meanzero(f, q);
    let sq: Vec<f64> = op.geometry().row_sums().iter().map(|v| v.sqrt()).collect();
    let l = op.matrix();
    let mut sym = Mat::from_fn(n, n, |i, j| l[(i, j)] * sq[j] / sq[i]);
    // symmetrize away rounding
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = avg;
            sym[(j, i)] = avg;
        }
    }
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Solver(format!("eigendecomposition failed: {e:?}")))?;
    let z = evd.U();
    let lam = evd.S().column_vector();
    let lmax = (0..n).map(|i| lam[i].abs()).fold(0.0, f64::max);
    let g: Vec<f64> = fp.iter().zip(&sq).map(|(a, b)| a / b).collect();
    let mut w = vec![0.0; n];
    let mut skipped = 0;
    for k in 0..n {
        if lam[k] <= RTOL * lmax {
            skipped += 1;
            continue;
        }
        let coeff: f64 = (0..n).map(|i| z[(i, k)] * g[i]).sum::<f64>() / lam[k];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi += coeff * z[(i, k)];
        }
    }
    let u: Vec<f64> = w.iter().zip(&sq).map(|(a, b)| a * b).collect();
    finish(|x| op.apply(x), u, &fp, c, q, skipped)
}

/// Symmetric weights `A_ij = H_ij / (eps Q_i Q_j)` (zero diagonal); with
/// `s = sqrt(kappa)` the matrix `M = diag(A_s 1) - A_s`, `A_s = diag(s) A diag(s)`,
/// satisfies `L = diag(Q) M`.
#[derive(Debug, Clone)]
pub struct SymmetricKernel {
    geometry: Arc<KernelGeometry>,
    weights: Mat<f64>,
}

impl SymmetricKernel {
    pub fn new(geometry: Arc<KernelGeometry>) -> Self {
        let n = geometry.n();
        let h = geometry.kernel();
        let q = geometry.row_sums();
        let eps = geometry.epsilon();
        let weights = Mat::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                h[(i, j)] / (eps * q[i] * q[j])
            }
        });
        Self { geometry, weights }
    }

    pub fn geometry(&self) -> &KernelGeometry {
        &self.geometry
    }

    fn stiffness(&self, s: &[f64]) -> Mat<f64> {
        let n = s.len();
        let mut m = Mat::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                m[(i, j)] = -self.weights[(i, j)] * s[i] * s[j];
            }
        }
        for i in 0..n {
            let d: f64 = (0..n).map(|j| m[(i, j)]).sum();
            m[(i, i)] = -d;
        }
        m
    }

    /// Solves `L^kappa u = f` by a deflated Cholesky factorization.
    pub fn solve(&self, kappa: &[f64], f: &[f64]) -> Result<ForwardResult> {
        let n = self.geometry.n();
        check_rhs(n, f)?;
        if kappa.len() != n {
            return Err(Error::invalid(format!("kappa has length {}, expected {n}", kappa.len())));
        }
        let s = sqrt_kappa(kappa)?;
        let q = self.geometry.density();
        let qsum = self.geometry.row_sums();
        let (fp, c) = project_meanzero(f, q);
        let mut m = self.stiffness(&s);
        let mean_diag = (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64;
        let alpha = mean_diag / n as f64;
        let mut deflated = m.clone();
        for j in 0..n {
            for i in 0..n {
                deflated[(i, j)] += alpha;
            }
        }
        let llt = deflated
            .llt(Side::Lower)
            .map_err(|e| Error::Solver(format!("Cholesky failed: {e:?}")))?;
        let mut rhs = Mat::from_fn(n, 1, |i, _| fp[i] / qsum[i]);
        llt.solve_in_place(&mut rhs);
        let u: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
        // L u = diag(Q) M u; M is no longer needed after this
        for j in 0..n {
            for i in 0..n {
                m[(i, j)] *= qsum[i];
            }
        }
        finish(|x| matvec(&m, x), u, &fp, c, q, 1)
    }
}

/// Dispatches to the requested route.
pub fn solve(op: &DiscreteOperator, f: &[f64], kind: SolverKind) -> Result<ForwardResult> {
    match kind {
        SolverKind::Pinv => solve_pinv(op, f),
        SolverKind::Eig => solve_eig(op, f),
        SolverKind::Cholesky => {
            SymmetricKernel::new(Arc::new(op.geometry().clone())).solve(op.kappa(), f)
        }
    }
}

/// Linear functionals `u -> (l_1(u), ..., l_J(u))`.
#[derive(Debug, Clone)]
pub enum ObservationMap {
    /// `u[i_1], ..., u[i_J]`.
    Pointwise(Vec<usize>),
    /// `(1/n) sum_k K(x_j, x_k) u_k / q_k` for each row `K(x_j, .)`.
    Smoothed(Mat<f64>),
}

impl ObservationMap {
    pub fn pointwise(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::invalid(format!("observation index {i} out of range for n={n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("observation index {i} repeated")));
            }
        }
        Ok(Self::Pointwise(indices))
    }

    pub fn smoothed(weights: Mat<f64>) -> Result<Self> {
        for j in 0..weights.nrows() {
            let row = (0..weights.ncols()).map(|k| weights[(j, k)]);
            if row.clone().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("smoothing row {j} is not finite")));
            }
            if row.clone().all(|v| v == 0.0) {
                return Err(Error::invalid(format!("smoothing row {j} is identically zero")));
            }
        }
        Ok(Self::Smoothed(weights))
    }

    /// `count` evenly strided sites out of `n` (all of them when `count == n`).
    pub fn strided(count: usize, n: usize) -> Result<Self> {
        if count == 0 || count > n {
            return Err(Error::invalid(format!("observation count {count} must lie in [1, {n}]")));
        }
        let stride = n / count;
        let idx = (0..count).map(|j| j * stride).collect();
        Self::pointwise(idx, n)
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Pointwise(idx) => idx.len(),
            Self::Smoothed(w) => w.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observe(&self, u: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Pointwise(idx) => idx
                .iter()
                .map(|&i| {
                    u.get(i).copied().ok_or_else(|| {
                        Error::invalid(format!("observation index {i} out of range for n={}", u.len()))
                    })
                })
                .collect(),
            Self::Smoothed(w) => {
                if w.ncols() != u.len() || q.len() != u.len() {
                    return Err(Error::invalid("smoothing weights do not match the cloud size"));
                }
                let n = u.len() as f64;
                Ok((0..w.nrows())
                    .map(|j| {
                        (0..u.len()).map(|k| w[(j, k)] * u[k] / q[k]).sum::<f64>() / n
                    })
                    .collect())
            }
        }
    }
}

/// `theta -> D_n(F_{eps,n}(theta))` for a fixed cloud, bandwidth,
/// right-hand side and observation map.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    geometry: Arc<KernelGeometry>,
    symmetric: Option<SymmetricKernel>,
    rhs: Vec<f64>,
    obs: ObservationMap,
    solver: SolverKind,
}

impl ForwardModel {
    pub fn new(
        geometry: Arc<KernelGeometry>,
        rhs: Vec<f64>,
        obs: ObservationMap,
        solver: SolverKind,
    ) -> Result<Self> {
        check_rhs(geometry.n(), &rhs)?;
        if let ObservationMap::Pointwise(idx) = &obs {
            if let Some(&bad) = idx.iter().find(|&&i| i >= geometry.n()) {
                return Err(Error::invalid(format!("observation index {bad} out of range")));
            }
        }
        let symmetric = (solver == SolverKind::Cholesky).then(|| SymmetricKernel::new(geometry.clone()));
        Ok(Self {
            geometry,
            symmetric,
            rhs,
            obs,
            solver,
        })
    }

    pub fn geometry(&self) -> &KernelGeometry {
        &self.geometry
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn observation_map(&self) -> &ObservationMap {
        &self.obs
    }

    pub fn solver(&self) -> SolverKind {
        self.solver
    }

    pub fn n(&self) -> usize {
        self.geometry.n()
    }

    pub fn solve_kappa(&self, kappa: &[f64]) -> Result<ForwardResult> {
        match &self.symmetric {
            Some(sym) => sym.solve(kappa, &self.rhs),
            None => {
                let op = DiscreteOperator::new(self.geometry.clone(), kappa)?;
                solve(&op, &self.rhs, self.solver)
            }
        }
    }

    /// Solution `u` for log-diffusion `theta`.
    pub fn solve_theta(&self, theta: &[f64]) -> Result<ForwardResult> {
        self.solve_kappa(&kappa_from_theta(theta)?)
    }

    /// Observed solution for log-diffusion `theta`.
    pub fn forward(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let res = self.solve_theta(theta)?;
        self.obs.observe(&res.u, self.geometry.density())
    }
}

/// `exp(theta)` elementwise, rejecting `|theta_i| > 300`.
pub fn kappa_from_theta(theta: &[f64]) -> Result<Vec<f64>> {
    theta
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.is_finite() && value.abs() <= 300.0 {
                Ok(value.exp())
            } else {
                Err(Error::ThetaOverflow { index, value })
            }
        })
        .collect()
}

/// One-shot forward map: assemble with `kappa = exp(theta)`, solve, observe.
pub fn forward_map(
    theta: &[f64],
    pc: &crate::pointcloud::PointCloud,
    epsilon: f64,
    f: &[f64],
    obs: &ObservationMap,
    solver: SolverKind,
) -> Result<Vec<f64>> {
    let geometry = Arc::new(KernelGeometry::from_cloud(pc, epsilon)?);
    ForwardModel::new(geometry, f.to_vec(), obs.clone(), solver)?.forward(theta)
}
