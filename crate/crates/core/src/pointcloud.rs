//! Point clouds: analytic generators for the ellipse and torus, a CSV
//! loader for external clouds, seeded subsampling, and dense squared
//! distances.

use std::f64::consts::PI;
use std::path::Path;

use faer::Mat;
use rand::Rng;

use crate::error::{Error, Result};

/// Chart that generated a cloud, when known analytically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chart {
    /// `(cos w, a sin w)` with semi-major length `a`.
    Ellipse { a: f64 },
    /// `((2 + cos w1) cos w2, (2 + cos w1) sin w2, sin w1)`.
    Torus,
    External,
}

impl Chart {
    /// Riemannian metric at the chart parameters, as a row-major `m x m`
    /// matrix. `None` for external clouds.
    pub fn metric(&self, params: &[f64]) -> Option<Vec<f64>> {
        match *self {
            Chart::Ellipse { a } => {
                let w = params[0];
                Some(vec![w.sin().powi(2) + a * a * w.cos().powi(2)])
            }
            Chart::Torus => {
                let r = 2.0 + params[0].cos();
                Some(vec![1.0, 0.0, 0.0, r * r])
            }
            Chart::External => None,
        }
    }

    /// Square root of the metric determinant (the volume density in the chart).
    pub fn volume_density(&self, params: &[f64]) -> Option<f64> {
        self.metric(params).map(|g| match g.len() {
            1 => g[0].sqrt(),
            _ => (g[0] * g[3] - g[1] * g[2]).sqrt(),
        })
    }

    pub fn embed(&self, params: &[f64]) -> Option<Vec<f64>> {
        match *self {
            Chart::Ellipse { a } => {
                let w = params[0];
                Some(vec![w.cos(), a * w.sin()])
            }
            Chart::Torus => {
                let (w1, w2) = (params[0], params[1]);
                let r = 2.0 + w1.cos();
                Some(vec![r * w2.cos(), r * w2.sin(), w1.sin()])
            }
            Chart::External => None,
        }
    }
}

/// `n` samples of an `m`-dimensional manifold embedded in `R^d`.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Mat<f64>,
    intrinsic_dim: usize,
    params: Option<Mat<f64>>,
    chart: Chart,
}

impl PointCloud {
    /// Wraps raw ambient coordinates (`n x d`) as an external cloud.
    pub fn from_points(points: Mat<f64>, intrinsic_dim: usize) -> Result<Self> {
        let (n, d) = (points.nrows(), points.ncols());
        if n < 2 {
            return Err(Error::invalid(format!("point cloud needs n >= 2, got {n}")));
        }
        if intrinsic_dim == 0 || intrinsic_dim > d {
            return Err(Error::invalid(format!(
                "intrinsic dimension {intrinsic_dim} must lie in [1, {d}]"
            )));
        }
        for i in 0..n {
            for j in 0..d {
                if !points[(i, j)].is_finite() {
                    return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
                }
            }
        }
        Ok(Self {
            points,
            intrinsic_dim,
            params: None,
            chart: Chart::External,
        })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn points(&self) -> &Mat<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        (0..self.ambient_dim()).map(|j| self.points[(i, j)]).collect()
    }

    pub fn params(&self) -> Option<&Mat<f64>> {
        self.params.as_ref()
    }

    /// Chart parameters of point `i`, if the cloud was generated analytically.
    pub fn param(&self, i: usize) -> Option<Vec<f64>> {
        self.params
            .as_ref()
            .map(|p| (0..p.ncols()).map(|j| p[(i, j)]).collect())
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    /// Axis-aligned bounding box as `(min, max)` per ambient coordinate.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.ambient_dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..self.n() {
            for j in 0..d {
                lo[j] = lo[j].min(self.points[(i, j)]);
                hi[j] = hi[j].max(self.points[(i, j)]);
            }
        }
        (lo, hi)
    }

    /// Keeps the rows in `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::invalid("selection needs at least two points"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::invalid(format!("index {bad} out of range for n={}", self.n())));
        }
        let d = self.ambient_dim();
        let points = Mat::from_fn(indices.len(), d, |r, c| self.points[(indices[r], c)]);
        let params = self
            .params
            .as_ref()
            .map(|p| Mat::from_fn(indices.len(), p.ncols(), |r, c| p[(indices[r], c)]));
        Ok(Self {
            points,
            intrinsic_dim: self.intrinsic_dim,
            params,
            chart: self.chart,
        })
    }

    /// Largest deviation of any point from the analytic implicit equation of
    /// its chart; `None` for external clouds.
    pub fn embedding_residual(&self) -> Option<f64> {
        let res = |i: usize| -> f64 {
            match self.chart {
                Chart::Ellipse { a } => {
                    let (x, y) = (self.points[(i, 0)], self.points[(i, 1)]);
                    (x * x + (y / a) * (y / a) - 1.0).abs()
                }
                Chart::Torus => {
                    let (x, y, z) = (self.points[(i, 0)], self.points[(i, 1)], self.points[(i, 2)]);
                    let rho = (x * x + y * y).sqrt() - 2.0;
                    (rho * rho + z * z - 1.0).abs()
                }
                Chart::External => 0.0,
            }
        };
        match self.chart {
            Chart::External => None,
            _ => Some((0..self.n()).map(res).fold(0.0, f64::max)),
        }
    }
}

/// Uniform half-open grid `w_i = 2 pi i / n` mapped onto the ellipse
/// `(cos w, a sin w)`.
pub fn generate_ellipse(n: usize, a: f64) -> Result<PointCloud> {
    if n < 2 {
        return Err(Error::invalid(format!("ellipse needs n >= 2, got {n}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("semi-major length must be positive, got {a}")));
    }
    let chart = Chart::Ellipse { a };
    let params = Mat::from_fn(n, 1, |i, _| 2.0 * PI * i as f64 / n as f64);
    let points = Mat::from_fn(n, 2, |i, j| {
        let w = params[(i, 0)];
        if j == 0 {
            w.cos()
        } else {
            a * w.sin()
        }
    });
    Ok(PointCloud {
        points,
        intrinsic_dim: 1,
        params: Some(params),
        chart,
    })
}

/// Tensor grid of `n1 x n2` angles on `[0, 2pi)^2`, row `i = i1 * n2 + i2`.
pub fn generate_torus(n1: usize, n2: usize) -> Result<PointCloud> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::invalid(format!("torus grid needs n1, n2 >= 2, got {n1}x{n2}")));
    }
    let n = n1 * n2;
    let params = Mat::from_fn(n, 2, |i, j| {
        if j == 0 {
            2.0 * PI * (i / n2) as f64 / n1 as f64
        } else {
            2.0 * PI * (i % n2) as f64 / n2 as f64
        }
    });
    let chart = Chart::Torus;
    let mut points = Mat::zeros(n, 3);
    for i in 0..n {
        let x = chart.embed(&[params[(i, 0)], params[(i, 1)]]).expect("analytic chart");
        for (j, v) in x.into_iter().enumerate() {
            points[(i, j)] = v;
        }
    }
    Ok(PointCloud {
        points,
        intrinsic_dim: 2,
        params: Some(params),
        chart,
    })
}

/// Random samples of a closed, lumpy, elongated surface homeomorphic to
/// the sphere. Directions are drawn uniformly on the unit sphere and pushed
/// out to a smooth radial profile, so the sampling density on the surface
/// is non-uniform.
pub fn generate_lumpy_surface<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<PointCloud> {
    if n < 2 {
        return Err(Error::invalid(format!("surface needs n >= 2, got {n}")));
    }
    let mut points = Mat::zeros(n, 3);
    for i in 0..n {
        let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
        let phi = 2.0 * PI * rng.random::<f64>();
        let s = (1.0 - z * z).max(0.0).sqrt();
        let (x, y) = (s * phi.cos(), s * phi.sin());
        let r = 1.0
            + 0.18 * (3.0 * phi).cos() * s * s
            + 0.12 * (2.0 * z * z - 1.0)
            + 0.08 * (5.0 * phi + 1.0).sin() * z;
        points[(i, 0)] = 1.6 * r * x;
        points[(i, 1)] = 0.9 * r * y;
        points[(i, 2)] = 1.0 * r * z;
    }
    PointCloud::from_points(points, 2)
}

/// Reads one point per line, `d` numbers separated by commas and/or
/// whitespace. Lines starting with `#` are ignored, and a first line that
/// does not parse as numbers is treated as a header.
pub fn load_pointcloud(path: &Path, d: usize, m: usize) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen_data = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|s| s.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if !seen_data => {
                // header row
                seen_data = true;
                continue;
            }
            Err(e) => return Err(parse_err(lineno + 1, format!("malformed number: {e}"))),
        };
        seen_data = true;
        if values.len() != d {
            return Err(parse_err(
                lineno + 1,
                format!("expected {d} fields, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno + 1, "non-finite value".into()));
        }
        rows.push(values);
    }
    if rows.len() < 2 {
        return Err(parse_err(0, format!("need at least 2 points, found {}", rows.len())));
    }
    let points = Mat::from_fn(rows.len(), d, |i, j| rows[i][j]);
    PointCloud::from_points(points, m)
}

/// Writes a cloud in the format accepted by [`load_pointcloud`].
pub fn write_pointcloud<W: std::io::Write>(pc: &PointCloud, mut out: W) -> std::io::Result<()> {
    for i in 0..pc.n() {
        let row: Vec<String> = pc.point(i).iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Uniform selection of `m_out` points without replacement; indices are
/// returned sorted.
pub fn subsample<R: Rng + ?Sized>(
    pc: &PointCloud,
    m_out: usize,
    rng: &mut R,
) -> Result<(PointCloud, Vec<usize>)> {
    if m_out < 2 || m_out > pc.n() {
        return Err(Error::invalid(format!(
            "subsample size {m_out} must lie in [2, {}]",
            pc.n()
        )));
    }
    let mut idx = rand::seq::index::sample(rng, pc.n(), m_out).into_vec();
    idx.sort_unstable();
    Ok((pc.select(&idx)?, idx))
}

/// Dense `n x n` matrix of squared ambient distances.
pub fn pairwise_sq_dists(pc: &PointCloud) -> Mat<f64> {
    let n = pc.n();
    let d = pc.ambient_dim();
    let x = pc.points();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let t = x[(i, k)] - x[(j, k)];
                s += t * t;
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}
