//! Voronoi geometry of the training set and memorization metrics.
//!
//! All queries are brute force, O(N·d) per point. That is the reference
//! semantics and is fast enough for N up to about 10⁴.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::schedule::Schedule;

/// Default tie tolerance, in squared-distance units.
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-10;

/// Default fraction of trailing nodes used for rate fits.
pub const DEFAULT_RATE_WINDOW: f64 = 0.3;

/// Trailing nodes dropped from rate fits, where distances may underflow.
pub const RATE_FIT_SKIP_LAST: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Classification {
    /// Strictly inside the cell of data point `index`.
    Cell { index: usize },
    /// Within tolerance of the bisector between `index` (nearest) and `other`.
    Boundary { index: usize, other: usize, gap: f64 },
}

impl Classification {
    /// Index of the nearest data point.
    pub fn nearest(&self) -> usize {
        match *self {
            Classification::Cell { index } | Classification::Boundary { index, .. } => index,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index, squared distance of the nearest and second nearest data points.
fn two_nearest(data: &Dataset, x: &[f64]) -> ((usize, f64), Option<(usize, f64)>) {
    let mut best = (0, f64::INFINITY);
    let mut second: Option<(usize, f64)> = None;
    for (i, p) in data.points().enumerate() {
        let d = sq_dist(p, x);
        if d < best.1 {
            second = Some(best).filter(|b| b.1.is_finite());
            best = (i, d);
        } else if second.is_none_or(|s| d < s.1) {
            second = Some((i, d));
        }
    }
    (best, second)
}

/// Nearest data point and Euclidean distance.
pub fn nearest_point(data: &Dataset, x: &[f64]) -> (usize, f64) {
    let ((i, d), _) = two_nearest(data, x);
    (i, d.sqrt())
}

/// Query-based Voronoi classifier over a distinct dataset.
#[derive(Debug, Clone)]
pub struct VoronoiIndex<'a> {
    data: &'a Dataset,
    boundary_tol: f64,
}

impl<'a> VoronoiIndex<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        Self::with_tolerance(data, DEFAULT_BOUNDARY_TOL)
    }

    pub fn with_tolerance(data: &'a Dataset, boundary_tol: f64) -> Result<Self> {
        if !data.is_distinct() {
            return Err(Error::InvalidDataset("Voronoi analysis needs pairwise distinct points".into()));
        }
        if !(boundary_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("boundary tolerance must be >= 0, got {boundary_tol}")));
        }
        Ok(VoronoiIndex { data, boundary_tol })
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    pub fn classify(&self, x: &[f64]) -> Classification {
        let ((n, dn), second) = two_nearest(self.data, x);
        match second {
            Some((l, dl)) if dl - dn <= self.boundary_tol => Classification::Boundary { index: n, other: l, gap: dl - dn },
            _ => Classification::Cell { index: n },
        }
    }

    /// Largest ε with x ∈ V_ε of its cell: ε² = min over ℓ≠n of |x−x₀ˡ|² − |x−x₀ⁿ|².
    /// Zero on a boundary; infinite for a single-point dataset.
    pub fn cell_margin(&self, x: &[f64]) -> f64 {
        match self.classify(x) {
            Classification::Boundary { .. } => 0.0,
            Classification::Cell { .. } => {
                let ((_, dn), second) = two_nearest(self.data, x);
                second.map_or(f64::INFINITY, |(_, dl)| (dl - dn).max(0.0).sqrt())
            }
        }
    }

    /// Euclidean distance from x to the nearest bisector hyperplane bounding
    /// its cell.
    pub fn bisector_distance(&self, x: &[f64]) -> f64 {
        bisector_distance(self.data, x)
    }
}

/// Distance to the nearest bisector between the nearest data point and any
/// other (distinct) data point; infinite when there is none.
pub fn bisector_distance(data: &Dataset, x: &[f64]) -> f64 {
    let ((n, dn), _) = two_nearest(data, x);
    let centre = data.point(n);
    let mut best = f64::INFINITY;
    for (l, p) in data.points().enumerate() {
        if l == n {
            continue;
        }
        let sep = sq_dist(p, centre).sqrt();
        if sep == 0.0 {
            continue;
        }
        // Signed distance along the unit normal (x₀ˡ − x₀ⁿ)/|·| to the midplane.
        let d = (sq_dist(x, p) - dn) / (2.0 * sep);
        best = best.min(d.max(0.0));
    }
    best
}

/// (D₋, D₊): smallest and largest pairwise distances.
pub fn pairwise_extremes(data: &Dataset) -> Result<(f64, f64)> {
    if data.len() < 2 {
        return Err(Error::InvalidDataset("pairwise distances need at least two points".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            let d = sq_dist(data.point(i), data.point(j));
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    if lo == 0.0 {
        return Err(Error::InvalidDataset("dataset contains duplicate points".into()));
    }
    Ok((lo.sqrt(), hi.sqrt()))
}

/// Least-squares slope of log-distance against transformed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub sample_id: usize,
    pub limit_index: usize,
    /// Slope against `s`; the theory predicts −1.
    pub slope_s: f64,
    /// Slope against `ln σ(t)`; the theory predicts +1.
    pub slope_sigma: f64,
    pub r2: f64,
    pub nodes_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub fraction_collapsed: f64,
    pub tau: f64,
    pub total: usize,
    pub collapsed: usize,
    /// Nearest data index and distance, per sample.
    pub nearest: Vec<(usize, f64)>,
    /// Samples within τ of a Voronoi bisector.
    pub boundary_proximal: usize,
    /// Samples neither within τ of data nor of a bisector.
    pub unexplained: usize,
    /// How many samples have each data point as nearest neighbour.
    pub cell_histogram: Vec<usize>,
    #[serde(default)]
    pub rate_fits: Vec<RateFit>,
}

/// Fraction of samples within `tau` of some data point, plus boundary
/// diagnostics.
pub fn memorization_fraction(samples: &[Vec<f64>], data: &Dataset, tau: f64) -> Result<MemorizationReport> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples to analyse".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let mut nearest = Vec::with_capacity(samples.len());
    let mut histogram = vec![0; data.len()];
    let (mut collapsed, mut boundary, mut unexplained) = (0, 0, 0);
    for x in samples {
        if x.len() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), got: x.len() });
        }
        let (i, d) = nearest_point(data, x);
        nearest.push((i, d));
        histogram[i] += 1;
        let near_data = d < tau;
        let near_boundary = bisector_distance(data, x) < tau;
        collapsed += near_data as usize;
        boundary += near_boundary as usize;
        unexplained += (!near_data && !near_boundary) as usize;
    }
    Ok(MemorizationReport {
        fraction_collapsed: collapsed as f64 / samples.len() as f64,
        tau,
        total: samples.len(),
        collapsed,
        nearest,
        boundary_proximal: boundary,
        unexplained,
        cell_histogram: histogram,
        rate_fits: Vec::new(),
    })
}

/// Ordinary least squares `y ≈ slope·x + intercept`, returning
/// `(slope, intercept, r²)`.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InvalidParameter("regression needs at least two paired values".into()));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("regression abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

/// Fits `ln‖x(t) − x₀ⁿ‖` against `s` over the trailing `window` fraction of
/// nodes, excluding the final [`RATE_FIT_SKIP_LAST`]. The limit point `x₀ⁿ` is
/// the data point nearest the terminal, which must lie within `tau`.
pub fn convergence_rate_fit(trajectory: &Trajectory, data: &Dataset, schedule: &Schedule, window: f64, tau: f64) -> Result<RateFit> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidParameter(format!("window must lie in (0, 1], got {window}")));
    }
    let (limit, distance) = nearest_point(data, trajectory.terminal());
    if !(distance < tau) {
        return Err(Error::NotCollapsed { distance, tau });
    }
    let len = trajectory.len();
    let end = len.saturating_sub(RATE_FIT_SKIP_LAST);
    let start = len - ((window * len as f64).round() as usize).min(len);
    let target = data.point(limit);
    let (mut s_vals, mut sigma_vals, mut logs) = (Vec::new(), Vec::new(), Vec::new());
    for i in start..end {
        let d = sq_dist(&trajectory.states[i], target).sqrt();
        let var = schedule.variance(trajectory.times[i])?;
        if d > 0.0 && var > 0.0 {
            s_vals.push(trajectory.s[i]);
            sigma_vals.push(0.5 * var.ln());
            logs.push(d.ln());
        }
    }
    let (slope_s, _, r2) = linear_regression(&s_vals, &logs)?;
    let (slope_sigma, _, _) = linear_regression(&sigma_vals, &logs)?;
    Ok(RateFit { sample_id: 0, limit_index: limit, slope_s, slope_sigma, r2, nodes_used: logs.len() })
}

/// A segment of the 2D Voronoi diagram separating cells `cells.0 < cells.1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoronoiEdge {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub cells: (usize, usize),
}

/// Voronoi edges of a 2D dataset clipped to the box `[lo, hi]²`, built by
/// half-plane clipping of each cell. O(N²) per cell.
pub fn voronoi_edges_2d(data: &Dataset, lo: [f64; 2], hi: [f64; 2]) -> Result<Vec<VoronoiEdge>> {
    if data.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: data.dim() });
    }
    if !data.is_distinct() {
        return Err(Error::InvalidDataset("Voronoi analysis needs pairwise distinct points".into()));
    }
    let scale = (hi[0] - lo[0]).abs().max((hi[1] - lo[1]).abs()).max(1.0);
    let mut edges = Vec::new();
    for n in 0..data.len() {
        let pn = data.point(n);
        let mut poly = vec![[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]];
        for l in 0..data.len() {
            if l == n || poly.is_empty() {
                continue;
            }
            let pl = data.point(l);
            // Keep a·x ≤ b, the half-plane closer to pn.
            let a = [pl[0] - pn[0], pl[1] - pn[1]];
            let b = 0.5 * (pl[0] * pl[0] + pl[1] * pl[1] - pn[0] * pn[0] - pn[1] * pn[1]);
            poly = clip(&poly, a, b);
        }
        for k in 0..poly.len() {
            let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
            let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            let dn = sq_dist(&mid, pn);
            for l in n + 1..data.len() {
                let dl = sq_dist(&mid, data.point(l));
                if (dl - dn).abs() <= 1e-9 * scale * scale && sq_dist(&p, &q) > 0.0 {
                    edges.push(VoronoiEdge { start: p, end: q, cells: (n, l) });
                    break;
                }
            }
        }
    }
    Ok(edges)
}

/// Sutherland–Hodgman clip of a convex polygon to `a·x ≤ b`.
fn clip(poly: &[[f64; 2]], a: [f64; 2], b: f64) -> Vec<[f64; 2]> {
    let side = |p: &[f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let (fp, fq) = (side(&p), side(&q));
        if fp <= 0.0 {
            out.push(p);
        }
        if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
            let r = fp / (fp - fq);
            out.push([p[0] + r * (q[0] - p[0]), p[1] + r * (q[1] - p[1])]);
        }
    }
    out
}
