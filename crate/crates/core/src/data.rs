//! Training sets: N points in ℝᵈ, optionally paired with observations in ℝᵐ.
//!
//! Text format (comma separated, `#` starts a comment line):
//!
//! ```text
//! d,N,m
//! 2,3,1
//! 0.5,-1.0,1
//! 1.5,0.25,0
//! -2.0,0.0,1
//! ```
//!
//! The first section is the literal header `d,N,m` followed by its values;
//! the second holds N rows of `d` point coordinates and `m` observation
//! coordinates (`m = 0` for unpaired data).

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    len: usize,
    points: Vec<f64>,
    obs_dim: usize,
    observations: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(points, None)
    }

    pub fn with_observations(points: Vec<Vec<f64>>, observations: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(points, Some(observations))
    }

    fn build(points: Vec<Vec<f64>>, observations: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let len = points.len();
        if len == 0 {
            return Err(Error::InvalidDataset("dataset must contain at least one point".into()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidDataset("points must have positive dimension".into()));
        }
        let mut flat = Vec::with_capacity(len * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidDataset(format!("point {i} has dimension {}, expected {dim}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("point {i} is not finite")));
            }
            flat.extend_from_slice(p);
        }
        let (obs_dim, obs) = match observations {
            None => (0, Vec::new()),
            Some(obs) => {
                if obs.len() != len {
                    return Err(Error::InvalidDataset(format!("{} observations for {len} points", obs.len())));
                }
                let m = obs[0].len();
                if m == 0 {
                    return Err(Error::InvalidDataset("observations must have positive dimension".into()));
                }
                let mut flat_obs = Vec::with_capacity(len * m);
                for (i, y) in obs.iter().enumerate() {
                    if y.len() != m || y.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidDataset(format!("observation {i} is malformed")));
                    }
                    flat_obs.extend_from_slice(y);
                }
                (m, flat_obs)
            }
        };
        Ok(Dataset { dim, len, points: flat, obs_dim, observations: obs })
    }

    /// `n` i.i.d. standard normal points in ℝ^dim, drawn coordinate by
    /// coordinate from stream 0 of `seed`.
    pub fn standard_gaussian(n: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = seeding::stream(seed, 0);
        let points = (0..n).map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        Dataset::new(points)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn has_observations(&self) -> bool {
        self.obs_dim > 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn observation(&self, i: usize) -> Option<&[f64]> {
        if self.obs_dim == 0 {
            None
        } else {
            Some(&self.observations[i * self.obs_dim..(i + 1) * self.obs_dim])
        }
    }

    /// True when no two points compare equal coordinate-wise.
    pub fn is_distinct(&self) -> bool {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.sort_by(|&a, &b| lexicographic(self.point(a), self.point(b)));
        order.windows(2).all(|w| self.point(w[0]) != self.point(w[1]))
    }

    /// The index set of pairs whose observation equals `y` bit for bit.
    pub fn index_set(&self, y: &[f64]) -> Result<Vec<usize>> {
        if self.obs_dim == 0 {
            return Err(Error::InvalidDataset("dataset has no observations".into()));
        }
        if y.len() != self.obs_dim {
            return Err(Error::DimensionMismatch { expected: self.obs_dim, got: y.len() });
        }
        let members: Vec<usize> = (0..self.len)
            .filter(|&i| {
                let obs = self.observation(i).unwrap_or(&[]);
                obs.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits())
            })
            .collect();
        if members.is_empty() {
            Err(Error::UndefinedObservation)
        } else {
            Ok(members)
        }
    }

    /// Distinct observations in order of first appearance.
    pub fn distinct_observations(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for i in 0..self.len {
            if let Some(y) = self.observation(i) {
                let seen = out.iter().any(|o| o.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()));
                if !seen {
                    out.push(y.to_vec());
                }
            }
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let points = indices.iter().map(|&i| self.point(i).to_vec()).collect();
        if self.obs_dim > 0 {
            let obs = indices.iter().map(|&i| self.observation(i).unwrap().to_vec()).collect();
            Dataset::with_observations(points, obs)
        } else {
            Dataset::new(points)
        }
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Dataset> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: shift.len() });
        }
        let mut out = self.clone();
        for p in out.points.chunks_exact_mut(self.dim) {
            for (v, s) in p.iter_mut().zip(shift) {
                *v += s;
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("d,N,m\n");
        let _ = writeln!(out, "{},{},{}", self.dim, self.len, self.obs_dim);
        for i in 0..self.len {
            let mut row: Vec<String> = self.point(i).iter().map(|v| format!("{v:?}")).collect();
            if let Some(y) = self.observation(i) {
                row.extend(y.iter().map(|v| format!("{v:?}")));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().map(str::trim).enumerate().filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
        if header.replace(' ', "") != "d,N,m" {
            return Err(Error::Parse(format!("expected header 'd,N,m', found '{header}'")));
        }
        let (_, sizes) = lines.next().ok_or_else(|| Error::Parse("missing size line".into()))?;
        let sizes: Vec<usize> = sizes
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| Error::Parse(format!("bad size '{s}': {e}"))))
            .collect::<Result<_>>()?;
        let [d, n, m] = sizes[..] else {
            return Err(Error::Parse("size line must hold exactly d,N,m".into()));
        };
        let mut points = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        for (lineno, row) in lines {
            let values: Vec<f64> = row
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: bad number '{s}': {e}", lineno + 1))))
                .collect::<Result<_>>()?;
            if values.len() != d + m {
                return Err(Error::Parse(format!("line {}: expected {} values, found {}", lineno + 1, d + m, values.len())));
            }
            points.push(values[..d].to_vec());
            if m > 0 {
                obs.push(values[d..].to_vec());
            }
        }
        if points.len() != n {
            return Err(Error::Parse(format!("header declares {n} rows, found {}", points.len())));
        }
        if m > 0 {
            Dataset::with_observations(points, obs)
        } else {
            Dataset::new(points)
        }
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Dataset::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(Dataset::new(vec![]).is_err());
        assert!(Dataset::new(vec![vec![1.0, f64::NAN]]).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn distinctness() {
        let d = Dataset::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(d.is_distinct());
        let dup = Dataset::new(vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(!dup.is_distinct());
        let signed_zero = Dataset::new(vec![vec![0.0], vec![-0.0]]).unwrap();
        assert!(!signed_zero.is_distinct());
    }

    #[test]
    fn index_sets_use_exact_equality() {
        let d = Dataset::with_observations(vec![vec![0.0], vec![1.0], vec![2.0]], vec![vec![1.0], vec![0.5], vec![1.0]]).unwrap();
        assert_eq!(d.index_set(&[1.0]).unwrap(), vec![0, 2]);
        assert_eq!(d.index_set(&[0.5]).unwrap(), vec![1]);
        assert_eq!(d.index_set(&[1.0 + 1e-15]), Err(Error::UndefinedObservation));
        assert_eq!(d.distinct_observations(), vec![vec![1.0], vec![0.5]]);
    }

    #[test]
    fn text_round_trip() {
        let d = Dataset::with_observations(vec![vec![0.1, -2.5], vec![1.0 / 3.0, 7.0]], vec![vec![1.0], vec![-1.0]]).unwrap();
        let back = Dataset::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn text_errors() {
        assert!(Dataset::from_text("").is_err());
        assert!(Dataset::from_text("x,y\n1,2\n").is_err());
        assert!(Dataset::from_text("d,N,m\n2,2,0\n1,2\n").is_err());
        assert!(Dataset::from_text("d,N,m\n2,1,0\n1,oops\n").is_err());
        let ok = Dataset::from_text("# demo\nd,N,m\n1,2,0\n\n0.5\n-0.5\n").unwrap();
        assert_eq!(ok.len(), 2);
    }
}
