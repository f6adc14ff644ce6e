//! Named dataset generators.
//!
//! | spec                     | result                                             |
//! |--------------------------|----------------------------------------------------|
//! | `gaussian2d(N, seed)`    | N i.i.d. standard normal points in ℝ²              |
//! | `symmetric2`             | (1,0), (−1,0)                                      |
//! | `symmetric4`             | (±1,0), (0,±1)                                     |
//! | `file(path)`             | the text format of [`Dataset::from_text`]          |
//! | `paired-linear(N, seed)` | x₀ ~ N(0,I₂), y = round(a·x₀ + 0.3ξ), a = (1,1)/√2 |
//!
//! Observations of `paired-linear` are rounded to integers so that several
//! points share each observed value.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use scoremem::{seeding, Dataset};

use crate::error::{LabError, Result};

/// Noise level of the `paired-linear` observation model.
pub const PAIRED_NOISE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Gaussian2d { n: usize, seed: u64 },
    Symmetric2,
    Symmetric4,
    File(PathBuf),
    PairedLinear { n: usize, seed: u64 },
}

impl DatasetSpec {
    pub fn generate(&self, base_dir: &Path) -> Result<Dataset> {
        let data = match self {
            DatasetSpec::Gaussian2d { n, seed } => Dataset::standard_gaussian(*n, 2, *seed)?,
            DatasetSpec::Symmetric2 => Dataset::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]])?,
            DatasetSpec::Symmetric4 => Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]])?,
            DatasetSpec::File(path) => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = std::fs::read_to_string(&full).map_err(|e| LabError::io(&full, e))?;
                Dataset::from_text(&text)?
            }
            DatasetSpec::PairedLinear { n, seed } => paired_linear(*n, *seed)?,
        };
        Ok(data)
    }
}

fn paired_linear(n: usize, seed: u64) -> Result<Dataset> {
    let points = Dataset::standard_gaussian(n, 2, seed)?;
    let mut noise = seeding::stream(seed, 1);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let obs = points
        .points()
        .map(|p| {
            let xi: f64 = noise.sample(StandardNormal);
            vec![(a * (p[0] + p[1]) + PAIRED_NOISE * xi).round()]
        })
        .collect();
    Ok(Dataset::with_observations(points.points().map(<[f64]>::to_vec).collect(), obs)?)
}

fn args<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?.trim().strip_prefix('(')?.strip_suffix(')').map(str::trim)
}

fn count_and_seed(inner: &str, spec: &str) -> Result<(usize, u64)> {
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let bad = || LabError::Usage(format!("expected (N, seed) in dataset spec '{spec}'"));
    let [n, seed] = parts[..] else { return Err(bad()) };
    let n = n.parse().map_err(|_| bad())?;
    let seed = seed.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(LabError::Usage(format!("dataset spec '{spec}' must have N >= 1")));
    }
    Ok((n, seed))
}

impl FromStr for DatasetSpec {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(inner) = args(s, "gaussian2d") {
            let (n, seed) = count_and_seed(inner, s)?;
            return Ok(DatasetSpec::Gaussian2d { n, seed });
        }
        if let Some(inner) = args(s, "paired-linear") {
            let (n, seed) = count_and_seed(inner, s)?;
            return Ok(DatasetSpec::PairedLinear { n, seed });
        }
        if let Some(inner) = args(s, "file") {
            if inner.is_empty() {
                return Err(LabError::Usage("file() needs a path".into()));
            }
            return Ok(DatasetSpec::File(PathBuf::from(inner)));
        }
        match s {
            "symmetric2" => Ok(DatasetSpec::Symmetric2),
            "symmetric4" => Ok(DatasetSpec::Symmetric4),
            _ => Err(LabError::Usage(format!(
                "unknown dataset generator '{s}' (expected gaussian2d(N, seed), symmetric2, symmetric4, file(path) or paired-linear(N, seed))"
            ))),
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Gaussian2d { n, seed } => write!(f, "gaussian2d({n}, {seed})"),
            DatasetSpec::Symmetric2 => f.write_str("symmetric2"),
            DatasetSpec::Symmetric4 => f.write_str("symmetric4"),
            DatasetSpec::File(p) => write!(f, "file({})", p.display()),
            DatasetSpec::PairedLinear { n, seed } => write!(f, "paired-linear({n}, {seed})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(spec: &str) -> Dataset {
        spec.parse::<DatasetSpec>().unwrap().generate(Path::new(".")).unwrap()
    }

    #[test]
    fn parses_every_generator() {
        assert_eq!("gaussian2d(20, 1234)".parse::<DatasetSpec>().unwrap(), DatasetSpec::Gaussian2d { n: 20, seed: 1234 });
        assert_eq!(" symmetric2 ".parse::<DatasetSpec>().unwrap(), DatasetSpec::Symmetric2);
        assert_eq!("file(a/b.txt)".parse::<DatasetSpec>().unwrap(), DatasetSpec::File("a/b.txt".into()));
        assert_eq!("paired-linear(8,3)".parse::<DatasetSpec>().unwrap(), DatasetSpec::PairedLinear { n: 8, seed: 3 });
        for bad in ["gaussian2d(20)", "gaussian2d(0, 1)", "mnist", "file()", "gaussian2d(x, 1)"] {
            assert!(bad.parse::<DatasetSpec>().is_err(), "{bad}");
        }
        for spec in ["gaussian2d(20, 1234)", "symmetric4", "paired-linear(8, 3)"] {
            assert_eq!(spec.parse::<DatasetSpec>().unwrap().to_string(), spec);
        }
    }

    #[test]
    fn symmetric_sets() {
        let two = gen("symmetric2");
        assert_eq!(two.point(0), &[1.0, 0.0]);
        assert_eq!(two.point(1), &[-1.0, 0.0]);
        let four = gen("symmetric4");
        assert_eq!(four.len(), 4);
        assert!(four.points().all(|p| (p[0].hypot(p[1]) - 1.0).abs() == 0.0));
    }

    #[test]
    fn gaussian_is_deterministic_and_centred() {
        assert_eq!(gen("gaussian2d(20, 5)"), gen("gaussian2d(20, 5)"));
        assert_ne!(gen("gaussian2d(20, 5)"), gen("gaussian2d(20, 6)"));
        let big = gen("gaussian2d(100000, 5)");
        for k in 0..2 {
            let mean = big.points().map(|p| p[k]).sum::<f64>() / 1e5;
            assert!(mean.abs() < 0.02);
        }
    }

    #[test]
    fn paired_linear_shares_observations() {
        let d = gen("paired-linear(40, 7)");
        assert_eq!(d.obs_dim(), 1);
        let groups = d.distinct_observations();
        assert!(groups.len() >= 2 && groups.len() < 40);
        assert!(groups.iter().all(|y| y[0].fract() == 0.0));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = "file(/nonexistent/x.txt)".parse::<DatasetSpec>().unwrap().generate(Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
