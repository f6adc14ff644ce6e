//! Closed-form score families of the empirical Gaussian mixture
//! `pᴺ(x,t) = (1/N) Σₙ N(x; m(t)x₀ⁿ, σ²(t)I)`.
//!
//! All weights are evaluated in log space with max subtraction, so exponents far
//! below the `exp` underflow threshold (about −745) are safe; such components
//! simply receive weight exactly zero.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neural::NeuralScore;
use crate::schedule::Schedule;

/// Normalized mixture weights, one per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index and value of the largest weight (first on ties).
    pub fn argmax(&self) -> (usize, f64) {
        self.0.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, w)| if w > best.1 { (i, w) } else { best })
    }
}

fn check_dim(data: &Dataset, x: &[f64]) -> Result<()> {
    if x.len() == data.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: data.dim(), got: x.len() })
    }
}

/// m(t), σ²(t) for a strictly positive time.
fn coefficients(schedule: &Schedule, t: f64) -> Result<(f64, f64)> {
    let var = schedule.variance(t)?;
    if t == 0.0 || var <= 0.0 {
        return Err(Error::SingularTime { t });
    }
    Ok((schedule.mean_coeff_unchecked(t), var))
}

fn squared_distances(data: &Dataset, mean_coeff: f64, x: &[f64]) -> Vec<f64> {
    data.points().map(|p| p.iter().zip(x).map(|(a, b)| (b - mean_coeff * a).powi(2)).sum()).collect()
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Weights for squared distances at variance `var`. At `var == 0` this is the
/// t → 0⁺ limit: uniform over the nearest centres.
fn normalize(sq: &[f64], var: f64) -> Vec<f64> {
    let min = sq.iter().copied().fold(f64::INFINITY, f64::min);
    if var == 0.0 {
        let ties = sq.iter().filter(|&&d| d == min).count() as f64;
        return sq.iter().map(|&d| if d == min { 1.0 / ties } else { 0.0 }).collect();
    }
    // exp(-(d - min)/(2 var)) ∈ (0, 1], largest entry exactly 1.
    let mut w: Vec<f64> = sq.iter().map(|&d| (-(d - min) / (2.0 * var)).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mixture weights for explicit coefficients; `variance` may be zero (hard
/// nearest-centre assignment). Used by the transformed-time integrator.
pub fn mixture_weights_at(data: &Dataset, mean_coeff: f64, variance: f64, x: &[f64]) -> Result<WeightVector> {
    check_dim(data, x)?;
    if !(variance >= 0.0) {
        return Err(Error::InvalidParameter(format!("variance must be non-negative, got {variance}")));
    }
    Ok(WeightVector(normalize(&squared_distances(data, mean_coeff, x), variance)))
}

pub fn mixture_weights(data: &Dataset, schedule: &Schedule, x: &[f64], t: f64) -> Result<WeightVector> {
    check_dim(data, x)?;
    let (m, var) = coefficients(schedule, t)?;
    Ok(WeightVector(normalize(&squared_distances(data, m, x), var)))
}

/// Σₙ wₙ x₀ⁿ.
pub fn convex_combination(data: &Dataset, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.dim()];
    for (p, &w) in data.points().zip(weights) {
        if w != 0.0 {
            for (o, v) in out.iter_mut().zip(p) {
                *o += w * v;
            }
        }
    }
    out
}

/// −(x − m(t) Σ wₙ x₀ⁿ) / (σ²(t) + c), with weights taken at `var`.
fn damped_score(data: &Dataset, m: f64, var: f64, c: f64, x: &[f64]) -> Vec<f64> {
    let w = normalize(&squared_distances(data, m, x), var);
    let mean = convex_combination(data, &w);
    let denom = var + c;
    x.iter().zip(&mean).map(|(xi, mi)| -(xi - m * mi) / denom).collect()
}

/// The minimizer of the empirical score-matching loss.
pub fn empirical_score(data: &Dataset, schedule: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(data, x)?;
    let (m, var) = coefficients(schedule, t)?;
    Ok(damped_score(data, m, var, 0.0, x))
}

/// log pᴺ(x,t), including the (2πσ²)^(−d/2)/N normalization.
pub fn mixture_log_density(data: &Dataset, schedule: &Schedule, x: &[f64], t: f64) -> Result<f64> {
    check_dim(data, x)?;
    let (m, var) = coefficients(schedule, t)?;
    Ok(log_density_at(data, m, var, x))
}

fn log_density_at(data: &Dataset, m: f64, var: f64, x: &[f64]) -> f64 {
    let logs: Vec<f64> = squared_distances(data, m, x).iter().map(|d| -d / (2.0 * var)).collect();
    let d = data.dim() as f64;
    log_sum_exp(&logs) - (data.len() as f64).ln() - 0.5 * d * (2.0 * PI * var).ln()
}

/// Score minimizing the Tikhonov-penalized loss with Γ(t) = c/σ²(t)·I.
/// For `c > 0` the result is finite down to and including t = 0.
pub fn tikhonov_score(data: &Dataset, schedule: &Schedule, x: &[f64], t: f64, c: f64) -> Result<Vec<f64>> {
    check_dim(data, x)?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization c must be >= 0, got {c}")));
    }
    if c == 0.0 {
        return empirical_score(data, schedule, x, t);
    }
    let var = schedule.variance(t)?;
    let m = schedule.mean_coeff_unchecked(t);
    Ok(damped_score(data, m, var, c, x))
}

/// ∇pᴺ / max(pᴺ, c), with pᴺ the normalized mixture density.
pub fn empirical_bayes_score(data: &Dataset, schedule: &Schedule, x: &[f64], t: f64, c: f64) -> Result<Vec<f64>> {
    check_dim(data, x)?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("density floor c must be >= 0, got {c}")));
    }
    let (m, var) = coefficients(schedule, t)?;
    let mut score = damped_score(data, m, var, 0.0, x);
    if c > 0.0 {
        let log_ratio = log_density_at(data, m, var, x) - c.ln();
        if log_ratio < 0.0 {
            let scale = log_ratio.exp();
            for s in &mut score {
                *s *= scale;
            }
        }
    }
    Ok(score)
}

/// Empirical score of the conditional mixture over the pairs whose observation
/// equals `y` exactly. Undefined (an error) for any other `y`.
pub fn conditional_empirical_score(data: &Dataset, schedule: &Schedule, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    let members = data.index_set(y)?;
    empirical_score(&data.subset(&members)?, schedule, x, t)
}

/// A score function usable by the reverse dynamics.
#[derive(Debug, Clone)]
pub enum ScoreModel {
    Exact(Arc<Dataset>),
    Tikhonov {
        data: Arc<Dataset>,
        c: f64,
    },
    EmpiricalBayes {
        data: Arc<Dataset>,
        c: f64,
    },
    /// Holds the members of the index set for `observation`.
    Conditional {
        group: Arc<Dataset>,
        observation: Vec<f64>,
    },
    Neural(Arc<NeuralScore>),
}

impl ScoreModel {
    pub fn exact(data: Arc<Dataset>) -> Self {
        ScoreModel::Exact(data)
    }

    pub fn tikhonov(data: Arc<Dataset>, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("Tikhonov c must be positive, got {c}")));
        }
        Ok(ScoreModel::Tikhonov { data, c })
    }

    pub fn empirical_bayes(data: Arc<Dataset>, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("empirical Bayes c must be positive, got {c}")));
        }
        Ok(ScoreModel::EmpiricalBayes { data, c })
    }

    pub fn conditional(data: &Dataset, observation: &[f64]) -> Result<Self> {
        let members = data.index_set(observation)?;
        Ok(ScoreModel::Conditional { group: Arc::new(data.subset(&members)?), observation: observation.to_vec() })
    }

    pub fn neural(net: NeuralScore) -> Self {
        ScoreModel::Neural(Arc::new(net))
    }

    pub fn score(&self, schedule: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match self {
            ScoreModel::Exact(data) => empirical_score(data, schedule, x, t),
            ScoreModel::Tikhonov { data, c } => tikhonov_score(data, schedule, x, t, *c),
            ScoreModel::EmpiricalBayes { data, c } => empirical_bayes_score(data, schedule, x, t, *c),
            ScoreModel::Conditional { group, .. } => empirical_score(group, schedule, x, t),
            ScoreModel::Neural(net) => net.score(schedule, x, t),
        }
    }

    /// The dataset the model is built on, if any.
    pub fn dataset(&self) -> Option<&Dataset> {
        match self {
            ScoreModel::Exact(d) | ScoreModel::Tikhonov { data: d, .. } | ScoreModel::EmpiricalBayes { data: d, .. } => Some(d),
            ScoreModel::Conditional { group, .. } => Some(group),
            ScoreModel::Neural(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScoreModel::Neural(net) => net.dim(),
            other => other.dataset().map(Dataset::dim).unwrap_or(0),
        }
    }

    /// The c of the time transform h(t; c): Tikhonov's c, zero otherwise.
    pub fn transform_offset(&self) -> f64 {
        match self {
            ScoreModel::Tikhonov { c, .. } => *c,
            _ => 0.0,
        }
    }

    /// Whether the score may be evaluated at t = 0.
    pub fn regular_at_zero(&self) -> bool {
        match self {
            ScoreModel::Tikhonov { .. } => true,
            ScoreModel::Neural(net) => net.regular_at_zero(),
            _ => false,
        }
    }

    pub fn id(&self) -> String {
        match self {
            ScoreModel::Exact(_) => "exact".into(),
            ScoreModel::Tikhonov { c, .. } => format!("tikhonov(c={c})"),
            ScoreModel::EmpiricalBayes { c, .. } => format!("empirical-bayes(c={c})"),
            ScoreModel::Conditional { observation, .. } => {
                let y: Vec<String> = observation.iter().map(|v| v.to_string()).collect();
                format!("conditional(y=[{}])", y.join(","))
            }
            ScoreModel::Neural(net) => net.id(),
        }
    }
}
