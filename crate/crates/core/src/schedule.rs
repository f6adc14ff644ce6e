//! Noise schedules of the linear forward SDE `dx = -½β(t)x dt + √g(t) dW`.
//!
//! Both supported families are driven by a single rate function `g`:
//! variance exploding (β ≡ 0) and variance preserving (β ≡ g). With
//! `G(t) = ∫₀ᵗ g`, the conditional law is `x(t) | x₀ ~ N(m(t)x₀, σ²(t)I)` where
//!
//! | kind | m(t)        | σ²(t)          |
//! |------|-------------|----------------|
//! | VE   | 1           | G(t)           |
//! | VP   | exp(-G/2)   | 1 - exp(-G)    |
//!
//! Catalog rates have closed-form `G`; a [`Rate::Custom`] falls back to
//! adaptive quadrature.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Default linear-β endpoints for VP experiments.
pub const DEFAULT_BETA_MIN: f64 = 0.001;
pub const DEFAULT_BETA_MAX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessKind {
    #[serde(rename = "ve", alias = "variance-exploding")]
    VarianceExploding,
    #[serde(rename = "vp", alias = "variance-preserving")]
    VariancePreserving,
}

/// A user supplied rate function, integrated numerically.
#[derive(Clone)]
pub struct CustomRate {
    pub name: String,
    pub g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRate").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Rate {
    /// g(t) = 2t
    TwoT,
    /// g(t) = 10ᵗ
    TenPow,
    /// g(t) = a
    Constant(f64),
    /// g(t) = β_min + t (β_max − β_min)
    LinearBeta {
        min: f64,
        max: f64,
    },
    Custom(CustomRate),
}

impl Rate {
    /// Wraps a closure as a rate; m and σ² are then computed by quadrature.
    pub fn custom(name: impl Into<String>, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Rate::Custom(CustomRate { name: name.into(), g: Arc::new(g) })
    }

    pub fn name(&self) -> &str {
        match self {
            Rate::TwoT => "2t",
            Rate::TenPow => "10^t",
            Rate::Constant(_) => "constant",
            Rate::LinearBeta { .. } => "linear-beta",
            Rate::Custom(c) => &c.name,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Rate::Constant(a) => vec![*a],
            Rate::LinearBeta { min, max } => vec![*min, *max],
            _ => Vec::new(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Rate::TwoT => 2.0 * t,
            Rate::TenPow => 10f64.powf(t),
            Rate::Constant(a) => *a,
            Rate::LinearBeta { min, max } => min + t * (max - min),
            Rate::Custom(c) => (c.g)(t),
        }
    }

    /// `∫₀ᵗ g(s) ds`
    pub fn integral(&self, t: f64) -> f64 {
        match self {
            Rate::TwoT => t * t,
            Rate::TenPow => (t * std::f64::consts::LN_10).exp_m1() / std::f64::consts::LN_10,
            Rate::Constant(a) => a * t,
            Rate::LinearBeta { min, max } => min * t + 0.5 * (max - min) * t * t,
            Rate::Custom(c) => quadrature::integrate(|s| (c.g)(s), 0.0, t, quadrature::DEFAULT_REL_TOL),
        }
    }
}

/// Serializable form of a schedule: the `kind`, `g.name`, `g.params`, `T` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ProcessKind,
    pub g: RateSpec,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMarginal {
    pub mean_coeff: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ProcessKind,
    rate: Rate,
    horizon: f64,
}

impl Schedule {
    pub fn new(kind: ProcessKind, rate: Rate, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {horizon}")));
        }
        match &rate {
            Rate::Constant(a) if !(*a > 0.0 && a.is_finite()) => {
                return Err(Error::InvalidParameter(format!("constant rate must be positive, got {a}")));
            }
            Rate::LinearBeta { min, max } if !(*min >= 0.0 && *max > 0.0 && min.is_finite() && max.is_finite()) => {
                return Err(Error::InvalidParameter(format!("linear-beta needs 0 <= beta_min and beta_max > 0, got ({min}, {max})")));
            }
            _ => {}
        }
        Ok(Schedule { kind, rate, horizon })
    }

    /// VE with g(t) = 2t, so σ(t) = t.
    pub fn ve_linear(horizon: f64) -> Self {
        Schedule { kind: ProcessKind::VarianceExploding, rate: Rate::TwoT, horizon }
    }

    /// VE with g(t) = 10ᵗ.
    pub fn ve_exponential(horizon: f64) -> Self {
        Schedule { kind: ProcessKind::VarianceExploding, rate: Rate::TenPow, horizon }
    }

    /// VP with β = g ≡ 1.
    pub fn vp_constant(horizon: f64) -> Self {
        Schedule { kind: ProcessKind::VariancePreserving, rate: Rate::Constant(1.0), horizon }
    }

    /// VP with the linear β ramp from [`DEFAULT_BETA_MIN`] to [`DEFAULT_BETA_MAX`].
    pub fn vp_linear(horizon: f64) -> Self {
        Schedule { kind: ProcessKind::VariancePreserving, rate: Rate::LinearBeta { min: DEFAULT_BETA_MIN, max: DEFAULT_BETA_MAX }, horizon }
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        let p = &spec.g.params;
        let arity = |n: usize| -> Result<()> {
            if p.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("rate '{}' takes {n} parameter(s), got {}", spec.g.name, p.len())))
            }
        };
        let rate = match spec.g.name.as_str() {
            "2t" => {
                arity(0)?;
                Rate::TwoT
            }
            "10^t" => {
                arity(0)?;
                Rate::TenPow
            }
            "constant" => match p.len() {
                0 => Rate::Constant(1.0),
                _ => {
                    arity(1)?;
                    Rate::Constant(p[0])
                }
            },
            "linear-beta" => match p.len() {
                0 => Rate::LinearBeta { min: DEFAULT_BETA_MIN, max: DEFAULT_BETA_MAX },
                _ => {
                    arity(2)?;
                    Rate::LinearBeta { min: p[0], max: p[1] }
                }
            },
            other => return Err(Error::InvalidParameter(format!("unknown rate function '{other}'"))),
        };
        Schedule::new(spec.kind, rate, spec.horizon)
    }

    /// Fails for custom rates, which have no textual form.
    pub fn spec(&self) -> Result<ScheduleSpec> {
        if let Rate::Custom(c) = &self.rate {
            return Err(Error::InvalidParameter(format!("custom rate '{}' cannot be serialized", c.name)));
        }
        Ok(ScheduleSpec {
            kind: self.kind,
            g: RateSpec { name: self.rate.name().to_string(), params: self.rate.params() },
            horizon: self.horizon,
        })
    }

    /// Short identifier, e.g. `ve:10^t:T=1`.
    pub fn id(&self) -> String {
        let kind = match self.kind {
            ProcessKind::VarianceExploding => "ve",
            ProcessKind::VariancePreserving => "vp",
        };
        let params = self.rate.params();
        if params.is_empty() {
            format!("{kind}:{}:T={}", self.rate.name(), self.horizon)
        } else {
            let p: Vec<String> = params.iter().map(|v| v.to_string()).collect();
            format!("{kind}:{}({}):T={}", self.rate.name(), p.join(","), self.horizon)
        }
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    pub fn rate(&self) -> &Rate {
        &self.rate
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn check(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, horizon: self.horizon })
        }
    }

    /// Diffusion rate g(t). Not range checked.
    pub fn g(&self, t: f64) -> f64 {
        self.rate.eval(t)
    }

    /// Drift rate β(t). Not range checked.
    pub fn beta(&self, t: f64) -> f64 {
        match self.kind {
            ProcessKind::VarianceExploding => 0.0,
            ProcessKind::VariancePreserving => self.rate.eval(t),
        }
    }

    /// m(t) = exp(-½ ∫₀ᵗ β).
    pub fn mean_coeff(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.mean_coeff_unchecked(t))
    }

    /// σ²(t) = m²(t) ∫₀ᵗ g/m².
    pub fn variance(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.variance_unchecked(t))
    }

    pub fn marginal(&self, t: f64) -> Result<GaussianMarginal> {
        self.check(t)?;
        Ok(GaussianMarginal { mean_coeff: self.mean_coeff_unchecked(t), std: self.variance_unchecked(t).sqrt() })
    }

    pub(crate) fn mean_coeff_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ProcessKind::VarianceExploding => 1.0,
            ProcessKind::VariancePreserving => (-0.5 * self.rate.integral(t)).exp(),
        }
    }

    pub(crate) fn variance_unchecked(&self, t: f64) -> f64 {
        let big_g = self.rate.integral(t);
        match self.kind {
            ProcessKind::VarianceExploding => big_g,
            ProcessKind::VariancePreserving => -(-big_g).exp_m1(),
        }
    }

    /// dσ²/dt.
    fn variance_rate(&self, t: f64) -> f64 {
        match self.kind {
            ProcessKind::VarianceExploding => self.g(t),
            ProcessKind::VariancePreserving => self.g(t) * (1.0 - self.variance_unchecked(t)),
        }
    }

    /// Solves σ²(t) = v on (0, T] by safeguarded Newton iteration.
    pub fn invert_variance(&self, v: f64) -> Result<f64> {
        let top = self.variance_unchecked(self.horizon);
        if !(v > 0.0 && v <= top) {
            return Err(Error::VarianceOutOfRange { value: v, lower: 0.0, upper: top });
        }
        if v == top {
            return Ok(self.horizon);
        }
        let tol = 1e-12 * top;
        let (mut lo, mut hi) = (0.0, self.horizon);
        // σ² is near-linear or near-quadratic at 0; start from the secant guess.
        let mut t = (self.horizon * v / top).clamp(0.0, self.horizon);
        for _ in 0..200 {
            let r = self.variance_unchecked(t) - v;
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let slope = self.variance_rate(t);
            let mut next = if slope > 0.0 { t - r / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - t).abs();
            t = next;
            if step <= 4.0 * f64::EPSILON * t.max(f64::MIN_POSITIVE) && r.abs() <= tol {
                break;
            }
            if hi - lo <= 2.0 * f64::EPSILON * hi {
                break;
            }
        }
        Ok(t)
    }

    /// Draws `m(t)x₀ + σ(t)η` with standard normal η.
    pub fn sample_forward_marginal<R: Rng + ?Sized>(&self, x0: &[f64], t: f64, rng: &mut R) -> Result<Vec<f64>> {
        let GaussianMarginal { mean_coeff, std } = self.marginal(t)?;
        Ok(x0
            .iter()
            .map(|&x| {
                let eta: f64 = rng.sample(StandardNormal);
                mean_coeff * x + std * eta
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Reference σ² computed from the defining integral m² ∫ g/m² by quadrature,
    // independent of the closed forms above.
    fn variance_by_quadrature(s: &Schedule, t: f64) -> f64 {
        let beta_int = |u: f64| quadrature::integrate(|r| s.beta(r), 0.0, u, 1e-13);
        let m2 = |u: f64| (-beta_int(u)).exp();
        m2(t) * quadrature::integrate(|u| s.g(u) / m2(u), 0.0, t, 1e-12)
    }

    #[test]
    fn mean_coeff_examples() {
        assert_eq!(Schedule::ve_exponential(1.0).mean_coeff(0.7).unwrap(), 1.0);
        assert_eq!(Schedule::ve_linear(1.0).mean_coeff(0.7).unwrap(), 1.0);
        let vp = Schedule::vp_constant(2.0);
        assert!((vp.mean_coeff(2.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        for s in [Schedule::vp_linear(1.0), Schedule::vp_constant(1.0), Schedule::ve_linear(1.0)] {
            assert_eq!(s.mean_coeff(0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn variance_examples() {
        assert!((Schedule::ve_linear(1.0).variance(0.5).unwrap() - 0.25).abs() < 1e-15);
        let vp = Schedule::vp_constant(1.0);
        assert!((vp.variance(1.0).unwrap() - (1.0 - (-1f64).exp())).abs() < 1e-15);
        let ve10 = Schedule::ve_exponential(1.0).variance(1.0).unwrap();
        let oracle = variance_by_quadrature(&Schedule::ve_exponential(1.0), 1.0);
        assert!((ve10 - 9.0 / std::f64::consts::LN_10).abs() < 1e-14);
        assert!((ve10 - oracle).abs() < 1e-10 * oracle);
        assert!((ve10 - 3.9087).abs() < 1e-4);
    }

    #[test]
    fn closed_forms_match_defining_integral() {
        for s in [Schedule::ve_linear(1.0), Schedule::ve_exponential(1.0), Schedule::vp_constant(1.0), Schedule::vp_linear(1.0)] {
            for &t in &[1e-3, 0.1, 0.5, 1.0] {
                let a = s.variance(t).unwrap();
                let b = variance_by_quadrature(&s, t);
                assert!((a - b).abs() <= 1e-9 * b, "{} t={t}: {a} vs {b}", s.id());
            }
        }
    }

    #[test]
    fn custom_rate_uses_quadrature() {
        let custom = Rate::Custom(CustomRate { name: "3t^2".into(), g: Arc::new(|t| 3.0 * t * t) });
        let s = Schedule::new(ProcessKind::VarianceExploding, custom, 1.0).unwrap();
        assert!((s.variance(0.5).unwrap() - 0.125).abs() < 1e-12);
        assert!(s.spec().is_err());
    }

    #[test]
    fn domain_errors() {
        let s = Schedule::ve_linear(1.0);
        assert!(matches!(s.variance(1.5), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(s.mean_coeff(-0.1), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(s.invert_variance(0.0), Err(Error::VarianceOutOfRange { .. })));
        assert!(matches!(s.invert_variance(1.5), Err(Error::VarianceOutOfRange { .. })));
    }

    #[test]
    fn inversion_examples() {
        assert!((Schedule::ve_linear(1.0).invert_variance(0.25).unwrap() - 0.5).abs() < 1e-12);
        let vp = Schedule::vp_constant(1.0);
        assert!((vp.invert_variance(1.0 - (-1f64).exp()).unwrap() - 1.0).abs() < 1e-12);
        let ve10 = Schedule::ve_exponential(1.0);
        let v = ve10.variance(1.0).unwrap();
        assert!((ve10.invert_variance(v).unwrap() - 1.0).abs() < 1e-12);
        assert!((ve10.invert_variance(3.90865).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn inversion_residual_contract() {
        for s in [Schedule::ve_linear(1.0), Schedule::ve_exponential(1.0), Schedule::vp_linear(1.0)] {
            let top = s.variance(1.0).unwrap();
            for k in 1..=50 {
                let v = top * (k as f64 / 50.0).powi(3);
                let t = s.invert_variance(v).unwrap();
                assert!((s.variance(t).unwrap() - v).abs() <= 1e-12 * top);
            }
        }
    }

    #[test]
    fn forward_marginal_at_zero_is_identity() {
        let s = Schedule::ve_linear(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = [0.3, -1.7];
        assert_eq!(s.sample_forward_marginal(&x0, 0.0, &mut rng).unwrap(), x0.to_vec());
    }

    #[test]
    fn forward_marginal_is_seed_deterministic() {
        let s = Schedule::vp_linear(1.0);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            s.sample_forward_marginal(&[1.0, 2.0, 3.0], 0.4, &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn forward_marginal_moments() {
        let s = Schedule::ve_linear(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let (mut sum, mut sq) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let x = s.sample_forward_marginal(&[1.0, 0.0], 1.0, &mut rng).unwrap();
            for k in 0..2 {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        let target = [1.0, 0.0];
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!((mean - target[k]).abs() < 3e-2 * 2f64.sqrt());
            assert!((var - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn spec_round_trip() {
        let s = Schedule::vp_linear(1.0);
        let spec = s.spec().unwrap();
        assert_eq!(spec.g.params, vec![0.001, 3.0]);
        let back = Schedule::from_spec(&spec).unwrap();
        assert_eq!(back.id(), s.id());
        let bad = ScheduleSpec { kind: ProcessKind::VarianceExploding, g: RateSpec { name: "2t".into(), params: vec![1.0] }, horizon: 1.0 };
        assert!(Schedule::from_spec(&bad).is_err());
    }
}
