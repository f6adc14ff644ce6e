//! Reverse-time generative dynamics.
//!
//! The probability-flow ODE `dx/dt = −½β(t)x − ½g(t)s(x,t)` is integrated
//! backwards from `T` with classical RK4 on a fixed [`TimeGrid`]. The
//! transformed form works in `s = −½ln(σ²(t) + c)`:
//!
//! * VE: `dy/ds = −(y − ȳ)`
//! * VP: `dy/ds = −[(1 − c/m²)y − ȳ/m]`, `m = √(1 − σ²)`
//!
//! where ȳ is the weight-averaged data point at variance `σ² = e⁻²ˢ − c`.
//! The SDE family uses Euler–Maruyama.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{ProcessKind, Schedule};
use crate::score::{convex_combination, mixture_weights_at, ScoreModel};
use crate::seeding;

/// Trajectories whose state norm exceeds this are aborted.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Default number of integration steps.
pub const DEFAULT_STEPS: usize = 400;

/// Default early-stopping time for scores that are singular at t = 0.
pub const DEFAULT_T_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    /// `tᵢ = T (t_min/T)^{i/steps}`.
    GeometricInT,
    /// Uniform in `s = −½ln(σ² + c)`.
    UniformInS,
}

/// Strictly decreasing node sequence from `T` to `t_min`, together with the
/// transformed times of each node.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    kind: GridKind,
    t_min: f64,
    steps: usize,
    horizon: f64,
    offset: f64,
    times: Vec<f64>,
    s: Vec<f64>,
}

impl TimeGrid {
    pub fn geometric(schedule: &Schedule, t_min: f64, steps: usize) -> Result<Self> {
        let horizon = schedule.horizon();
        if steps < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 steps, got {steps}")));
        }
        if !(t_min > 0.0 && t_min < horizon) {
            return Err(Error::InvalidGrid(format!("geometric grid needs 0 < t_min < T, got {t_min}")));
        }
        let ratio = t_min / horizon;
        let mut times: Vec<f64> = (0..=steps).map(|i| horizon * ratio.powf(i as f64 / steps as f64)).collect();
        times[0] = horizon;
        times[steps] = t_min;
        Self::finish(schedule, GridKind::GeometricInT, t_min, steps, 0.0, times)
    }

    /// Nodes uniform in `s`; `t_min = 0` is allowed only when `offset > 0`.
    pub fn uniform_in_s(schedule: &Schedule, t_min: f64, steps: usize, offset: f64) -> Result<Self> {
        let horizon = schedule.horizon();
        if steps < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 steps, got {steps}")));
        }
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(Error::InvalidParameter(format!("transform offset must be >= 0, got {offset}")));
        }
        if !(t_min >= 0.0 && t_min < horizon) || (t_min == 0.0 && offset == 0.0) {
            return Err(Error::InvalidGrid(format!("invalid t_min {t_min} for offset {offset}")));
        }
        let s_start = time_transform(schedule, horizon, offset)?;
        let s_end = time_transform(schedule, t_min, offset)?;
        let mut times = Vec::with_capacity(steps + 1);
        times.push(horizon);
        for i in 1..steps {
            let s = s_start + (s_end - s_start) * i as f64 / steps as f64;
            times.push(time_transform_inverse(schedule, s, offset)?);
        }
        times.push(t_min);
        Self::finish(schedule, GridKind::UniformInS, t_min, steps, offset, times)
    }

    fn finish(schedule: &Schedule, kind: GridKind, t_min: f64, steps: usize, offset: f64, times: Vec<f64>) -> Result<Self> {
        if times.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidGrid("grid nodes are not strictly decreasing".into()));
        }
        let s = times.iter().map(|&t| time_transform(schedule, t, offset)).collect::<Result<_>>()?;
        Ok(TimeGrid { kind, t_min, steps, horizon: schedule.horizon(), offset, times, s })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The `c` used for the transformed times.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn transformed(&self) -> &[f64] {
        &self.s
    }
}

/// `s = h(t; c) = −½ ln(σ²(t) + c)`.
pub fn time_transform(schedule: &Schedule, t: f64, c: f64) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("transform offset must be >= 0, got {c}")));
    }
    let var = schedule.variance(t)?;
    if var + c <= 0.0 {
        return Err(Error::SingularTime { t });
    }
    Ok(-0.5 * (var + c).ln())
}

/// Inverse of [`time_transform`]: `t = (σ²)⁻¹(e⁻²ˢ − c)`.
pub fn time_transform_inverse(schedule: &Schedule, s: f64, c: f64) -> Result<f64> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("transform offset must be >= 0, got {c}")));
    }
    let top = schedule.variance(schedule.horizon())?;
    let lower = -0.5 * (top + c).ln();
    let upper = if c > 0.0 { -0.5 * c.ln() } else { f64::INFINITY };
    let v = (-2.0 * s).exp() - c;
    // Values within rounding of s_∞ map to t = 0.
    if c > 0.0 && v.abs() <= 8.0 * f64::EPSILON * c {
        return Ok(0.0);
    }
    if !(v > 0.0) || !s.is_finite() {
        return Err(Error::TransformedTimeOutOfRange { s, lower, upper });
    }
    if v > top {
        if v <= top * (1.0 + 8.0 * f64::EPSILON) {
            return Ok(schedule.horizon());
        }
        return Err(Error::TransformedTimeOutOfRange { s, lower, upper });
    }
    schedule.invert_variance(v)
}

/// A reverse-time path; node 0 is at `T`, the last node at `t_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Transformed time of each node.
    pub s: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Mixture weights per node (transformed integrator only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub schedule_id: String,
    pub model_id: String,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn initial(&self) -> &[f64] {
        self.states.first().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `−½β(t)x − ½g(t)s(x,t)`.
pub fn reverse_ode_rhs(model: &ScoreModel, schedule: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    drift(model, schedule, x, t, 1.0)
}

/// `−½β(t)x − ½·factor·g(t)s(x,t)`.
fn drift(model: &ScoreModel, schedule: &Schedule, x: &[f64], t: f64, factor: f64) -> Result<Vec<f64>> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    let score = model.score(schedule, x, t)?;
    let beta = schedule.beta(t);
    let g = schedule.g(t);
    Ok(x.iter().zip(&score).map(|(xi, si)| -0.5 * beta * xi - 0.5 * factor * g * si).collect())
}

fn check_start(model_dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != model_dim {
        return Err(Error::DimensionMismatch { expected: model_dim, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    Ok(())
}

fn guard(x: &[f64], node: usize, t: f64, last_good: &[f64]) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_finite() && norm <= DIVERGENCE_BOUND {
        Ok(())
    } else {
        Err(Error::Divergence { node, t, last_good: last_good.to_vec() })
    }
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One classical RK4 step of `dx/dτ = f(τ, x)` from `τ` to `τ + h`.
fn rk4_step<F>(f: &F, tau: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(tau, x)?;
    let k2 = f(tau + 0.5 * h, &axpy(x, 0.5 * h, &k1))?;
    let k3 = f(tau + 0.5 * h, &axpy(x, 0.5 * h, &k2))?;
    let k4 = f(tau + h, &axpy(x, h, &k3))?;
    Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Rk4,
    Euler,
}

fn ode_path(
    model: &ScoreModel,
    schedule: &Schedule,
    x_start: &[f64],
    grid: &TimeGrid,
    scheme: Scheme,
    record: bool,
) -> Result<Vec<Vec<f64>>> {
    check_start(model.dim(), x_start)?;
    check_grid(schedule, grid)?;
    let rhs = |t: f64, x: &[f64]| reverse_ode_rhs(model, schedule, x, t);
    let times = grid.times();
    let mut states = Vec::with_capacity(if record { times.len() } else { 1 });
    let mut x = x_start.to_vec();
    for i in 0..times.len() - 1 {
        let h = times[i + 1] - times[i];
        let next = match scheme {
            Scheme::Rk4 => rk4_step(&rhs, times[i], &x, h),
            Scheme::Euler => rhs(times[i], &x).map(|k| axpy(&x, h, &k)),
        }?;
        guard(&next, i + 1, times[i + 1], &x)?;
        if record {
            states.push(std::mem::replace(&mut x, next));
        } else {
            x = next;
        }
    }
    states.push(x);
    Ok(states)
}

fn check_grid(schedule: &Schedule, grid: &TimeGrid) -> Result<()> {
    if grid.horizon() != schedule.horizon() {
        return Err(Error::InvalidGrid(format!("grid horizon {} differs from schedule horizon {}", grid.horizon(), schedule.horizon())));
    }
    Ok(())
}

fn build_trajectory(model: &ScoreModel, schedule: &Schedule, grid: &TimeGrid, states: Vec<Vec<f64>>, seed: Option<u64>) -> Trajectory {
    Trajectory {
        times: grid.times().to_vec(),
        s: grid.transformed().to_vec(),
        states,
        weights: None,
        seed,
        schedule_id: schedule.id(),
        model_id: model.id(),
    }
}

/// RK4 integration of the probability-flow ODE over every grid node.
pub fn integrate_reverse_ode(model: &ScoreModel, schedule: &Schedule, x_start: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let states = ode_path(model, schedule, x_start, grid, Scheme::Rk4, true)?;
    Ok(build_trajectory(model, schedule, grid, states, None))
}

/// Explicit Euler integration of the probability-flow ODE.
pub fn integrate_reverse_ode_euler(model: &ScoreModel, schedule: &Schedule, x_start: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let states = ode_path(model, schedule, x_start, grid, Scheme::Euler, true)?;
    Ok(build_trajectory(model, schedule, grid, states, None))
}

/// RK4 integration in transformed time `s` for the exact, conditional and
/// Tikhonov scores. The grid offset must equal the model's Tikhonov `c`.
pub fn integrate_transformed_ode(model: &ScoreModel, schedule: &Schedule, y_start: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let data = match model {
        ScoreModel::Exact(d) | ScoreModel::Tikhonov { data: d, .. } | ScoreModel::Conditional { group: d, .. } => d,
        other => return Err(Error::InvalidParameter(format!("transformed dynamics need an exact or Tikhonov score, got {}", other.id()))),
    };
    check_start(data.dim(), y_start)?;
    check_grid(schedule, grid)?;
    let c = model.transform_offset();
    if grid.offset() != c {
        return Err(Error::InvalidGrid(format!("grid offset {} does not match model offset {c}", grid.offset())));
    }
    let s_inf = if c > 0.0 { -0.5 * c.ln() } else { f64::INFINITY };
    let s_top = time_transform(schedule, schedule.horizon(), c)?;
    let vp = schedule.kind() == ProcessKind::VariancePreserving;

    // (m, σ²) at transformed time s.
    let coefficients = |s: f64| -> Result<(f64, f64)> {
        if s > s_inf || s < s_top - 1e-12 * s_top.abs().max(1.0) {
            return Err(Error::TransformedTimeOutOfRange { s, lower: s_top, upper: s_inf });
        }
        let var = ((-2.0 * s).exp() - c).max(0.0);
        let m = if vp { (1.0 - var).sqrt() } else { 1.0 };
        Ok((m, var))
    };
    let rhs = |s: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (m, var) = coefficients(s)?;
        let w = mixture_weights_at(data, m, var, y)?;
        let target = convex_combination(data, w.as_slice());
        Ok(if vp {
            let a = 1.0 - c / (m * m);
            y.iter().zip(&target).map(|(yi, ti)| -(a * yi - ti / m)).collect()
        } else {
            y.iter().zip(&target).map(|(yi, ti)| -(yi - ti)).collect()
        })
    };

    let s_nodes = grid.transformed();
    let mut states = Vec::with_capacity(s_nodes.len());
    let mut weights = Vec::with_capacity(s_nodes.len());
    let mut y = y_start.to_vec();
    for i in 0..s_nodes.len() {
        let (m, var) = coefficients(s_nodes[i])?;
        weights.push(mixture_weights_at(data, m, var, &y)?.into_inner());
        if i + 1 == s_nodes.len() {
            break;
        }
        let h = s_nodes[i + 1] - s_nodes[i];
        let next = rk4_step(&rhs, s_nodes[i], &y, h)?;
        guard(&next, i + 1, grid.times()[i + 1], &y)?;
        states.push(std::mem::replace(&mut y, next));
    }
    states.push(y);
    let mut traj = build_trajectory(model, schedule, grid, states, None);
    traj.weights = Some(weights);
    Ok(traj)
}

fn sde_path<R: Rng + ?Sized>(
    model: &ScoreModel,
    schedule: &Schedule,
    x_start: &[f64],
    alpha2: f64,
    grid: &TimeGrid,
    rng: &mut R,
    record: bool,
) -> Result<Vec<Vec<f64>>> {
    if !(alpha2 >= 0.0 && alpha2.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha2 must be >= 0, got {alpha2}")));
    }
    check_start(model.dim(), x_start)?;
    check_grid(schedule, grid)?;
    let times = grid.times();
    let factor = 1.0 + alpha2;
    let mut states = Vec::with_capacity(if record { times.len() } else { 1 });
    let mut x = x_start.to_vec();
    for i in 0..times.len() - 1 {
        let t = times[i];
        let h = times[i + 1] - t;
        let k = drift(model, schedule, &x, t, factor)?;
        let mut next = axpy(&x, h, &k);
        if alpha2 > 0.0 {
            let amplitude = (alpha2 * schedule.g(t) * h.abs()).sqrt();
            for v in &mut next {
                let z: f64 = rng.sample(StandardNormal);
                *v += amplitude * z;
            }
        }
        guard(&next, i + 1, times[i + 1], &x)?;
        if record {
            states.push(std::mem::replace(&mut x, next));
        } else {
            x = next;
        }
    }
    states.push(x);
    Ok(states)
}

/// Euler–Maruyama for the reverse SDE family indexed by `alpha2 ≥ 0`;
/// `alpha2 = 0` reproduces [`integrate_reverse_ode_euler`] exactly.
pub fn integrate_reverse_sde<R: Rng + ?Sized>(
    model: &ScoreModel,
    schedule: &Schedule,
    x_start: &[f64],
    alpha2: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Trajectory> {
    let states = sde_path(model, schedule, x_start, alpha2, grid, rng, true)?;
    Ok(build_trajectory(model, schedule, grid, states, None))
}

/// Draws `x(T)` from the terminal reference law: `N(0, σ²(T)I)` for VE,
/// `N(0, I)` for VP.
pub fn sample_prior<R: Rng + ?Sized>(schedule: &Schedule, dim: usize, rng: &mut R) -> Vec<f64> {
    let std = match schedule.kind() {
        ProcessKind::VarianceExploding => schedule.variance(schedule.horizon()).unwrap_or(1.0).sqrt(),
        ProcessKind::VariancePreserving => 1.0,
    };
    (0..dim)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        })
        .collect()
}

/// Which reverse dynamics a batch uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Sampler {
    Ode,
    Sde { alpha2: f64 },
}

fn run_batch<T, F>(count: usize, master_seed: u64, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let results: Vec<Result<T>> = (0..count).into_par_iter().map(|i| job(i, &mut seeding::stream(master_seed, i as u64))).collect();
    let mut out = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => failures.push((i, e)),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::SampleFailures(failures))
    }
}

/// Sample `i` draws its prior point (and SDE noise) from stream `i` of `master_seed`.
pub fn generate_trajectories(
    model: &ScoreModel,
    schedule: &Schedule,
    count: usize,
    grid: &TimeGrid,
    sampler: Sampler,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    run_batch(count, master_seed, |i, rng| {
        let start = sample_prior(schedule, model.dim(), rng);
        let states = match sampler {
            Sampler::Ode => ode_path(model, schedule, &start, grid, Scheme::Rk4, true)?,
            Sampler::Sde { alpha2 } => sde_path(model, schedule, &start, alpha2, grid, rng, true)?,
        };
        Ok(build_trajectory(model, schedule, grid, states, Some(seeding::split_seed(master_seed, i as u64))))
    })
}

/// Terminal points of a batch, in sample order; same seeding as
/// [`generate_trajectories`].
pub fn generate_samples(
    model: &ScoreModel,
    schedule: &Schedule,
    count: usize,
    grid: &TimeGrid,
    sampler: Sampler,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    run_batch(count, master_seed, |_, rng| {
        let start = sample_prior(schedule, model.dim(), rng);
        let mut states = match sampler {
            Sampler::Ode => ode_path(model, schedule, &start, grid, Scheme::Rk4, false)?,
            Sampler::Sde { alpha2 } => sde_path(model, schedule, &start, alpha2, grid, rng, false)?,
        };
        Ok(states.pop().unwrap_or_default())
    })
}
