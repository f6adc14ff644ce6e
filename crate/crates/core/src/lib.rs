//! Exact empirical score functions of diffusion models, the reverse dynamics
//! they drive, and diagnostics for how generated samples collapse onto the
//! training data.
//!
//! * [`schedule`]: forward noise schedules and Gaussian marginals.
//! * [`score`]: exact, Tikhonov, empirical-Bayes and conditional scores.
//! * [`dynamics`]: reverse ODE/SDE integrators and batch sampling.
//! * [`geometry`]: Voronoi classification and memorization metrics.
//! * [`neural`]: a small MLP score trained with hand-written backprop.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod neural;
pub mod quadrature;
pub mod schedule;
pub mod score;
pub mod seeding;

pub use data::Dataset;
pub use dynamics::{
    generate_samples, generate_trajectories, integrate_reverse_ode, integrate_reverse_ode_euler, integrate_reverse_sde,
    integrate_transformed_ode, reverse_ode_rhs, time_transform, time_transform_inverse, GridKind, Sampler, TimeGrid, Trajectory,
};
pub use error::{Error, Result};
pub use geometry::{
    convergence_rate_fit, memorization_fraction, pairwise_extremes, Classification, MemorizationReport, RateFit, VoronoiIndex,
};
pub use neural::{Checkpoint, LossKind, NetMode, NeuralScore, ScoreNet, TrainConfig, Trainer};
pub use schedule::{GaussianMarginal, ProcessKind, Rate, Schedule, ScheduleSpec};
pub use score::{
    conditional_empirical_score, empirical_bayes_score, empirical_score, mixture_log_density, mixture_weights, tikhonov_score, ScoreModel,
    WeightVector,
};
