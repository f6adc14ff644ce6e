//! Experiment configuration, read from TOML.
//!
//! ```toml
//! experiment = "tikhonov-sweep"
//! seed = 1
//! output_dir = "output/tikhonov"
//!
//! [schedule]
//! kind = "ve"
//! T = 1.0
//! g = { name = "10^t", params = [] }
//!
//! [dataset]
//! spec = "gaussian2d(20, 1234)"
//!
//! [sampling]
//! count = 1000
//! tau = 0.01
//! t_min = 0.0
//!
//! [sweep]
//! values = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scoremem::dynamics::{DEFAULT_STEPS, DEFAULT_T_MIN};
use scoremem::schedule::ScheduleSpec;
use scoremem::LossKind;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetSpec;
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VoronoiTrajectories,
    RateFit,
    TwoPoint,
    TikhonovSweep,
    EbSweep,
    NnEpochSweep,
    NnWidthSweep,
    NnTikhonovSweep,
    NnLossCompare,
    VpTrajectories,
    ConditionalDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::VoronoiTrajectories,
        ExperimentKind::RateFit,
        ExperimentKind::TwoPoint,
        ExperimentKind::TikhonovSweep,
        ExperimentKind::EbSweep,
        ExperimentKind::NnEpochSweep,
        ExperimentKind::NnWidthSweep,
        ExperimentKind::NnTikhonovSweep,
        ExperimentKind::NnLossCompare,
        ExperimentKind::VpTrajectories,
        ExperimentKind::ConditionalDemo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::VoronoiTrajectories => "voronoi-trajectories",
            ExperimentKind::RateFit => "rate-fit",
            ExperimentKind::TwoPoint => "two-point",
            ExperimentKind::TikhonovSweep => "tikhonov-sweep",
            ExperimentKind::EbSweep => "eb-sweep",
            ExperimentKind::NnEpochSweep => "nn-epoch-sweep",
            ExperimentKind::NnWidthSweep => "nn-width-sweep",
            ExperimentKind::NnTikhonovSweep => "nn-tikhonov-sweep",
            ExperimentKind::NnLossCompare => "nn-loss-compare",
            ExperimentKind::VpTrajectories => "vp-trajectories",
            ExperimentKind::ConditionalDemo => "conditional-demo",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            ExperimentKind::VoronoiTrajectories => "exact-score reverse ODE samples over the Voronoi diagram of the data",
            ExperimentKind::RateFit => "log-distance versus transformed time slopes of collapsing trajectories",
            ExperimentKind::TwoPoint => "two symmetric points: the on-axis exact solution and off-axis collapse",
            ExperimentKind::TikhonovSweep => "memorized fraction versus the Tikhonov parameter c",
            ExperimentKind::EbSweep => "memorized fraction versus the empirical-Bayes density floor c",
            ExperimentKind::NnEpochSweep => "neural score: memorized fraction versus training epochs",
            ExperimentKind::NnWidthSweep => "neural score: memorized fraction versus hidden width",
            ExperimentKind::NnTikhonovSweep => "neural score trained with a Tikhonov penalty, fraction versus c",
            ExperimentKind::NnLossCompare => "neural score: score-matching versus denoising loss",
            ExperimentKind::VpTrajectories => "variance-preserving exact-score trajectories and their rates",
            ExperimentKind::ConditionalDemo => "conditional empirical score: collapse onto each observation's group",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| LabError::Usage(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    /// Generator spec, see [`crate::datasets`].
    pub spec: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Exact,
    Tikhonov,
    EmpiricalBayes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default)]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridChoice {
    #[default]
    Geometric,
    UniformInS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    pub count: usize,
    pub tau: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub grid: GridChoice,
    /// Reverse-SDE noise level; absent means the probability-flow ODE.
    #[serde(default)]
    pub alpha2: Option<f64>,
    /// How many full trajectories to export.
    #[serde(default = "default_dump")]
    pub trajectories: usize,
}

fn default_t_min() -> f64 {
    DEFAULT_T_MIN
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_dump() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub values: Vec<f64>,
    /// Sampling (and, for neural runs, training) seeds to average over.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossChoice {
    ScoreMatching,
    Denoising,
    Tikhonov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralBlock {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: Vec<usize>,
    #[serde(default = "default_loss")]
    pub loss: LossChoice,
    /// Tikhonov c for `loss = "tikhonov"`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "default_scale")]
    pub fourier_scale: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Zero means full batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default = "default_neural_steps")]
    pub sample_steps: usize,
}

fn default_width() -> usize {
    32
}
fn default_epochs() -> Vec<usize> {
    vec![30_000]
}
fn default_loss() -> LossChoice {
    LossChoice::ScoreMatching
}
fn default_scale() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    1e-3
}
fn default_neural_steps() -> usize {
    200
}

impl Default for NeuralBlock {
    fn default() -> Self {
        NeuralBlock {
            width: default_width(),
            widths: Vec::new(),
            epochs: default_epochs(),
            loss: default_loss(),
            c: None,
            fourier_scale: default_scale(),
            learning_rate: default_lr(),
            batch_size: 0,
            sample_steps: default_neural_steps(),
        }
    }
}

impl NeuralBlock {
    pub fn loss_kind(&self) -> Result<LossKind> {
        match self.loss {
            LossChoice::ScoreMatching => Ok(LossKind::ScoreMatching),
            LossChoice::Denoising => Ok(LossKind::Denoising),
            LossChoice::Tikhonov => match self.c {
                Some(c) if c > 0.0 => Ok(LossKind::Tikhonov { c }),
                _ => Err(LabError::Config("neural.loss = \"tikhonov\" needs neural.c > 0".into())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TwoPointBlock {
    /// x(T) = (0, height) for the on-axis run.
    #[serde(default = "default_height")]
    pub height: f64,
}

fn default_height() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConditionalBlock {
    /// Observations to condition on; defaults to every distinct observation.
    #[serde(default)]
    pub observations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Master sampling seed.
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub schedule: ScheduleSpec,
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub model: ModelBlock,
    pub sampling: SamplingBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub neural: NeuralBlock,
    #[serde(default)]
    pub two_point: TwoPointBlock,
    #[serde(default)]
    pub conditional: ConditionalBlock,
    /// Write a generation-time comment into SVG files.
    #[serde(default = "default_true")]
    pub svg_timestamp: bool,
}

fn default_true() -> bool {
    true
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LabError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        self.dataset.spec.parse()
    }

    /// Seeds to average over; falls back to the master seed.
    pub fn seeds(&self) -> Vec<u64> {
        if self.sweep.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.sweep.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        use ExperimentKind::*;
        self.dataset_spec()?;
        let s = &self.sampling;
        if s.count == 0 {
            return Err(LabError::Config("sampling.count must be >= 1".into()));
        }
        positive("sampling.tau", s.tau)?;
        if !(s.t_min >= 0.0 && s.t_min < self.schedule.horizon) {
            return Err(LabError::Config(format!("sampling.t_min must lie in [0, T), got {}", s.t_min)));
        }
        if s.steps < 2 {
            return Err(LabError::Config("sampling.steps must be >= 2".into()));
        }
        if let Some(a) = s.alpha2 {
            if !(a >= 0.0) {
                return Err(LabError::Config(format!("sampling.alpha2 must be >= 0, got {a}")));
            }
        }
        match self.model.kind {
            ModelKind::Exact => {}
            ModelKind::Tikhonov | ModelKind::EmpiricalBayes => {
                positive("model.c", self.model.c.unwrap_or(f64::NAN))?;
            }
        }
        let zero_allowed = self.model.kind == ModelKind::Tikhonov || self.experiment == TikhonovSweep;
        if s.t_min == 0.0 && !zero_allowed {
            return Err(LabError::Config(format!(
                "sampling.t_min = 0 is only allowed for Tikhonov scores (experiment {})",
                self.experiment
            )));
        }
        match self.experiment {
            TikhonovSweep => {
                if self.sweep.values.is_empty() {
                    return Err(LabError::Config("tikhonov-sweep needs sweep.values".into()));
                }
                for &c in &self.sweep.values {
                    positive("sweep.values entry", c)?;
                }
            }
            EbSweep => {
                if self.sweep.values.is_empty() || self.sweep.values.iter().any(|c| !(*c >= 0.0)) {
                    return Err(LabError::Config("eb-sweep needs non-negative sweep.values".into()));
                }
            }
            NnTikhonovSweep => {
                if self.sweep.values.is_empty() {
                    return Err(LabError::Config("nn-tikhonov-sweep needs sweep.values".into()));
                }
                for &c in &self.sweep.values {
                    positive("sweep.values entry", c)?;
                }
            }
            NnWidthSweep if self.neural.widths.is_empty() || self.neural.widths.contains(&0) => {
                return Err(LabError::Config("nn-width-sweep needs positive neural.widths".into()));
            }
            _ => {}
        }
        let n = &self.neural;
        if n.width == 0 || n.epochs.is_empty() || n.epochs.contains(&0) {
            return Err(LabError::Config("neural.width and neural.epochs must be positive".into()));
        }
        positive("neural.fourier_scale", n.fourier_scale)?;
        positive("neural.learning_rate", n.learning_rate)?;
        if n.sample_steps < 2 {
            return Err(LabError::Config("neural.sample_steps must be >= 2".into()));
        }
        if n.loss == LossChoice::Tikhonov {
            n.loss_kind()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "voronoi-trajectories"
seed = 1

[schedule]
kind = "ve"
T = 1.0
g = { name = "10^t", params = [] }

[dataset]
spec = "gaussian2d(20, 1234)"

[sampling]
count = 10
tau = 0.01
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.sampling.t_min, DEFAULT_T_MIN);
        assert_eq!(cfg.sampling.steps, DEFAULT_STEPS);
        assert_eq!(cfg.model.kind, ModelKind::Exact);
        assert_eq!(cfg.seeds(), vec![1]);
        assert!(cfg.svg_timestamp);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for (from, to) in [
            ("count = 10", "count = 0"),
            ("tau = 0.01", "tau = -1.0"),
            ("seed = 1", ""),
            ("gaussian2d(20, 1234)", "nope"),
            ("voronoi-trajectories", "fig-99"),
            ("tau = 0.01", "tau = 0.01\nt_min = 0.0"),
            ("tau = 0.01", "tau = 0.01\nbogus = 3"),
        ] {
            let text = MINIMAL.replace(from, to);
            let err = ExperimentConfig::from_toml(&text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{from} -> {to}");
        }
    }

    #[test]
    fn experiment_names_round_trip() {
        for kind in ExperimentKind::ALL {
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
    }
}
