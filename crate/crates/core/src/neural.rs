//! A small score network trained by hand-derived backpropagation.
//!
//! Architecture: `[x, φ(t)] → Linear(W) → ReLU → Linear(W) → ReLU → Linear(d)`,
//! where `φ(t) = [sin(2π fₖ t), cos(2π fₖ t)]ₖ` uses eight frozen random
//! frequencies. In [`NetMode::Score`] the output is the score itself; in
//! [`NetMode::Denoising`] it is `s̃ = σ(t)·s` and the score is `s̃/σ(t)`.
//!
//! With `x = m(t)x₀ + σ(t)η` the per-sample losses are
//!
//! * score matching, λ = σ²:  `|σ s(x,t) + η|²`
//! * denoising:               `|s̃(x,t) + η|²`
//! * Tikhonov (Γ = c/σ²·I):   `|σ s(x,t) + η|² + c|s(x,t)|²`

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::seeding;

pub const FOURIER_FEATURES: usize = 8;
pub const EMBEDDING_DIM: usize = 2 * FOURIER_FEATURES;

/// Time floor for the score-parameterized losses.
pub const SCORE_LOSS_TIME_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTimeEmbedding {
    frequencies: Vec<f64>,
}

impl FourierTimeEmbedding {
    /// Frequencies drawn from N(0, scale²).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidParameter(format!("Fourier scale {scale}: {e}")))?;
        Ok(FourierTimeEmbedding { frequencies: (0..FOURIER_FEATURES).map(|_| normal.sample(rng)).collect() })
    }

    pub fn from_frequencies(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.len() != FOURIER_FEATURES || frequencies.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidParameter(format!("expected {FOURIER_FEATURES} finite frequencies")));
        }
        Ok(FourierTimeEmbedding { frequencies })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        for (k, f) in self.frequencies.iter().enumerate() {
            let (s, c) = (2.0 * PI * f * t).sin_cos();
            out[k] = s;
            out[k + FOURIER_FEATURES] = c;
        }
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; EMBEDDING_DIM];
        self.embed_into(t, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetMode {
    Score,
    Denoising,
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    dim: usize,
    width: usize,
    input: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl Layout {
    fn new(dim: usize, width: usize) -> Self {
        let input = dim + EMBEDDING_DIM;
        let w1 = 0;
        let b1 = w1 + width * input;
        let w2 = b1 + width;
        let b2 = w2 + width * width;
        let w3 = b2 + width;
        let b3 = w3 + dim * width;
        Layout { dim, width, input, w1, b1, w2, b2, w3, b3, total: b3 + dim }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
struct Cache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    hidden1: Vec<f64>,
    pre2: Vec<f64>,
    hidden2: Vec<f64>,
    output: Vec<f64>,
}

impl Cache {
    fn new(layout: &Layout) -> Self {
        Cache {
            input: vec![0.0; layout.input],
            pre1: vec![0.0; layout.width],
            hidden1: vec![0.0; layout.width],
            pre2: vec![0.0; layout.width],
            hidden2: vec![0.0; layout.width],
            output: vec![0.0; layout.dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    embedding: FourierTimeEmbedding,
    dim: usize,
    width: usize,
    params: Vec<f64>,
}

impl ScoreNet {
    /// He-initialized weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dim: usize, width: usize, embedding: FourierTimeEmbedding, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dim, width, embedding)?;
        let l = net.layout();
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, gain: f64| {
            let std = (gain / fan_in as f64).sqrt();
            for p in &mut net.params[range] {
                let z: f64 = rng.sample(StandardNormal);
                *p = std * z;
            }
        };
        fill(l.w1..l.b1, l.input, 2.0);
        fill(l.w2..l.b2, l.width, 2.0);
        fill(l.w3..l.b3, l.width, 1.0);
        Ok(net)
    }

    /// Network and embedding both derived from `seed` (streams 0 and 1).
    pub fn seeded(dim: usize, width: usize, fourier_scale: f64, seed: u64) -> Result<Self> {
        let embedding = FourierTimeEmbedding::sample(&mut seeding::stream(seed, 0), fourier_scale)?;
        Self::new(dim, width, embedding, &mut seeding::stream(seed, 1))
    }

    pub fn zeros(dim: usize, width: usize, embedding: FourierTimeEmbedding) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::InvalidParameter("network dimension and width must be positive".into()));
        }
        let total = Layout::new(dim, width).total;
        Ok(ScoreNet { embedding, dim, width, params: vec![0.0; total] })
    }

    pub fn from_parts(dim: usize, width: usize, embedding: FourierTimeEmbedding, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dim, width, embedding)?;
        if params.len() != net.params.len() {
            return Err(Error::InvalidParameter(format!("expected {} parameters, got {}", net.params.len(), params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("parameters must be finite".into()));
        }
        net.params = params;
        Ok(net)
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dim, self.width)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn embedding(&self) -> &FourierTimeEmbedding {
        &self.embedding
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_cached(&self, x: &[f64], t: f64, cache: &mut Cache) {
        let l = self.layout();
        let p = &self.params;
        cache.input[..l.dim].copy_from_slice(x);
        self.embedding.embed_into(t, &mut cache.input[l.dim..]);

        for j in 0..l.width {
            let row = &p[l.w1 + j * l.input..l.w1 + (j + 1) * l.input];
            let a = p[l.b1 + j] + row.iter().zip(&cache.input).map(|(w, v)| w * v).sum::<f64>();
            cache.pre1[j] = a;
            cache.hidden1[j] = a.max(0.0);
        }
        for j in 0..l.width {
            let row = &p[l.w2 + j * l.width..l.w2 + (j + 1) * l.width];
            let a = p[l.b2 + j] + row.iter().zip(&cache.hidden1).map(|(w, v)| w * v).sum::<f64>();
            cache.pre2[j] = a;
            cache.hidden2[j] = a.max(0.0);
        }
        for k in 0..l.dim {
            let row = &p[l.w3 + k * l.width..l.w3 + (k + 1) * l.width];
            cache.output[k] = p[l.b3 + k] + row.iter().zip(&cache.hidden2).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates ∂L/∂θ into `grads` given ∂L/∂output.
    fn backward(&self, cache: &Cache, grad_out: &[f64], grads: &mut [f64], scratch: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        let (g_h2, g_h1) = scratch.split_at_mut(l.width);

        g_h2.fill(0.0);
        for k in 0..l.dim {
            let go = grad_out[k];
            grads[l.b3 + k] += go;
            let w_row = &p[l.w3 + k * l.width..l.w3 + (k + 1) * l.width];
            let g_row = &mut grads[l.w3 + k * l.width..l.w3 + (k + 1) * l.width];
            for j in 0..l.width {
                g_row[j] += go * cache.hidden2[j];
                g_h2[j] += go * w_row[j];
            }
        }
        g_h1.fill(0.0);
        for j in 0..l.width {
            if cache.pre2[j] <= 0.0 {
                continue;
            }
            let ga = g_h2[j];
            grads[l.b2 + j] += ga;
            let w_row = &p[l.w2 + j * l.width..l.w2 + (j + 1) * l.width];
            let g_row = &mut grads[l.w2 + j * l.width..l.w2 + (j + 1) * l.width];
            for i in 0..l.width {
                g_row[i] += ga * cache.hidden1[i];
                g_h1[i] += ga * w_row[i];
            }
        }
        for j in 0..l.width {
            if cache.pre1[j] <= 0.0 {
                continue;
            }
            let ga = g_h1[j];
            grads[l.b1 + j] += ga;
            let g_row = &mut grads[l.w1 + j * l.input..l.w1 + (j + 1) * l.input];
            for (g, v) in g_row.iter_mut().zip(&cache.input) {
                *g += ga * v;
            }
        }
    }

    /// Raw network output at (x, t).
    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut cache = Cache::new(&self.layout());
        self.forward_cached(x, t, &mut cache);
        cache.output
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>], ts: &[f64]) -> Vec<Vec<f64>> {
        let mut cache = Cache::new(&self.layout());
        xs.iter()
            .zip(ts)
            .map(|(x, &t)| {
                self.forward_cached(x, t, &mut cache);
                cache.output.clone()
            })
            .collect()
    }

    /// Smallest |pre-activation| over both hidden layers; near zero means a ReLU kink.
    pub fn kink_distance(&self, x: &[f64], t: f64) -> f64 {
        let mut cache = Cache::new(&self.layout());
        self.forward_cached(x, t, &mut cache);
        cache.pre1.iter().chain(&cache.pre2).fold(f64::INFINITY, |m, a| m.min(a.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LossKind {
    /// Score matching with λ(t) = σ²(t).
    ScoreMatching,
    /// Noise prediction; the network parameterizes σ(t)·s.
    Denoising,
    /// Score matching plus c|s|².
    Tikhonov { c: f64 },
}

impl LossKind {
    pub fn mode(&self) -> NetMode {
        match self {
            LossKind::Denoising => NetMode::Denoising,
            _ => NetMode::Score,
        }
    }

    /// Lower end of the training-time distribution.
    pub fn time_floor(&self) -> f64 {
        match self {
            LossKind::Denoising => 0.0,
            _ => SCORE_LOSS_TIME_FLOOR,
        }
    }

    pub fn label(&self) -> String {
        match self {
            LossKind::ScoreMatching => "score-matching".into(),
            LossKind::Denoising => "denoising".into(),
            LossKind::Tikhonov { c } => format!("tikhonov(c={c})"),
        }
    }

    /// Loss for a network prediction, with ∂loss/∂prediction written to `grad`.
    pub fn evaluate(&self, prediction: &[f64], sigma: f64, eta: &[f64], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        for k in 0..prediction.len() {
            let o = prediction[k];
            match self {
                LossKind::ScoreMatching => {
                    let r = sigma * o + eta[k];
                    loss += r * r;
                    grad[k] = 2.0 * sigma * r;
                }
                LossKind::Denoising => {
                    let r = o + eta[k];
                    loss += r * r;
                    grad[k] = 2.0 * r;
                }
                LossKind::Tikhonov { c } => {
                    let r = sigma * o + eta[k];
                    loss += r * r + c * o * o;
                    grad[k] = 2.0 * sigma * r + 2.0 * c * o;
                }
            }
        }
        loss
    }
}

/// Per-sample loss at `x = m(t)x0 + σ(t)η` and its exact parameter gradient.
pub fn loss_sample(net: &ScoreNet, schedule: &Schedule, x0: &[f64], t: f64, eta: &[f64], loss: LossKind) -> Result<(f64, Vec<f64>)> {
    if x0.len() != net.dim || eta.len() != net.dim {
        return Err(Error::DimensionMismatch { expected: net.dim, got: x0.len().min(eta.len()) });
    }
    let marginal = schedule.marginal(t)?;
    if t == 0.0 && loss.mode() == NetMode::Score {
        return Err(Error::SingularTime { t });
    }
    let mut work = Workspace::new(net);
    let value = work.accumulate(net, marginal.mean_coeff, marginal.std, x0, t, eta, loss);
    Ok((value, work.grads))
}

struct Workspace {
    cache: Cache,
    grads: Vec<f64>,
    grad_out: Vec<f64>,
    point: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(net: &ScoreNet) -> Self {
        let l = net.layout();
        Workspace {
            cache: Cache::new(&l),
            grads: vec![0.0; l.total],
            grad_out: vec![0.0; l.dim],
            point: vec![0.0; l.dim],
            scratch: vec![0.0; 2 * l.width],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate(&mut self, net: &ScoreNet, m: f64, sigma: f64, x0: &[f64], t: f64, eta: &[f64], loss: LossKind) -> f64 {
        for k in 0..x0.len() {
            self.point[k] = m * x0[k] + sigma * eta[k];
        }
        net.forward_cached(&self.point, t, &mut self.cache);
        let value = loss.evaluate(&self.cache.output, sigma, eta, &mut self.grad_out);
        net.backward(&self.cache, &self.grad_out, &mut self.grads, &mut self.scratch);
        value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    /// Zero means full batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(loss: LossKind, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            loss,
            epochs,
            batch_size: 0,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("Adam moments must lie in [0, 1) and epsilon > 0".into()));
        }
        if let LossKind::Tikhonov { c } = self.loss {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter("Tikhonov loss needs c > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Resumable training state; `run` may be called repeatedly to take snapshots.
pub struct Trainer<'a> {
    net: ScoreNet,
    data: &'a Dataset,
    schedule: &'a Schedule,
    config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<f64>,
    work: Workspace,
    order: Vec<usize>,
    eta: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(net: ScoreNet, data: &'a Dataset, schedule: &'a Schedule, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.dim() != net.dim {
            return Err(Error::DimensionMismatch { expected: net.dim, got: data.dim() });
        }
        let work = Workspace::new(&net);
        Ok(Trainer {
            adam: Adam::new(net.param_count()),
            rng: seeding::stream(config.seed, 2),
            eta: vec![0.0; net.dim],
            order: (0..data.len()).collect(),
            net,
            data,
            schedule,
            config,
            epoch: 0,
            history: Vec::new(),
            work,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn net(&self) -> &ScoreNet {
        &self.net
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Trains for `epochs` more epochs.
    pub fn run(&mut self, epochs: usize) -> Result<()> {
        let n = self.data.len();
        let batch = if self.config.batch_size == 0 { n } else { self.config.batch_size.min(n) };
        let horizon = self.schedule.horizon();
        let floor = self.config.loss.time_floor();
        for _ in 0..epochs {
            if batch < n {
                self.order.shuffle(&mut self.rng);
            }
            let mut epoch_loss = 0.0;
            for chunk in self.order.chunks(batch) {
                self.work.grads.fill(0.0);
                for &i in chunk {
                    let u: f64 = self.rng.random();
                    let t = horizon - u * (horizon - floor);
                    for e in &mut self.eta {
                        *e = self.rng.sample(StandardNormal);
                    }
                    let m = self.schedule.mean_coeff_unchecked(t);
                    let sigma = self.schedule.variance_unchecked(t).sqrt();
                    epoch_loss += self.work.accumulate(&self.net, m, sigma, self.data.point(i), t, &self.eta, self.config.loss);
                }
                let scale = 1.0 / chunk.len() as f64;
                for g in &mut self.work.grads {
                    *g *= scale;
                }
                self.adam.update(&mut self.net.params, &self.work.grads, &self.config);
            }
            let mean = epoch_loss / n as f64;
            if !mean.is_finite() || self.net.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch: self.epoch });
            }
            self.history.push(mean);
            self.epoch += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> (ScoreNet, Vec<f64>) {
        (self.net, self.history)
    }
}

/// Trains for `config.epochs` epochs; returns the net and per-epoch mean losses.
pub fn train(net: ScoreNet, data: &Dataset, schedule: &Schedule, config: &TrainConfig) -> Result<(ScoreNet, Vec<f64>)> {
    let mut trainer = Trainer::new(net, data, schedule, config.clone())?;
    trainer.run(config.epochs)?;
    Ok(trainer.finish())
}

/// A trained network viewed as a score function.
#[derive(Debug, Clone)]
pub struct NeuralScore {
    net: ScoreNet,
    mode: NetMode,
    label: String,
}

impl NeuralScore {
    pub fn new(net: ScoreNet, mode: NetMode) -> Self {
        let label = format!("neural({:?},width={})", mode, net.width).to_lowercase();
        NeuralScore { net, mode, label }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn net(&self) -> &ScoreNet {
        &self.net
    }

    pub fn mode(&self) -> NetMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.net.dim
    }

    pub fn regular_at_zero(&self) -> bool {
        self.mode == NetMode::Score
    }

    pub fn id(&self) -> String {
        self.label.clone()
    }

    pub fn score(&self, schedule: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.net.dim {
            return Err(Error::DimensionMismatch { expected: self.net.dim, got: x.len() });
        }
        match self.mode {
            NetMode::Score => {
                if !(t >= 0.0 && t <= schedule.horizon()) {
                    return Err(Error::TimeOutOfRange { t, horizon: schedule.horizon() });
                }
                Ok(self.net.forward(x, t))
            }
            NetMode::Denoising => {
                let sigma = schedule.variance(t)?.sqrt();
                if sigma == 0.0 {
                    return Err(Error::SingularTime { t });
                }
                let mut out = self.net.forward(x, t);
                for v in &mut out {
                    *v /= sigma;
                }
                Ok(out)
            }
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "scoremem-net";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub width: usize,
    pub frequencies: Vec<f64>,
    pub params: Vec<f64>,
    pub mode: NetMode,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(net: &ScoreNet, mode: NetMode, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: net.dim,
            width: net.width,
            frequencies: net.embedding.frequencies.clone(),
            params: net.params.clone(),
            mode,
            seed,
        }
    }

    pub fn restore(&self) -> Result<NeuralScore> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let embedding = FourierTimeEmbedding::from_frequencies(self.frequencies.clone())?;
        let net = ScoreNet::from_parts(self.dim, self.width, embedding, self.params.clone())?;
        Ok(NeuralScore::new(net, self.mode))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }
}
