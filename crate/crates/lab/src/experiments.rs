//! One runner per experiment kind. Each writes CSVs, SVG plots, a
//! `summary.json` and the manifest into the output directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use scoremem::dynamics::{generate_samples, generate_trajectories, integrate_reverse_ode, integrate_transformed_ode, sample_prior};
use scoremem::geometry::{
    bisector_distance, convergence_rate_fit, memorization_fraction, nearest_point, voronoi_edges_2d, DEFAULT_RATE_WINDOW,
};
use scoremem::{
    seeding, Checkpoint, Dataset, Error, GridKind, LossKind, MemorizationReport, NeuralScore, RateFit, Sampler, Schedule, ScoreModel,
    ScoreNet, TimeGrid, TrainConfig, Trainer, Trajectory,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, GridChoice, ModelKind};
use crate::error::{LabError, Result};
use crate::output::{coords, num, Manifest, Outputs};
use crate::svg::{Mark, Plot, PALETTE};

/// A collapsing trajectory passes the rate check when its slope against `s`
/// lies within this distance of −1 ...
pub const RATE_SLOPE_BAND: f64 = 0.1;
/// ... and the fit explains at least this much variance.
pub const RATE_MIN_R2: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub label: String,
    pub value: f64,
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub group: String,
    pub sample: usize,
    /// `None` when the trajectory did not end within τ of the data.
    pub fit: Option<RateFit>,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub metrics: BTreeMap<String, f64>,
    pub sweep: Vec<SweepPoint>,
    pub rate_fits: Vec<FitRow>,
    #[serde(skip)]
    pub manifest: Option<Manifest>,
}

impl Summary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    schedule: Schedule,
    data: Arc<Dataset>,
    out: Outputs,
    stamp: Option<String>,
    summary: Summary,
}

impl Run<'_> {
    fn metric(&mut self, name: &str, value: f64) {
        self.summary.metrics.insert(name.to_string(), value);
    }

    fn svg(&mut self, name: &str, plot: &Plot) -> Result<()> {
        let text = plot.render(self.stamp.as_deref());
        self.out.write(name, text.as_bytes())?;
        Ok(())
    }
}

/// Runs `cfg`, resolving relative dataset paths against `base_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, base_dir: &Path, output_dir: &Path) -> Result<Summary> {
    cfg.validate()?;
    let schedule = Schedule::from_spec(&cfg.schedule).map_err(|e| LabError::Config(e.to_string()))?;
    let data = Arc::new(cfg.dataset_spec()?.generate(base_dir)?);
    let stamp = cfg.svg_timestamp.then(|| {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        format!("unix {secs}")
    });
    let mut out = Outputs::create(output_dir)?;
    out.write("config.toml", config_text.as_bytes())?;
    write_dataset(&mut out, &data)?;
    let summary = Summary {
        experiment: cfg.experiment.name().to_string(),
        metrics: BTreeMap::new(),
        sweep: Vec::new(),
        rate_fits: Vec::new(),
        manifest: None,
    };
    let mut run = Run { cfg, schedule, data, out, stamp, summary };

    use ExperimentKind::*;
    match cfg.experiment {
        VoronoiTrajectories => voronoi_trajectories(&mut run)?,
        RateFit => {
            let count = cfg.sampling.count;
            rate_stage(&mut run, "rate", count)?
        }
        TwoPoint => two_point(&mut run)?,
        TikhonovSweep => tikhonov_sweep(&mut run)?,
        EbSweep => eb_sweep(&mut run)?,
        NnEpochSweep => nn_epoch_sweep(&mut run)?,
        NnWidthSweep => nn_width_sweep(&mut run)?,
        NnTikhonovSweep => nn_tikhonov_sweep(&mut run)?,
        NnLossCompare => nn_loss_compare(&mut run)?,
        VpTrajectories => vp_trajectories(&mut run)?,
        ConditionalDemo => conditional_demo(&mut run)?,
    }

    let Run { mut out, mut summary, .. } = run;
    out.json("summary.json", &summary)?;
    summary.manifest = Some(out.finish(cfg.experiment.name(), config_text)?);
    Ok(summary)
}

fn write_dataset(out: &mut Outputs, data: &Dataset) -> Result<()> {
    let mut header = vec!["index".to_string()];
    header.extend(coords("x", data.dim()));
    header.extend(coords("y", data.obs_dim()));
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(data.point(i).iter().map(|v| num(*v)));
            row.extend(data.observation(i).unwrap_or(&[]).iter().map(|v| num(*v)));
            row
        })
        .collect();
    out.csv("data.csv", &header, &rows)?;
    Ok(())
}

fn base_model(cfg: &ExperimentConfig, data: &Arc<Dataset>) -> Result<ScoreModel> {
    let c = cfg.model.c.unwrap_or(0.0);
    Ok(match cfg.model.kind {
        ModelKind::Exact => ScoreModel::exact(data.clone()),
        ModelKind::Tikhonov => ScoreModel::tikhonov(data.clone(), c)?,
        ModelKind::EmpiricalBayes => ScoreModel::empirical_bayes(data.clone(), c)?,
    })
}

fn sampler(cfg: &ExperimentConfig) -> Sampler {
    match cfg.sampling.alpha2 {
        Some(alpha2) if alpha2 > 0.0 => Sampler::Sde { alpha2 },
        _ => Sampler::Ode,
    }
}

/// The configured grid. `t_min = 0` forces a uniform-in-s grid, which needs
/// the Tikhonov offset of `model`.
fn sampling_grid(cfg: &ExperimentConfig, schedule: &Schedule, model: &ScoreModel, steps: usize) -> Result<TimeGrid> {
    let t_min = cfg.sampling.t_min;
    let grid = if cfg.sampling.grid == GridChoice::UniformInS || t_min == 0.0 {
        TimeGrid::uniform_in_s(schedule, t_min, steps, model.transform_offset())
    } else {
        TimeGrid::geometric(schedule, t_min, steps)
    };
    grid.map_err(|e| LabError::Config(format!("{e} (model {})", model.id())))
}

fn transformable(model: &ScoreModel) -> bool {
    matches!(model, ScoreModel::Exact(_) | ScoreModel::Tikhonov { .. } | ScoreModel::Conditional { .. })
}

/// Uniform-in-s grids use the transformed integrator when the model allows
/// it, anything else the original-time one. Sample `i` starts from stream
/// `i` of `seed` in both cases.
fn uses_transformed(model: &ScoreModel, grid: &TimeGrid, sampler: Sampler) -> bool {
    grid.kind() == GridKind::UniformInS && sampler == Sampler::Ode && transformable(model)
}

fn transformed_batch<T: Send>(
    model: &ScoreModel,
    schedule: &Schedule,
    count: usize,
    grid: &TimeGrid,
    seed: u64,
    keep: impl Fn(Trajectory) -> T + Sync,
) -> Result<Vec<T>> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()).into());
    }
    let results: Vec<scoremem::Result<T>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::stream(seed, i as u64);
            let start = sample_prior(schedule, model.dim(), &mut rng);
            let mut traj = integrate_transformed_ode(model, schedule, &start, grid)?;
            traj.seed = Some(seeding::split_seed(seed, i as u64));
            Ok(keep(traj))
        })
        .collect();
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
        Err(Error::SampleFailures(failures).into())
    }
}

fn draw_samples(
    model: &ScoreModel,
    schedule: &Schedule,
    count: usize,
    grid: &TimeGrid,
    sampler: Sampler,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if uses_transformed(model, grid, sampler) {
        transformed_batch(model, schedule, count, grid, seed, |t| t.terminal().to_vec())
    } else {
        Ok(generate_samples(model, schedule, count, grid, sampler, seed)?)
    }
}

fn draw_trajectories(
    model: &ScoreModel,
    schedule: &Schedule,
    count: usize,
    grid: &TimeGrid,
    sampler: Sampler,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if uses_transformed(model, grid, sampler) {
        transformed_batch(model, schedule, count, grid, seed, |t| t)
    } else {
        Ok(generate_trajectories(model, schedule, count, grid, sampler, seed)?)
    }
}

fn terminal_rows(samples: &[Vec<f64>], data: &Dataset, report: &MemorizationReport, prefix: &[String]) -> Vec<Vec<String>> {
    samples
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let (nearest, distance) = report.nearest[k];
            let mut row = prefix.to_vec();
            row.push(k.to_string());
            row.extend(x.iter().map(|v| num(*v)));
            row.push(nearest.to_string());
            row.push(num(distance));
            row.push(((distance < report.tau) as u8).to_string());
            row.push(((bisector_distance(data, x) < report.tau) as u8).to_string());
            row
        })
        .collect()
}

fn terminal_header(prefix: &[&str], dim: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.push("sample".into());
    h.extend(coords("x", dim));
    h.extend(["nearest", "distance", "collapsed", "near_boundary"].map(String::from));
    h
}

fn trajectory_rows(trajectories: &[Trajectory]) -> (Vec<String>, Vec<Vec<String>>) {
    let dim = trajectories.first().map_or(0, |t| t.initial().len());
    let mut header = vec!["sample".to_string(), "node".into(), "t".into(), "s".into()];
    header.extend(coords("x", dim));
    let mut rows = Vec::new();
    for (k, traj) in trajectories.iter().enumerate() {
        for (i, x) in traj.states.iter().enumerate() {
            let mut row = vec![k.to_string(), i.to_string(), num(traj.times[i]), num(traj.s[i])];
            row.extend(x.iter().map(|v| num(*v)));
            rows.push(row);
        }
    }
    (header, rows)
}

fn data_box(data: &Dataset) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in data.points() {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    ([lo[0] - 1.0, lo[1] - 1.0], [hi[0] + 1.0, hi[1] + 1.0])
}

/// Data, samples, a few trajectories and (optionally) the Voronoi edges.
fn scatter(run: &mut Run, name: &str, title: &str, samples: &[Vec<f64>], trajectories: &[Trajectory], voronoi: bool) -> Result<()> {
    if run.data.dim() != 2 {
        return Ok(());
    }
    let (lo, hi) = data_box(&run.data);
    let mut plot = Plot::new(title, "x_1", "x_2").x_range(lo[0], hi[0]).y_range(lo[1], hi[1]);
    if voronoi && run.data.is_distinct() {
        let edges = voronoi_edges_2d(&run.data, lo, hi)?;
        plot.segments("#bbbbbb", edges.iter().map(|e| ((e.start[0], e.start[1]), (e.end[0], e.end[1]))).collect());
    }
    for traj in trajectories {
        plot.series(None, "#9ecae1", Mark::Line, traj.states.iter().map(|x| (x[0], x[1])).collect());
    }
    plot.series(Some("samples"), PALETTE[0], Mark::Dots { radius: 1.5 }, samples.iter().map(|x| (x[0], x[1])).collect());
    plot.series(Some("data"), PALETTE[1], Mark::Dots { radius: 4.0 }, run.data.points().map(|x| (x[0], x[1])).collect());
    run.svg(name, &plot)
}

fn record_report(run: &mut Run, prefix: &str, report: &MemorizationReport) {
    let p = if prefix.is_empty() { String::new() } else { format!("{prefix}_") };
    run.metric(&format!("{p}fraction"), report.fraction_collapsed);
    run.metric(&format!("{p}collapsed"), report.collapsed as f64);
    run.metric(&format!("{p}total"), report.total as f64);
    run.metric(&format!("{p}boundary_proximal"), report.boundary_proximal as f64);
    run.metric(&format!("{p}unexplained"), report.unexplained as f64);
}

/// Samples, the memorization report, trajectories and the scatter plot.
fn sample_stage(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let model = base_model(cfg, &run.data)?;
    let grid = sampling_grid(cfg, &run.schedule, &model, cfg.sampling.steps)?;
    let sampler = sampler(cfg);
    let samples = draw_samples(&model, &run.schedule, cfg.sampling.count, &grid, sampler, cfg.seed)?;
    let report = memorization_fraction(&samples, &run.data, cfg.sampling.tau)?;
    record_report(run, "", &report);

    let rows = terminal_rows(&samples, &run.data, &report, &[]);
    run.out.csv("terminals.csv", &terminal_header(&[], run.data.dim()), &rows)?;
    run.out.json("report.json", &report)?;

    let dump = cfg.sampling.trajectories.min(cfg.sampling.count);
    let trajectories = if dump > 0 { draw_trajectories(&model, &run.schedule, dump, &grid, sampler, cfg.seed)? } else { Vec::new() };
    if !trajectories.is_empty() {
        let (header, rows) = trajectory_rows(&trajectories);
        run.out.csv("trajectories.csv", &header, &rows)?;
    }
    if run.data.dim() == 2 && run.data.is_distinct() {
        let (lo, hi) = data_box(&run.data);
        let edges = voronoi_edges_2d(&run.data, lo, hi)?;
        let header: Vec<String> = ["cell_a", "cell_b", "x_start", "y_start", "x_end", "y_end"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = edges
            .iter()
            .map(|e| vec![e.cells.0.to_string(), e.cells.1.to_string(), num(e.start[0]), num(e.start[1]), num(e.end[0]), num(e.end[1])])
            .collect();
        run.out.csv("voronoi_edges.csv", &header, &rows)?;
    }
    let title = format!("{} samples, {}, {}", samples.len(), model.id(), run.schedule.id());
    scatter(run, "scatter.svg", &title, &samples, &trajectories, true)
}

fn voronoi_trajectories(run: &mut Run) -> Result<()> {
    sample_stage(run)
}

fn vp_trajectories(run: &mut Run) -> Result<()> {
    if run.schedule.kind() != scoremem::ProcessKind::VariancePreserving {
        return Err(LabError::Config("vp-trajectories needs schedule.kind = \"vp\"".into()));
    }
    sample_stage(run)?;
    let count = run.cfg.sampling.trajectories.max(1);
    rate_stage(run, "rate", count)
}

/// Transformed-time trajectories on a uniform-in-s grid and their log-distance
/// slopes.
fn rate_stage(run: &mut Run, prefix: &str, count: usize) -> Result<()> {
    let cfg = run.cfg;
    let model = base_model(cfg, &run.data)?;
    if !transformable(&model) {
        return Err(LabError::Config(format!("rate fits need an exact or Tikhonov model, got {}", model.id())));
    }
    let t_min = cfg.sampling.t_min;
    let grid = TimeGrid::uniform_in_s(&run.schedule, t_min, cfg.sampling.steps, model.transform_offset())
        .map_err(|e| LabError::Config(e.to_string()))?;
    let trajectories = transformed_batch(&model, &run.schedule, count, &grid, cfg.seed, |t| t)?;
    let tau = cfg.sampling.tau;
    let mut fits = Vec::with_capacity(count);
    for (k, traj) in trajectories.iter().enumerate() {
        let fit = match convergence_rate_fit(traj, &run.data, &run.schedule, DEFAULT_RATE_WINDOW, tau) {
            Ok(mut f) => {
                f.sample_id = k;
                Some(f)
            }
            Err(Error::NotCollapsed { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let passes = fit.as_ref().is_some_and(|f| (f.slope_s + 1.0).abs() <= RATE_SLOPE_BAND && f.r2 >= RATE_MIN_R2);
        fits.push(FitRow { group: run.schedule.id(), sample: k, fit, passes });
    }

    let header: Vec<String> =
        ["sample", "collapsed", "limit_index", "slope_s", "slope_sigma", "r2", "nodes_used", "passes"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|r| match &r.fit {
            Some(f) => vec![
                r.sample.to_string(),
                "1".into(),
                f.limit_index.to_string(),
                num(f.slope_s),
                num(f.slope_sigma),
                num(f.r2),
                f.nodes_used.to_string(),
                (r.passes as u8).to_string(),
            ],
            None => {
                vec![r.sample.to_string(), "0".into(), String::new(), String::new(), String::new(), String::new(), "0".into(), "0".into()]
            }
        })
        .collect();
    run.out.csv(&format!("{prefix}_fits.csv"), &header, &rows)?;

    let passing = fits.iter().filter(|r| r.passes).count();
    let mut slopes: Vec<f64> = fits.iter().filter_map(|r| r.fit.as_ref().map(|f| f.slope_s)).collect();
    slopes.sort_by(f64::total_cmp);
    run.metric(&format!("{prefix}_passing"), passing as f64);
    run.metric(&format!("{prefix}_total"), count as f64);
    run.metric(&format!("{prefix}_collapsed"), slopes.len() as f64);
    if !slopes.is_empty() {
        run.metric(&format!("{prefix}_median_slope"), slopes[slopes.len() / 2]);
    }

    // ln‖x − x₀ⁿ‖ against s, for the trajectories drawn.
    let shown = cfg.sampling.trajectories.clamp(1, count);
    let mut plot = Plot::new(&format!("convergence rate, {}", run.schedule.id()), "s", "distance to limit point").log_y();
    let mut dist_rows = Vec::new();
    for (k, traj) in trajectories.iter().take(shown).enumerate() {
        let (limit, _) = nearest_point(&run.data, traj.terminal());
        let target = run.data.point(limit);
        let pts: Vec<(f64, f64)> = traj
            .states
            .iter()
            .zip(&traj.s)
            .map(|(x, s)| (*s, x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
            .collect();
        for (i, (s, d)) in pts.iter().enumerate() {
            dist_rows.push(vec![k.to_string(), i.to_string(), num(traj.times[i]), num(*s), limit.to_string(), num(*d)]);
        }
        plot.series(None, PALETTE[k % PALETTE.len()], Mark::Line, pts);
    }
    if let (Some(&s0), Some(&s1)) = (grid.transformed().first(), grid.transformed().last()) {
        // Reference slope −1 anchored at distance 1.
        plot.series(Some("slope -1"), "#000000", Mark::Line, vec![(s0, 1.0), (s1, (s0 - s1).exp())]);
    }
    let header: Vec<String> = ["sample", "node", "t", "s", "limit_index", "distance"].map(String::from).to_vec();
    run.out.csv(&format!("{prefix}_distances.csv"), &header, &dist_rows)?;
    run.svg(&format!("{prefix}_plot.svg"), &plot)?;
    run.summary.rate_fits.extend(fits);
    Ok(())
}

fn two_point(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let model = base_model(cfg, &run.data)?;
    let grid = sampling_grid(cfg, &run.schedule, &model, cfg.sampling.steps)?;
    let horizon = run.schedule.horizon();

    // On the symmetry axis the weights stay balanced and, for σ(t) = t, the
    // solution is x(t) = t·x(T)/T.
    let start = vec![0.0, cfg.two_point.height];
    let on_axis = integrate_reverse_ode(&model, &run.schedule, &start, &grid)?;
    let mut max_dev: f64 = 0.0;
    let mut rows = Vec::new();
    for (i, x) in on_axis.states.iter().enumerate() {
        let t = on_axis.times[i];
        let dev = x.iter().zip(&start).map(|(a, b)| (a - t * b / horizon).powi(2)).sum::<f64>().sqrt();
        max_dev = max_dev.max(dev);
        let mut row = vec![i.to_string(), num(t), num(on_axis.s[i])];
        row.extend(x.iter().map(|v| num(*v)));
        row.push(num(dev));
        rows.push(row);
    }
    let mut header = vec!["node".to_string(), "t".into(), "s".into()];
    header.extend(coords("x", start.len()));
    header.push("deviation".into());
    run.out.csv("on_axis.csv", &header, &rows)?;
    let terminal_norm = on_axis.terminal().iter().map(|v| v * v).sum::<f64>().sqrt();
    run.metric("on_axis_max_deviation", max_dev);
    run.metric("on_axis_terminal_norm", terminal_norm);

    let sampler = sampler(cfg);
    let samples = draw_samples(&model, &run.schedule, cfg.sampling.count, &grid, sampler, cfg.seed)?;
    let report = memorization_fraction(&samples, &run.data, cfg.sampling.tau)?;
    record_report(run, "off_axis", &report);
    let rows = terminal_rows(&samples, &run.data, &report, &[]);
    run.out.csv("off_axis_terminals.csv", &terminal_header(&[], run.data.dim()), &rows)?;

    let dump = cfg.sampling.trajectories.min(cfg.sampling.count);
    let mut trajectories = if dump > 0 { draw_trajectories(&model, &run.schedule, dump, &grid, sampler, cfg.seed)? } else { Vec::new() };
    let norm_plot = {
        let mut p = Plot::new("on-axis trajectory", "t", "|x(t)|").log_x().log_y();
        let pts = on_axis.states.iter().zip(&on_axis.times).map(|(x, t)| (*t, x.iter().map(|v| v * v).sum::<f64>().sqrt()));
        p.series(Some("|x(t)|"), PALETTE[0], Mark::Line, pts.collect());
        let h = cfg.two_point.height.abs();
        p.series(Some("t |x(T)| / T"), PALETTE[1], Mark::Line, on_axis.times.iter().map(|t| (*t, t * h / horizon)).collect());
        p
    };
    run.svg("on_axis_rate.svg", &norm_plot)?;
    trajectories.push(on_axis);
    scatter(run, "scatter.svg", "two-point trajectories", &samples, &trajectories, true)
}

/// Memorized fraction per (value, seed), with `model_for` building the score.
fn fraction_sweep(run: &mut Run, name: &str, values: &[f64], seeds: &[u64], model_for: impl Fn(f64) -> Result<ScoreModel>) -> Result<()> {
    let cfg = run.cfg;
    let sampler = sampler(cfg);
    let mut rows = Vec::new();
    let mut terminals = Vec::new();
    for &value in values {
        let model = model_for(value)?;
        let grid = sampling_grid(cfg, &run.schedule, &model, cfg.sampling.steps)?;
        let mut fractions = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let samples = draw_samples(&model, &run.schedule, cfg.sampling.count, &grid, sampler, seed)?;
            let report = memorization_fraction(&samples, &run.data, cfg.sampling.tau)?;
            rows.push(vec![
                num(value),
                seed.to_string(),
                num(report.fraction_collapsed),
                report.collapsed.to_string(),
                report.boundary_proximal.to_string(),
                report.unexplained.to_string(),
                report.total.to_string(),
            ]);
            terminals.extend(terminal_rows(&samples, &run.data, &report, &[num(value), seed.to_string()]));
            fractions.push(report.fraction_collapsed);
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        run.summary.sweep.push(SweepPoint { label: model.id(), value, seeds: seeds.to_vec(), fractions, mean });
    }
    let header: Vec<String> =
        ["c", "seed", "fraction", "collapsed", "boundary_proximal", "unexplained", "total"].map(String::from).to_vec();
    run.out.csv(&format!("{name}.csv"), &header, &rows)?;
    run.out.csv("terminals.csv", &terminal_header(&["c", "seed"], run.data.dim()), &terminals)?;
    let mut means: Vec<Vec<String>> =
        run.summary.sweep.iter().map(|p| vec![num(p.value), num(p.mean), p.fractions.len().to_string()]).collect();
    means.sort_by(|a, b| a[0].parse::<f64>().unwrap_or(0.0).total_cmp(&b[0].parse::<f64>().unwrap_or(0.0)));
    run.out.csv(&format!("{name}_mean.csv"), &["c", "mean_fraction", "seeds"].map(String::from), &means)?;
    sweep_plot(run, &format!("{name}.svg"), "c", true)
}

fn sweep_plot(run: &mut Run, name: &str, x_label: &str, log_x: bool) -> Result<()> {
    let title = format!("{} (tau = {})", run.cfg.experiment.name(), run.cfg.sampling.tau);
    let mut plot = Plot::new(&title, x_label, "memorized fraction").y_range(-0.02, 1.02);
    if log_x {
        plot = plot.log_x();
    }
    let mut pts: Vec<(f64, f64)> = run.summary.sweep.iter().map(|p| (p.value, p.mean)).collect();
    if log_x {
        pts.retain(|p| p.0 > 0.0);
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per_seed: Vec<(f64, f64)> =
        run.summary.sweep.iter().flat_map(|p| p.fractions.iter().map(move |f| (p.value, *f))).filter(|p| !log_x || p.0 > 0.0).collect();
    plot.series(Some("per seed"), "#9ecae1", Mark::Dots { radius: 2.5 }, per_seed);
    plot.series(Some("mean"), PALETTE[0], Mark::LineAndDots, pts);
    run.svg(name, &plot)
}

fn tikhonov_sweep(run: &mut Run) -> Result<()> {
    let data = run.data.clone();
    let values = run.cfg.sweep.values.clone();
    let seeds = run.cfg.seeds();
    fraction_sweep(run, "sweep", &values, &seeds, |c| Ok(ScoreModel::tikhonov(data.clone(), c)?))
}

fn eb_sweep(run: &mut Run) -> Result<()> {
    let data = run.data.clone();
    let values = run.cfg.sweep.values.clone();
    let seeds = run.cfg.seeds();
    fraction_sweep(run, "sweep", &values, &seeds, |c| {
        if c == 0.0 {
            Ok(ScoreModel::exact(data.clone()))
        } else {
            Ok(ScoreModel::empirical_bayes(data.clone(), c)?)
        }
    })
}

/// One training run, evaluated at each epoch count in `snapshots`.
struct NeuralRun {
    tag: String,
    loss: LossKind,
    width: usize,
    seed: u64,
}

/// Trains, snapshots and samples; returns the fraction at each snapshot.
fn neural_run(run: &mut Run, spec: &NeuralRun, snapshots: &[usize]) -> Result<Vec<f64>> {
    let cfg = run.cfg;
    let n = &cfg.neural;
    let net = ScoreNet::seeded(run.data.dim(), spec.width, n.fourier_scale, spec.seed)?;
    let mut train = TrainConfig::new(spec.loss, snapshots.iter().copied().max().unwrap_or(0), spec.seed);
    train.learning_rate = n.learning_rate;
    train.batch_size = n.batch_size;
    let mut trainer = Trainer::new(net, &run.data, &run.schedule, train)?;
    let grid = TimeGrid::geometric(&run.schedule, cfg.sampling.t_min, n.sample_steps).map_err(|e| LabError::Config(e.to_string()))?;
    let sampler = sampler(cfg);
    let mut fractions = Vec::with_capacity(snapshots.len());
    for &epochs in snapshots {
        trainer.run(epochs - trainer.epoch())?;
        let model = ScoreModel::neural(NeuralScore::new(trainer.net().clone(), spec.loss.mode()).with_label(&spec.tag));
        let samples = draw_samples(&model, &run.schedule, cfg.sampling.count, &grid, sampler, cfg.seed)?;
        let report = memorization_fraction(&samples, &run.data, cfg.sampling.tau)?;
        let name = format!("{}_e{epochs}", spec.tag);
        let rows = terminal_rows(&samples, &run.data, &report, &[]);
        run.out.csv(&format!("samples_{name}.csv"), &terminal_header(&[], run.data.dim()), &rows)?;
        let checkpoint = Checkpoint::new(trainer.net(), spec.loss.mode(), spec.seed);
        let text = serde_json::to_string(&checkpoint).map_err(|e| LabError::Config(e.to_string()))?;
        run.out.write(&format!("checkpoint_{name}.json"), text.as_bytes())?;
        fractions.push(report.fraction_collapsed);
    }
    let rows: Vec<Vec<String>> = trainer.history().iter().enumerate().map(|(e, l)| vec![(e + 1).to_string(), num(*l)]).collect();
    run.out.csv(&format!("loss_{}.csv", spec.tag), &["epoch".into(), "mean_loss".into()], &rows)?;
    Ok(fractions)
}

fn push_point(run: &mut Run, label: String, value: f64, seeds: &[u64], fractions: Vec<f64>) {
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    run.summary.sweep.push(SweepPoint { label, value, seeds: seeds.to_vec(), fractions, mean });
}

fn write_sweep_table(run: &mut Run, name: &str, column: &str) -> Result<()> {
    let mut rows = Vec::new();
    for p in &run.summary.sweep {
        for (seed, f) in p.seeds.iter().zip(&p.fractions) {
            rows.push(vec![p.label.clone(), num(p.value), seed.to_string(), num(*f)]);
        }
    }
    run.out.csv(name, &["label".into(), column.into(), "seed".into(), "fraction".into()], &rows)?;
    let means: Vec<Vec<String>> = run.summary.sweep.iter().map(|p| vec![p.label.clone(), num(p.value), num(p.mean)]).collect();
    let mean_name = name.replace(".csv", "_mean.csv");
    run.out.csv(&mean_name, &["label".into(), column.into(), "mean_fraction".into()], &means)?;
    Ok(())
}

fn nn_epoch_sweep(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let mut epochs = cfg.neural.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();
    let seeds = cfg.seeds();
    let loss = cfg.neural.loss_kind()?;
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let spec = NeuralRun { tag: format!("w{}_s{seed}", cfg.neural.width), loss, width: cfg.neural.width, seed };
        per_seed.push(neural_run(run, &spec, &epochs)?);
    }
    for (k, &e) in epochs.iter().enumerate() {
        push_point(run, format!("epochs={e}"), e as f64, &seeds, per_seed.iter().map(|f| f[k]).collect());
    }
    write_sweep_table(run, "sweep.csv", "epochs")?;
    sweep_plot(run, "sweep.svg", "epochs", true)
}

fn nn_width_sweep(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let epochs = cfg.neural.epochs.iter().copied().max().unwrap_or(1);
    let seeds = cfg.seeds();
    let loss = cfg.neural.loss_kind()?;
    for &width in &cfg.neural.widths {
        let mut fractions = Vec::new();
        for &seed in &seeds {
            let spec = NeuralRun { tag: format!("w{width}_s{seed}"), loss, width, seed };
            fractions.extend(neural_run(run, &spec, &[epochs])?);
        }
        push_point(run, format!("width={width}"), width as f64, &seeds, fractions);
    }
    write_sweep_table(run, "sweep.csv", "width")?;
    sweep_plot(run, "sweep.svg", "width", true)
}

fn nn_tikhonov_sweep(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let epochs = cfg.neural.epochs.iter().copied().max().unwrap_or(1);
    let seeds = cfg.seeds();
    for (k, &c) in cfg.sweep.values.iter().enumerate() {
        let mut fractions = Vec::new();
        for &seed in &seeds {
            let spec = NeuralRun { tag: format!("c{k}_s{seed}"), loss: LossKind::Tikhonov { c }, width: cfg.neural.width, seed };
            fractions.extend(neural_run(run, &spec, &[epochs])?);
        }
        push_point(run, format!("tikhonov(c={c})"), c, &seeds, fractions);
    }
    write_sweep_table(run, "sweep.csv", "c")?;
    sweep_plot(run, "sweep.svg", "c", true)
}

fn nn_loss_compare(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let epochs = cfg.neural.epochs.iter().copied().max().unwrap_or(1);
    let seeds = cfg.seeds();
    for (k, loss) in [LossKind::ScoreMatching, LossKind::Denoising].into_iter().enumerate() {
        let mut fractions = Vec::new();
        for &seed in &seeds {
            let spec = NeuralRun { tag: format!("{}_s{seed}", loss.label()), loss, width: cfg.neural.width, seed };
            fractions.extend(neural_run(run, &spec, &[epochs])?);
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        run.metric(&format!("fraction_{}", loss.label().replace('-', "_")), mean);
        push_point(run, loss.label(), k as f64, &seeds, fractions);
    }
    write_sweep_table(run, "sweep.csv", "loss_index")?;
    sweep_plot(run, "sweep.svg", "loss (0 = score matching, 1 = denoising)", false)
}

fn conditional_demo(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    if !run.data.has_observations() {
        return Err(LabError::Config("conditional-demo needs a paired dataset, e.g. paired-linear(N, seed)".into()));
    }
    let observations =
        if cfg.conditional.observations.is_empty() { run.data.distinct_observations() } else { cfg.conditional.observations.clone() };
    let sampler = sampler(cfg);
    let tau = cfg.sampling.tau;
    let dim = run.data.dim();
    let mut sample_rows = Vec::new();
    let mut group_rows = Vec::new();
    let (mut in_group, mut out_hits, mut total) = (0usize, 0usize, 0usize);
    let mut plot_groups = Vec::new();
    for (j, y) in observations.iter().enumerate() {
        let model = ScoreModel::conditional(&run.data, y)?;
        let members = run.data.index_set(y)?;
        let grid = sampling_grid(cfg, &run.schedule, &model, cfg.sampling.steps)?;
        let samples = draw_samples(&model, &run.schedule, cfg.sampling.count, &grid, sampler, seeding::split_seed(cfg.seed, j as u64))?;
        let (mut g_in, mut g_out) = (0usize, 0usize);
        for (k, x) in samples.iter().enumerate() {
            let dist = |i: usize| run.data.point(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let (nearest, distance) = nearest_point(&run.data, x);
            let d_in = members.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
            let d_out = (0..run.data.len()).filter(|i| !members.contains(i)).map(dist).fold(f64::INFINITY, f64::min);
            let hit_in = d_in < tau;
            let hit_out = d_out < tau;
            g_in += hit_in as usize;
            g_out += hit_out as usize;
            let mut row = vec![j.to_string()];
            row.extend(y.iter().map(|v| num(*v)));
            row.push(k.to_string());
            row.extend(x.iter().map(|v| num(*v)));
            row.extend([
                nearest.to_string(),
                num(distance),
                num(d_in),
                num(d_out),
                (hit_in as u8).to_string(),
                (hit_out as u8).to_string(),
            ]);
            sample_rows.push(row);
        }
        let mut row = vec![j.to_string()];
        row.extend(y.iter().map(|v| num(*v)));
        row.extend([members.len().to_string(), samples.len().to_string(), num(g_in as f64 / samples.len() as f64), g_out.to_string()]);
        group_rows.push(row);
        in_group += g_in;
        out_hits += g_out;
        total += samples.len();
        plot_groups.push((members, samples));
    }
    let obs_dim = run.data.obs_dim();
    let mut header = vec!["group".to_string()];
    header.extend(coords("y", obs_dim));
    header.push("sample".into());
    header.extend(coords("x", dim));
    header.extend(
        ["nearest", "distance", "in_group_distance", "out_of_group_distance", "in_group_hit", "out_of_group_hit"].map(String::from),
    );
    run.out.csv("conditional_samples.csv", &header, &sample_rows)?;
    let mut header = vec!["group".to_string()];
    header.extend(coords("y", obs_dim));
    header.extend(["members", "samples", "in_group_fraction", "out_of_group_hits"].map(String::from));
    run.out.csv("groups.csv", &header, &group_rows)?;
    run.metric("groups", observations.len() as f64);
    run.metric("total", total as f64);
    run.metric("in_group_fraction", in_group as f64 / total as f64);
    run.metric("out_of_group_hits", out_hits as f64);

    if dim == 2 {
        let (lo, hi) = data_box(&run.data);
        let mut plot = Plot::new("conditional samples by observation", "x_1", "x_2").x_range(lo[0], hi[0]).y_range(lo[1], hi[1]);
        for (j, (members, samples)) in plot_groups.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            let label = format!("y = {}", observations[j].iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
            plot.series(None, color, Mark::Dots { radius: 1.5 }, samples.iter().map(|x| (x[0], x[1])).collect());
            plot.series(
                Some(&label),
                color,
                Mark::Dots { radius: 5.0 },
                members.iter().map(|&i| (run.data.point(i)[0], run.data.point(i)[1])).collect(),
            );
        }
        run.svg("conditional.svg", &plot)?;
    }
    Ok(())
}
