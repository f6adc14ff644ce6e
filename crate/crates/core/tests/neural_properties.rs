use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use scoremem::neural::{loss_sample, train, Checkpoint};
use scoremem::seeding;
use scoremem::{
    generate_samples, tikhonov_score, Dataset, Error, LossKind, NetMode, NeuralScore, Sampler, Schedule, ScoreModel, ScoreNet, TimeGrid,
    TrainConfig,
};

fn paper_data() -> Dataset {
    Dataset::standard_gaussian(20, 2, 1234).unwrap()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let schedule = Schedule::vp_linear(1.0);
    let mut rng = seeding::stream(31, 0);
    for loss in [LossKind::ScoreMatching, LossKind::Denoising, LossKind::Tikhonov { c: 0.1 }] {
        let mut net = ScoreNet::seeded(2, 16, 1.0, 31).unwrap();
        let mut inputs = 0;
        while inputs < 10 {
            let x0: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let eta: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let t = rng.random_range(0.05..=1.0);
            let m = schedule.mean_coeff(t).unwrap();
            let sd = schedule.variance(t).unwrap().sqrt();
            let x: Vec<f64> = (0..2).map(|k| m * x0[k] + sd * eta[k]).collect();
            if net.kink_distance(&x, t) < 1e-3 {
                continue;
            }
            let (_, grad) = loss_sample(&net, &schedule, &x0, t, &eta, loss).unwrap();
            for _ in 0..20 {
                let k = rng.random_range(0..net.param_count());
                let h = 1e-6;
                let orig = net.params()[k];
                net.params_mut()[k] = orig + h;
                let (up, _) = loss_sample(&net, &schedule, &x0, t, &eta, loss).unwrap();
                net.params_mut()[k] = orig - h;
                let (down, _) = loss_sample(&net, &schedule, &x0, t, &eta, loss).unwrap();
                net.params_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-4, "{loss:?} param {k}: analytic {} vs fd {fd}", grad[k]);
            }
            inputs += 1;
        }
    }
}

#[test]
fn training_reduces_the_loss() {
    let data = paper_data();
    let schedule = Schedule::vp_linear(1.0);
    let cfg = TrainConfig::new(LossKind::ScoreMatching, 5000, 1);
    let (_, history) = train(ScoreNet::seeded(2, 32, 1.0, 1).unwrap(), &data, &schedule, &cfg).unwrap();
    // Single epochs are noisy; compare 100-epoch means at both ends.
    let head: f64 = history[..100].iter().sum::<f64>() / 100.0;
    let tail: f64 = history[history.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(tail <= 0.9 * head, "loss went from {head} to {tail}");
}

#[test]
fn tikhonov_training_approaches_the_damped_score() {
    let data = paper_data();
    let schedule = Schedule::vp_linear(1.0);
    let c = 0.1;
    let cfg = TrainConfig::new(LossKind::Tikhonov { c }, 30_000, 2);
    let (net, _) = train(ScoreNet::seeded(2, 32, 1.0, 2).unwrap(), &data, &schedule, &cfg).unwrap();
    let model = NeuralScore::new(net, NetMode::Score);
    let mut errors = Vec::new();
    for t in [0.2, 0.4, 0.6, 0.8, 1.0] {
        for i in 0..7 {
            for j in 0..7 {
                let x = [-2.0 + 4.0 * i as f64 / 6.0, -2.0 + 4.0 * j as f64 / 6.0];
                let target = tikhonov_score(&data, &schedule, &x, t, c).unwrap();
                let got = model.score(&schedule, &x, t).unwrap();
                let err = ((got[0] - target[0]).powi(2) + (got[1] - target[1]).powi(2)).sqrt();
                let scale = (target[0].powi(2) + target[1].powi(2)).sqrt();
                errors.push(err / scale);
            }
        }
    }
    errors.sort_by(f64::total_cmp);
    let median = errors[errors.len() / 2];
    assert!(median <= 0.2, "median relative error {median}");
}

#[test]
fn wrapped_model_and_end_to_end_sampling() {
    let schedule = Schedule::vp_linear(1.0);
    let net = ScoreNet::seeded(2, 8, 1.0, 3).unwrap();
    let score_model = ScoreModel::neural(NeuralScore::new(net.clone(), NetMode::Score));
    assert_eq!(score_model.score(&schedule, &[0.1, 0.2], 0.5).unwrap(), net.forward(&[0.1, 0.2], 0.5));
    assert!(score_model.regular_at_zero());

    // Untrained score-mode nets run all the way to t = 0.
    let grid = TimeGrid::uniform_in_s(&schedule, 0.0, 100, 1e-3).unwrap();
    let samples = generate_samples(&score_model, &schedule, 16, &grid, Sampler::Ode, 3).unwrap();
    assert!(samples.iter().flatten().all(|v| v.is_finite()));

    let denoiser = ScoreModel::neural(NeuralScore::new(net, NetMode::Denoising));
    assert!(!denoiser.regular_at_zero());
    match generate_samples(&denoiser, &schedule, 4, &grid, Sampler::Ode, 3) {
        Err(Error::SampleFailures(failures)) => {
            assert_eq!(failures.len(), 4);
            assert!(failures.iter().all(|(_, e)| matches!(e, Error::SingularTime { .. })));
        }
        other => panic!("expected singular-time failures, got {other:?}"),
    }
    let geometric = TimeGrid::geometric(&schedule, 1e-4, 100).unwrap();
    assert!(generate_samples(&denoiser, &schedule, 4, &geometric, Sampler::Ode, 3).is_ok());
}

#[test]
fn checkpoints_restore_bit_identical_scores() {
    let net = ScoreNet::seeded(2, 8, 1.0, 4).unwrap();
    let path = std::env::temp_dir().join(format!("scoremem-ck-{}.json", std::process::id()));
    Checkpoint::new(&net, NetMode::Score, 4).save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap().restore().unwrap();
    std::fs::remove_file(&path).ok();
    let model = Arc::new(restored);
    assert_eq!(model.net().forward(&[0.3, 0.3], 0.7), net.forward(&[0.3, 0.3], 0.7));
}
