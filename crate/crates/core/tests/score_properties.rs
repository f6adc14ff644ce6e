use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use scoremem::score::{mixture_weights_at, ScoreModel};
use scoremem::{
    conditional_empirical_score, empirical_bayes_score, empirical_score, mixture_log_density, mixture_weights, tikhonov_score, Dataset,
    Error, Schedule,
};

fn paper_data() -> Dataset {
    Dataset::standard_gaussian(20, 2, 1234).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn fd_gradient(data: &Dataset, s: &Schedule, x: &[f64], t: f64, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += h;
            m[k] -= h;
            (mixture_log_density(data, s, &p, t).unwrap() - mixture_log_density(data, s, &m, t).unwrap()) / (2.0 * h)
        })
        .collect()
}

#[test]
fn score_is_gradient_of_log_density() {
    let data = paper_data();
    let mut rng = scoremem::seeding::stream(77, 0);
    for s in [Schedule::ve_exponential(1.0), Schedule::vp_linear(1.0)] {
        for _ in 0..200 {
            let t = rng.random_range(0.05..=1.0);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let score = empirical_score(&data, &s, &x, t).unwrap();
            let fd = fd_gradient(&data, &s, &x, t, 1e-5);
            let err = norm(&score.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err / (1.0 + norm(&score)) <= 1e-5, "{} t={t} x={x:?}: err {err}", s.id());
        }
    }
}

#[test]
fn direct_weights_on_twenty_points() {
    let data = paper_data();
    let s = Schedule::ve_exponential(1.0);
    let (x, t) = ([0.3, -0.4], 0.7);
    let var = s.variance(t).unwrap();
    let raw: Vec<f64> = data.points().map(|p| (-((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)) / (2.0 * var)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let w = mixture_weights(&data, &s, &x, t).unwrap();
    for (a, b) in w.as_slice().iter().zip(&raw) {
        assert!((a - b / total).abs() < 1e-14);
    }
}

#[test]
fn weight_collapse_bound() {
    // For x in V_δ(x₀ⁿ): wₙ ≥ 1 − (N−1)exp(−δ²/(2σ²)).
    let data = paper_data();
    let s = Schedule::ve_exponential(1.0);
    let index = scoremem::VoronoiIndex::new(&data).unwrap();
    let mut rng = scoremem::seeding::stream(5, 0);
    let mut checked = 0;
    while checked < 200 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.5..2.5)).collect();
        let delta = index.cell_margin(&x);
        if delta < 0.05 {
            continue;
        }
        let n = index.classify(&x).nearest();
        for t in [1e-1, 1e-2, 1e-3, 1e-4] {
            let var = s.variance(t).unwrap();
            let bound = 1.0 - 19.0 * (-delta * delta / (2.0 * var)).exp();
            let w = mixture_weights(&data, &s, &x, t).unwrap();
            assert!(w.as_slice()[n] >= bound - 1e-12);
        }
        checked += 1;
    }
}

#[test]
fn tikhonov_ratio_for_exponential_schedule() {
    let data = paper_data();
    let s = Schedule::ve_exponential(1.0);
    let mut rng = scoremem::seeding::stream(8, 0);
    for _ in 0..50 {
        let t = rng.random_range(0.01..=1.0);
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let var = s.variance(t).unwrap();
        let exact = empirical_score(&data, &s, &x, t).unwrap();
        let reg = tikhonov_score(&data, &s, &x, t, 0.01).unwrap();
        for k in 0..2 {
            let expected = var / (var + 0.01) * exact[k];
            assert!((reg[k] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}

#[test]
fn empirical_bayes_ratio_oracle() {
    let data = paper_data();
    let s = Schedule::ve_exponential(1.0);
    let mut rng = scoremem::seeding::stream(9, 0);
    let (mut floored, mut free) = (0, 0);
    for _ in 0..200 {
        let t = rng.random_range(0.01..=1.0);
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
        let c = 0.05;
        let density = mixture_log_density(&data, &s, &x, t).unwrap().exp();
        let exact = empirical_score(&data, &s, &x, t).unwrap();
        let eb = empirical_bayes_score(&data, &s, &x, t, c).unwrap();
        let factor = if density < c {
            floored += 1;
            density / c
        } else {
            free += 1;
            1.0
        };
        for k in 0..2 {
            assert!((eb[k] - factor * exact[k]).abs() <= 1e-10 * (1.0 + exact[k].abs()));
        }
    }
    assert!(floored > 0 && free > 0, "both branches exercised: {floored} / {free}");
}

#[test]
fn conditional_matches_sub_dataset() {
    let points = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![-1.5, 0.5], vec![0.7, 0.7]];
    let obs = vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]];
    let data = Dataset::with_observations(points.clone(), obs).unwrap();
    let s = Schedule::vp_linear(1.0);
    let mut rng = scoremem::seeding::stream(10, 0);
    for (y, members) in [(1.0, [0usize, 2]), (-1.0, [1, 3])] {
        let sub = Dataset::new(members.iter().map(|&i| points[i].clone()).collect()).unwrap();
        for _ in 0..20 {
            let t = rng.random_range(0.01..=1.0);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = conditional_empirical_score(&data, &s, &x, &[y], t).unwrap();
            assert_eq!(got, empirical_score(&sub, &s, &x, t).unwrap());
        }
    }
    assert_eq!(conditional_empirical_score(&data, &s, &[0.0, 0.0], &[0.5], 0.5), Err(Error::UndefinedObservation));
    assert!(matches!(ScoreModel::conditional(&data, &[2.0]), Err(Error::UndefinedObservation)));
}

fn point2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, 2)
}

proptest! {
    #[test]
    fn weights_lie_on_the_simplex(x in point2(), t in 1e-6f64..=1.0, vp in any::<bool>()) {
        let data = paper_data();
        let s = if vp { Schedule::vp_linear(1.0) } else { Schedule::ve_exponential(1.0) };
        let w = mixture_weights(&data, &s, &x, t).unwrap();
        let total: f64 = w.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn extreme_exponents_stay_finite(x in point2(), var_exp in -40.0f64..-5.0) {
        // σ² as small as 1e-40 drives exponents far below −10⁸.
        let data = paper_data();
        let w = mixture_weights_at(&data, 1.0, 10f64.powf(var_exp), &x).unwrap();
        let total: f64 = w.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn tikhonov_is_a_damped_exact_score(x in point2(), t in 1e-4f64..=1.0, c in 1e-6f64..10.0, vp in any::<bool>()) {
        let data = paper_data();
        let s = if vp { Schedule::vp_linear(1.0) } else { Schedule::ve_exponential(1.0) };
        let var = s.variance(t).unwrap();
        let exact = empirical_score(&data, &s, &x, t).unwrap();
        let reg = tikhonov_score(&data, &s, &x, t, c).unwrap();
        for k in 0..2 {
            let expected = var / (var + c) * exact[k];
            prop_assert!((reg[k] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn ve_score_is_translation_covariant(x in point2(), shift in point2(), t in 1e-3f64..=1.0) {
        let data = paper_data();
        let moved = data.translated(&shift).unwrap();
        let s = Schedule::ve_exponential(1.0);
        let y: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let w0 = mixture_weights(&data, &s, &x, t).unwrap();
        let w1 = mixture_weights(&moved, &s, &y, t).unwrap();
        for (a, b) in w0.as_slice().iter().zip(w1.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        let s0 = empirical_score(&data, &s, &x, t).unwrap();
        let s1 = empirical_score(&moved, &s, &y, t).unwrap();
        for k in 0..2 {
            prop_assert!((s0[k] - s1[k]).abs() <= 1e-8 * (1.0 + s0[k].abs()) / s.variance(t).unwrap().min(1.0));
        }
    }

    #[test]
    fn exact_model_dispatch_is_exact(x in point2(), t in 1e-3f64..=1.0) {
        let data = Arc::new(paper_data());
        let s = Schedule::ve_exponential(1.0);
        let model = ScoreModel::exact(data.clone());
        prop_assert_eq!(model.score(&s, &x, t).unwrap(), empirical_score(&data, &s, &x, t).unwrap());
    }
}
