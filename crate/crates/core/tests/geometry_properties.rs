use proptest::prelude::*;
use rand::Rng;
use scoremem::dynamics::Trajectory;
use scoremem::geometry::{nearest_point, voronoi_edges_2d};
use scoremem::seeding;
use scoremem::{convergence_rate_fit, memorization_fraction, pairwise_extremes, Classification, Dataset, Schedule, VoronoiIndex};

fn paper_data() -> Dataset {
    Dataset::standard_gaussian(20, 2, 1234).unwrap()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[test]
fn data_points_classify_into_their_own_cell() {
    let data = paper_data();
    let index = VoronoiIndex::new(&data).unwrap();
    for (i, p) in data.points().enumerate() {
        assert_eq!(index.classify(p), Classification::Cell { index: i });
    }
}

#[test]
fn partition_agrees_with_brute_force() {
    let data = paper_data();
    let index = VoronoiIndex::new(&data).unwrap();
    let mut rng = seeding::stream(11, 0);
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-4.0..4.0)).collect();
        let dists: Vec<f64> = data.points().map(|p| sq(p, &x)).collect();
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        match index.classify(&x) {
            Classification::Cell { index: n } => {
                assert_eq!(dists[n], min);
                assert!(dists.iter().enumerate().all(|(l, &d)| l == n || d - min > 1e-10));
            }
            Classification::Boundary { index: n, other, gap } => {
                assert_eq!(dists[n], min);
                assert!(gap <= 1e-10 && (dists[other] - min - gap).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn extremes_match_brute_force() {
    let data = paper_data();
    let mut all = Vec::new();
    for i in 0..20 {
        for j in 0..20 {
            if i != j {
                all.push(sq(data.point(i), data.point(j)).sqrt());
            }
        }
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(0.0, f64::max);
    assert_eq!(pairwise_extremes(&data).unwrap(), (lo, hi));
}

#[test]
fn margins_nest() {
    // ε₁ > ε₂ ⇒ V_ε₁ ⊂ V_ε₂: a point with margin ≥ ε₁ also has margin ≥ ε₂ in
    // the same cell, and the membership test agrees with the definition.
    let data = paper_data();
    let index = VoronoiIndex::new(&data).unwrap();
    let mut rng = seeding::stream(12, 0);
    for _ in 0..2000 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let margin = index.cell_margin(&x);
        let n = index.classify(&x).nearest();
        for (e1, e2) in [(0.5, 0.1), (0.2, 0.05), (1.0, 0.5)] {
            let inside = |eps: f64| (0..data.len()).all(|l| l == n || sq(&x, data.point(n)) < sq(&x, data.point(l)) - eps * eps);
            assert_eq!(inside(e1), margin > e1);
            if inside(e1) {
                assert!(inside(e2));
            }
        }
    }
}

#[test]
fn planted_fraction() {
    let data = paper_data();
    let tau = 1e-2;
    let mut rng = seeding::stream(13, 0);
    let mut samples = Vec::new();
    let mut expected = 0;
    for k in 0..200 {
        let p = data.point(k % 20);
        let r = if k % 3 == 0 { 0.5 * tau } else { 3.0 * tau };
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        samples.push(vec![p[0] + r * angle.cos(), p[1] + r * angle.sin()]);
        expected += (r < tau) as usize;
    }
    let report = memorization_fraction(&samples, &data, tau).unwrap();
    assert_eq!(report.collapsed, expected);
    assert_eq!(report.fraction_collapsed, expected as f64 / 200.0);
    assert_eq!(report.cell_histogram.iter().sum::<usize>(), 200);
}

#[test]
fn planted_exponential_rate() {
    let data = paper_data();
    let s = Schedule::ve_linear(1.0);
    let x0 = data.point(4).to_vec();
    let times: Vec<f64> = (0..=100).map(|i| 10f64.powf(-6.0 * i as f64 / 100.0)).collect();
    let s_vals: Vec<f64> = times.iter().map(|t| -t.ln()).collect();
    let states = s_vals.iter().map(|sv| vec![x0[0] + 0.3 * (-sv).exp(), x0[1] - 0.4 * (-sv).exp()]).collect();
    let traj = Trajectory { times, s: s_vals, states, weights: None, seed: None, schedule_id: s.id(), model_id: "planted".into() };
    let fit = convergence_rate_fit(&traj, &data, &s, 0.3, 1e-2).unwrap();
    assert_eq!(fit.limit_index, 4);
    assert!((fit.slope_s + 1.0).abs() < 1e-9);
    assert!((fit.slope_sigma - 1.0).abs() < 1e-9);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
}

#[test]
fn rate_fit_requires_collapse() {
    let data = paper_data();
    let s = Schedule::ve_linear(1.0);
    let traj = Trajectory {
        times: vec![1.0, 0.5, 0.1],
        s: vec![0.0, 0.69, 2.3],
        states: vec![vec![10.0, 10.0]; 3],
        weights: None,
        seed: None,
        schedule_id: s.id(),
        model_id: "far".into(),
    };
    assert!(matches!(convergence_rate_fit(&traj, &data, &s, 0.3, 1e-2), Err(scoremem::Error::NotCollapsed { .. })));
}

#[test]
fn voronoi_edges_are_equidistant() {
    let data = paper_data();
    let edges = voronoi_edges_2d(&data, [-4.0, -4.0], [4.0, 4.0]).unwrap();
    assert!(!edges.is_empty());
    for e in &edges {
        for p in [e.start, e.end] {
            let (a, b) = (sq(&p, data.point(e.cells.0)), sq(&p, data.point(e.cells.1)));
            assert!((a - b).abs() < 1e-8);
            // No third point is strictly closer.
            let (_, d) = nearest_point(&data, &p);
            assert!(d * d >= a - 1e-8);
        }
    }
}

fn rotate(p: &[f64], angle: f64, shift: &[f64]) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]]
}

proptest! {
    #[test]
    fn classification_is_rigid_motion_invariant(
        x in prop::collection::vec(-3.0f64..3.0, 2),
        angle in 0.0f64..std::f64::consts::TAU,
        shift in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let data = paper_data();
        let moved = Dataset::new(data.points().map(|p| rotate(p, angle, &shift)).collect()).unwrap();
        let a = VoronoiIndex::new(&data).unwrap();
        let b = VoronoiIndex::with_tolerance(&moved, 1e-10).unwrap();
        let y = rotate(&x, angle, &shift);
        // Rounding can move a point across a tie only within ~1e-12 of a bisector.
        prop_assume!(a.cell_margin(&x) > 1e-5);
        prop_assert_eq!(a.classify(&x), b.classify(&y));
        prop_assert!((a.cell_margin(&x) - b.cell_margin(&y)).abs() < 1e-8);
    }
}
