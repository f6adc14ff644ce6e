use proptest::prelude::*;
use scoremem::geometry::linear_regression;
use scoremem::quadrature::{integrate, DEFAULT_REL_TOL};
use scoremem::schedule::{ProcessKind, Rate, Schedule};

fn catalog() -> Vec<Schedule> {
    vec![
        Schedule::ve_linear(1.0),
        Schedule::ve_exponential(1.0),
        Schedule::vp_constant(1.0),
        Schedule::vp_linear(1.0),
        Schedule::new(ProcessKind::VarianceExploding, Rate::Constant(2.5), 2.0).unwrap(),
        Schedule::new(ProcessKind::VariancePreserving, Rate::LinearBeta { min: 0.1, max: 20.0 }, 1.0).unwrap(),
    ]
}

#[test]
fn variance_is_strictly_increasing() {
    for s in catalog() {
        let h = s.horizon();
        let mut prev = s.variance(h * 1e-3).unwrap();
        for k in 2..=1000 {
            let v = s.variance(h * k as f64 / 1000.0).unwrap();
            assert!(v > prev, "{} not increasing at step {k}", s.id());
            prev = v;
        }
    }
}

#[test]
fn variance_round_trip_on_uniform_times() {
    for s in catalog() {
        let h = s.horizon();
        for k in 1..=100 {
            let t = h * k as f64 / 100.0;
            let back = s.invert_variance(s.variance(t).unwrap()).unwrap();
            assert!((back - t).abs() <= 1e-9, "{}: t={t} came back as {back}", s.id());
        }
    }
}

#[test]
fn vp_moment_identity_on_a_dense_grid() {
    for s in catalog().into_iter().filter(|s| s.kind() == ProcessKind::VariancePreserving) {
        for k in 0..=1000 {
            let t = s.horizon() * k as f64 / 1000.0;
            let m = s.mean_coeff(t).unwrap();
            let v = s.variance(t).unwrap();
            assert!((m * m + v - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn blow_up_integral_grows_like_log() {
    // ∫_ε^1 g/σ² dt for the VE schedule g = 10^t.
    let s = Schedule::ve_exponential(1.0);
    let f = |t: f64| s.g(t) / s.variance(t).unwrap();
    let eps = [1e-2, 1e-4, 1e-6];
    let xs: Vec<f64> = eps.iter().map(|e: &f64| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = eps.iter().map(|&e| integrate(f, e, 1.0, DEFAULT_REL_TOL)).collect();
    let (slope, _, r2) = linear_regression(&xs, &ys).unwrap();
    assert!(r2 >= 0.999, "r2 = {r2}");
    // Near zero σ² ≈ t, so the integrand behaves like 1/t.
    assert!((slope - 1.0).abs() < 0.05, "slope = {slope}");
}

#[test]
fn custom_rate_matches_catalog() {
    let custom = Schedule::new(ProcessKind::VariancePreserving, Rate::custom("beta", |t| 0.001 + t * 2.999), 1.0).unwrap();
    let catalog = Schedule::vp_linear(1.0);
    for k in 1..=20 {
        let t = k as f64 / 20.0;
        assert!((custom.variance(t).unwrap() - catalog.variance(t).unwrap()).abs() < 1e-10);
        assert!((custom.mean_coeff(t).unwrap() - catalog.mean_coeff(t).unwrap()).abs() < 1e-10);
    }
}

proptest! {
    #[test]
    fn vp_identity_holds_everywhere(t in 0.0f64..=1.0, lo in 0.0f64..1.0, span in 0.1f64..30.0) {
        let s = Schedule::new(ProcessKind::VariancePreserving, Rate::LinearBeta { min: lo, max: lo + span }, 1.0).unwrap();
        let m = s.mean_coeff(t).unwrap();
        let v = s.variance(t).unwrap();
        prop_assert!((m * m + v - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn inversion_residual_is_tiny(frac in 1e-6f64..=1.0, which in 0usize..6) {
        let s = &catalog()[which];
        let top = s.variance(s.horizon()).unwrap();
        let v = top * frac;
        let t = s.invert_variance(v).unwrap();
        prop_assert!((s.variance(t).unwrap() - v).abs() <= 1e-12 * top);
    }

    #[test]
    fn ve_mean_is_one(t in 0.0f64..=1.0) {
        prop_assert_eq!(Schedule::ve_exponential(1.0).mean_coeff(t).unwrap(), 1.0);
    }
}
