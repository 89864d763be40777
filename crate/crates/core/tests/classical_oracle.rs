use qfpt_core::classical::{
    check_step_convergence, classical_moments, energy_growth, simulate_classical_fpt, ClassicalConfig,
    CrossingDetection,
};
use qfpt_core::fpt::tail_fit;

#[test]
fn moments_match_stochastic_averaging() {
    let cfg = ClassicalConfig::new(2.5, 0.5).unwrap();
    let s = simulate_classical_fpt(&cfg, 100_000, 1).unwrap();
    let m = classical_moments(&cfg);
    assert_eq!((m.mean, m.second_moment), (2.0, 7.0));
    assert_eq!(s.censored, 0);
    assert!((s.mean - 2.0).abs() < 3.0 * s.mean_stderr, "{} ± {}", s.mean, s.mean_stderr);
    assert!((s.second_moment - 7.0).abs() < 3.0 * s.second_stderr, "{} ± {}", s.second_moment, s.second_stderr);
}

#[test]
fn halving_the_step_is_within_one_standard_error() {
    let cfg = ClassicalConfig::new(2.5, 0.5).unwrap();
    let r = check_step_convergence(&cfg, 20_000, 4).unwrap();
    assert!(r.passes());
}

#[test]
fn boundary_only_detection_is_biased_late() {
    // discrete monitoring misses excursions between steps
    let coarse = ClassicalConfig::new(2.5, 0.5)
        .unwrap()
        .with_dt(0.01)
        .with_omega(5.0)
        .with_crossing(CrossingDetection::StepBoundary);
    let bridged = coarse.with_crossing(CrossingDetection::BrownianBridge);
    let a = simulate_classical_fpt(&coarse, 20_000, 2).unwrap();
    let b = simulate_classical_fpt(&bridged, 20_000, 2).unwrap();
    assert!(a.mean > b.mean);
}

#[test]
fn energy_grows_at_unit_rate() {
    let cfg = ClassicalConfig::new(10.0, 0.5).unwrap();
    let g = energy_growth(&cfg, &[0.5, 1.0, 2.0, 4.0], 20_000, 3).unwrap();
    for ((t, m), se) in g.times.iter().zip(&g.mean).zip(&g.stderr) {
        assert!((m - 0.5 - t).abs() < 3.0 * se, "t={t}: {m} ± {se}");
    }
}

#[test]
fn sample_tail_is_exponential() {
    let cfg = ClassicalConfig::new(2.5, 0.5).unwrap();
    let s = simulate_classical_fpt(&cfg, 50_000, 6).unwrap();
    let hist = s.histogram(0.25, 60).unwrap();
    let fit = tail_fit(&hist, 2.0 * cfg.delta_h()).unwrap();
    assert!(fit.r_squared > 0.98, "{fit:?}");
}
