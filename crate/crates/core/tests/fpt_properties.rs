use qfpt_core::estimators::{compare_distributions, Comparand};
use qfpt_core::fpt::{
    geometric_reference, qfptd_ideal, qfptd_ideal_traced, qfptd_realistic, spont_forward, tail_fit, FptConfig,
    MeasurementModel, RealisticOptions, SpontEmissionModel,
};
use qfpt_core::pulse_table::table_one;
use qfpt_core::seeds;
use qfpt_core::step_gate::StepMeasurement;
use rand::Rng;

#[test]
fn product_formula_matches_unnormalized_flux() {
    for &(n_b, theta) in &[(2, 0.43), (3, 0.2), (4, 0.86)] {
        let cfg = FptConfig::new(n_b, theta, 40).unwrap();
        let tr = qfptd_ideal_traced(&cfg).unwrap();
        for (i, (p, d)) in tr.result.probs.iter().zip(&tr.steps).enumerate() {
            assert!((p - d.flux).abs() < 1e-10, "N_B={n_b} step {}: {p} vs {}", i + 1, d.flux);
        }
    }
}

#[test]
fn survival_never_raises_energy() {
    for &(n_b, theta) in &[(1, 0.43), (2, 0.1), (3, 0.645), (4, 1.5)] {
        let cfg = FptConfig::new(n_b, theta, 60).unwrap();
        for d in qfptd_ideal_traced(&cfg).unwrap().steps {
            assert!(d.energy_after <= d.energy_before + 1e-12);
            assert!((d.p_survive + d.p_absorb - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn higher_thresholds_start_ballistically() {
    for &theta in &[0.01, 0.05] {
        let geo = geometric_reference(theta, 1).unwrap().probs[0];
        for n_b in 2..=4 {
            let p1 = qfptd_ideal(&FptConfig::new(n_b, theta, 1).unwrap()).unwrap().probs[0];
            assert!(p1 * 10.0 < geo, "N_B={n_b} θ={theta}: {p1} vs {geo}");
        }
    }
}

#[test]
fn escape_is_monotone_in_measurement_rate() {
    for n_b in [2, 3] {
        let theta = 0.4;
        let coarse = qfptd_ideal(&FptConfig::new(n_b, theta, 50).unwrap()).unwrap();
        let fine = qfptd_ideal(&FptConfig::new(n_b, theta / 2.0, 100).unwrap()).unwrap();
        for i in 0..coarse.steps() {
            assert!(fine.escape[2 * i + 1] >= coarse.escape[i] - 1e-12, "N_B={n_b} t={}", (i + 1) as f64 * theta);
        }
    }
}

#[test]
fn probabilities_are_normalized() {
    for n_b in 1..=4 {
        for &theta in &[0.05, 0.43, 1.3] {
            let r = qfptd_ideal(&FptConfig::new(n_b, theta, 30).unwrap()).unwrap();
            assert!(r.probs.iter().all(|p| *p >= 0.0));
            let total: f64 = r.probs.iter().sum::<f64>() + r.survivor_remainder;
            assert!((total - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn ideal_tail_is_exponential() {
    for n_b in [2, 3] {
        let r = qfptd_ideal(&FptConfig::new(n_b, 0.1, 300).unwrap()).unwrap();
        let fit = tail_fit(&r, 2.0 * n_b as f64).unwrap();
        assert!(fit.r_squared > 0.99, "N_B={n_b}: {fit:?}");
        assert!(fit.beta > 0.0);
    }
}

#[test]
fn monte_carlo_matches_deterministic_pointwise() {
    let cfg = FptConfig::new(2, 0.43, 40).unwrap();
    let ideal = qfptd_ideal(&cfg).unwrap();
    let meas = MeasurementModel::Kraus(StepMeasurement::perfect(2, cfg.space().unwrap()));
    let mc = qfptd_realistic(&cfg, &meas, &RealisticOptions::new(100_000, 11)).unwrap();
    let cmp = compare_distributions(&mc, Comparand::Result(&ideal)).unwrap();
    for (i, z) in cmp.z_scores.iter().enumerate() {
        let se = mc.stderr.as_ref().unwrap().get(i).copied().unwrap_or(0.0);
        let diff = if i < mc.steps() { (mc.probs[i] - ideal.probs[i]).abs() } else { 0.0 };
        // bins with no expected mass have zero standard error
        assert!(z.abs() < 4.0 || diff < 1e-12 || se == 0.0 && ideal.probs[i] < 1e-5, "bin {i}: z = {z}");
    }
    assert!(cmp.tv_distance < 4.0 * cmp.tv_stderr);
}

#[test]
fn table_pulses_shift_detection_earlier() {
    let cfg = FptConfig::new(3, 0.43, 40).unwrap();
    let ideal = qfptd_ideal(&cfg).unwrap();
    let seq = table_one().into_iter().find(|s| s.n_b_target() == 3 && s.len() == 9).unwrap();
    let mut opts = RealisticOptions::new(20_000, 5);
    opts.noise = Some(qfpt_core::step_gate::IntensityNoise::new(0.13).unwrap());
    let real = qfptd_realistic(&cfg, &MeasurementModel::Pulse(seq), &opts).unwrap();
    let n = 20_000.0;
    let mut strict = false;
    for i in 0..cfg.max_steps {
        let e = real.escape[i];
        let sigma = (e * (1.0 - e) / n).sqrt();
        assert!(e >= ideal.escape[i] - 4.0 * sigma - 1e-12, "step {}", i + 1);
        if i < 5 && e > ideal.escape[i] + 4.0 * sigma {
            strict = true;
        }
    }
    assert!(strict, "no early excess: {:?} vs {:?}", &real.escape[..5], &ideal.escape[..5]);
}

#[test]
fn spontaneous_decay_model_matches_exponential_clock() {
    // direct simulation: the excited state decays at a uniform exponential
    // time; a decay inside interval i is read as bright at measurement i
    let model = SpontEmissionModel::new(1.2, 86.0).unwrap();
    let theta = 0.43;
    let tau_dimless = model.tau_s * model.ndot_per_s;
    let trials = 200_000u64;
    let mut rng = seeds::stream(77, 0);
    let hits = (0..trials)
        .filter(|_| {
            let t = -tau_dimless * (1.0 - rng.random::<f64>()).ln();
            t < theta
        })
        .count() as f64;
    let p = hits / trials as f64;
    let want = 1.0 - model.step_survival(theta);
    assert!((want - 0.004158).abs() < 1e-6);
    let se = (want * (1.0 - want) / trials as f64).sqrt();
    assert!((p - want).abs() < 4.0 * se, "{p} vs {want}");

    // with certain survival of the motion, only decay can end a trial
    let never = qfpt_core::fpt::FptdResult::from_probs(theta, vec![0.0; 5], 1.0, qfpt_core::fpt::FptMode::Deterministic)
        .unwrap();
    let obs = spont_forward(&never, &model).unwrap();
    for (i, q) in obs.probs.iter().enumerate() {
        let s = model.step_survival(theta);
        assert!((q - s.powi(i as i32) * (1.0 - s)).abs() < 1e-15);
    }
}

#[test]
fn realistic_with_decay_and_readout_error_is_normalized() {
    let cfg = FptConfig::new(2, 0.43, 30).unwrap();
    let seq = table_one().remove(0);
    let mut opts = RealisticOptions::new(3_000, 8);
    opts.spont = Some(SpontEmissionModel::new(1.2, 86.0).unwrap());
    opts.detection_error = 1e-3;
    opts.noise = Some(qfpt_core::step_gate::IntensityNoise::new(0.05).unwrap());
    let r = qfptd_realistic(&cfg, &MeasurementModel::Pulse(seq), &opts).unwrap();
    assert_eq!(r.counts.as_ref().unwrap().iter().sum::<u64>(), 3_000);
    let total: f64 = r.probs.iter().sum::<f64>() + r.survivor_remainder;
    assert!((total - 1.0).abs() < 1e-12);
}
