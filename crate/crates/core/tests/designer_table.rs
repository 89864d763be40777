use qfpt_core::designer::{design_pulse_detailed, objective, DesignSpec};
use qfpt_core::pulse_table::table_one;

#[test]
fn synthesis_competes_with_reference_two_level_threshold_pulse() {
    let reference = table_one().remove(0);
    let spec = DesignSpec::new(2, reference.len(), 2024);
    let out = design_pulse_detailed(&spec).unwrap();
    let table = objective(&reference, &spec);
    assert!(out.objective <= 2.0 * table, "designed {} vs table {}", out.objective, table);
    assert_eq!(out.restarts.len(), 32);
    assert!(out.sequence.durations().iter().all(|d| (0.0..=4.0).contains(d)));
    assert!(out.sequence.phases_pi().iter().all(|p| (0.0..2.0).contains(p)));
}

#[test]
fn restarts_never_end_above_their_start() {
    let spec = DesignSpec::new(3, 6, 5).with_restarts(8);
    let out = design_pulse_detailed(&spec).unwrap();
    for r in &out.restarts {
        assert!(r.final_objective <= r.initial_objective);
        assert!(r.objective_history.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(out.restarts.iter().all(|r| out.objective <= r.final_objective + 1e-12));
    assert_eq!(design_pulse_detailed(&spec).unwrap().sequence, out.sequence);
}
