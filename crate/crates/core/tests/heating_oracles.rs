use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use qfpt_core::fock::{FockSpace, MotionalDensityMatrix, Normalization, TrajectoryState};
use qfpt_core::heating::{evolve_heating_dm, DmPropagator, JumpUnraveling};
use qfpt_core::seeds;
use rayon::prelude::*;

/// Populations of the truncated birth-death chain (up rate n+1, down rate n,
/// no up move from the top level) by uniformization.
fn birth_death_uniformized(p0: &[f64], t: f64) -> Vec<f64> {
    let n = p0.len();
    let up = |k: usize| if k + 1 < n { (k + 1) as f64 } else { 0.0 };
    let down = |k: usize| k as f64;
    let lambda = (0..n).map(|k| up(k) + down(k)).fold(0.0, f64::max);
    let lt = lambda * t;
    let mut term = p0.to_vec();
    let mut weight = (-lt).exp();
    let mut out: Vec<f64> = term.iter().map(|p| p * weight).collect();
    let mut k = 0;
    while k < 10_000 {
        k += 1;
        let mut next = vec![0.0; n];
        for m in 0..n {
            let stay = 1.0 - (up(m) + down(m)) / lambda;
            next[m] += stay * term[m];
            if m + 1 < n {
                next[m + 1] += up(m) / lambda * term[m];
            }
            if m > 0 {
                next[m - 1] += down(m) / lambda * term[m];
            }
        }
        term = next;
        weight *= lt / k as f64;
        for (o, p) in out.iter_mut().zip(&term) {
            *o += weight * p;
        }
        if k as f64 > lt && weight < 1e-18 {
            break;
        }
    }
    out
}

#[test]
fn master_equation_matches_birth_death_chain() {
    let space = FockSpace::new(40).unwrap();
    for &(n0, t) in &[(0usize, 0.43), (0, 2.0), (3, 1.0), (1, 0.05)] {
        let rho = MotionalDensityMatrix::number_state(space, n0).unwrap();
        let out = evolve_heating_dm(&rho, t).unwrap();
        let mut p0 = vec![0.0; 40];
        p0[n0] = 1.0;
        let want = birth_death_uniformized(&p0, t);
        for (k, (a, b)) in out.populations().iter().zip(&want).enumerate() {
            assert!((a - b).abs() < 1e-6, "n0={n0} t={t} level {k}: {a} vs {b}");
        }
    }
}

#[test]
fn trajectories_reproduce_master_equation_populations() {
    let space = FockSpace::new(30).unwrap();
    let t = 0.8;
    let trials = 10_000u64;
    let unravel = JumpUnraveling::new(space);
    let finals: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::stream(2024, i);
            let mut psi = TrajectoryState::ground(space);
            unravel.evolve(&mut psi, t, &mut rng).unwrap();
            psi.populations()
        })
        .collect();
    let rho = MotionalDensityMatrix::ground(space);
    let exact = evolve_heating_dm(&rho, t).unwrap().populations();
    for level in 0..8 {
        let xs: Vec<f64> = finals.iter().map(|p| p[level]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt().max(1e-12);
        assert!(
            (mean - exact[level]).abs() < 4.0 * se,
            "level {level}: trajectory {mean} vs master {} (se {se})",
            exact[level]
        );
    }
}

#[test]
fn coherences_decay_as_in_dense_form() {
    // |ψ⟩ = (|0⟩ + |1⟩)/√2: compare against a fine-step propagation
    let space = FockSpace::new(25).unwrap();
    let mut rho = DMatrix::from_element(25, 25, Complex64::new(0.0, 0.0));
    for i in 0..2 {
        for j in 0..2 {
            rho[(i, j)] = Complex64::new(0.5, 0.0);
        }
    }
    let rho = MotionalDensityMatrix::new(rho, Normalization::Normalized).unwrap();
    let coarse = DmPropagator::new(space).with_step(1e-2).evolve(&rho, 0.5).unwrap();
    let fine = DmPropagator::new(space).with_step(1e-4).evolve(&rho, 0.5).unwrap();
    let diff = (coarse.rho() - fine.rho()).camax();
    assert!(diff < 1e-8, "{diff}");
    // the |0⟩⟨1| coherence decays but stays nonzero
    let c = fine.rho()[(0, 1)].norm();
    assert!(c > 0.0 && c < 0.5);
}

fn random_state(seed: u64, n: usize) -> MotionalDensityMatrix {
    use rand::Rng;
    let mut rng = seeds::stream(seed, 0);
    let a = DMatrix::from_fn(n, n, |i, _| {
        // concentrate weight in low levels so the tail check is meaningful
        let scale = (-(i as f64) / 2.0).exp();
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale
    });
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    MotionalDensityMatrix::new(rho / tr, Normalization::Normalized).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_preserves_trace_hermiticity_positivity(seed in any::<u64>(), t in 0.0f64..1.5) {
        let rho = random_state(seed, 30);
        let out = evolve_heating_dm(&rho, t).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-10);
        prop_assert!(out.hermiticity_error() < 1e-12);
        prop_assert!(out.min_eigenvalue() > -1e-9);
    }

    #[test]
    fn mean_occupation_grows_at_unit_rate(seed in any::<u64>(), t in 0.0f64..1.0) {
        let rho = random_state(seed, 40);
        let out = evolve_heating_dm(&rho, t).unwrap();
        prop_assert!((out.mean_occupation() - rho.mean_occupation() - t).abs() < 1e-6);
    }
}
