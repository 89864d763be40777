use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use qfpt_core::fock::{bsb_coupling, FockSpace, SidebandParams, TrajectoryState};
use qfpt_core::pulse_table::table_one;
use qfpt_core::step_gate::{build_measurement, kappa, PulseSequence};

type C = Complex64;

/// Index of |S,n⟩ and |D,n⟩ in the joint space of dimension 2·n_cut.
fn s_idx(n: usize) -> usize {
    2 * n
}
fn d_idx(n: usize) -> usize {
    2 * n + 1
}

/// Anti-Jaynes-Cummings generator for one pulse in table-duration units,
/// coupling |S,n⟩ ↔ |D,n+1⟩ at angular rate π·c_n.
fn bsb_hamiltonian(n_cut: usize, phase_pi: f64, scale: f64, sb: &SidebandParams) -> DMatrix<C> {
    let mut h = DMatrix::from_element(2 * n_cut, 2 * n_cut, C::new(0.0, 0.0));
    let e = C::from_polar(1.0, phase_pi * PI);
    for n in 0..n_cut - 1 {
        let g = PI * scale * bsb_coupling(n, sb);
        h[(d_idx(n + 1), s_idx(n))] = e * g;
        h[(s_idx(n), d_idx(n + 1))] = e.conj() * g;
    }
    h
}

/// exp(−iHt) by Hermitian eigendecomposition.
fn expm_hermitian(h: &DMatrix<C>, t: f64) -> DMatrix<C> {
    let eig = h.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C::from_polar(1.0, -l * t)));
    v * d * v.adjoint()
}

fn joint_unitary(seq: &PulseSequence, n_cut: usize, scale: f64) -> DMatrix<C> {
    let mut u = DMatrix::identity(2 * n_cut, 2 * n_cut);
    for (&phi, &t) in seq.phases_pi().iter().zip(seq.durations()) {
        u = expm_hermitian(&bsb_hamiltonian(n_cut, phi, scale, seq.sideband()), t) * u;
    }
    u
}

#[test]
fn kappa_matches_full_joint_unitary_for_table_pulses() {
    let n_cut = 16;
    for seq in table_one() {
        let u = joint_unitary(&seq, n_cut, 1.0);
        assert!((&u * u.adjoint() - DMatrix::<C>::identity(2 * n_cut, 2 * n_cut)).camax() < 1e-10);
        for n in 1..n_cut - 1 {
            let joint = u[(s_idx(n - 1), d_idx(n))].norm_sqr();
            let k = kappa(&seq, n, 1.0);
            assert!((joint - k).abs() < 1e-9, "N_B={} M_P={} n={n}: {joint} vs {k}", seq.n_b_target(), seq.len());
        }
        // |D,0⟩ has no partner
        assert!((u[(d_idx(0), d_idx(0))].norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kraus_pair_matches_joint_unitary_amplitudes() {
    let n_cut = 12;
    let seq = &table_one()[4];
    let u = joint_unitary(seq, n_cut, 0.9);
    let m = build_measurement(seq, FockSpace::new(n_cut).unwrap(), 0.9);
    for n in 0..n_cut - 1 {
        let dark = u[(d_idx(n), d_idx(n))];
        assert!((dark - m.dark_amplitudes()[n]).norm() < 1e-9);
        if n > 0 {
            let bright = u[(s_idx(n - 1), d_idx(n))];
            assert!((bright - m.bright_amplitudes()[n]).norm() < 1e-9);
        }
    }
}

#[test]
fn table_measurements_are_complete() {
    let space = FockSpace::new(40).unwrap();
    for seq in table_one() {
        let m = build_measurement(&seq, space, 0.97);
        assert!(m.completeness_error() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kraus_probabilities_sum_to_one(
        phases in proptest::collection::vec(0.0f64..2.0, 1..8),
        durs in proptest::collection::vec(0.0f64..6.0, 8),
        scale in 0.5f64..1.0,
        re in proptest::collection::vec(-1.0f64..1.0, 10),
        im in proptest::collection::vec(-1.0f64..1.0, 10),
    ) {
        let m_p = phases.len();
        let seq = PulseSequence::new(2, phases, durs[..m_p].to_vec(), SidebandParams::experiment()).unwrap();
        let space = FockSpace::new(10).unwrap();
        let meas = build_measurement(&seq, space, scale);
        let amps = nalgebra::DVector::from_iterator(10, re.iter().zip(&im).map(|(a, b)| C::new(*a, *b)));
        prop_assume!(amps.norm() > 1e-3);
        let mut psi = TrajectoryState::new(amps.unscale(amps.norm()), qfpt_core::fock::Normalization::Normalized).unwrap();
        let p_dark = meas.dark_probability(&psi);
        let mut bright = psi.clone();
        meas.apply_bright(&mut bright);
        prop_assert!((p_dark + bright.norm_sqr() - 1.0).abs() < 1e-12);
        meas.apply_dark(&mut psi);
        prop_assert!((psi.norm_sqr() - p_dark).abs() < 1e-12);
        for n in 0..10 {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&kappa(&seq, n, scale)));
        }
    }
}
