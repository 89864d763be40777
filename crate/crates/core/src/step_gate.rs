//! Composite-phase blue-sideband step pulse.
//!
//! The anti-Jaynes-Cummings interaction couples only the pairs
//! {|S,n−1⟩, |D,n⟩}, so a pulse sequence acts as an independent SU(2)
//! rotation in each manifold. With the ion prepared in |D⟩, the pulse followed
//! by fluorescence detection is a two-outcome measurement on the motion:
//! `K_dark = Σ U_n[D,D] |n⟩⟨n|` and `K_bright = Σ U_n[S,D] |n−1⟩⟨n|`.
//!
//! Durations are in table units: one unit accumulates a rotation angle of
//! 2π·(Ω_{n−1,n}/Ω00) in manifold n, so a single pulse of duration t gives
//! κ(n) = sin²(π·t·Ω_{n−1,n}/Ω00).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{bsb_coupling, CMatrix, FockSpace, MotionalDensityMatrix, SidebandParams, TrajectoryState};

/// Rotation angle per unit duration at unit relative coupling.
pub const ROTATION_PER_UNIT_DURATION: f64 = 2.0 * PI;

/// Default number of levels scored by the step-error metric.
pub const DEFAULT_N_RANGE: usize = 6;

/// Default number of levels in a κ profile.
pub const DEFAULT_PROFILE_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    n_b_target: usize,
    /// Phases in units of π.
    phases_pi: Vec<f64>,
    /// Durations in table units.
    durations: Vec<f64>,
    sideband: SidebandParams,
}

impl PulseSequence {
    pub fn new(
        n_b_target: usize,
        phases_pi: Vec<f64>,
        durations: Vec<f64>,
        sideband: SidebandParams,
    ) -> Result<Self> {
        if phases_pi.is_empty() {
            return Err(Error::invalid("pulse sequence needs at least one pulse"));
        }
        if phases_pi.len() != durations.len() {
            return Err(Error::invalid(format!(
                "{} phases but {} durations",
                phases_pi.len(),
                durations.len()
            )));
        }
        if let Some(d) = durations.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid(format!("durations must be nonnegative, got {d}")));
        }
        if phases_pi.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("phases must be finite"));
        }
        Ok(Self {
            n_b_target,
            phases_pi,
            durations,
            sideband,
        })
    }

    pub fn n_b_target(&self) -> usize {
        self.n_b_target
    }

    pub fn len(&self) -> usize {
        self.phases_pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases_pi.is_empty()
    }

    pub fn phases_pi(&self) -> &[f64] {
        &self.phases_pi
    }

    pub fn phases_radians(&self) -> impl Iterator<Item = f64> + '_ {
        self.phases_pi.iter().map(|p| p * PI)
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn sideband(&self) -> &SidebandParams {
        &self.sideband
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Same sequence with every phase shifted by `offset_pi`·π.
    pub fn with_phase_offset(&self, offset_pi: f64) -> Self {
        let mut out = self.clone();
        out.phases_pi.iter_mut().for_each(|p| *p += offset_pi);
        out
    }

    /// Single resonant pulse.
    pub fn single(n_b_target: usize, phase_pi: f64, duration: f64, sideband: SidebandParams) -> Result<Self> {
        Self::new(n_b_target, vec![phase_pi], vec![duration], sideband)
    }
}

/// Propagator in manifold n ≥ 1, basis order (|D,n⟩, |S,n−1⟩).
pub fn manifold_propagator(seq: &PulseSequence, n: usize, rabi_scale: f64) -> [[Complex64; 2]; 2] {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut u = [[one, zero], [zero, one]];
    if n == 0 {
        return u;
    }
    let coupling = rabi_scale * bsb_coupling(n - 1, &seq.sideband);
    for (&phase_pi, &t) in seq.phases_pi.iter().zip(&seq.durations) {
        let half = 0.5 * ROTATION_PER_UNIT_DURATION * coupling * t;
        let (s, c) = half.sin_cos();
        let phi = phase_pi * PI;
        // exp(−i·half·[[0, e^{iφ}], [e^{−iφ}, 0]])
        let off_ds = Complex64::new(0.0, -s) * Complex64::from_polar(1.0, phi);
        let off_sd = Complex64::new(0.0, -s) * Complex64::from_polar(1.0, -phi);
        let p = [[Complex64::new(c, 0.0), off_ds], [off_sd, Complex64::new(c, 0.0)]];
        u = [
            [
                p[0][0] * u[0][0] + p[0][1] * u[1][0],
                p[0][0] * u[0][1] + p[0][1] * u[1][1],
            ],
            [
                p[1][0] * u[0][0] + p[1][1] * u[1][0],
                p[1][0] * u[0][1] + p[1][1] * u[1][1],
            ],
        ];
    }
    u
}

/// Probability that the sequence transfers |D,n⟩ → |S,n−1⟩.
pub fn kappa(seq: &PulseSequence, n: usize, rabi_scale: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    manifold_propagator(seq, n, rabi_scale)[1][0].norm_sqr().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProfile {
    pub kappa: Vec<f64>,
}

pub fn step_profile(seq: &PulseSequence, levels: usize, rabi_scale: f64) -> StepProfile {
    StepProfile {
        kappa: (0..levels).map(|n| kappa(seq, n, rabi_scale)).collect(),
    }
}

/// Discrete Heaviside step: 0 for i < 0, 1 for i ≥ 0.
pub fn heaviside(i: i64) -> f64 {
    if i >= 0 {
        1.0
    } else {
        0.0
    }
}

/// Two-outcome step measurement on the motion. `K_dark` is diagonal and
/// `K_bright` lowers by one quantum, so both are stored by their nonzero
/// entries; dense matrices are available on request.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMeasurement {
    /// `K_dark[n, n]`.
    dark: Vec<Complex64>,
    /// `K_bright[n−1, n]`, with `bright[0] = 0`.
    bright: Vec<Complex64>,
}

impl StepMeasurement {
    /// Ideal projective step: survive below `n_b`, lower and flag at or above.
    pub fn perfect(n_b: usize, space: FockSpace) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let n = space.dim();
        Self {
            dark: (0..n).map(|k| if k < n_b { one } else { zero }).collect(),
            bright: (0..n).map(|k| if k >= n_b && k > 0 { one } else { zero }).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dark.len()
    }

    pub fn dark_amplitudes(&self) -> &[Complex64] {
        &self.dark
    }

    pub fn bright_amplitudes(&self) -> &[Complex64] {
        &self.bright
    }

    pub fn k_dark(&self) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for (k, d) in self.dark.iter().enumerate() {
            m[(k, k)] = *d;
        }
        m
    }

    pub fn k_bright(&self) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for (k, b) in self.bright.iter().enumerate().skip(1) {
            m[(k - 1, k)] = *b;
        }
        m
    }

    /// max |K_d†K_d + K_b†K_b − 1|.
    pub fn completeness_error(&self) -> f64 {
        let kd = self.k_dark();
        let kb = self.k_bright();
        let sum = kd.adjoint() * kd + kb.adjoint() * kb;
        (sum - CMatrix::identity(self.dim(), self.dim())).camax()
    }

    pub fn dark_probability(&self, psi: &TrajectoryState) -> f64 {
        let w: f64 = self
            .dark
            .iter()
            .zip(psi.amplitudes().iter())
            .map(|(k, c)| k.norm_sqr() * c.norm_sqr())
            .sum();
        w / psi.norm_sqr()
    }

    /// ψ ← K_dark ψ (unnormalized).
    pub fn apply_dark(&self, psi: &mut TrajectoryState) {
        for (c, k) in psi.amplitudes_mut().iter_mut().zip(&self.dark) {
            *c *= k;
        }
        psi.set_normalization(crate::fock::Normalization::Conditioned);
    }

    /// ψ ← K_bright ψ (unnormalized).
    pub fn apply_bright(&self, psi: &mut TrajectoryState) {
        let n = self.dim();
        let amps = psi.amplitudes_mut();
        for k in 0..n - 1 {
            amps[k] = self.bright[k + 1] * amps[k + 1];
        }
        amps[n - 1] = Complex64::new(0.0, 0.0);
        psi.set_normalization(crate::fock::Normalization::Conditioned);
    }

    /// Tr(K_dark ρ K_dark†).
    pub fn dark_weight(&self, rho: &MotionalDensityMatrix) -> f64 {
        self.dark
            .iter()
            .enumerate()
            .map(|(k, d)| d.norm_sqr() * rho.rho()[(k, k)].re)
            .sum()
    }
}

/// Kraus pair realized by the pulse sequence and internal-state detection.
pub fn build_measurement(seq: &PulseSequence, space: FockSpace, rabi_scale: f64) -> StepMeasurement {
    let n = space.dim();
    let mut dark = Vec::with_capacity(n);
    let mut bright = Vec::with_capacity(n);
    for k in 0..n {
        let u = manifold_propagator(seq, k, rabi_scale);
        dark.push(u[0][0]);
        bright.push(if k == 0 { Complex64::new(0.0, 0.0) } else { u[1][0] });
    }
    StepMeasurement { dark, bright }
}

/// Transverse profile that maps beam displacement to Rabi attenuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamProfileLaw {
    /// Rabi frequency follows the field amplitude, exp(−r²/w²).
    #[default]
    Field,
    /// Rabi frequency follows the intensity, exp(−2r²/w²).
    Intensity,
}

/// Beam-pointing jitter: the beam centre is displaced by r ~ Rayleigh(σ),
/// fixed for the duration of one shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityNoise {
    pub sigma_over_w: f64,
    #[serde(default)]
    pub law: BeamProfileLaw,
}

impl IntensityNoise {
    pub fn new(sigma_over_w: f64) -> Result<Self> {
        if !(sigma_over_w >= 0.0 && sigma_over_w.is_finite()) {
            return Err(Error::invalid(format!("sigma/w must be nonnegative, got {sigma_over_w}")));
        }
        Ok(Self {
            sigma_over_w,
            law: BeamProfileLaw::Field,
        })
    }

    pub fn with_law(mut self, law: BeamProfileLaw) -> Self {
        self.law = law;
        self
    }

    pub fn is_silent(&self) -> bool {
        self.sigma_over_w == 0.0
    }

    /// Mean attenuation E[scale] in closed form.
    pub fn mean_scale(&self) -> f64 {
        let k = match self.law {
            BeamProfileLaw::Field => 1.0,
            BeamProfileLaw::Intensity => 2.0,
        };
        1.0 / (1.0 + 2.0 * k * self.sigma_over_w * self.sigma_over_w)
    }
}

/// Draw a per-shot Rabi attenuation in (0, 1].
pub fn sample_rabi_scale<R: Rng + ?Sized>(noise: &IntensityNoise, rng: &mut R) -> f64 {
    // r/σ by inverse CDF of the unit Rayleigh law; consume the draw even when
    // σ = 0 so streams stay aligned across noise strengths.
    let u: f64 = rng.random();
    let r_over_sigma_sq = -2.0 * (1.0 - u).ln();
    if noise.is_silent() {
        return 1.0;
    }
    let x2 = noise.sigma_over_w * noise.sigma_over_w * r_over_sigma_sq;
    let scale = match noise.law {
        BeamProfileLaw::Field => (-x2).exp(),
        BeamProfileLaw::Intensity => (-2.0 * x2).exp(),
    };
    scale.max(f64::MIN_POSITIVE)
}

/// κ averaged over `samples` per-shot attenuations (noiseless when `noise` is None).
pub fn noise_averaged_profile<R: Rng + ?Sized>(
    seq: &PulseSequence,
    levels: usize,
    noise: Option<&IntensityNoise>,
    samples: usize,
    rng: &mut R,
) -> Result<StepProfile> {
    let Some(noise) = noise else {
        return Ok(step_profile(seq, levels, 1.0));
    };
    if samples < 1 {
        return Err(Error::invalid("noise averaging needs at least one sample"));
    }
    let mut acc = vec![0.0; levels];
    for _ in 0..samples {
        let scale = sample_rabi_scale(noise, rng);
        for (n, a) in acc.iter_mut().enumerate() {
            *a += kappa(seq, n, scale);
        }
    }
    acc.iter_mut().for_each(|a| *a /= samples as f64);
    Ok(StepProfile { kappa: acc })
}

/// Mean |H[n−N_B] − κ̄(n)| over n = 0…n_range−1.
pub fn mean_step_error<R: Rng + ?Sized>(
    seq: &PulseSequence,
    n_b: usize,
    n_range: usize,
    noise: Option<&IntensityNoise>,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_range < n_b + 1 {
        return Err(Error::invalid(format!("n_range must exceed N_B, got {n_range} <= {n_b}")));
    }
    let profile = noise_averaged_profile(seq, n_range, noise, samples, rng)?;
    Ok(profile_error(&profile.kappa, n_b))
}

pub(crate) fn profile_error(kappa: &[f64], n_b: usize) -> f64 {
    kappa
        .iter()
        .enumerate()
        .map(|(n, k)| (heaviside(n as i64 - n_b as i64) - k).abs())
        .sum::<f64>()
        / kappa.len() as f64
}
