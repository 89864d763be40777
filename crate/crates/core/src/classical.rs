//! Noise-driven classical oscillator used as a first-passage oracle.
//!
//! In dimensionless time the oscillator obeys dx = v dt,
//! dv = −ω²x dt + √2 dW, with energy H = (v² + ω²x²)/2 growing on average at
//! unit rate. The step map is exact: a rotation by ωdt in (u, v) = (ωx, v)
//! plus a correlated Gaussian increment with the exact one-step covariance.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpt::{AnalyticMoments, FptdResult};
use crate::seeds;

pub const DEFAULT_OMEGA: f64 = 50.0;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const CA40_MASS_KG: f64 = 6.642e-26;

/// Default step: min(0.01, 0.05/ω), so each step turns the phase by at most 0.05 rad.
pub fn default_dt(omega: f64) -> f64 {
    (0.05 / omega).min(0.01)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingDetection {
    /// FPT is the first step end with H ≥ E_B.
    StepBoundary,
    /// Also count crossings inside a step, with the Brownian-bridge
    /// probability exp(−2(E_B − H_a)(E_B − H_b)/(σ²dt)), σ² = v_a² + v_b².
    #[default]
    BrownianBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub e_b: f64,
    pub h0: f64,
    pub dt: f64,
    pub omega: f64,
    #[serde(default)]
    pub crossing: CrossingDetection,
    /// Trials still below threshold at this time are censored.
    pub max_time: f64,
}

impl ClassicalConfig {
    pub fn new(e_b: f64, h0: f64) -> Result<Self> {
        let cfg = Self {
            e_b,
            h0,
            dt: default_dt(DEFAULT_OMEGA),
            omega: DEFAULT_OMEGA,
            crossing: CrossingDetection::default(),
            max_time: 20.0 * ((e_b - h0).max(0.0) + 1.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_crossing(mut self, crossing: CrossingDetection) -> Self {
        self.crossing = crossing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_b >= 0.0 && self.h0 >= 0.0 && self.e_b.is_finite() && self.h0.is_finite()) {
            return Err(Error::invalid("energies must be finite and nonnegative"));
        }
        if !(self.dt > 0.0 && self.omega > 0.0 && self.max_time > 0.0) {
            return Err(Error::invalid("dt, omega and max_time must be positive"));
        }
        if self.dt > self.max_time {
            return Err(Error::invalid("dt exceeds max_time"));
        }
        Ok(())
    }

    pub fn delta_h(&self) -> f64 {
        (self.e_b - self.h0).max(0.0)
    }
}

/// Exact one-step map of the noisy oscillator in (u, v) = (ωx, v).
#[derive(Debug, Clone, Copy)]
pub struct ExactStepper {
    cos: f64,
    sin: f64,
    /// Lower Cholesky factor of the increment covariance.
    l11: f64,
    l21: f64,
    l22: f64,
}

/// (2a − sin 2a)/(2ω) and (2a + sin 2a)/(2ω), with a series near a = 0.
fn noise_covariance(omega: f64, dt: f64) -> (f64, f64, f64) {
    let a = omega * dt;
    let x = 2.0 * a;
    let minus = if x < 1e-2 {
        x.powi(3) / 6.0 - x.powi(5) / 120.0 + x.powi(7) / 5040.0
    } else {
        x - x.sin()
    };
    let suu = minus / (2.0 * omega);
    let svv = 2.0 * dt - suu;
    let suv = a.sin().powi(2) / omega;
    (suu, suv, svv)
}

impl ExactStepper {
    pub fn new(omega: f64, dt: f64) -> Self {
        let (suu, suv, svv) = noise_covariance(omega, dt);
        let l11 = suu.sqrt();
        let l21 = if l11 > 0.0 { suv / l11 } else { 0.0 };
        let l22 = (svv - l21 * l21).max(0.0).sqrt();
        let a = omega * dt;
        Self {
            cos: a.cos(),
            sin: a.sin(),
            l11,
            l21,
            l22,
        }
    }

    /// Noiseless rotation.
    pub fn rotate(&self, u: f64, v: f64) -> (f64, f64) {
        (self.cos * u + self.sin * v, -self.sin * u + self.cos * v)
    }

    pub fn step<R: Rng + ?Sized>(&self, u: f64, v: f64, rng: &mut R) -> (f64, f64) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let (u, v) = self.rotate(u, v);
        (u + self.l11 * z1, v + self.l21 * z1 + self.l22 * z2)
    }
}

fn energy(u: f64, v: f64) -> f64 {
    0.5 * (u * u + v * v)
}

fn initial_point<R: Rng + ?Sized>(h0: f64, rng: &mut R) -> (f64, f64) {
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let r = (2.0 * h0).sqrt();
    (r * phi.cos(), r * phi.sin())
}

/// Whether a step from (H_a, v_a) to (H_b, v_b), both below threshold,
/// crossed in between.
fn bridge_crossed<R: Rng + ?Sized>(e_b: f64, ha: f64, hb: f64, va: f64, vb: f64, dt: f64, rng: &mut R) -> bool {
    let sigma2 = va * va + vb * vb;
    if sigma2 <= 0.0 {
        return false;
    }
    let p = (-2.0 * (e_b - ha) * (e_b - hb) / (sigma2 * dt)).exp();
    rng.random::<f64>() < p
}

fn simulate_trial(cfg: &ClassicalConfig, stepper: &ExactStepper, seed: u64, trial: u64) -> Option<f64> {
    if cfg.h0 >= cfg.e_b {
        return Some(0.0);
    }
    let mut rng = seeds::stream(seed, trial);
    let (mut u, mut v) = initial_point(cfg.h0, &mut rng);
    let max_steps = (cfg.max_time / cfg.dt).ceil() as u64;
    let mut h = energy(u, v);
    for k in 1..=max_steps {
        let (un, vn) = stepper.step(u, v, &mut rng);
        let hn = energy(un, vn);
        if hn >= cfg.e_b {
            return Some(k as f64 * cfg.dt);
        }
        if cfg.crossing == CrossingDetection::BrownianBridge && bridge_crossed(cfg.e_b, h, hn, v, vn, cfg.dt, &mut rng) {
            return Some(k as f64 * cfg.dt);
        }
        u = un;
        v = vn;
        h = hn;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalFptSamples {
    /// Per-trial first-passage time, `None` if censored at `max_time`.
    pub samples: Vec<Option<f64>>,
    pub censored: usize,
    pub mean: f64,
    pub second_moment: f64,
    pub mean_stderr: f64,
    pub second_stderr: f64,
}

impl ClassicalFptSamples {
    fn from_samples(samples: Vec<Option<f64>>) -> Self {
        let done: Vec<f64> = samples.iter().flatten().copied().collect();
        let censored = samples.len() - done.len();
        let n = done.len() as f64;
        let (mean, second, mse, sse) = if done.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mean = done.iter().sum::<f64>() / n;
            let second = done.iter().map(|t| t * t).sum::<f64>() / n;
            let var1 = done.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let var2 = done.iter().map(|t| (t * t - second).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, second, (var1 / n).sqrt(), (var2 / n).sqrt())
        };
        Self {
            samples,
            censored,
            mean,
            second_moment: second,
            mean_stderr: mse,
            second_stderr: sse,
        }
    }

    /// Third moment of the detected samples.
    pub fn third_moment(&self) -> f64 {
        let done: Vec<f64> = self.samples.iter().flatten().copied().collect();
        done.iter().map(|t| t.powi(3)).sum::<f64>() / done.len() as f64
    }

    /// Counts on bins ((i−1)h, ih], i = 1…bins; later or censored samples go
    /// to the remainder and T = 0 to the first bin.
    pub fn histogram(&self, bin_width: f64, bins: usize) -> Result<FptdResult> {
        if !(bin_width > 0.0) || bins < 1 {
            return Err(Error::invalid("histogram needs a positive bin width and at least one bin"));
        }
        let mut counts = vec![0u64; bins + 1];
        for s in &self.samples {
            let idx = match s {
                Some(t) => ((t / bin_width).ceil() as usize).max(1),
                None => bins + 1,
            };
            counts[idx.min(bins + 1) - 1] += 1;
        }
        FptdResult::from_counts(bin_width, counts)
    }

    /// `trial,fpt` with an empty `fpt` for censored trials.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,fpt\n");
        for (i, s) in self.samples.iter().enumerate() {
            match s {
                Some(t) => out.push_str(&format!("{i},{t}\n")),
                None => out.push_str(&format!("{i},\n")),
            }
        }
        out
    }
}

/// First-passage times of `trials` independent oscillators started on the
/// H0 shell with uniform phase.
pub fn simulate_classical_fpt(cfg: &ClassicalConfig, trials: usize, seed: u64) -> Result<ClassicalFptSamples> {
    cfg.validate()?;
    if trials < 1 {
        return Err(Error::invalid("need at least one trial"));
    }
    let stepper = ExactStepper::new(cfg.omega, cfg.dt);
    let samples: Vec<Option<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| simulate_trial(cfg, &stepper, seed, t))
        .collect();
    let out = ClassicalFptSamples::from_samples(samples);
    if out.censored > 0 {
        log::warn!("{} of {trials} classical trials censored at t = {}", out.censored, cfg.max_time);
    }
    Ok(out)
}

/// ⟨T⟩ = ΔH and ⟨T²⟩ = ΔH(H0 + 3ΔH/2).
pub fn classical_moments(cfg: &ClassicalConfig) -> AnalyticMoments {
    let dh = cfg.delta_h();
    AnalyticMoments {
        mean: dh,
        second_moment: dh * (cfg.h0 + 1.5 * dh),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConvergence {
    pub mean_coarse: f64,
    pub mean_fine: f64,
    /// Standard error of the fine-step mean.
    pub stderr: f64,
}

impl StepConvergence {
    pub fn passes(&self) -> bool {
        (self.mean_coarse - self.mean_fine).abs() < self.stderr
    }
}

/// Run each trial at dt and at dt/2 on the same noise path (the coarse
/// increment is the exact composition of two fine ones) and compare ⟨T⟩.
pub fn check_step_convergence(cfg: &ClassicalConfig, trials: usize, seed: u64) -> Result<StepConvergence> {
    cfg.validate()?;
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let fine = ExactStepper::new(cfg.omega, cfg.dt / 2.0);
    let max_steps = (cfg.max_time / cfg.dt).ceil() as u64;
    let pairs: Vec<(Option<f64>, Option<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            if cfg.h0 >= cfg.e_b {
                return (Some(0.0), Some(0.0));
            }
            let mut rng = seeds::stream(seed, trial);
            let mut bridge_c = seeds::substream(seed, trial, 1);
            let mut bridge_f = seeds::substream(seed, trial, 2);
            let (mut u, mut v) = initial_point(cfg.h0, &mut rng);
            let mut h = energy(u, v);
            let bridge = cfg.crossing == CrossingDetection::BrownianBridge;
            let (mut t_c, mut t_f) = (None, None);
            for k in 1..=max_steps {
                let (um, vm) = fine.step(u, v, &mut rng);
                let hm = energy(um, vm);
                let (un, vn) = fine.step(um, vm, &mut rng);
                let hn = energy(un, vn);
                let t_mid = (k as f64 - 0.5) * cfg.dt;
                let t_end = k as f64 * cfg.dt;
                if t_f.is_none() {
                    if hm >= cfg.e_b || (bridge && bridge_crossed(cfg.e_b, h, hm, v, vm, cfg.dt / 2.0, &mut bridge_f)) {
                        t_f = Some(t_mid);
                    } else if hn >= cfg.e_b
                        || (bridge && bridge_crossed(cfg.e_b, hm, hn, vm, vn, cfg.dt / 2.0, &mut bridge_f))
                    {
                        t_f = Some(t_end);
                    }
                }
                if t_c.is_none()
                    && (hn >= cfg.e_b || (bridge && bridge_crossed(cfg.e_b, h, hn, v, vn, cfg.dt, &mut bridge_c)))
                {
                    t_c = Some(t_end);
                }
                if t_c.is_some() && t_f.is_some() {
                    break;
                }
                u = un;
                v = vn;
                h = hn;
            }
            (t_c, t_f)
        })
        .collect();
    let coarse = ClassicalFptSamples::from_samples(pairs.iter().map(|p| p.0).collect());
    let fine_s = ClassicalFptSamples::from_samples(pairs.iter().map(|p| p.1).collect());
    let report = StepConvergence {
        mean_coarse: coarse.mean,
        mean_fine: fine_s.mean,
        stderr: fine_s.mean_stderr,
    };
    if !report.passes() {
        return Err(Error::GridTooCoarse(format!(
            "halving dt moved <T> from {} to {} (stderr {})",
            report.mean_coarse, report.mean_fine, report.stderr
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrowth {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Ensemble ⟨H(t)⟩ without absorption at the step boundaries nearest `times`.
pub fn energy_growth(cfg: &ClassicalConfig, times: &[f64], trials: usize, seed: u64) -> Result<EnergyGrowth> {
    cfg.validate()?;
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let stepper = ExactStepper::new(cfg.omega, cfg.dt);
    let marks: Vec<u64> = times.iter().map(|t| (t / cfg.dt).round() as u64).collect();
    let paths: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = seeds::stream(seed, trial);
            let (mut u, mut v) = initial_point(cfg.h0, &mut rng);
            let mut out = Vec::with_capacity(marks.len());
            let mut k = 0;
            for &m in &marks {
                while k < m {
                    (u, v) = stepper.step(u, v, &mut rng);
                    k += 1;
                }
                out.push(energy(u, v));
            }
            out
        })
        .collect();
    let n = trials as f64;
    let mut mean = vec![0.0; marks.len()];
    let mut stderr = vec![0.0; marks.len()];
    for j in 0..marks.len() {
        let m = paths.iter().map(|p| p[j]).sum::<f64>() / n;
        let var = paths.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean[j] = m;
        stderr[j] = (var / n).sqrt();
    }
    Ok(EnergyGrowth {
        times: marks.iter().map(|m| *m as f64 * cfg.dt).collect(),
        mean,
        stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub mass_kg: f64,
    pub charge_c: f64,
    pub omega_rad_s: f64,
    pub hbar: f64,
    /// Field-noise spectral density S_ξ(ω) in (V/m)²/Hz.
    pub s_xi: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mass_kg, self.charge_c, self.omega_rad_s, self.hbar, self.s_xi];
        if all.iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("physical parameters must be positive and finite"))
        }
    }
}

/// ṅ = e² S_ξ(ω)/(4 m ω ħ) in quanta per second.
pub fn heating_rate_from_noise(p: &PhysicalParams) -> Result<f64> {
    p.validate()?;
    Ok(p.charge_c * p.charge_c * p.s_xi / (4.0 * p.mass_kg * p.omega_rad_s * p.hbar))
}

/// S_ξ(ω) that produces heating rate `ndot`; `p.s_xi` is ignored.
pub fn noise_from_heating_rate(ndot: f64, p: &PhysicalParams) -> Result<f64> {
    if !(ndot > 0.0) {
        return Err(Error::invalid("heating rate must be positive"));
    }
    PhysicalParams { s_xi: 1.0, ..*p }.validate()?;
    Ok(ndot * 4.0 * p.mass_kg * p.omega_rad_s * p.hbar / (p.charge_c * p.charge_c))
}
