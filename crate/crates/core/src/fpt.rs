//! Stroboscopic first-passage pipelines and their analysis.
//!
//! Time is recorded on the measurement grid: the i-th measurement happens at
//! t = iθ and a detection there has first-passage time iθ. Trials without a
//! detection within `max_steps` land in a separate censored remainder.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fock::{CMatrix, FockSpace, TrajectoryState, DEFAULT_TAIL_CAP};
use crate::heating::{DmPropagator, JumpUnraveling, DEFAULT_DM_STEP};
use crate::seeds;
use crate::step_gate::{build_measurement, sample_rabi_scale, IntensityNoise, PulseSequence, StepMeasurement};

/// Censored mass above which moments are flagged as biased low.
pub const CENSORED_WARNING: f64 = 1e-3;

/// Readout error bound used when detection errors are enabled without a value.
pub const DEFAULT_DETECTION_ERROR: f64 = 1e-3;

/// Minimum number of positive grid points for an exponential tail fit.
pub const MIN_TAIL_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FptConfig {
    pub n_b: usize,
    pub theta: f64,
    pub max_steps: usize,
    /// Basis size; `None` picks [`FockSpace::for_heating`].
    pub n_cut: Option<usize>,
    pub tail_cap: f64,
    pub dm_step: f64,
}

impl FptConfig {
    pub fn new(n_b: usize, theta: f64, max_steps: usize) -> Result<Self> {
        let cfg = Self {
            n_b,
            theta,
            max_steps,
            n_cut: None,
            tail_cap: DEFAULT_TAIL_CAP,
            dm_step: DEFAULT_DM_STEP,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_n_cut(mut self, n_cut: usize) -> Self {
        self.n_cut = Some(n_cut);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_b < 1 {
            return Err(Error::invalid("N_B must be at least 1"));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid(format!("theta must be positive, got {}", self.theta)));
        }
        if self.max_steps < 1 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if let Some(n) = self.n_cut {
            if n <= self.n_b {
                return Err(Error::invalid(format!("n_cut {n} must exceed N_B {}", self.n_b)));
            }
        }
        if !(self.dm_step > 0.0) || !(self.tail_cap > 0.0) {
            return Err(Error::invalid("dm_step and tail_cap must be positive"));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<FockSpace> {
        match self.n_cut {
            Some(n) => FockSpace::new(n),
            None => Ok(FockSpace::for_heating(self.n_b, self.theta)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FptMode {
    Deterministic,
    MonteCarlo { trials: u64 },
}

/// Moments over detected mass only; censored trials are not imputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub second_moment: f64,
    pub censored_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMoments {
    pub mean: f64,
    pub second_moment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub beta: f64,
    pub intercept: f64,
    pub fit_window: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FptdResult {
    pub theta: f64,
    /// P^FPT(iθ) for i = 1…max_steps.
    pub probs: Vec<f64>,
    pub survivor_remainder: f64,
    pub mode: FptMode,
    /// E(iθ), the running sum of `probs`.
    pub escape: Vec<f64>,
    pub moments: Moments,
    pub tail: Option<TailFit>,
    /// Per-bin multinomial standard errors (Monte Carlo only).
    pub stderr: Option<Vec<f64>>,
    /// Detection counts per step followed by the censored count.
    pub counts: Option<Vec<u64>>,
}

fn prefix_sums(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn detected_moments(theta: f64, probs: &[f64], remainder: f64) -> Moments {
    let mut mean = 0.0;
    let mut second = 0.0;
    for (i, p) in probs.iter().enumerate() {
        let t = (i + 1) as f64 * theta;
        mean += t * p;
        second += t * t * p;
    }
    Moments {
        mean,
        second_moment: second,
        censored_fraction: remainder,
    }
}

impl FptdResult {
    /// Build from grid probabilities; Σ probs + remainder must be 1 within 1e-8.
    pub fn from_probs(theta: f64, probs: Vec<f64>, survivor_remainder: f64, mode: FptMode) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::invalid("theta must be positive"));
        }
        if probs.is_empty() {
            return Err(Error::invalid("need at least one grid step"));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(Error::invalid(format!("negative or NaN probability {p} at step {}", i + 1)));
        }
        if !(survivor_remainder >= 0.0) {
            return Err(Error::invalid(format!("negative remainder {survivor_remainder}")));
        }
        let total: f64 = probs.iter().sum::<f64>() + survivor_remainder;
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        let escape = prefix_sums(&probs);
        let moments = detected_moments(theta, &probs, survivor_remainder);
        Ok(Self {
            theta,
            probs,
            survivor_remainder,
            mode,
            escape,
            moments,
            tail: None,
            stderr: None,
            counts: None,
        })
    }

    /// Build from first-detection counts; the last entry counts censored trials.
    pub fn from_counts(theta: f64, counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::invalid("counts need at least one step and the censored bin"));
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::invalid("no trials"));
        }
        let nf = n as f64;
        let k = counts.len() - 1;
        let probs: Vec<f64> = counts[..k].iter().map(|c| *c as f64 / nf).collect();
        let remainder = counts[k] as f64 / nf;
        let stderr = probs.iter().map(|p| (p * (1.0 - p) / nf).sqrt()).collect();
        let mut res = Self::from_probs(theta, probs, remainder, FptMode::MonteCarlo { trials: n })?;
        res.stderr = Some(stderr);
        res.counts = Some(counts);
        Ok(res)
    }

    pub fn steps(&self) -> usize {
        self.probs.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.steps()).map(|i| i as f64 * self.theta).collect()
    }

    pub fn with_tail_fit(mut self, t_min: f64) -> Result<Self> {
        self.tail = Some(tail_fit(&self, t_min)?);
        Ok(self)
    }

    /// `step,time,prob,escape,stderr`; `stderr` is empty for deterministic results.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,time,prob,escape,stderr\n");
        for i in 0..self.steps() {
            let se = self.stderr.as_ref().map(|s| format!("{}", s[i])).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                (i + 1) as f64 * self.theta,
                self.probs[i],
                self.escape[i],
                se
            ));
        }
        out
    }

    /// Summary fields for a metadata sidecar.
    pub fn metadata(&self) -> serde_json::Value {
        json!({
            "theta": self.theta,
            "steps": self.steps(),
            "mode": self.mode,
            "survivor_remainder": self.survivor_remainder,
            "censored_fraction": self.moments.censored_fraction,
            "moments": self.moments,
            "tail": self.tail,
            "counts_censored": self.counts.as_ref().map(|c| c[c.len() - 1]),
        })
    }
}

/// Per-step record of the deterministic pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Conditional survival probability at this measurement.
    pub p_survive: f64,
    pub p_absorb: f64,
    /// ⟨n⟩ of the normalized state just before and just after a survival.
    pub energy_before: f64,
    pub energy_after: f64,
    /// Tr(P^A ρ) for the never-renormalized state.
    pub flux: f64,
}

#[derive(Debug, Clone)]
pub struct IdealTrace {
    pub result: FptdResult,
    pub steps: Vec<StepDiagnostics>,
}

fn mean_occupation(rho: &CMatrix) -> f64 {
    let tr = rho.trace().re;
    (0..rho.nrows()).map(|k| k as f64 * rho[(k, k)].re).sum::<f64>() / tr
}

fn absorbed_weight(rho: &CMatrix, n_b: usize) -> f64 {
    (n_b..rho.nrows()).map(|k| rho[(k, k)].re).sum()
}

/// ρ ← P^S ρ P^S.
fn project_survive(rho: &mut CMatrix, n_b: usize) {
    let n = rho.nrows();
    for i in 0..n {
        for j in 0..n {
            if i >= n_b || j >= n_b {
                rho[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

fn run_ideal(cfg: &FptConfig, trace: bool) -> Result<IdealTrace> {
    cfg.validate()?;
    let space = cfg.space()?;
    if space.dim() <= cfg.n_b {
        return Err(Error::invalid("basis must extend past the threshold"));
    }
    let prop = DmPropagator::new(space).with_step(cfg.dm_step).with_tail_cap(cfg.tail_cap);
    let n = space.dim();
    let mut rho = CMatrix::zeros(n, n);
    rho[(0, 0)] = Complex64::new(1.0, 0.0);
    let mut raw = if trace { Some(rho.clone()) } else { None };

    let mut probs = Vec::with_capacity(cfg.max_steps);
    let mut diags = Vec::new();
    let mut survival = 1.0;
    for _ in 0..cfg.max_steps {
        if survival == 0.0 {
            probs.push(0.0);
            continue;
        }
        prop.evolve_in_place(&mut rho, cfg.theta)?;
        let tr = rho.trace().re;
        let p_absorb = (absorbed_weight(&rho, cfg.n_b) / tr).clamp(0.0, 1.0);
        let p_survive = 1.0 - p_absorb;
        probs.push(survival * p_absorb);
        let energy_before = mean_occupation(&rho);
        project_survive(&mut rho, cfg.n_b);
        survival *= p_survive;
        let energy_after = if p_survive > 0.0 {
            rho.unscale_mut(rho.trace().re);
            mean_occupation(&rho)
        } else {
            0.0
        };
        if let Some(raw) = raw.as_mut() {
            prop.evolve_in_place(raw, cfg.theta)?;
            let flux = absorbed_weight(raw, cfg.n_b);
            project_survive(raw, cfg.n_b);
            diags.push(StepDiagnostics {
                p_survive,
                p_absorb,
                energy_before,
                energy_after,
                flux,
            });
        }
    }
    let result = FptdResult::from_probs(cfg.theta, probs, survival, FptMode::Deterministic)?;
    Ok(IdealTrace { result, steps: diags })
}

/// Deterministic QFPTD under ideal projective measurements, starting from |0⟩.
pub fn qfptd_ideal(cfg: &FptConfig) -> Result<FptdResult> {
    run_ideal(cfg, false).map(|t| t.result)
}

/// As [`qfptd_ideal`], also tracking per-step diagnostics and the
/// unnormalized absorption flux.
pub fn qfptd_ideal_traced(cfg: &FptConfig) -> Result<IdealTrace> {
    run_ideal(cfg, true)
}

#[derive(Debug, Clone)]
pub enum MeasurementModel {
    /// A fixed Kraus pair; beam noise does not apply.
    Kraus(StepMeasurement),
    /// A pulse sequence, rebuilt per shot when beam noise is present.
    Pulse(PulseSequence),
}

/// Excited-state decay during the free evolution, seen as a false bright event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpontEmissionModel {
    pub tau_s: f64,
    pub ndot_per_s: f64,
}

impl SpontEmissionModel {
    pub fn new(tau_s: f64, ndot_per_s: f64) -> Result<Self> {
        if !(tau_s > 0.0 && ndot_per_s > 0.0) {
            return Err(Error::invalid("lifetime and heating rate must be positive"));
        }
        Ok(Self { tau_s, ndot_per_s })
    }

    /// s = exp(−θ/(ṅτ)), the probability of no decay in one interval.
    pub fn step_survival(&self, theta: f64) -> f64 {
        (-theta / (self.ndot_per_s * self.tau_s)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealisticOptions {
    pub noise: Option<IntensityNoise>,
    pub spont: Option<SpontEmissionModel>,
    /// Symmetric readout flip probability.
    pub detection_error: f64,
    pub trials: u64,
    pub seed: u64,
}

impl RealisticOptions {
    pub fn new(trials: u64, seed: u64) -> Self {
        Self {
            noise: None,
            spont: None,
            detection_error: 0.0,
            trials,
            seed,
        }
    }
}

/// One trial: returns the first observed-bright step, or `None` if censored.
fn run_trial(
    cfg: &FptConfig,
    space: FockSpace,
    unravel: &JumpUnraveling,
    model: &MeasurementModel,
    fixed: &StepMeasurement,
    opts: &RealisticOptions,
    spont_survival: f64,
    trial: u64,
) -> Result<Option<usize>> {
    let mut rng = seeds::stream(opts.seed, trial);
    let noise = opts.noise.filter(|n| !n.is_silent());
    let mut psi = TrajectoryState::ground(space);
    for step in 1..=cfg.max_steps {
        unravel.evolve(&mut psi, cfg.theta, &mut rng)?;
        if spont_survival < 1.0 && rng.random::<f64>() >= spont_survival {
            return Ok(Some(step));
        }
        let shot;
        let meas = match (model, noise) {
            (MeasurementModel::Pulse(seq), Some(noise)) => {
                shot = build_measurement(seq, space, sample_rabi_scale(&noise, &mut rng));
                &shot
            }
            _ => fixed,
        };
        let dark = rng.random::<f64>() < meas.dark_probability(&psi);
        let flipped = opts.detection_error > 0.0 && rng.random::<f64>() < opts.detection_error;
        if dark {
            meas.apply_dark(&mut psi);
        } else {
            // a missed bright event leaves the ion re-pumped to D with the
            // motion lowered by the sideband transfer
            meas.apply_bright(&mut psi);
        }
        psi.normalize()?;
        if dark == flipped {
            return Ok(Some(step));
        }
    }
    Ok(None)
}

/// Monte Carlo QFPTD with trajectory heating, Kraus step measurements, beam
/// noise, spontaneous decay and readout errors.
pub fn qfptd_realistic(cfg: &FptConfig, model: &MeasurementModel, opts: &RealisticOptions) -> Result<FptdResult> {
    cfg.validate()?;
    if opts.trials < 1 {
        return Err(Error::invalid("Monte Carlo mode needs at least one trial"));
    }
    if !(0.0..=0.5).contains(&opts.detection_error) {
        return Err(Error::invalid(format!(
            "detection error must lie in [0, 0.5], got {}",
            opts.detection_error
        )));
    }
    let space = cfg.space()?;
    let fixed = match model {
        MeasurementModel::Kraus(m) => {
            if m.dim() != space.dim() {
                return Err(Error::invalid(format!(
                    "measurement dimension {} does not match basis size {}",
                    m.dim(),
                    space.dim()
                )));
            }
            if opts.noise.is_some_and(|n| !n.is_silent()) {
                return Err(Error::invalid("beam noise needs a pulse sequence, not a fixed Kraus pair"));
            }
            m.clone()
        }
        MeasurementModel::Pulse(seq) => build_measurement(seq, space, 1.0),
    };
    let spont_survival = opts.spont.map_or(1.0, |s| s.step_survival(cfg.theta));
    let unravel = JumpUnraveling::new(space).with_tail_cap(cfg.tail_cap);

    let outcomes: Vec<Option<usize>> = (0..opts.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, space, &unravel, model, &fixed, opts, spont_survival, t))
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; cfg.max_steps + 1];
    for o in outcomes {
        match o {
            Some(step) => counts[step - 1] += 1,
            None => counts[cfg.max_steps] += 1,
        }
    }
    FptdResult::from_counts(cfg.theta, counts)
}

/// E(iθ) = Σ_{j ≤ i} P^FPT(jθ).
pub fn escape_probability(res: &FptdResult) -> Vec<f64> {
    prefix_sums(&res.probs)
}

/// Moments over detected mass, warning when the censored share is large.
pub fn moments(res: &FptdResult) -> Moments {
    let m = detected_moments(res.theta, &res.probs, res.survivor_remainder);
    if m.censored_fraction > CENSORED_WARNING {
        log::warn!(
            "censored fraction {:.3e} exceeds {CENSORED_WARNING:e}; moments are biased low",
            m.censored_fraction
        );
    }
    m
}

/// Continuous-measurement moments from |0⟩: ⟨T⟩ = N_B, ⟨T²⟩ = N_B(3N_B+1)/2.
pub fn analytic_quantum_moments(n_b: usize) -> Result<AnalyticMoments> {
    if n_b < 1 {
        return Err(Error::invalid("N_B must be at least 1"));
    }
    let n = n_b as f64;
    Ok(AnalyticMoments {
        mean: n,
        second_moment: n * (3.0 * n + 1.0) / 2.0,
    })
}

/// Exact N_B = 1 law: geometric with p = θ/(1+θ).
pub fn geometric_reference(theta: f64, steps: usize) -> Result<FptdResult> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid(format!("theta must be positive, got {theta}")));
    }
    if steps < 1 {
        return Err(Error::invalid("need at least one step"));
    }
    let p = theta / (1.0 + theta);
    let mut survive = 1.0;
    let mut probs = Vec::with_capacity(steps);
    for _ in 0..steps {
        probs.push(survive * p);
        survive *= 1.0 - p;
    }
    FptdResult::from_probs(theta, probs, survive, FptMode::Deterministic)
}

/// Weighted least squares of ln P^FPT(iθ) on iθ for iθ ≥ t_min.
///
/// Weights p/(1−p) are the inverse delta-method variances of ln p̂.
pub fn tail_fit(res: &FptdResult, t_min: f64) -> Result<TailFit> {
    let pts: Vec<(f64, f64, f64)> = res
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64 * res.theta, *p))
        .filter(|(t, p)| *t >= t_min - 1e-12 && *p > 0.0 && *p < 1.0)
        .map(|(t, p)| (t, p.ln(), p / (1.0 - p)))
        .collect();
    if pts.len() < MIN_TAIL_POINTS {
        return Err(Error::InsufficientTailPoints {
            found: pts.len(),
            needed: MIN_TAIL_POINTS,
            t_min,
        });
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let tbar = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ybar = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - tbar).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - tbar) * (p.1 - ybar)).sum();
    let syy: f64 = pts.iter().map(|p| p.2 * (p.1 - ybar).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * tbar;
    let ss_res: f64 = pts
        .iter()
        .map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    if !slope.is_finite() {
        return Err(Error::Numerical("tail fit slope is not finite".into()));
    }
    Ok(TailFit {
        beta: -slope,
        intercept,
        fit_window: (pts[0].0, pts[pts.len() - 1].0),
        r_squared,
        points: pts.len(),
    })
}

/// S_i = Σ_{j>i} P_j + remainder for i = 0…k, summed from the tail so small
/// survivals keep their relative precision.
fn tail_survival(probs: &[f64], remainder: f64) -> Vec<f64> {
    let mut s = vec![0.0; probs.len() + 1];
    s[probs.len()] = remainder;
    for i in (0..probs.len()).rev() {
        s[i] = s[i + 1] + probs[i];
    }
    s
}

/// Observed QFPTD when the excited state can decay during each interval and
/// the decay is read as bright at that interval's measurement:
/// P'_i = s^{i−1}(P_i + (1−s)S_i).
pub fn spont_forward(res: &FptdResult, model: &SpontEmissionModel) -> Result<FptdResult> {
    let s = model.step_survival(res.theta);
    let surv = tail_survival(&res.probs, res.survivor_remainder);
    let mut factor = 1.0;
    let mut probs = Vec::with_capacity(res.steps());
    for (i, p) in res.probs.iter().enumerate() {
        probs.push(factor * (p + (1.0 - s) * surv[i + 1]));
        factor *= s;
    }
    FptdResult::from_probs(res.theta, probs, factor * res.survivor_remainder, res.mode)
}

/// Exact inverse of [`spont_forward`]. Negative reconstructed probabilities
/// are an error unless `clamp` is set, in which case they are zeroed and the
/// remainder absorbs the difference.
pub fn spont_reconstruct(observed: &FptdResult, model: &SpontEmissionModel, clamp: bool) -> Result<FptdResult> {
    let s = model.step_survival(observed.theta);
    if !(s > 0.0) {
        return Err(Error::invalid("decay within one interval is certain; nothing to reconstruct"));
    }
    let surv = tail_survival(&observed.probs, observed.survivor_remainder);
    let k = observed.steps();
    let mut factor = 1.0;
    let mut probs = Vec::with_capacity(k);
    for (i, p) in observed.probs.iter().enumerate() {
        let mut v = (p - (1.0 - s) / s * surv[i + 1]) / factor;
        // rounding noise around zero is not a model mismatch
        if v < 0.0 && v > -1e-12 {
            v = 0.0;
        }
        if v < 0.0 {
            if !clamp {
                return Err(Error::NegativeReconstruction { step: i + 1, value: v });
            }
            v = 0.0;
        }
        probs.push(v);
        factor *= s;
    }
    let mut remainder = observed.survivor_remainder / factor;
    if clamp {
        let detected: f64 = probs.iter().sum();
        if detected > 1.0 {
            probs.iter_mut().for_each(|p| *p /= detected);
        }
        remainder = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    }
    FptdResult::from_probs(observed.theta, probs, remainder, observed.mode)
}
