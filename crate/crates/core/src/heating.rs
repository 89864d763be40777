//! Motional heating by the high-temperature amplitude reservoir.
//!
//! In dimensionless time the generator is
//!
//! ```text
//! L(ρ) = aρa† + a†ρa − ½{a†a + aa†, ρ}
//! ```
//!
//! Three views of it live here: a fixed-step RK4 propagator for ρ, a
//! quantum-jump unraveling for pure states, and an absorbing-boundary solver
//! for the continuous-measurement limit of the first-passage problem.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fock::{
    check_tail, CMatrix, FockSpace, MotionalDensityMatrix, Normalization, TrajectoryState,
    DEFAULT_TAIL_CAP,
};

/// Default RK4 step for the master equation.
pub const DEFAULT_DM_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeatingParams {
    /// Heating rate in quanta per second.
    pub ndot: f64,
}

impl HeatingParams {
    pub fn new(ndot: f64) -> Result<Self> {
        if !(ndot > 0.0 && ndot.is_finite()) {
            return Err(Error::invalid(format!("heating rate must be positive, got {ndot}")));
        }
        Ok(Self { ndot })
    }

    /// Dimensionless time t = ṅ·t'.
    pub fn to_dimensionless(&self, seconds: f64) -> f64 {
        self.ndot * seconds
    }

    pub fn to_seconds(&self, t: f64) -> f64 {
        t / self.ndot
    }
}

/// The heating Lindbladian on a truncated (or absorbing) number basis,
/// applied matrix-free.
///
/// `(aρa†)_{mn} = √(m+1)√(n+1) ρ_{m+1,n+1}`, `(a†ρa)_{mn} = √m√n ρ_{m−1,n−1}`,
/// and the anticommutator is diagonal with rates `decay[m]`.
#[derive(Debug, Clone)]
pub struct HeatingGenerator {
    dim: usize,
    sqrt: Vec<f64>,
    decay: Vec<f64>,
}

impl HeatingGenerator {
    /// Trace-preserving generator on the truncated basis. The truncated a†
    /// cannot raise |n_cut−1⟩, so that level only decays at rate n_cut−1.
    pub fn new(space: FockSpace) -> Self {
        let n = space.dim();
        let decay = (0..n)
            .map(|m| {
                let up = if m + 1 < n { (m + 1) as f64 } else { 0.0 };
                m as f64 + up
            })
            .collect();
        Self {
            dim: n,
            sqrt: (0..=n).map(|k| (k as f64).sqrt()).collect(),
            decay,
        }
    }

    /// Generator restricted to the surviving block {|0⟩…|n_b−1⟩}: upward jumps
    /// out of |n_b−1⟩ leave the block, so the trace decays by the absorbed flux.
    pub fn absorbing(n_b: usize) -> Self {
        Self {
            dim: n_b,
            sqrt: (0..=n_b).map(|k| (k as f64).sqrt()).collect(),
            decay: (0..n_b).map(|m| (2 * m + 1) as f64).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal of a†a + aa†, i.e. the total jump rate out of |m⟩.
    pub fn decay_rates(&self) -> &[f64] {
        &self.decay
    }

    pub fn apply(&self, rho: &CMatrix, out: &mut CMatrix) {
        let n = self.dim;
        for j in 0..n {
            for i in 0..n {
                let mut v = rho[(i, j)] * (-0.5 * (self.decay[i] + self.decay[j]));
                if i + 1 < n && j + 1 < n {
                    v += rho[(i + 1, j + 1)] * (self.sqrt[i + 1] * self.sqrt[j + 1]);
                }
                if i >= 1 && j >= 1 {
                    v += rho[(i - 1, j - 1)] * (self.sqrt[i] * self.sqrt[j]);
                }
                out[(i, j)] = v;
            }
        }
    }

    /// Classical RK4 over `duration` with steps no larger than `max_step`.
    pub fn propagate(&self, rho: &mut CMatrix, duration: f64, max_step: f64) {
        if duration <= 0.0 {
            return;
        }
        let steps = (duration / max_step).ceil().max(1.0) as usize;
        let h = duration / steps as f64;
        let mut rk = Rk4Workspace::new(self.dim);
        for _ in 0..steps {
            self.rk4_step(rho, h, &mut rk);
        }
    }

    fn rk4_step(&self, rho: &mut CMatrix, h: f64, rk: &mut Rk4Workspace) {
        let half = 0.5 * h;
        let full = h;
        self.apply(rho, &mut rk.k1);
        rk.tmp.copy_from(rho);
        axpy(&mut rk.tmp, half, &rk.k1);
        self.apply(&rk.tmp, &mut rk.k2);
        rk.tmp.copy_from(rho);
        axpy(&mut rk.tmp, half, &rk.k2);
        self.apply(&rk.tmp, &mut rk.k3);
        rk.tmp.copy_from(rho);
        axpy(&mut rk.tmp, full, &rk.k3);
        self.apply(&rk.tmp, &mut rk.k4);
        let sixth = h / 6.0;
        let third = h / 3.0;
        axpy(rho, sixth, &rk.k1);
        axpy(rho, third, &rk.k2);
        axpy(rho, third, &rk.k3);
        axpy(rho, sixth, &rk.k4);
    }
}

fn axpy(y: &mut CMatrix, a: f64, x: &CMatrix) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += xi * a;
    }
}

struct Rk4Workspace {
    k1: CMatrix,
    k2: CMatrix,
    k3: CMatrix,
    k4: CMatrix,
    tmp: CMatrix,
}

impl Rk4Workspace {
    fn new(n: usize) -> Self {
        Self {
            k1: CMatrix::zeros(n, n),
            k2: CMatrix::zeros(n, n),
            k3: CMatrix::zeros(n, n),
            k4: CMatrix::zeros(n, n),
            tmp: CMatrix::zeros(n, n),
        }
    }
}

/// Master-equation propagator, assembled once per basis size.
#[derive(Debug, Clone)]
pub struct DmPropagator {
    generator: HeatingGenerator,
    pub step: f64,
    pub tail_cap: f64,
}

impl DmPropagator {
    pub fn new(space: FockSpace) -> Self {
        Self {
            generator: HeatingGenerator::new(space),
            step: DEFAULT_DM_STEP,
            tail_cap: DEFAULT_TAIL_CAP,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_tail_cap(mut self, cap: f64) -> Self {
        self.tail_cap = cap;
        self
    }

    pub fn generator(&self) -> &HeatingGenerator {
        &self.generator
    }

    pub fn evolve(&self, rho: &MotionalDensityMatrix, duration: f64) -> Result<MotionalDensityMatrix> {
        let mut m = rho.rho().clone();
        self.evolve_in_place(&mut m, duration)?;
        Ok(MotionalDensityMatrix::from_parts(m, rho.normalization()))
    }

    pub(crate) fn evolve_in_place(&self, rho: &mut CMatrix, duration: f64) -> Result<()> {
        if !(duration >= 0.0) {
            return Err(Error::invalid(format!("duration must be nonnegative, got {duration}")));
        }
        if rho.nrows() != self.generator.dim() {
            return Err(Error::invalid(format!(
                "state dimension {} does not match propagator dimension {}",
                rho.nrows(),
                self.generator.dim()
            )));
        }
        self.generator.propagate(rho, duration, self.step);
        let n = rho.nrows();
        let tr = rho.trace().re;
        let tail = if tr > 0.0 { rho[(n - 1, n - 1)].re / tr } else { 0.0 };
        check_tail(tail, n, self.tail_cap)
    }
}

/// Evolve ρ under the heating master equation for a dimensionless `duration`.
pub fn evolve_heating_dm(rho: &MotionalDensityMatrix, duration: f64) -> Result<MotionalDensityMatrix> {
    let space = FockSpace::new(rho.dim())?;
    DmPropagator::new(space).evolve(rho, duration)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JumpCounts {
    pub up: u64,
    pub down: u64,
}

/// Quantum-jump unraveling with jump operators a and a†.
///
/// Between jumps the effective Hamiltonian −(i/2)(a†a + aa†) is diagonal, so
/// the no-jump propagator is applied in closed form and jump times are drawn
/// by the waiting-time method (evolve until the unnormalized norm² falls to a
/// uniform draw). No time discretization enters.
#[derive(Debug, Clone)]
pub struct JumpUnraveling {
    generator: HeatingGenerator,
    pub tail_cap: f64,
}

impl JumpUnraveling {
    pub fn new(space: FockSpace) -> Self {
        Self {
            generator: HeatingGenerator::new(space),
            tail_cap: DEFAULT_TAIL_CAP,
        }
    }

    pub fn with_tail_cap(mut self, cap: f64) -> Self {
        self.tail_cap = cap;
        self
    }

    pub fn evolve<R: Rng + ?Sized>(
        &self,
        state: &mut TrajectoryState,
        duration: f64,
        rng: &mut R,
    ) -> Result<JumpCounts> {
        if !(duration >= 0.0) {
            return Err(Error::invalid(format!("duration must be nonnegative, got {duration}")));
        }
        if state.dim() != self.generator.dim() {
            return Err(Error::invalid("trajectory dimension does not match unraveling"));
        }
        if state.normalization() != Normalization::Normalized {
            return Err(Error::invalid("jump unraveling requires a normalized state"));
        }
        let rates = self.generator.decay_rates();
        let n = state.dim();
        let mut counts = JumpCounts::default();
        let mut remaining = duration;
        let mut weights = vec![0.0; n];
        while remaining > 0.0 {
            for (w, c) in weights.iter_mut().zip(state.amplitudes().iter()) {
                *w = c.norm_sqr();
            }
            // 1 - U lies in (0, 1]
            let target = 1.0 - rng.random::<f64>();
            let survive_all = no_jump_norm(&weights, rates, remaining);
            if survive_all > target {
                apply_no_jump(state, rates, remaining);
                state.normalize()?;
                break;
            }
            let s = waiting_time(&weights, rates, target, remaining);
            apply_no_jump(state, rates, s);
            state.normalize()?;
            remaining -= s;

            let mut up_rate = 0.0;
            let mut down_rate = 0.0;
            for (k, c) in state.amplitudes().iter().enumerate() {
                let p = c.norm_sqr();
                down_rate += k as f64 * p;
                if k + 1 < n {
                    up_rate += (k + 1) as f64 * p;
                }
            }
            let amps = state.amplitudes_mut();
            if rng.random::<f64>() * (up_rate + down_rate) < up_rate {
                // a†: d_k ← √k d_{k−1}
                for k in (1..n).rev() {
                    amps[k] = amps[k - 1] * (k as f64).sqrt();
                }
                amps[0] = Complex64::new(0.0, 0.0);
                counts.up += 1;
            } else {
                // a: d_k ← √(k+1) d_{k+1}
                for k in 0..n - 1 {
                    amps[k] = amps[k + 1] * ((k + 1) as f64).sqrt();
                }
                amps[n - 1] = Complex64::new(0.0, 0.0);
                counts.down += 1;
            }
            state.normalize()?;
        }
        check_tail(state.tail_population(), n, self.tail_cap)?;
        Ok(counts)
    }
}

fn no_jump_norm(weights: &[f64], rates: &[f64], s: f64) -> f64 {
    weights
        .iter()
        .zip(rates)
        .map(|(w, g)| w * (-g * s).exp())
        .sum()
}

fn apply_no_jump(state: &mut TrajectoryState, rates: &[f64], s: f64) {
    for (c, g) in state.amplitudes_mut().iter_mut().zip(rates) {
        *c *= (-0.5 * g * s).exp();
    }
    state.set_normalization(Normalization::Conditioned);
}

/// Root of Σ w_k e^{−g_k s} = target on [0, s_max]. The left side is convex and
/// decreasing, so Newton from s = 0 approaches the root monotonically.
fn waiting_time(weights: &[f64], rates: &[f64], target: f64, s_max: f64) -> f64 {
    let mut s = 0.0;
    for _ in 0..200 {
        let mut f = -target;
        let mut df = 0.0;
        for (w, g) in weights.iter().zip(rates) {
            let e = w * (-g * s).exp();
            f += e;
            df -= g * e;
        }
        if f <= 0.0 || df >= 0.0 {
            break;
        }
        let step = -f / df;
        s += step;
        if s >= s_max {
            return s_max;
        }
        if step <= 1e-15 * (1.0 + s) {
            break;
        }
    }
    s.min(s_max)
}

/// One realization of the jump unraveling for a dimensionless `duration`.
pub fn evolve_heating_trajectory<R: Rng + ?Sized>(
    state: &TrajectoryState,
    duration: f64,
    rng: &mut R,
) -> Result<TrajectoryState> {
    evolve_heating_trajectory_counted(state, duration, rng).map(|(s, _)| s)
}

pub fn evolve_heating_trajectory_counted<R: Rng + ?Sized>(
    state: &TrajectoryState,
    duration: f64,
    rng: &mut R,
) -> Result<(TrajectoryState, JumpCounts)> {
    let space = FockSpace::new(state.dim())?;
    let mut out = state.clone();
    let counts = JumpUnraveling::new(space).evolve(&mut out, duration, rng)?;
    Ok((out, counts))
}

/// First-passage density in the continuous-measurement limit.
#[derive(Debug, Clone, PartialEq)]
pub struct FptDensityCurve {
    pub times: Vec<f64>,
    /// f(t) = −d/dt Tr ρ_surv(t).
    pub density: Vec<f64>,
    /// 1 − Tr ρ_surv(t).
    pub cumulative: Vec<f64>,
    /// ∫ t f(t) dt over the grid.
    pub mean: f64,
    /// ∫ t² f(t) dt over the grid.
    pub second_moment: f64,
    /// ∫ S(t) dt, the same mean by integration by parts.
    pub mean_from_survival: f64,
    /// 2∫ t S(t) dt.
    pub second_from_survival: f64,
}

/// Relative tolerance of the density/survival moment cross-check.
pub const MOMENT_SELF_CONSISTENCY: f64 = 2e-3;

/// Absorbing-boundary first-passage density starting from |0⟩.
pub fn absorbing_fptd(n_b: usize, t_max: f64, grid_dt: f64) -> Result<FptDensityCurve> {
    if n_b < 1 {
        return Err(Error::invalid("N_B must be at least 1"));
    }
    if !(t_max > 0.0 && grid_dt > 0.0 && grid_dt < t_max) {
        return Err(Error::invalid(format!("need 0 < grid_dt < t_max, got {grid_dt}, {t_max}")));
    }
    let gen = HeatingGenerator::absorbing(n_b);
    let points = (t_max / grid_dt).round() as usize;
    let h = t_max / points as f64;
    let substep = h.min(DEFAULT_DM_STEP);

    let mut rho = CMatrix::zeros(n_b, n_b);
    rho[(0, 0)] = Complex64::new(1.0, 0.0);
    let mut deriv = CMatrix::zeros(n_b, n_b);

    let mut times = Vec::with_capacity(points + 1);
    let mut density = Vec::with_capacity(points + 1);
    let mut cumulative = Vec::with_capacity(points + 1);
    for i in 0..=points {
        if i > 0 {
            gen.propagate(&mut rho, h, substep);
        }
        gen.apply(&rho, &mut deriv);
        times.push(i as f64 * h);
        density.push((-deriv.trace().re).max(0.0));
        cumulative.push((1.0 - rho.trace().re).clamp(0.0, 1.0));
    }

    let survival: Vec<f64> = cumulative.iter().map(|c| 1.0 - c).collect();
    let mean = integrate(h, |i| times[i] * density[i], points);
    let second_moment = integrate(h, |i| times[i] * times[i] * density[i], points);
    let mean_from_survival = integrate(h, |i| survival[i], points);
    let second_from_survival = 2.0 * integrate(h, |i| times[i] * survival[i], points);

    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    if rel(mean, mean_from_survival) > MOMENT_SELF_CONSISTENCY
        || rel(second_moment, second_from_survival) > MOMENT_SELF_CONSISTENCY
    {
        return Err(Error::GridTooCoarse(format!(
            "moments from f(t) ({mean:.6}, {second_moment:.6}) and from S(t) \
             ({mean_from_survival:.6}, {second_from_survival:.6}) disagree; \
             refine grid_dt or extend t_max"
        )));
    }

    Ok(FptDensityCurve {
        times,
        density,
        cumulative,
        mean,
        second_moment,
        mean_from_survival,
        second_from_survival,
    })
}

/// Composite Simpson on `points` intervals (trapezoid on the last one if odd).
fn integrate(h: f64, f: impl Fn(usize) -> f64, points: usize) -> f64 {
    let even = points - points % 2;
    let mut s = 0.0;
    let mut i = 0;
    while i < even {
        s += f(i) + 4.0 * f(i + 1) + f(i + 2);
        i += 2;
    }
    let mut total = s * h / 3.0;
    if even < points {
        total += 0.5 * h * (f(even) + f(points));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::make_operators;
    use crate::seeds;

    /// Dense Lindbladian from explicit operator products; independent of the
    /// matrix-free indexing in `HeatingGenerator::apply`.
    fn dense_lindblad(rho: &CMatrix, space: FockSpace) -> CMatrix {
        let ops = make_operators(space);
        let a = &ops.a;
        let ad = &ops.a_dagger;
        let k = ad * a + a * ad;
        a * rho * ad + ad * rho * a - (&k * rho + rho * &k) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn generator_matches_dense_operator_form() {
        let space = FockSpace::new(7).unwrap();
        let mut rho = CMatrix::zeros(7, 7);
        for i in 0..7 {
            for j in 0..7 {
                rho[(i, j)] = Complex64::new((i + 2 * j) as f64 * 0.01, (i as f64 - j as f64) * 0.02);
            }
        }
        let mut out = CMatrix::zeros(7, 7);
        HeatingGenerator::new(space).apply(&rho, &mut out);
        let dense = dense_lindblad(&rho, space);
        assert!((out - dense).camax() < 1e-14);
    }

    #[test]
    fn zero_duration_is_identity() {
        let space = FockSpace::new(10).unwrap();
        let rho = crate::fock::thermal_state(0.4, space).unwrap().state;
        let out = evolve_heating_dm(&rho, 0.0).unwrap();
        assert_eq!(out, rho);

        let psi = TrajectoryState::ground(space);
        let mut rng = seeds::stream(1, 0);
        let out = evolve_heating_trajectory(&psi, 0.0, &mut rng).unwrap();
        assert_eq!(out, psi);
    }

    #[test]
    fn vacuum_heats_to_unit_thermal_state() {
        let space = FockSpace::new(60).unwrap();
        let out = evolve_heating_dm(&MotionalDensityMatrix::ground(space), 1.0).unwrap();
        let pops = out.populations();
        for (n, p) in pops.iter().enumerate().take(20) {
            let exact = 0.5f64.powi(n as i32 + 1);
            assert!((p - exact).abs() < 1e-10, "n={n}: {p} vs {exact}");
        }
        assert!((out.mean_occupation() - 1.0).abs() < 1e-6);
        assert!((out.trace() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mean_occupation_grows_linearly() {
        let space = FockSpace::new(70).unwrap();
        let mut rho = MotionalDensityMatrix::ground(space);
        for k in 1..=4 {
            rho = evolve_heating_dm(&rho, 0.5).unwrap();
            assert!((rho.mean_occupation() - 0.5 * k as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn truncation_cap_is_enforced() {
        let space = FockSpace::new(6).unwrap();
        let err = evolve_heating_dm(&MotionalDensityMatrix::ground(space), 2.0).unwrap_err();
        assert!(matches!(err, Error::Truncation { level: 5, .. }));
    }

    #[test]
    fn upward_jump_rate_from_vacuum() {
        let space = FockSpace::new(30).unwrap();
        let unravel = JumpUnraveling::new(space);
        let dt = 0.01;
        let trials = 100_000;
        let mut ups = 0u64;
        for i in 0..trials {
            let mut rng = seeds::stream(11, i);
            let mut psi = TrajectoryState::ground(space);
            ups += unravel.evolve(&mut psi, dt, &mut rng).unwrap().up;
        }
        let mean = ups as f64 / trials as f64;
        // Poisson-like count with mean ≈ dt
        let se = (dt / trials as f64).sqrt();
        assert!((mean - dt).abs() < 4.0 * se, "mean jumps {mean}");
    }

    #[test]
    fn waiting_time_hits_target() {
        let w = [0.2, 0.5, 0.3];
        let g = [1.0, 3.0, 5.0];
        let s = waiting_time(&w, &g, 0.4, 10.0);
        assert!((no_jump_norm(&w, &g, s) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn absorbing_single_level_is_exponential() {
        let curve = absorbing_fptd(1, 20.0, 0.01).unwrap();
        for (t, f) in curve.times.iter().zip(&curve.density) {
            assert!((f - (-t).exp()).abs() < 1e-6);
        }
        assert!(*curve.cumulative.last().unwrap() >= 0.999);
    }

    #[test]
    fn absorbing_moments_match_closed_form() {
        let curve = absorbing_fptd(3, 60.0, 0.01).unwrap();
        assert!((curve.mean - 3.0).abs() / 3.0 < 5e-3);
        assert!((curve.second_moment - 15.0).abs() / 15.0 < 5e-3);
        assert!(curve.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn absorbing_short_horizon_fails_self_check() {
        let err = absorbing_fptd(3, 4.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse(_)));
    }
}
