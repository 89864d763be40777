//! Truncated Fock-space representation of the motional mode.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default cap on the population of the highest retained number state.
pub const DEFAULT_TAIL_CAP: f64 = 1e-4;

/// Leakage above which [`thermal_state`] flags the truncation.
pub const THERMAL_LEAKAGE_WARNING: f64 = 1e-6;

/// Lamb-Dicke parameter of the bundled step-pulse table.
pub const EXPERIMENT_ETA: f64 = 0.05533;

/// Carrier Rabi frequency of the experiment, 2π × 300 kHz.
pub const EXPERIMENT_OMEGA00: f64 = 2.0 * std::f64::consts::PI * 300e3;

/// Number basis {|0⟩, …, |n_cut−1⟩}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockSpace {
    n_cut: usize,
}

impl FockSpace {
    pub fn new(n_cut: usize) -> Result<Self> {
        if n_cut < 2 {
            return Err(Error::invalid(format!("n_cut must be at least 2, got {n_cut}")));
        }
        Ok(Self { n_cut })
    }

    /// Default basis size for heating runs that reach threshold `n_b` and
    /// evolve for at most `t_max` without an intervening projection.
    ///
    /// The thermal tail at n̄ = t decays geometrically with ratio t/(1+t), so
    /// `max(30, 10·n_b + 10·t_max)` keeps the top-level population negligible.
    pub fn for_heating(n_b: usize, t_max: f64) -> Self {
        let n = (10.0 * n_b as f64 + 10.0 * t_max.max(0.0)).ceil() as usize;
        Self { n_cut: n.max(30) }
    }

    pub fn dim(&self) -> usize {
        self.n_cut
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderOperators {
    pub a: CMatrix,
    pub a_dagger: CMatrix,
    pub number_op: CMatrix,
}

/// Truncated ladder operators. The |n_cut−1⟩ → |n_cut⟩ element of a† is dropped.
pub fn make_operators(space: FockSpace) -> LadderOperators {
    let n = space.dim();
    let mut a = CMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    let a_dagger = a.adjoint();
    let number_op =
        CMatrix::from_diagonal(&CVector::from_iterator(n, (0..n).map(|k| Complex64::new(k as f64, 0.0))));
    LadderOperators {
        a,
        a_dagger,
        number_op,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SidebandParams {
    /// Lamb-Dicke parameter.
    pub eta: f64,
    /// Carrier Rabi angular frequency (rad/s). Only sets the duration unit.
    pub omega00: f64,
}

impl SidebandParams {
    pub fn new(eta: f64, omega00: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::invalid(format!("eta must lie in (0, 1), got {eta}")));
        }
        if !(omega00 > 0.0 && omega00.is_finite()) {
            return Err(Error::invalid(format!("omega00 must be positive, got {omega00}")));
        }
        Ok(Self { eta, omega00 })
    }

    pub fn experiment() -> Self {
        Self {
            eta: EXPERIMENT_ETA,
            omega00: EXPERIMENT_OMEGA00,
        }
    }
}

impl Default for SidebandParams {
    fn default() -> Self {
        Self::experiment()
    }
}

/// Generalized Laguerre polynomial L_n^α(x) by the three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Blue-sideband coupling Ω_{n,n+1}/Ω00 = e^{−η²/2} η L_n^1(η²) / √(n+1).
pub fn bsb_coupling(n: usize, params: &SidebandParams) -> f64 {
    let eta2 = params.eta * params.eta;
    (-eta2 / 2.0).exp() * params.eta * laguerre(n, 1.0, eta2) / ((n + 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Unit trace / unit norm.
    Normalized,
    /// Conditioned on measurement outcomes and left unnormalized.
    Conditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionalDensityMatrix {
    rho: CMatrix,
    normalization: Normalization,
}

impl MotionalDensityMatrix {
    pub fn new(rho: CMatrix, normalization: Normalization) -> Result<Self> {
        if !rho.is_square() || rho.nrows() < 2 {
            return Err(Error::invalid("density matrix must be square with dimension >= 2"));
        }
        let herm = (&rho - rho.adjoint()).camax();
        if herm > 1e-10 {
            return Err(Error::invalid(format!("density matrix not Hermitian (deviation {herm:.2e})")));
        }
        let tr = rho.trace().re;
        match normalization {
            Normalization::Normalized if (tr - 1.0).abs() > 1e-8 => {
                return Err(Error::invalid(format!("normalized state has trace {tr}")))
            }
            Normalization::Conditioned if tr > 1.0 + 1e-8 => {
                return Err(Error::invalid(format!("conditioned state has trace {tr} > 1")))
            }
            _ => {}
        }
        Ok(Self { rho, normalization })
    }

    pub(crate) fn from_parts(rho: CMatrix, normalization: Normalization) -> Self {
        Self { rho, normalization }
    }

    pub fn number_state(space: FockSpace, n: usize) -> Result<Self> {
        if n >= space.dim() {
            return Err(Error::invalid(format!("|{n}> outside basis of size {}", space.dim())));
        }
        let mut rho = CMatrix::zeros(space.dim(), space.dim());
        rho[(n, n)] = Complex64::new(1.0, 0.0);
        Ok(Self::from_parts(rho, Normalization::Normalized))
    }

    pub fn ground(space: FockSpace) -> Self {
        Self::number_state(space, 0).expect("ground state always in basis")
    }

    pub fn from_populations(pops: &[f64], normalization: Normalization) -> Result<Self> {
        let rho = CMatrix::from_diagonal(&CVector::from_iterator(
            pops.len(),
            pops.iter().map(|&p| Complex64::new(p, 0.0)),
        ));
        Self::new(rho, normalization)
    }

    pub fn rho(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_rho(self) -> CMatrix {
        self.rho
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.rho[(k, k)].re).collect()
    }

    /// ⟨n⟩ = Tr(n̂ρ)/Tr ρ.
    pub fn mean_occupation(&self) -> f64 {
        let pops = self.populations();
        let tr: f64 = pops.iter().sum();
        pops.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>() / tr
    }

    /// Population of |n_cut−1⟩ relative to the trace.
    pub fn tail_population(&self) -> f64 {
        let n = self.dim();
        let tr = self.trace();
        if tr <= 0.0 {
            0.0
        } else {
            self.rho[(n - 1, n - 1)].re / tr
        }
    }

    pub fn check_tail(&self, cap: f64) -> Result<()> {
        check_tail(self.tail_population(), self.dim(), cap)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).camax()
    }

    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(Error::Numerical("cannot normalize a state with zero trace".into()));
        }
        Ok(Self::from_parts(
            &self.rho / Complex64::new(tr, 0.0),
            Normalization::Normalized,
        ))
    }
}

pub(crate) fn check_tail(population: f64, dim: usize, cap: f64) -> Result<()> {
    if population > cap {
        Err(Error::Truncation {
            level: dim - 1,
            population,
            cap,
        })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    amplitudes: CVector,
    normalization: Normalization,
}

impl TrajectoryState {
    pub fn new(amplitudes: CVector, normalization: Normalization) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::invalid("trajectory state needs at least two amplitudes"));
        }
        let norm = amplitudes.norm_squared();
        if normalization == Normalization::Normalized && (norm - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("normalized state has norm² {norm}")));
        }
        Ok(Self {
            amplitudes,
            normalization,
        })
    }

    pub fn number_state(space: FockSpace, n: usize) -> Result<Self> {
        if n >= space.dim() {
            return Err(Error::invalid(format!("|{n}> outside basis of size {}", space.dim())));
        }
        let mut amps = CVector::zeros(space.dim());
        amps[n] = Complex64::new(1.0, 0.0);
        Ok(Self {
            amplitudes: amps,
            normalization: Normalization::Normalized,
        })
    }

    pub fn ground(space: FockSpace) -> Self {
        Self::number_state(space, 0).expect("ground state always in basis")
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut CVector {
        &mut self.amplitudes
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub(crate) fn set_normalization(&mut self, n: Normalization) {
        self.normalization = n;
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn mean_occupation(&self) -> f64 {
        let norm = self.norm_sqr();
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, c)| k as f64 * c.norm_sqr())
            .sum::<f64>()
            / norm
    }

    pub fn tail_population(&self) -> f64 {
        self.amplitudes[self.dim() - 1].norm_sqr() / self.norm_sqr()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm_sqr().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Numerical("cannot normalize a zero state vector".into()));
        }
        self.amplitudes.unscale_mut(norm);
        self.normalization = Normalization::Normalized;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ThermalState {
    pub state: MotionalDensityMatrix,
    /// Thermal population Σ_{n ≥ n_cut} p_n discarded by the truncation.
    pub leakage: f64,
}

impl ThermalState {
    pub fn leakage_warning(&self) -> bool {
        self.leakage > THERMAL_LEAKAGE_WARNING
    }
}

/// Thermal state p_n = n̄ⁿ/(1+n̄)ⁿ⁺¹, renormalized on the truncated basis.
pub fn thermal_state(nbar: f64, space: FockSpace) -> Result<ThermalState> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(Error::invalid(format!("nbar must be nonnegative, got {nbar}")));
    }
    let n = space.dim();
    let ratio = nbar / (1.0 + nbar);
    let mut pops = Vec::with_capacity(n);
    let mut p = 1.0 / (1.0 + nbar);
    for _ in 0..n {
        pops.push(p);
        p *= ratio;
    }
    let leakage = ratio.powi(n as i32);
    let total: f64 = pops.iter().sum();
    pops.iter_mut().for_each(|p| *p /= total);
    if leakage > THERMAL_LEAKAGE_WARNING {
        log::warn!("thermal state n̄={nbar} leaks {leakage:.2e} beyond n_cut={n}");
    }
    let state = MotionalDensityMatrix::from_populations(&pops, Normalization::Normalized)?;
    Ok(ThermalState { state, leakage })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Explicit-sum Laguerre polynomial, independent of the recurrence.
    fn laguerre_sum(n: usize, alpha: f64, x: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..=n {
            // C(n+α, n−k) for integer α
            let mut binom = 1.0;
            for j in 0..(n - k) {
                binom *= (n as f64 + alpha - j as f64) / (j + 1) as f64;
            }
            let mut fact = 1.0;
            for j in 1..=k {
                fact *= j as f64;
            }
            total += (-1f64).powi(k as i32) * binom * x.powi(k as i32) / fact;
        }
        total
    }

    #[test]
    fn ladder_operators_small_cases() {
        let ops = make_operators(FockSpace::new(2).unwrap());
        assert_eq!(ops.a[(0, 1)], Complex64::new(1.0, 0.0));
        let nonzero = ops.a.iter().filter(|c| c.norm() > 0.0).count();
        assert_eq!(nonzero, 1);

        let ops = make_operators(FockSpace::new(4).unwrap());
        assert!((ops.a_dagger[(3, 2)].re - 3f64.sqrt()).abs() < 1e-15);
        for k in 0..4 {
            assert_eq!(ops.number_op[(k, k)].re, k as f64);
        }
    }

    #[test]
    fn number_operator_matches_product() {
        let space = FockSpace::new(12).unwrap();
        let ops = make_operators(space);
        let prod = &ops.a_dagger * &ops.a;
        for k in 0..space.dim() - 1 {
            assert!((prod[(k, k)] - ops.number_op[(k, k)]).norm() < 1e-12);
        }
        for i in 0..space.dim() {
            for j in 0..space.dim() {
                if i != j {
                    assert_eq!(ops.number_op[(i, j)], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn laguerre_recurrence_matches_explicit_sum() {
        for n in 0..25 {
            for &x in &[0.0, 0.003, 0.3, 1.7] {
                let a = laguerre(n, 1.0, x);
                let b = laguerre_sum(n, 1.0, x);
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "n={n} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bsb_coupling_reference_values() {
        let p = SidebandParams::experiment();
        // frozen from the explicit-sum oracle above
        let eta2 = p.eta * p.eta;
        let oracle = |n: usize| (-eta2 / 2.0).exp() * p.eta * laguerre_sum(n, 1.0, eta2) / ((n + 1) as f64).sqrt();
        assert!((oracle(0) - 0.055245).abs() < 5e-7);
        assert!((oracle(1) - 0.078009).abs() < 5e-7);
        assert!((bsb_coupling(0, &p) - oracle(0)).abs() < 1e-15);
        assert!((bsb_coupling(1, &p) - oracle(1)).abs() < 1e-15);
    }

    #[test]
    fn bsb_coupling_small_eta_scales_as_sqrt() {
        let p = SidebandParams::new(1e-6, 1.0).unwrap();
        let c0 = bsb_coupling(0, &p);
        for n in 0..20 {
            let ratio = bsb_coupling(n, &p) / c0;
            assert!((ratio - ((n + 1) as f64).sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn bsb_coupling_positive_in_working_range() {
        let p = SidebandParams::experiment();
        let limit = (1.0 / (p.eta * p.eta)) as usize;
        for n in 0..limit {
            assert!(bsb_coupling(n, &p) > 0.0, "zero crossing at n={n}");
        }
        // large n stays finite
        assert!(bsb_coupling(5000, &p).is_finite());
    }

    #[test]
    fn thermal_state_cases() {
        let space = FockSpace::new(60).unwrap();
        let vac = thermal_state(0.0, space).unwrap();
        assert_eq!(vac.state.populations()[0], 1.0);
        assert_eq!(vac.leakage, 0.0);

        let th = thermal_state(1.0, space).unwrap();
        let pops = th.state.populations();
        assert!((pops[0] - 0.5).abs() < 1e-12);
        assert!((pops[1] - 0.25).abs() < 1e-12);
        assert!((th.state.trace() - 1.0).abs() < 1e-12);
        assert!(pops.windows(2).all(|w| w[1] <= w[0]));
        assert!(!th.leakage_warning());

        let small = thermal_state(3.0, FockSpace::new(10).unwrap()).unwrap();
        assert!(small.leakage_warning());
        assert!((small.state.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(FockSpace::new(1).is_err());
        assert!(SidebandParams::new(1.2, 1.0).is_err());
        assert!(SidebandParams::new(0.05, 0.0).is_err());
        assert!(thermal_state(-1.0, FockSpace::new(4).unwrap()).is_err());
        let mut rho = CMatrix::zeros(3, 3);
        rho[(0, 1)] = Complex64::new(0.0, 1.0);
        assert!(MotionalDensityMatrix::new(rho, Normalization::Conditioned).is_err());
    }

    #[test]
    fn default_heating_basis() {
        assert_eq!(FockSpace::for_heating(1, 0.43).dim(), 30);
        assert_eq!(FockSpace::for_heating(4, 3.0).dim(), 70);
    }
}
