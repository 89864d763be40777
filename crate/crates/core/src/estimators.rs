//! Multinomial statistics for measured first-passage distributions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpt::{FptMode, FptdResult};
use crate::seeds;

/// First-detection counts per step; the last bin holds censored trials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub counts: Vec<u64>,
}

impl TrialCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("need at least one outcome bin"));
        }
        Ok(Self { counts })
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Histogram of first-bright steps (0 = censored) over `max_steps` steps.
    /// Detections later than the horizon count as censored.
    pub fn from_records(records: &[TrialRecord], max_steps: usize) -> Result<Self> {
        if max_steps < 1 {
            return Err(Error::invalid("need at least one step"));
        }
        let mut counts = vec![0u64; max_steps + 1];
        for r in records {
            match r.first_bright_step {
                0 => counts[max_steps] += 1,
                s if s as usize > max_steps => counts[max_steps] += 1,
                s => counts[s as usize - 1] += 1,
            }
        }
        Self::new(counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// p̂ = X/n; empty bins get zero variance.
    #[default]
    None,
    /// p̂ = (X + ½)/(n + k/2).
    AddHalf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedDistribution {
    pub p_hat: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub n: u64,
}

impl EstimatedDistribution {
    pub fn variances(&self) -> Vec<f64> {
        (0..self.p_hat.len()).map(|i| self.cov[(i, i)]).collect()
    }
}

fn multinomial_cov(p: &[f64], n: f64) -> DMatrix<f64> {
    let k = p.len();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            p[i] * (1.0 - p[i]) / n
        } else {
            -p[i] * p[j] / n
        }
    })
}

/// Maximum-likelihood multinomial estimate with its full covariance.
pub fn multinomial_estimate(c: &TrialCounts) -> Result<EstimatedDistribution> {
    multinomial_estimate_with(c, Smoothing::None)
}

pub fn multinomial_estimate_with(c: &TrialCounts, smoothing: Smoothing) -> Result<EstimatedDistribution> {
    let n = c.n();
    if n == 0 {
        return Err(Error::invalid("no trials"));
    }
    let nf = n as f64;
    let p_hat: Vec<f64> = match smoothing {
        Smoothing::None => c.counts.iter().map(|x| *x as f64 / nf).collect(),
        Smoothing::AddHalf => {
            let denom = nf + 0.5 * c.bins() as f64;
            c.counts.iter().map(|x| (*x as f64 + 0.5) / denom).collect()
        }
    };
    let cov = multinomial_cov(&p_hat, nf);
    Ok(EstimatedDistribution { p_hat, cov, n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeCurve {
    pub escape: Vec<f64>,
    /// √(a_i Cov a_iᵀ).
    pub sigma: Vec<f64>,
}

/// Escape probability Ê(iθ) over the detection bins (censored bin excluded)
/// with quadratic-form standard errors.
pub fn escape_with_errors(d: &EstimatedDistribution) -> EscapeCurve {
    let k = d.p_hat.len().saturating_sub(1);
    let mut escape = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut e = 0.0;
    // running a_i Cov a_iᵀ: adding bin i contributes Cov_ii + 2 Σ_{j<i} Cov_ij
    let mut var = 0.0;
    for i in 0..k {
        e += d.p_hat[i];
        let cross: f64 = (0..i).map(|j| d.cov[(i, j)]).sum();
        var += d.cov[(i, i)] + 2.0 * cross;
        escape.push(e);
        sigma.push(var.max(0.0).sqrt());
    }
    EscapeCurve { escape, sigma }
}

/// Standardized per-bin residuals and total-variation distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// ½ Σ |a_i − b_i| over detection bins and the remainder.
    pub tv_distance: f64,
    /// ½ Σ √(var_a + var_b), the scale of sampling fluctuations in `tv_distance`.
    pub tv_stderr: f64,
    pub z_scores: Vec<f64>,
}

pub enum Comparand<'a> {
    Result(&'a FptdResult),
    Estimated(&'a EstimatedDistribution),
}

/// Probabilities (detection bins then remainder) and their sampling variances.
fn bins_of(res: &FptdResult) -> (Vec<f64>, Vec<f64>) {
    let mut p = res.probs.clone();
    p.push(res.survivor_remainder);
    let var = match res.mode {
        FptMode::Deterministic => vec![0.0; p.len()],
        FptMode::MonteCarlo { trials } => p.iter().map(|q| q * (1.0 - q) / trials as f64).collect(),
    };
    (p, var)
}

pub fn compare_distributions(a: &FptdResult, b: Comparand<'_>) -> Result<Comparison> {
    let (pa, va) = bins_of(a);
    let (pb, vb) = match b {
        Comparand::Result(r) => {
            if (r.theta - a.theta).abs() > 1e-12 * a.theta.max(1.0) {
                return Err(Error::GridMismatch(format!("theta {} vs {}", a.theta, r.theta)));
            }
            bins_of(r)
        }
        Comparand::Estimated(d) => (d.p_hat.clone(), d.variances()),
    };
    if pa.len() != pb.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} outcome bins",
            pa.len(),
            pb.len()
        )));
    }
    let mut tv = 0.0;
    let mut tv_se = 0.0;
    let mut z = Vec::with_capacity(pa.len());
    for i in 0..pa.len() {
        let diff = pa[i] - pb[i];
        let sd = (va[i] + vb[i]).sqrt();
        tv += diff.abs();
        tv_se += sd;
        z.push(if diff == 0.0 {
            0.0
        } else if sd > 0.0 {
            diff / sd
        } else {
            diff.signum() * f64::INFINITY
        });
    }
    Ok(Comparison {
        tv_distance: 0.5 * tv,
        tv_stderr: 0.5 * tv_se,
        z_scores: z,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapCovariance {
    pub cov: DMatrix<f64>,
    /// Monte Carlo standard error of each covariance entry.
    pub stderr: DMatrix<f64>,
    pub resamples: usize,
}

/// Multinomial draw of `n` trials over `p` by sequential binomials.
fn multinomial_draw<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R, out: &mut [u64]) {
    let mut left = n;
    let mut mass = 1.0;
    for (i, q) in p.iter().enumerate() {
        if i + 1 == p.len() || left == 0 {
            out[i] = left;
            left = 0;
            continue;
        }
        let prob = if mass > 0.0 { (q / mass).clamp(0.0, 1.0) } else { 0.0 };
        let x = Binomial::new(left, prob).expect("probability in [0, 1]").sample(rng);
        out[i] = x;
        left -= x;
        mass -= q;
    }
}

/// Covariance of p̂ over `resamples` multinomial resamples of the observed counts.
pub fn bootstrap_covariance(c: &TrialCounts, resamples: usize, seed: u64) -> Result<BootstrapCovariance> {
    if resamples < 2 {
        return Err(Error::invalid("bootstrap needs at least two resamples"));
    }
    let est = multinomial_estimate(c)?;
    let k = c.bins();
    let n = c.n();
    let nf = n as f64;
    let draws: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeds::stream(seed, r as u64);
            let mut x = vec![0u64; k];
            multinomial_draw(n, &est.p_hat, &mut rng, &mut x);
            x.iter().map(|v| *v as f64 / nf).collect()
        })
        .collect();
    let b = resamples as f64;
    let mut mean = vec![0.0; k];
    for d in &draws {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v / b;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(k, k);
    let mut sq = DMatrix::<f64>::zeros(k, k);
    for d in &draws {
        for i in 0..k {
            for j in 0..k {
                let prod = (d[i] - mean[i]) * (d[j] - mean[j]);
                cov[(i, j)] += prod;
                sq[(i, j)] += prod * prod;
            }
        }
    }
    let mut stderr = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let m = cov[(i, j)] / b;
            let var = (sq[(i, j)] / b - m * m).max(0.0);
            stderr[(i, j)] = (var / b).sqrt();
            cov[(i, j)] /= b - 1.0;
        }
    }
    Ok(BootstrapCovariance { cov, stderr, resamples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    /// 1-based step of the first bright outcome; 0 for a censored trial.
    pub first_bright_step: u64,
}

fn record_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        context: "trial records",
        line,
        message: message.into(),
    }
}

/// Parse `trial_id,first_bright_step` CSV (header required).
pub fn parse_trial_records(text: &str) -> Result<Vec<TrialRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "trial_id,first_bright_step" => {}
        Some((i, h)) => return Err(record_err(i + 1, format!("expected header `trial_id,first_bright_step`, found `{}`", h.trim()))),
        None => return Err(record_err(1, "empty file")),
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(record_err(i + 1, format!("expected 2 fields, found {}", fields.len())));
        }
        let trial_id: u64 = fields[0]
            .parse()
            .map_err(|_| record_err(i + 1, format!("bad trial_id `{}`", fields[0])))?;
        let first_bright_step: u64 = fields[1]
            .parse()
            .map_err(|_| record_err(i + 1, format!("bad first_bright_step `{}`", fields[1])))?;
        if !seen.insert(trial_id) {
            return Err(record_err(i + 1, format!("duplicate trial_id {trial_id}")));
        }
        out.push(TrialRecord {
            trial_id,
            first_bright_step,
        });
    }
    if out.is_empty() {
        return Err(record_err(1, "no trial records"));
    }
    Ok(out)
}

/// FptdResult with multinomial standard errors from trial records. The
/// horizon defaults to the latest observed detection.
pub fn counts_to_fptd(records: &[TrialRecord], theta: f64, max_steps: Option<usize>) -> Result<FptdResult> {
    let horizon = max_steps.unwrap_or_else(|| records.iter().map(|r| r.first_bright_step as usize).max().unwrap_or(0).max(1));
    let counts = TrialCounts::from_records(records, horizon)?;
    FptdResult::from_counts(theta, counts.counts)
}
