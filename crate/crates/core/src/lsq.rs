//! Box-constrained nonlinear least squares.
//!
//! Projected Levenberg-Marquardt: the damped Gauss-Newton step is solved on
//! the free variables (those not pinned at a bound by the gradient), clipped
//! back into the box, and accepted only if it lowers the cost. The damping
//! parameter plays the role of an inverse trust-region radius.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative forward-difference step for the Jacobian.
    pub fd_step: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    pub initial_damping: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            fd_step: 1e-7,
            ftol: 1e-12,
            xtol: 1e-12,
            gtol: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ZeroResidual,
    Gradient,
    CostReduction,
    StepSize,
    /// Damping grew without finding a decrease.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LsqReport {
    pub x: Vec<f64>,
    /// ½‖r‖² at `x`.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl LsqReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Minimize ½‖r(x)‖² over the box. `residuals(x, out)` fills `m` residuals.
pub fn minimize<F>(residuals: F, m: usize, x0: &[f64], bounds: &Bounds, opts: &LsqOptions) -> LsqReport
where
    F: Fn(&[f64], &mut [f64]),
{
    let p = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let mut r = vec![0.0; m];
    residuals(&x, &mut r);
    let mut cost = half_sq(&r);
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut jac = DMatrix::<f64>::zeros(m, p);
    let mut probe = x.clone();
    let mut r_probe = vec![0.0; m];
    let mut x_new = vec![0.0; p];
    let mut r_new = vec![0.0; m];

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        if cost < 1e-30 {
            termination = Termination::ZeroResidual;
            break;
        }
        iterations += 1;

        for j in 0..p {
            let mut h = opts.fd_step * x[j].abs().max(1.0);
            if x[j] + h > bounds.upper[j] {
                h = -h;
            }
            probe.copy_from_slice(&x);
            probe[j] += h;
            residuals(&probe, &mut r_probe);
            for i in 0..m {
                jac[(i, j)] = (r_probe[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;

        let free: Vec<usize> = (0..p)
            .filter(|&j| {
                let at_lower = x[j] <= bounds.lower[j] && grad[j] > 0.0;
                let at_upper = x[j] >= bounds.upper[j] && grad[j] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        let pg = free.iter().map(|&j| grad[j].abs()).fold(0.0, f64::max);
        if pg < opts.gtol || free.is_empty() {
            termination = Termination::Gradient;
            break;
        }

        let jf = jac.select_columns(free.iter());
        let jtj = jf.transpose() * &jf;
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&j| grad[j]));
        let diag_floor = jtj.diagonal().max() * 1e-12 + 1e-300;

        let mut accepted = false;
        loop {
            let mut a = jtj.clone();
            for k in 0..free.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(diag_floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 4.0;
                if lambda > 1e16 {
                    break;
                }
                continue;
            };
            let delta = chol.solve(&(-&gf));
            x_new.copy_from_slice(&x);
            for (k, &j) in free.iter().enumerate() {
                x_new[j] += delta[k];
            }
            bounds.clamp(&mut x_new);
            residuals(&x_new, &mut r_new);
            let cost_new = half_sq(&r_new);
            if cost_new < cost {
                let step: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let xnorm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rel = (cost - cost_new) / cost;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut r, &mut r_new);
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if rel < opts.ftol && cost > 0.0 {
                    termination = Termination::CostReduction;
                } else if step < opts.xtol * (xnorm + opts.xtol) {
                    termination = Termination::StepSize;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            termination = Termination::Stalled;
            break;
        }
        if termination != Termination::MaxIterations {
            break;
        }
    }

    LsqReport {
        x,
        cost,
        initial_cost,
        iterations,
        termination,
        cost_history: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_converges() {
        let f = |x: &[f64], r: &mut [f64]| {
            r[0] = 10.0 * (x[1] - x[0] * x[0]);
            r[1] = 1.0 - x[0];
        };
        let rep = minimize(f, 2, &[-1.2, 1.0], &Bounds::unbounded(2), &LsqOptions::default());
        assert!(rep.converged());
        assert!((rep.x[0] - 1.0).abs() < 1e-8 && (rep.x[1] - 1.0).abs() < 1e-8);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn active_bound_is_respected() {
        // minimum at x = 3 lies outside [0, 2]
        let f = |x: &[f64], r: &mut [f64]| {
            r[0] = x[0] - 3.0;
            r[1] = 0.5 * (x[1] + 1.0);
        };
        let b = Bounds {
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 5.0],
        };
        let rep = minimize(f, 2, &[1.0, 3.0], &b, &LsqOptions::default());
        assert!(b.contains(&rep.x));
        assert!((rep.x[0] - 2.0).abs() < 1e-12);
        assert!(rep.x[1].abs() < 1e-12);
        assert!(rep.converged());
    }
}
