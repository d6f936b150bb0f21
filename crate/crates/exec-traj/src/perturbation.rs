//! Risk-aversion correction `f2` so that `f = f1 + f2` minimizes the full
//! mean-variance functional. `f2` is expanded in a sine basis that vanishes
//! at both endpoints and found by quasi-Newton minimization of the objective;
//! the integro-differential optimality identity is exposed as a verification
//! residual, not used as the solve target.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{
    eval_f, eval_f_partials, ExecutionProblem, ImpactSpec, MarketParams, Trajectory,
};
use crate::moments;
use crate::quad::{nested_product, trapezoid, trapezoid_prefix};
use crate::variational::{residual_at, SolverDetail, SolverReport};

/// Central finite-difference step per coefficient, as a fraction of the order
/// size. Sized so truncation from third derivatives of the objective stays
/// below the gradient tolerance without hitting roundoff.
const FD_STEP_FRAC: f64 = 3e-6;

/// Gradient sup-norm tolerance floor; scaled up with the objective magnitude.
const GTOL_FLOOR: f64 = 3e-5;

const MAX_ITER: usize = 200;

/// Newton polish rounds after the quasi-Newton loop. The line search cannot
/// resolve objective improvements below one ulp of `J`, which leaves a
/// gradient floor ~ sqrt(H ulp(J)); Newton steps on a finite-difference
/// Hessian are limited only by gradient accuracy and push well past it.
const POLISH_ROUNDS: usize = 8;

/// Sine-mode expansion `f2(u) = sum a_k sin(k pi u / T)`; every element
/// vanishes at 0 and T by construction.
#[derive(Debug, Clone)]
pub struct PerturbationBasis {
    pub coefficients: Vec<f64>,
}

impl PerturbationBasis {
    pub fn new(coefficients: Vec<f64>) -> Self {
        PerturbationBasis { coefficients }
    }

    pub fn modes(&self) -> usize {
        self.coefficients.len()
    }

    /// Basis values on a grid; the endpoints are pinned to exactly zero.
    pub fn values_on(&self, times: &[f64], horizon: f64) -> Vec<f64> {
        let n = times.len();
        let mut out = vec![0.0; n];
        for (i, &t) in times.iter().enumerate() {
            if i == 0 || i == n - 1 {
                continue;
            }
            let x = PI * t / horizon;
            out[i] = self
                .coefficients
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * x).sin())
                .sum();
        }
        out
    }

    /// Derivative of the expansion on a grid.
    pub fn rates_on(&self, times: &[f64], horizon: f64) -> Vec<f64> {
        times
            .iter()
            .map(|&t| {
                let x = PI * t / horizon;
                self.coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let kk = (k + 1) as f64;
                        a * kk * PI / horizon * (kk * x).cos()
                    })
                    .sum()
            })
            .collect()
    }
}

/// Variance weight `F1(v) = F(f(v), f'(v)) (e^{sigma^2 v} - 1)` on the
/// trajectory grid; identically zero when `sigma = 0`.
#[derive(Debug, Clone)]
pub struct F1Weight {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl F1Weight {
    pub fn new(impact: &ImpactSpec, mkt: &MarketParams, traj: &Trajectory) -> Result<Self> {
        let s2 = mkt.sigma * mkt.sigma;
        let mut values = Vec::with_capacity(traj.len());
        for i in 0..traj.len() {
            let f = eval_f(impact, mkt, traj.values()[i], traj.rates()[i])?;
            values.push(f * ((s2 * traj.times()[i]).exp() - 1.0));
        }
        Ok(F1Weight { times: traj.times().to_vec(), values })
    }
}

/// Integro-differential optimality identity evaluated along `(f, f2)`: the
/// pointwise profile, its sup norm, and its integral over `[0, T]`. The
/// integral equals the directional derivative of the objective along `f2`
/// and vanishes at a converged solution.
#[derive(Debug, Clone)]
pub struct OptimalityResidual {
    pub times: Vec<f64>,
    pub profile: Vec<f64>,
    pub sup_norm: f64,
    pub integral: f64,
}

/// E-L residual of `F` at every node: central rate differences inside,
/// one-sided at the ends.
fn residual_all_nodes(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
) -> Result<Vec<f64>> {
    let times = traj.times();
    let values = traj.values();
    let rates = traj.rates();
    let n = times.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        let accel = (rates[hi] - rates[lo]) / (times[hi] - times[lo]);
        out.push(residual_at(impact, mkt, values[i], rates[i], accel)?.0);
    }
    Ok(out)
}

fn check_same_grid(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.times() != b.times() {
        return Err(Error::GridMismatch("trajectories live on different grids".into()));
    }
    Ok(())
}

fn check_vanishing_ends(traj: &Trajectory, what: &str) -> Result<()> {
    let scale = traj.values().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let last = *traj.values().last().unwrap();
    if traj.values()[0].abs() > 1e-9 * scale || last.abs() > 1e-9 * scale {
        return Err(Error::BoundaryViolation(format!(
            "{what} must vanish at both endpoints, got ({}, {last})",
            traj.values()[0]
        )));
    }
    Ok(())
}

/// Evaluate the optimality-identity integrand
/// `f2 (2 lambda int_0^u F1 + 1) [EL F] + 2 lambda int_0^u f2 [EL F1] dv * F(u)`
/// where `[EL F1]` carries the derivative of the `(e^{sigma^2 v} - 1)` weight:
/// `[EL F1] = (e^{sigma^2 v} - 1)[EL F] - sigma^2 e^{sigma^2 v} dF/df'`.
pub fn optimality_residual(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    prob: &ExecutionProblem,
    f: &Trajectory,
    f2: &Trajectory,
) -> Result<OptimalityResidual> {
    check_same_grid(f, f2)?;
    check_vanishing_ends(f2, "f2")?;
    let times = f.times();
    let s2 = mkt.sigma * mkt.sigma;
    let lambda = prob.lambda;
    let n = times.len();

    let el = residual_all_nodes(impact, mkt, f)?;
    let mut f_vals = Vec::with_capacity(n);
    let mut fp_partials = Vec::with_capacity(n);
    for i in 0..n {
        f_vals.push(eval_f(impact, mkt, f.values()[i], f.rates()[i])?);
        fp_partials.push(eval_f_partials(impact, mkt, f.values()[i], f.rates()[i])?.1);
    }

    let f1_weight: Vec<f64> = (0..n)
        .map(|i| f_vals[i] * ((s2 * times[i]).exp() - 1.0))
        .collect();
    let gamma: Vec<f64> = trapezoid_prefix(times, &f1_weight)
        .iter()
        .map(|&q| 2.0 * lambda * q + 1.0)
        .collect();

    let el_f1: Vec<f64> = (0..n)
        .map(|i| {
            let w = (s2 * times[i]).exp();
            (w - 1.0) * el[i] - s2 * w * fp_partials[i]
        })
        .collect();
    let weighted_f2: Vec<f64> = (0..n).map(|i| f2.values()[i] * el_f1[i]).collect();
    let inner = trapezoid_prefix(times, &weighted_f2);

    let profile: Vec<f64> = (0..n)
        .map(|i| f2.values()[i] * gamma[i] * el[i] + 2.0 * lambda * inner[i] * f_vals[i])
        .collect();
    let sup_norm = profile.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let integral = trapezoid(times, &profile);
    Ok(OptimalityResidual { times: times.to_vec(), profile, sup_norm, integral })
}

/// Directional derivative `dJ(f + eps eta)/d eps` at `eps = 0`, from the
/// expanded stationarity formula: an E-L-weighted inner integral, the
/// `sigma^2 e^{sigma^2 v}` weight-derivative correction, and the
/// `gamma`-weighted E-L term.
pub fn first_variation(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    prob: &ExecutionProblem,
    f: &Trajectory,
    eta: &Trajectory,
) -> Result<f64> {
    check_same_grid(f, eta)?;
    check_vanishing_ends(eta, "perturbation")?;
    let times = f.times();
    let s2 = mkt.sigma * mkt.sigma;
    let lambda = prob.lambda;
    let n = times.len();

    let el = residual_all_nodes(impact, mkt, f)?;
    let mut f_vals = Vec::with_capacity(n);
    let mut fp_partials = Vec::with_capacity(n);
    for i in 0..n {
        f_vals.push(eval_f(impact, mkt, f.values()[i], f.rates()[i])?);
        fp_partials.push(eval_f_partials(impact, mkt, f.values()[i], f.rates()[i])?.1);
    }
    let eta_v = eta.values();

    // gamma-weighted E-L term
    let f1_weight: Vec<f64> = (0..n)
        .map(|i| f_vals[i] * ((s2 * times[i]).exp() - 1.0))
        .collect();
    let gamma_eta_el: Vec<f64> = trapezoid_prefix(times, &f1_weight)
        .iter()
        .enumerate()
        .map(|(i, &q)| (2.0 * lambda * q + 1.0) * eta_v[i] * el[i])
        .collect();
    let term3 = trapezoid(times, &gamma_eta_el);
    if lambda == 0.0 || s2 == 0.0 {
        return Ok(term3);
    }

    // E-L-weighted inner integral against F
    let inner1: Vec<f64> = (0..n)
        .map(|i| eta_v[i] * ((s2 * times[i]).exp() - 1.0) * el[i])
        .collect();
    let term1 = 2.0 * lambda * nested_product(times, &f_vals, &trapezoid_prefix(times, &inner1));

    // weight-derivative correction
    let inner2: Vec<f64> = (0..n)
        .map(|i| eta_v[i] * fp_partials[i] * s2 * (s2 * times[i]).exp())
        .collect();
    let term2 = -2.0 * lambda * nested_product(times, &f_vals, &trapezoid_prefix(times, &inner2));

    Ok(term1 + term2 + term3)
}

/// Objective as a function of basis coefficients; `None` marks an infeasible
/// point (negative rates or overflow), which the line search rejects.
struct CoefObjective<'a> {
    impact: &'a ImpactSpec,
    mkt: &'a MarketParams,
    prob: &'a ExecutionProblem,
    f1: &'a Trajectory,
}

impl CoefObjective<'_> {
    fn trajectory(&self, coefs: &[f64]) -> Option<Trajectory> {
        let basis = PerturbationBasis::new(coefs.to_vec());
        let horizon = self.f1.horizon();
        let dv = basis.values_on(self.f1.times(), horizon);
        let dr = basis.rates_on(self.f1.times(), horizon);
        let values: Vec<f64> =
            self.f1.values().iter().zip(&dv).map(|(a, b)| a + b).collect();
        let rates: Vec<f64> = self.f1.rates().iter().zip(&dr).map(|(a, b)| a + b).collect();
        if rates.iter().any(|&c| c < 0.0) {
            return None;
        }
        Some(Trajectory::from_parts_unchecked(self.f1.times().to_vec(), values, rates))
    }

    fn eval(&self, coefs: &[f64]) -> Option<f64> {
        let traj = self.trajectory(coefs)?;
        moments::objective(self.impact, self.mkt, self.prob, &traj)
            .ok()
            .map(|o| o.j)
    }

    fn gradient(&self, coefs: &[f64], step: f64) -> Option<Vec<f64>> {
        let mut grad = Vec::with_capacity(coefs.len());
        let mut probe = coefs.to_vec();
        for i in 0..coefs.len() {
            probe[i] = coefs[i] + step;
            let up = self.eval(&probe)?;
            probe[i] = coefs[i] - step;
            let down = self.eval(&probe)?;
            probe[i] = coefs[i];
            grad.push((up - down) / (2.0 * step));
        }
        Some(grad)
    }
}

/// Minimize the mean-variance objective over the sine-mode coefficients with
/// BFGS and finite-difference gradients, starting from `f2 = 0`.
///
/// Returns `f = f1 + f2` on `f1`'s grid. A hit iteration cap is reported as
/// `converged = false`; `lambda = 0` is rejected since `f2 = 0` is then
/// trivially optimal.
pub fn solve_f2(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    prob: &ExecutionProblem,
    f1: &Trajectory,
    basis_size: usize,
) -> Result<(Trajectory, SolverReport)> {
    if prob.lambda == 0.0 {
        return Err(Error::InvalidParam(
            "lambda = 0: f2 is identically zero and f1 already solves the problem".into(),
        ));
    }
    if basis_size == 0 || basis_size > 64 {
        return Err(Error::InvalidParam(format!(
            "basis size must be in 1..=64, got {basis_size}"
        )));
    }
    let objective = CoefObjective { impact, mkt, prob, f1 };
    let m = basis_size;
    let mut coefs = vec![0.0; m];
    let mut j = objective
        .eval(&coefs)
        .ok_or_else(|| Error::InvalidParam("objective infeasible at f2 = 0".into()))?;

    // sigma = 0 removes the variance weight entirely, so the lambda = 0
    // optimum f1 is already optimal and f2 vanishes identically
    if mkt.sigma == 0.0 {
        let full = objective.trajectory(&coefs).expect("f1 is feasible");
        let report = SolverReport {
            converged: true,
            iterations: 0,
            objective: Some(j),
            residual_sup: 0.0,
            boundary_error: (full.terminal() - prob.shares).abs(),
            detail: SolverDetail::BasisMinimize { gradient_norm: 0.0, basis_size },
        };
        return Ok((full, report));
    }

    let gtol = GTOL_FLOOR.max(1e-8 * j.abs());
    let fd_step = FD_STEP_FRAC * prob.shares;

    let grad_err = || Error::NoConvergence {
        iterations: 0,
        detail: "finite-difference gradient hit an infeasible point".into(),
    };
    let mut grad = objective.gradient(&coefs, fd_step).ok_or_else(grad_err)?;
    let mut grad_norm = inf_norm(&grad);

    // inverse-Hessian estimate, scaled so the first step moves ~1% of K
    let mut h_inv = vec![vec![0.0; m]; m];
    let h0 = if grad_norm > 0.0 { (0.01 * prob.shares / grad_norm).min(1.0) } else { 1.0 };
    for (i, row) in h_inv.iter_mut().enumerate() {
        row[i] = h0;
    }

    let mut iterations = 0usize;
    let mut stalled = 0usize;
    let mut converged = grad_norm <= gtol;
    while !converged && iterations < MAX_ITER && stalled < 3 {
        iterations += 1;
        let mut dir: Vec<f64> = (0..m)
            .map(|i| -(0..m).map(|k| h_inv[i][k] * grad[k]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !slope.is_finite() || slope >= 0.0 {
            // reset to steepest descent when curvature information went bad
            for (i, row) in h_inv.iter_mut().enumerate() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if i == k { h0 } else { 0.0 };
                }
            }
            dir = grad.iter().map(|g| -h0 * g).collect();
            slope = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        }

        // Armijo backtracking
        let mut alpha = 1.0_f64;
        let mut accepted = false;
        let mut next = coefs.clone();
        let mut j_next = j;
        for _ in 0..60 {
            for i in 0..m {
                next[i] = coefs[i] + alpha * dir[i];
            }
            if let Some(cand) = objective.eval(&next) {
                if cand <= j + 1e-4 * alpha * slope {
                    j_next = cand;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if (j - j_next).abs() <= 1e-13 * (1.0 + j.abs()) {
            stalled += 1;
        } else {
            stalled = 0;
        }

        let grad_next = match objective.gradient(&next, fd_step) {
            Some(g) => g,
            None => break,
        };
        let step: Vec<f64> = (0..m).map(|i| next[i] - coefs[i]).collect();
        let y: Vec<f64> = (0..m).map(|i| grad_next[i] - grad[i]).collect();
        let sy: f64 = step.iter().zip(&y).map(|(s, y)| s * y).sum();
        let s_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * s_norm * y_norm {
            bfgs_update(&mut h_inv, &step, &y, sy);
        }

        coefs = next;
        j = j_next;
        grad = grad_next;
        grad_norm = inf_norm(&grad);
        converged = grad_norm <= gtol;
    }

    // Newton polish on a finite-difference Hessian
    let mut polish = 0usize;
    while !converged && polish < POLISH_ROUNDS {
        polish += 1;
        let Some(hessian) = fd_hessian(&objective, &coefs, 1e-5 * prob.shares, fd_step) else {
            break;
        };
        let Some(delta) = solve_linear(&hessian, &grad) else {
            break;
        };
        let cand: Vec<f64> = (0..m).map(|i| coefs[i] - delta[i]).collect();
        let Some(j_cand) = objective.eval(&cand) else { break };
        if j_cand > j + 1e-9 * (1.0 + j.abs()) {
            break;
        }
        let Some(g_cand) = objective.gradient(&cand, fd_step) else { break };
        let g_cand_norm = inf_norm(&g_cand);
        if g_cand_norm >= grad_norm {
            break;
        }
        coefs = cand;
        j = j_cand;
        grad = g_cand;
        grad_norm = g_cand_norm;
        iterations += 1;
        converged = grad_norm <= gtol;
    }

    let basis = PerturbationBasis::new(coefs);
    let full = objective
        .trajectory(&basis.coefficients)
        .ok_or_else(|| Error::InvalidParam("converged coefficients are infeasible".into()))?;
    let f2_values = basis.values_on(f1.times(), f1.horizon());
    let f2_rates = basis.rates_on(f1.times(), f1.horizon());
    let f2_traj =
        Trajectory::from_parts_unchecked(f1.times().to_vec(), f2_values, f2_rates);
    let residual_sup = optimality_residual(impact, mkt, prob, &full, &f2_traj)?.sup_norm;
    let report = SolverReport {
        converged,
        iterations,
        objective: Some(j),
        residual_sup,
        boundary_error: (full.terminal() - prob.shares).abs(),
        detail: SolverDetail::BasisMinimize { gradient_norm: grad_norm, basis_size },
    };
    Ok((full, report))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Symmetrized finite-difference Hessian from gradient probes.
fn fd_hessian(
    objective: &CoefObjective<'_>,
    coefs: &[f64],
    probe_step: f64,
    grad_step: f64,
) -> Option<Vec<Vec<f64>>> {
    let m = coefs.len();
    let mut hessian = vec![vec![0.0; m]; m];
    let mut probe = coefs.to_vec();
    for i in 0..m {
        probe[i] = coefs[i] + probe_step;
        let up = objective.gradient(&probe, grad_step)?;
        probe[i] = coefs[i] - probe_step;
        let down = objective.gradient(&probe, grad_step)?;
        probe[i] = coefs[i];
        for k in 0..m {
            hessian[i][k] = (up[k] - down[k]) / (2.0 * probe_step);
        }
    }
    for i in 0..m {
        for k in i + 1..m {
            let v = 0.5 * (hessian[i][k] + hessian[k][i]);
            hessian[i][k] = v;
            hessian[k][i] = v;
        }
    }
    Some(hessian)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_linear(matrix: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rhs.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut b = rhs.to_vec();
    for col in 0..m {
        let pivot = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..m {
            let factor = a[row][col] / a[col][col];
            for k in col..m {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for col in (0..m).rev() {
        let mut acc = b[col];
        for k in col + 1..m {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
        if !x[col].is_finite() {
            return None;
        }
    }
    Some(x)
}

/// Standard BFGS inverse-Hessian update `H <- (I - r s y')H(I - r y s') + r s s'`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let m = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|k| h[i][k] * y[k]).sum::<f64>())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..m {
        for k in 0..m {
            h[i][k] += -rho * (hy[i] * s[k] + s[i] * hy[k])
                + rho * rho * yhy * s[i] * s[k]
                + rho * s[i] * s[k];
        }
    }
}
