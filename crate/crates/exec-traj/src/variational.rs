//! Euler-Lagrange machinery for the expected-shortfall-only problem: the
//! residual operator `dF/df - d/du (dF/df')` and a shooting solver for the
//! two-point boundary value problem `f(0) = 0`, `f(T) = K`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    ExecutionProblem, ImpactSpec, MarketParams, TemporaryImpact, Trajectory, EXP_CAP,
};
use crate::moments;

/// Euler-Lagrange residual of a trajectory at its interior grid nodes.
///
/// `residual` is `dF/df - d/du(dF/df')`; `reduced` is the same quantity
/// divided by the positive weight `s exp{alpha f + h(f')}`, which puts the
/// linear-impact case in the form `f' - f'' - (1 + f')(f' + f'')`.
#[derive(Debug, Clone)]
pub struct ElResidual {
    pub times: Vec<f64>,
    pub residual: Vec<f64>,
    pub reduced: Vec<f64>,
}

impl ElResidual {
    pub fn sup_norm(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn reduced_sup_norm(&self) -> f64 {
        self.reduced.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Shooting-method controls.
#[derive(Debug, Clone, Copy)]
pub struct ShootingConfig {
    /// Search interval for the initial rate `f'(0)`; `None` derives
    /// `[K/(10T), 10K/T]` from the problem.
    pub slope_bracket: Option<(f64, f64)>,
    pub max_iter: usize,
    /// Tolerance on the terminal miss `|f(T) - K|` in shares.
    pub bc_tol: f64,
    /// Fixed RK4 step count.
    pub ode_steps: usize,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig { slope_bracket: None, max_iter: 100, bc_tol: 1e-9, ode_steps: 4000 }
    }
}

impl ShootingConfig {
    fn validate(&self) -> Result<()> {
        if !self.bc_tol.is_finite() || self.bc_tol <= 0.0 {
            return Err(Error::InvalidParam(format!("bc_tol must be > 0, got {}", self.bc_tol)));
        }
        if self.ode_steps < 100 {
            return Err(Error::InvalidParam(format!(
                "ode_steps must be >= 100, got {}",
                self.ode_steps
            )));
        }
        Ok(())
    }
}

/// Stage-specific solver diagnostics.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolverDetail {
    Shooting { initial_slope: f64 },
    BasisMinimize { gradient_norm: f64, basis_size: usize },
}

/// Outcome of a solve: convergence flag, diagnostics, and the residual norm
/// of the stage's optimality condition.
#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    /// Objective value of the stage (`lambda = 0` objective for the shooting
    /// stage); `None` when it could not be evaluated.
    pub objective: Option<f64>,
    /// Sup norm of the reduced Euler-Lagrange residual at interior nodes.
    pub residual_sup: f64,
    /// Terminal boundary miss `|f(T) - K|`.
    pub boundary_error: f64,
    pub detail: SolverDetail,
}

/// Evaluate the E-L residual using the analytic partials of `F` and a central
/// difference of the stored rates for `f''`.
pub fn el_residual(impact: &ImpactSpec, mkt: &MarketParams, traj: &Trajectory) -> Result<ElResidual> {
    if traj.len() < 3 {
        return Err(Error::InvalidParam("residual needs at least 3 grid nodes".into()));
    }
    let times = traj.times();
    let values = traj.values();
    let rates = traj.rates();
    let n = times.len();
    let mut out_t = Vec::with_capacity(n - 2);
    let mut out_r = Vec::with_capacity(n - 2);
    let mut out_red = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        let accel = (rates[i + 1] - rates[i - 1]) / (times[i + 1] - times[i - 1]);
        let (full, reduced) = residual_at(impact, mkt, values[i], rates[i], accel)?;
        out_t.push(times[i]);
        out_r.push(full);
        out_red.push(reduced);
    }
    Ok(ElResidual { times: out_t, residual: out_r, reduced: out_red })
}

/// Residual at a single state, given `f''`. Returns `(full, reduced)`.
pub(crate) fn residual_at(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    f: f64,
    c: f64,
    accel: f64,
) -> Result<(f64, f64)> {
    let alpha = impact.permanent.slope();
    let h1 = impact.temporary.deriv(c)?;
    let h2 = impact.temporary.deriv2(c)?;
    let expo = alpha * f + impact.temporary.eval(c);
    if expo > EXP_CAP {
        return Err(Error::ExponentOverflow { exponent: expo, cap: EXP_CAP });
    }
    let weight = mkt.s * expo.exp();
    let reduced = alpha * c - (alpha * c + h1 * accel) * (1.0 + c * h1) - accel * (h1 + c * h2);
    Ok((weight * reduced, reduced))
}

/// `f''` isolated analytically from the E-L equation, per temporary-impact
/// family. The equation is linear in `f''` for `F = s f' exp{alpha f + h(f')}`.
fn accel_from_el(impact: &ImpactSpec, c: f64) -> Result<f64> {
    let alpha = impact.permanent.slope();
    let c = c.max(0.0);
    match &impact.temporary {
        TemporaryImpact::Zero => Err(Error::DegenerateLagrangian(
            "zero temporary impact makes the E-L equation vacuous".into(),
        )),
        TemporaryImpact::Linear { eta } => Ok(-alpha * c * c / (2.0 + eta * c)),
        TemporaryImpact::Power { eta, p } => {
            Ok(-alpha * c * c / ((1.0 + p) + eta * p * c.powf(*p)))
        }
        TemporaryImpact::Tabulated(interp) => {
            let h1 = interp.deriv(c);
            let h2 = interp.deriv2(c);
            let denom = h1 * (2.0 + c * h1) + c * h2;
            if denom.abs() < 1e-12 {
                return Err(Error::DegenerateLagrangian(format!(
                    "tabulated impact has vanishing E-L coefficient at rate {c}"
                )));
            }
            Ok(-alpha * c * c * h1 / denom)
        }
    }
}

/// Fixed-step RK4 integration of `f' = c`, `c' = accel(c)` from
/// `(0, slope)`. Returns the full state arrays.
fn integrate(
    impact: &ImpactSpec,
    horizon: f64,
    slope: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let h = horizon / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut rates = Vec::with_capacity(steps + 1);
    let mut f = 0.0_f64;
    let mut c = slope;
    times.push(0.0);
    values.push(f);
    rates.push(c);
    for i in 0..steps {
        let d = |c: f64| -> Result<(f64, f64)> { Ok((c.max(0.0), accel_from_el(impact, c)?)) };
        let (k1f, k1c) = d(c)?;
        let (k2f, k2c) = d(c + 0.5 * h * k1c)?;
        let (k3f, k3c) = d(c + 0.5 * h * k2c)?;
        let (k4f, k4c) = d(c + h * k3c)?;
        f += h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
        c += h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
        if !f.is_finite() || !c.is_finite() {
            return Err(Error::OdeBlowUp {
                t: (i + 1) as f64 * h,
                detail: format!("state (f, c) = ({f}, {c})"),
            });
        }
        times.push(if i + 1 == steps { horizon } else { (i + 1) as f64 * h });
        values.push(f);
        rates.push(c.max(0.0));
    }
    Ok((times, values, rates))
}

/// Solve the `lambda = 0` boundary value problem by shooting on the initial
/// rate: bisection while the bracket is wide, secant near the root.
///
/// Returns the trajectory on the RK4 grid together with a report. Hitting the
/// iteration cap yields `converged = false` in the report rather than an
/// error; structural failures (degenerate impact, bad bracket, blow-up) are
/// errors.
pub fn solve_f1(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    prob: &ExecutionProblem,
    cfg: &ShootingConfig,
) -> Result<(Trajectory, SolverReport)> {
    cfg.validate()?;
    if impact.temporary.is_degenerate() {
        return Err(Error::DegenerateLagrangian(
            "temporary impact is identically zero, so expected shortfall depends only on the \
             trajectory endpoints and the E-L equation is vacuous"
                .into(),
        ));
    }
    let (mut lo, mut hi) = cfg
        .slope_bracket
        .unwrap_or((prob.shares / (10.0 * prob.horizon), 10.0 * prob.shares / prob.horizon));
    if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || hi <= lo {
        return Err(Error::InvalidParam(format!("bad slope bracket [{lo}, {hi}]")));
    }

    let terminal = |slope: f64| -> Result<f64> {
        let (_, values, _) = integrate(impact, prob.horizon, slope, cfg.ode_steps)?;
        Ok(*values.last().unwrap() - prob.shares)
    };

    let mut iterations = 0usize;
    let mut miss_lo = terminal(lo)?;
    let mut miss_hi = terminal(hi)?;
    iterations += 2;
    if miss_lo > 0.0 || miss_hi < 0.0 {
        return Err(Error::BracketFail { lo, hi, miss_lo, miss_hi });
    }

    let mut slope = 0.5 * (lo + hi);
    let mut miss = f64::INFINITY;
    let mut converged = false;
    while iterations < cfg.max_iter {
        // secant candidate from the bracket endpoints, bisection fallback
        let secant = hi - miss_hi * (hi - lo) / (miss_hi - miss_lo);
        let width = hi - lo;
        slope = if secant.is_finite() && secant > lo + 0.01 * width && secant < hi - 0.01 * width {
            secant
        } else {
            0.5 * (lo + hi)
        };
        miss = terminal(slope)?;
        iterations += 1;
        if miss.abs() <= cfg.bc_tol {
            converged = true;
            break;
        }
        if miss < 0.0 {
            lo = slope;
            miss_lo = miss;
        } else {
            hi = slope;
            miss_hi = miss;
        }
    }
    if !converged {
        // pick the better bracket end if the last probe was worse
        let mut best = miss.abs();
        if miss_lo.abs() < best {
            slope = lo;
            best = miss_lo.abs();
        }
        if miss_hi.abs() < best {
            slope = hi;
        }
    }

    let (times, values, rates) = integrate(impact, prob.horizon, slope, cfg.ode_steps)?;
    let boundary_error = (values.last().unwrap() - prob.shares).abs();
    let traj = Trajectory::from_parts_unchecked(times, values, rates);
    let residual_sup = el_residual(impact, mkt, &traj)?.reduced_sup_norm();
    let objective = {
        let riskless = ExecutionProblem { lambda: 0.0, ..*prob };
        moments::objective(impact, mkt, &riskless, &traj).ok().map(|o| o.j)
    };
    let report = SolverReport {
        converged,
        iterations,
        objective,
        residual_sup,
        boundary_error,
        detail: SolverDetail::Shooting { initial_slope: slope },
    };
    Ok((traj, report))
}
