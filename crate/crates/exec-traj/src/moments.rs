//! Moments of the accumulated spend `xi_t = integral c(u) S_u du` by nested
//! quadrature, and the mean-variance objective
//! `J = E[Y] + lambda V[Y]` in both its moment form and its integral form.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{eval_f, ExecutionProblem, ImpactSpec, MarketParams, Trajectory, EXP_CAP};
use crate::quad::{nested_product, trapezoid, trapezoid_prefix};

/// Relative slack: a variance this far below zero is treated as quadrature
/// noise and clamped; anything worse raises a quadrature failure.
const VARIANCE_SLACK: f64 = 1e-9;

/// Tolerance on `|f(T) - K|` (relative to K) accepted by the objective.
const BOUNDARY_RTOL: f64 = 1e-6;

/// First two moments of `xi` at a fixed time, with the derived variance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentResult {
    pub t: f64,
    pub mean: f64,
    pub second: f64,
    pub variance: f64,
}

/// Objective decomposition `J = E[Y] + lambda V[Y]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveValue {
    /// Total objective including the `-Ks` constant.
    pub j: f64,
    /// `E[Y] = E[xi_T] - Ks`.
    pub expected_shortfall: f64,
    /// `lambda * V[Y]`.
    pub variance_term: f64,
}

/// Integrands of the moment formulas on the trajectory grid:
/// `a_i = c_i s exp{integral g(c) + h(c_i)}` and `b_i = a_i e^{sigma^2 t_i}`.
/// The permanent families are zero or linear, so the accumulated drift
/// `integral_0^u g(c) dv` equals `alpha f(u)` identically and is taken from
/// the stored values; this keeps the moment form and the integral form of
/// the objective in exact agreement.
fn xi_integrands(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let times = traj.times();
    let rates = traj.rates();
    if let Some(bad) = rates.iter().find(|&&c| c < 0.0) {
        return Err(Error::InvalidParam(format!(
            "moment quadrature requires nonnegative rates, got {bad}"
        )));
    }
    let alpha = impact.permanent.slope();
    let drift: Vec<f64> = traj.values().iter().map(|&f| alpha * f).collect();
    let s2 = mkt.sigma * mkt.sigma;
    let mut a = Vec::with_capacity(times.len());
    let mut b = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let expo = drift[i] + impact.temporary.eval(rates[i]);
        if expo > EXP_CAP {
            return Err(Error::ExponentOverflow { exponent: expo, cap: EXP_CAP });
        }
        let ai = rates[i] * mkt.s * expo.exp();
        a.push(ai);
        b.push(ai * (s2 * times[i]).exp());
    }
    Ok((a, b))
}

/// Index of the last grid node at or before `t`, validating the range.
fn clip_index(traj: &Trajectory, t: f64) -> Result<usize> {
    let horizon = traj.horizon();
    if !t.is_finite() || t < 0.0 || t > horizon * (1.0 + 1e-12) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let times = traj.times();
    let k = times.partition_point(|&x| x <= t).saturating_sub(1);
    Ok(k.min(times.len() - 1))
}

fn lerp(x0: f64, x1: f64, y0: f64, y1: f64, x: f64) -> f64 {
    if x1 == x0 {
        return y0;
    }
    let w = (x - x0) / (x1 - x0);
    y0 * (1.0 - w) + y1 * w
}

/// `E[xi_t]` by composite trapezoid quadrature on the trajectory grid.
pub fn mean_xi(impact: &ImpactSpec, mkt: &MarketParams, traj: &Trajectory, t: f64) -> Result<f64> {
    let k = clip_index(traj, t)?;
    let (a, _) = xi_integrands(impact, mkt, traj)?;
    let times = traj.times();
    let mut acc = trapezoid(&times[..=k], &a[..=k]);
    if t > times[k] && k + 1 < times.len() {
        let a_t = lerp(times[k], times[k + 1], a[k], a[k + 1], t);
        acc += 0.5 * (a[k] + a_t) * (t - times[k]);
    }
    Ok(acc)
}

/// `E[xi_t^2]` by nested quadrature; the inner integral is a running prefix
/// sum so the total cost stays linear in the grid size.
pub fn second_moment_xi(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    t: f64,
) -> Result<f64> {
    let k = clip_index(traj, t)?;
    let (a, b) = xi_integrands(impact, mkt, traj)?;
    let times = traj.times();
    let prefix = trapezoid_prefix(times, &b);
    let mut acc = nested_product(&times[..=k], &a[..=k], &prefix[..=k]);
    if t > times[k] && k + 1 < times.len() {
        let a_t = lerp(times[k], times[k + 1], a[k], a[k + 1], t);
        let b_t = lerp(times[k], times[k + 1], b[k], b[k + 1], t);
        let p_t = prefix[k] + 0.5 * (b[k] + b_t) * (t - times[k]);
        acc += 0.5 * (a[k] + a_t) * 0.5 * (prefix[k] + p_t) * (t - times[k]);
    }
    Ok(2.0 * acc)
}

/// Mean, second moment and clamped variance of `xi_t`.
pub fn xi_moments(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    t: f64,
) -> Result<MomentResult> {
    let mean = mean_xi(impact, mkt, traj, t)?;
    let second = second_moment_xi(impact, mkt, traj, t)?;
    let raw = second - mean * mean;
    let variance = if mkt.sigma == 0.0 {
        // deterministic price: the nested quadrature reproduces mean^2 up to
        // rounding, and the exact limit is zero
        0.0
    } else if raw >= 0.0 {
        raw
    } else if raw.abs() <= VARIANCE_SLACK * mean * mean + f64::EPSILON {
        0.0
    } else {
        return Err(Error::QuadratureFailure(format!(
            "variance {raw:.6e} is negative beyond quadrature slack at t = {t}"
        )));
    };
    Ok(MomentResult { t, mean, second, variance })
}

fn check_boundary(prob: &ExecutionProblem, traj: &Trajectory) -> Result<()> {
    let horizon = traj.horizon();
    if (horizon - prob.horizon).abs() > 1e-9 * prob.horizon {
        return Err(Error::BoundaryViolation(format!(
            "trajectory horizon {horizon} does not match problem horizon {}",
            prob.horizon
        )));
    }
    let miss = (traj.terminal() - prob.shares).abs();
    if miss > BOUNDARY_RTOL * prob.shares {
        return Err(Error::BoundaryViolation(format!(
            "f(T) = {} misses the order size {} by {miss:.3e}",
            traj.terminal(),
            prob.shares
        )));
    }
    Ok(())
}

/// Markowitz objective from the moment formulas at `t = T`.
pub fn objective(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    prob: &ExecutionProblem,
    traj: &Trajectory,
) -> Result<ObjectiveValue> {
    check_boundary(prob, traj)?;
    let m = xi_moments(impact, mkt, traj, prob.horizon)?;
    let expected_shortfall = m.mean - prob.shares * mkt.s;
    let variance_term = prob.lambda * m.variance;
    Ok(ObjectiveValue { j: expected_shortfall + variance_term, expected_shortfall, variance_term })
}

/// Markowitz objective in its integral form
/// `J + Ks = integral (2 lambda integral_0^u F (e^{sigma^2 v} - 1) dv + 1) F(u) du`,
/// valid for linear (or zero) permanent impact. Agrees with [`objective`] to
/// quadrature rounding.
pub fn objective_integral_form(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    prob: &ExecutionProblem,
    traj: &Trajectory,
) -> Result<f64> {
    check_boundary(prob, traj)?;
    let times = traj.times();
    let values = traj.values();
    let rates = traj.rates();
    let s2 = mkt.sigma * mkt.sigma;
    let mut f_vals = Vec::with_capacity(times.len());
    let mut weighted = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let fi = eval_f(impact, mkt, values[i], rates[i])?;
        f_vals.push(fi);
        weighted.push(fi * ((s2 * times[i]).exp() - 1.0));
    }
    let prefix = trapezoid_prefix(times, &weighted);
    let j_plus_ks =
        2.0 * prob.lambda * nested_product(times, &f_vals, &prefix) + trapezoid(times, &f_vals);
    Ok(j_plus_ks - prob.shares * mkt.s)
}
