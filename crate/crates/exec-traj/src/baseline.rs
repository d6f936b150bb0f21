//! Almgren-Chriss arithmetic-Brownian benchmark trajectory used for the
//! comparison runs.

use crate::error::{Error, Result};
use crate::model::{ExecutionProblem, ImpactSpec, MarketParams, TemporaryImpact, Trajectory};

/// Arithmetic-model benchmark parameters with the derived urgency
/// `kappa = sqrt(lambda sigma_abs^2 / eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcParams {
    pub eta: f64,
    pub sigma_abs: f64,
    pub lambda: f64,
    pub kappa: f64,
}

impl AcParams {
    pub fn new(eta: f64, sigma_abs: f64, lambda: f64) -> Result<Self> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "arithmetic temporary impact must be > 0, got {eta}"
            )));
        }
        if !sigma_abs.is_finite() || sigma_abs < 0.0 {
            return Err(Error::InvalidParam(format!(
                "absolute volatility must be >= 0, got {sigma_abs}"
            )));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidParam(format!(
                "risk aversion must be >= 0, got {lambda}"
            )));
        }
        let kappa = (lambda * sigma_abs * sigma_abs / eta).sqrt();
        Ok(AcParams { eta, sigma_abs, lambda, kappa })
    }

    /// Comparison convention mapping the geometric model's parameters onto
    /// the arithmetic ones by first-order linearization around `t = 0`:
    /// `sigma_abs = sigma s` and `eta_ac = s h'(K/T)` (which is `eta s` for
    /// linear temporary impact).
    pub fn from_market(
        impact: &ImpactSpec,
        mkt: &MarketParams,
        prob: &ExecutionProblem,
    ) -> Result<Self> {
        let base_rate = prob.shares / prob.horizon;
        let slope = match &impact.temporary {
            TemporaryImpact::Zero => {
                return Err(Error::InvalidParam(
                    "cannot map zero temporary impact onto the arithmetic benchmark".into(),
                ))
            }
            other => other.deriv(base_rate)?,
        };
        if !slope.is_finite() || slope <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "temporary impact slope at the base rate must be > 0, got {slope}"
            )));
        }
        AcParams::new(slope * mkt.s, mkt.sigma * mkt.s, prob.lambda)
    }
}

/// Closed-form benchmark schedule
/// `f(t) = K [1 - sinh(kappa (T - t)) / sinh(kappa T)]`, the straight line
/// when `kappa = 0`. Evaluated in exponential form so large `kappa T` cannot
/// overflow.
pub fn ac_trajectory(params: &AcParams, prob: &ExecutionProblem, grid: &[f64]) -> Result<Trajectory> {
    if grid.len() < 2 || grid[0] != 0.0 {
        return Err(Error::InvalidParam("grid must start at 0 with >= 2 points".into()));
    }
    let horizon = prob.horizon;
    if (grid[grid.len() - 1] - horizon).abs() > 1e-12 * horizon {
        return Err(Error::InvalidParam(format!(
            "grid must span [0, {horizon}], ends at {}",
            grid[grid.len() - 1]
        )));
    }
    let k = prob.shares;
    let kappa = params.kappa;
    let n = grid.len();
    let mut values = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    if kappa == 0.0 {
        for &t in grid {
            values.push(k * t / horizon);
            rates.push(k / horizon);
        }
    } else {
        // sinh(kappa(T-t))/sinh(kappa T) = e^{-kappa t}(1 - e^{-2 kappa (T-t)})/(1 - e^{-2 kappa T})
        let denom = 1.0 - (-2.0 * kappa * horizon).exp();
        for &t in grid {
            let tail = horizon - t;
            let ratio = (-kappa * t).exp() * (1.0 - (-2.0 * kappa * tail).exp()) / denom;
            values.push(k * (1.0 - ratio));
            // f'(t) = K kappa cosh(kappa (T - t)) / sinh(kappa T)
            let cosh_ratio =
                (-kappa * t).exp() * (1.0 + (-2.0 * kappa * tail).exp()) / denom;
            rates.push(k * kappa * cosh_ratio);
        }
        values[0] = 0.0;
        values[n - 1] = k;
    }
    Ok(Trajectory::from_parts_unchecked(grid.to_vec(), values, rates))
}
