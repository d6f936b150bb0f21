//! Market model primitives: impact function families, market parameters,
//! execution problems, discrete trajectories, and the cost integrand
//! `F(f, f') = s f' exp{alpha f + h(f')}` with its analytic partials.

use crate::error::{Error, Result};

/// Rates below this floor make `h'` blow up for sublinear power impact
/// (`h'(x) = eta p x^{p-1}` diverges at 0), so derivative evaluations reject them.
pub const RATE_FLOOR: f64 = 1e-8;

/// Exponent cap applied before any `exp` of `alpha f + h(f')`; beyond this the
/// evaluation errors out instead of silently overflowing.
pub const EXP_CAP: f64 = 700.0;

/// Permanent impact family: drift contribution per unit execution rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PermanentImpact {
    Zero,
    Linear { alpha: f64 },
}

impl PermanentImpact {
    pub fn linear(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidParam(format!(
                "permanent impact slope must be finite and >= 0, got {alpha}"
            )));
        }
        Ok(PermanentImpact::Linear { alpha })
    }

    /// g(x)
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            PermanentImpact::Zero => 0.0,
            PermanentImpact::Linear { alpha } => alpha * x,
        }
    }

    /// Slope of the (always linear or zero) family.
    pub fn slope(&self) -> f64 {
        match self {
            PermanentImpact::Zero => 0.0,
            PermanentImpact::Linear { alpha } => *alpha,
        }
    }
}

/// Temporary impact family: instantaneous log-price displacement per rate.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporaryImpact {
    Zero,
    Linear { eta: f64 },
    /// `eta * x^p` with `0 < p <= 1`; `p = 1` coincides with `Linear`.
    Power { eta: f64, p: f64 },
    Tabulated(MonotoneCubic),
}

impl TemporaryImpact {
    pub fn linear(eta: f64) -> Result<Self> {
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::InvalidParam(format!(
                "temporary impact slope must be finite and >= 0, got {eta}"
            )));
        }
        Ok(TemporaryImpact::Linear { eta })
    }

    pub fn power(eta: f64, p: f64) -> Result<Self> {
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::InvalidParam(format!(
                "power impact coefficient must be finite and >= 0, got {eta}"
            )));
        }
        if !p.is_finite() || p <= 0.0 || p > 1.0 {
            return Err(Error::InvalidParam(format!(
                "power impact exponent must satisfy 0 < p <= 1, got {p}"
            )));
        }
        Ok(TemporaryImpact::Power { eta, p })
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let interp = MonotoneCubic::new(xs, ys)?;
        Ok(TemporaryImpact::Tabulated(interp))
    }

    /// h(x), defined for x >= 0.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TemporaryImpact::Zero => 0.0,
            TemporaryImpact::Linear { eta } => eta * x,
            TemporaryImpact::Power { eta, p } => eta * x.powf(*p),
            TemporaryImpact::Tabulated(c) => c.eval(x),
        }
    }

    /// h'(x). Errors below the rate floor when the derivative is singular there.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        match self {
            TemporaryImpact::Zero => Ok(0.0),
            TemporaryImpact::Linear { eta } => Ok(*eta),
            TemporaryImpact::Power { eta, p } => {
                if *p < 1.0 && x < RATE_FLOOR {
                    return Err(Error::SingularRate { rate: x, floor: RATE_FLOOR });
                }
                if *p == 1.0 {
                    Ok(*eta)
                } else {
                    Ok(eta * p * x.powf(p - 1.0))
                }
            }
            TemporaryImpact::Tabulated(c) => Ok(c.deriv(x)),
        }
    }

    /// h''(x), same domain restrictions as `deriv`.
    pub fn deriv2(&self, x: f64) -> Result<f64> {
        match self {
            TemporaryImpact::Zero | TemporaryImpact::Linear { .. } => Ok(0.0),
            TemporaryImpact::Power { eta, p } => {
                if *p == 1.0 {
                    return Ok(0.0);
                }
                if x < RATE_FLOOR {
                    return Err(Error::SingularRate { rate: x, floor: RATE_FLOOR });
                }
                Ok(eta * p * (p - 1.0) * x.powf(p - 2.0))
            }
            TemporaryImpact::Tabulated(c) => Ok(c.deriv2(x)),
        }
    }

    /// True when `h` is identically zero, which makes the execution-cost
    /// Lagrangian a null Lagrangian (the expected shortfall then depends only
    /// on the trajectory endpoints).
    pub fn is_degenerate(&self) -> bool {
        match self {
            TemporaryImpact::Zero => true,
            TemporaryImpact::Linear { eta } => *eta == 0.0,
            TemporaryImpact::Power { eta, .. } => *eta == 0.0,
            TemporaryImpact::Tabulated(_) => false,
        }
    }
}

/// Which impact function to evaluate in [`eval_impact`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImpactKind {
    Permanent,
    Temporary,
}

/// Pair of permanent and temporary impact functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactSpec {
    pub permanent: PermanentImpact,
    pub temporary: TemporaryImpact,
}

impl ImpactSpec {
    pub fn new(permanent: PermanentImpact, temporary: TemporaryImpact) -> Self {
        ImpactSpec { permanent, temporary }
    }

    /// Zero impact in both components.
    pub fn none() -> Self {
        ImpactSpec { permanent: PermanentImpact::Zero, temporary: TemporaryImpact::Zero }
    }

    /// Linear permanent and linear temporary impact.
    pub fn linear(alpha: f64, eta: f64) -> Result<Self> {
        Ok(ImpactSpec {
            permanent: PermanentImpact::linear(alpha)?,
            temporary: TemporaryImpact::linear(eta)?,
        })
    }
}

/// Evaluate g or h at a nonnegative rate.
pub fn eval_impact(spec: &ImpactSpec, which: ImpactKind, x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidParam(format!("impact argument must be >= 0, got {x}")));
    }
    Ok(match which {
        ImpactKind::Permanent => spec.permanent.eval(x),
        ImpactKind::Temporary => spec.temporary.eval(x),
    })
}

/// Initial price and volatility of the unaffected share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub s: f64,
    pub sigma: f64,
}

impl MarketParams {
    /// `sigma = 0` is accepted as the degenerate risk-free mode.
    pub fn new(s: f64, sigma: f64) -> Result<Self> {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::InvalidParam(format!("initial price must be > 0, got {s}")));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParam(format!("volatility must be >= 0, got {sigma}")));
        }
        Ok(MarketParams { s, sigma })
    }
}

/// Order size, horizon and risk aversion.
///
/// The library always computes a buy (`f` increasing from 0 to `shares`); a
/// sell is the caller's sign flip on prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionProblem {
    /// Total shares to execute (K).
    pub shares: f64,
    /// Execution horizon (T).
    pub horizon: f64,
    /// Risk-aversion weight (lambda).
    pub lambda: f64,
}

impl ExecutionProblem {
    pub fn new(shares: f64, horizon: f64, lambda: f64) -> Result<Self> {
        if !shares.is_finite() || shares <= 0.0 {
            return Err(Error::InvalidParam(format!("order size must be > 0, got {shares}")));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidParam(format!("horizon must be > 0, got {horizon}")));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidParam(format!("risk aversion must be >= 0, got {lambda}")));
        }
        Ok(ExecutionProblem { shares, horizon, lambda })
    }
}

/// Cost integrand `F(f, f') = s f' exp{alpha f + h(f')}`.
pub fn eval_f(impact: &ImpactSpec, mkt: &MarketParams, f: f64, fp: f64) -> Result<f64> {
    if fp < 0.0 || !fp.is_finite() {
        return Err(Error::InvalidParam(format!("execution rate must be >= 0, got {fp}")));
    }
    if fp == 0.0 {
        return Ok(0.0);
    }
    let expo = impact.permanent.slope() * f + impact.temporary.eval(fp);
    if expo > EXP_CAP {
        return Err(Error::ExponentOverflow { exponent: expo, cap: EXP_CAP });
    }
    Ok(mkt.s * fp * expo.exp())
}

/// Analytic partials `(dF/df, dF/df')` of the cost integrand.
///
/// `dF/df = alpha F` and `dF/df' = s exp{alpha f + h(f')} (1 + f' h'(f'))`.
/// The tabulated family falls back to a central finite difference in `f'`.
pub fn eval_f_partials(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    f: f64,
    fp: f64,
) -> Result<(f64, f64)> {
    if fp < 0.0 || !fp.is_finite() {
        return Err(Error::InvalidParam(format!("execution rate must be >= 0, got {fp}")));
    }
    let alpha = impact.permanent.slope();
    let expo = alpha * f + impact.temporary.eval(fp);
    if expo > EXP_CAP {
        return Err(Error::ExponentOverflow { exponent: expo, cap: EXP_CAP });
    }
    let weight = mkt.s * expo.exp();
    let df = alpha * fp * weight;
    let dfp = match &impact.temporary {
        TemporaryImpact::Tabulated(_) => {
            let step = 1e-6 * fp.max(1.0);
            let lo = (fp - step).max(0.0);
            let hi = fp + step;
            (eval_f(impact, mkt, f, hi)? - eval_f(impact, mkt, f, lo)?) / (hi - lo)
        }
        temp => weight * (1.0 + fp * temp.deriv(fp)?),
    };
    Ok((df, dfp))
}

/// Discretized cumulative-execution schedule on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<f64>,
    rates: Vec<f64>,
}

impl Trajectory {
    /// Build from raw arrays, validating the grid and the `values[0] = 0`
    /// boundary. Values must be reproducible from rates by trapezoid
    /// integration to within a loose grid tolerance.
    pub fn new(times: Vec<f64>, values: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidParam("trajectory needs at least 2 grid points".into()));
        }
        if times.len() != values.len() || times.len() != rates.len() {
            return Err(Error::GridMismatch(format!(
                "times/values/rates lengths differ: {}/{}/{}",
                times.len(),
                values.len(),
                rates.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidParam(format!("grid must start at 0, got {}", times[0])));
        }
        for w in times.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::InvalidParam("grid must be strictly increasing".into()));
            }
        }
        if values.iter().chain(rates.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("trajectory values and rates must be finite".into()));
        }
        let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if values[0].abs() > 1e-12 * scale {
            return Err(Error::BoundaryViolation(format!(
                "cumulative execution must start at 0, got {}",
                values[0]
            )));
        }
        let traj = Trajectory { times, values, rates };
        let err = traj.consistency_error();
        if err > 1e-3 * scale {
            return Err(Error::InvalidParam(format!(
                "values are not the trapezoid integral of rates (max error {err:.3e})"
            )));
        }
        Ok(traj)
    }

    /// Uniform-rate schedule `f(t) = K t / T` on `n` equal steps.
    pub fn uniform(prob: &ExecutionProblem, n: usize) -> Self {
        let rate = prob.shares / prob.horizon;
        let times: Vec<f64> =
            (0..=n).map(|i| prob.horizon * i as f64 / n as f64).collect();
        let values = times.iter().map(|&t| rate * t).collect();
        let rates = vec![rate; n + 1];
        Trajectory { times, values, rates }
    }

    /// Sample a smooth rate function onto `n` uniform steps; values are
    /// accumulated by the trapezoid rule so the consistency invariant holds
    /// exactly.
    pub fn from_rate_fn(horizon: f64, n: usize, rate: impl Fn(f64) -> f64) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 || n < 1 {
            return Err(Error::InvalidParam("horizon must be > 0 and n >= 1".into()));
        }
        let times: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        let rates: Vec<f64> = times.iter().map(|&t| rate(t)).collect();
        let mut values = vec![0.0; n + 1];
        for i in 1..=n {
            values[i] = values[i - 1]
                + 0.5 * (rates[i] + rates[i - 1]) * (times[i] - times[i - 1]);
        }
        Trajectory::new(times, values, rates)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Terminal executed quantity `f(T)`.
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Max deviation between stored values and the trapezoid integral of rates.
    pub fn consistency_error(&self) -> f64 {
        let mut acc = self.values[0];
        let mut worst = 0.0_f64;
        for i in 1..self.times.len() {
            acc += 0.5 * (self.rates[i] + self.rates[i - 1]) * (self.times[i] - self.times[i - 1]);
            worst = worst.max((acc - self.values[i]).abs());
        }
        worst
    }

    /// Linear interpolation of `f` at `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        self.interp(&self.values, t)
    }

    /// Linear interpolation of `c = f'` at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.interp(&self.rates, t)
    }

    fn interp(&self, ys: &[f64], t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return ys[0];
        }
        if t >= self.times[n - 1] {
            return ys[n - 1];
        }
        let idx = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return ys[i],
            Err(i) => i,
        };
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        ys[idx - 1] * (1.0 - w) + ys[idx] * w
    }

    /// Resample onto `n` uniform steps over the same horizon by linear
    /// interpolation of values and rates.
    pub fn resample(&self, n: usize) -> Trajectory {
        let horizon = self.horizon();
        let times: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        let values = times.iter().map(|&t| self.value_at(t)).collect();
        let rates = times.iter().map(|&t| self.rate_at(t)).collect();
        Trajectory { times, values, rates }
    }

    /// Pointwise sum of two schedules on an identical grid.
    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.times != other.times {
            return Err(Error::GridMismatch("trajectories live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        let rates = self.rates.iter().zip(&other.rates).map(|(a, b)| a + b).collect();
        Ok(Trajectory { times: self.times.clone(), values, rates })
    }

    pub(crate) fn from_parts_unchecked(
        times: Vec<f64>,
        values: Vec<f64>,
        rates: Vec<f64>,
    ) -> Trajectory {
        Trajectory { times, values, rates }
    }
}

/// Monotone cubic interpolant (Fritsch-Carlson) used by the tabulated
/// temporary-impact family. Node slopes come from finite differences of the
/// table, limited so the interpolant preserves monotonicity.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidParam(
                "tabulated impact needs >= 2 knots with equal x/y lengths".into(),
            ));
        }
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidParam("tabulated knots must be strictly increasing".into()));
            }
        }
        if xs[0] != 0.0 || ys[0] != 0.0 {
            return Err(Error::InvalidParam("tabulated impact must map 0 to 0".into()));
        }
        let n = xs.len();
        let mut deltas = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            deltas.push((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]));
        }
        let mut slopes = vec![0.0; n];
        slopes[0] = deltas[0];
        slopes[n - 1] = deltas[n - 2];
        for i in 1..n - 1 {
            slopes[i] = if deltas[i - 1] * deltas[i] <= 0.0 {
                0.0
            } else {
                0.5 * (deltas[i - 1] + deltas[i])
            };
        }
        // Fritsch-Carlson limiter.
        for i in 0..n - 1 {
            if deltas[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let a = slopes[i] / deltas[i];
            let b = slopes[i + 1] / deltas[i];
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * a * deltas[i];
                slopes[i + 1] = tau * b * deltas[i];
            }
        }
        Ok(MonotoneCubic { xs, ys, slopes })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0;
        }
        if x >= self.xs[n - 1] {
            return n - 2;
        }
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x >= self.xs[n - 1] {
            // linear continuation with the terminal slope
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (h00, h10, h01, h11) = hermite_basis(t);
        self.ys[i] * h00
            + h * self.slopes[i] * h10
            + self.ys[i + 1] * h01
            + h * self.slopes[i + 1] * h11
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x >= self.xs[n - 1] {
            return self.slopes[n - 1];
        }
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (d00, d10, d01, d11) = hermite_basis_deriv(t);
        (self.ys[i] * d00 + self.ys[i + 1] * d01) / h
            + self.slopes[i] * d10
            + self.slopes[i + 1] * d11
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x >= self.xs[n - 1] {
            return 0.0;
        }
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (s00, s10, s01, s11) = hermite_basis_deriv2(t);
        (self.ys[i] * s00 + self.ys[i + 1] * s01) / (h * h)
            + (self.slopes[i] * s10 + self.slopes[i + 1] * s11) / h
    }
}

fn hermite_basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

fn hermite_basis_deriv(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    (
        6.0 * t2 - 6.0 * t,
        3.0 * t2 - 4.0 * t + 1.0,
        -6.0 * t2 + 6.0 * t,
        3.0 * t2 - 2.0 * t,
    )
}

fn hermite_basis_deriv2(t: f64) -> (f64, f64, f64, f64) {
    (
        12.0 * t - 6.0,
        6.0 * t - 4.0,
        -12.0 * t + 6.0,
        6.0 * t - 2.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mkt() -> MarketParams {
        MarketParams::new(1.0, 0.2).unwrap()
    }

    #[test]
    fn impact_examples() {
        let lin = ImpactSpec::linear(0.0, 1.0).unwrap();
        assert_eq!(eval_impact(&lin, ImpactKind::Temporary, 2.0).unwrap(), 2.0);

        let pow = ImpactSpec::new(
            PermanentImpact::Zero,
            TemporaryImpact::power(1.0, 0.6).unwrap(),
        );
        let v = eval_impact(&pow, ImpactKind::Temporary, 32.0).unwrap();
        assert!((v - 8.0).abs() < 1e-12, "32^(3/5) = 8, got {v}");

        let zero = ImpactSpec::none();
        assert_eq!(eval_impact(&zero, ImpactKind::Temporary, 5.0).unwrap(), 0.0);
        assert_eq!(eval_impact(&zero, ImpactKind::Permanent, 5.0).unwrap(), 0.0);

        assert!(eval_impact(&zero, ImpactKind::Temporary, -1.0).is_err());
    }

    #[test]
    fn impact_maps_zero_to_zero() {
        let specs = [
            ImpactSpec::none(),
            ImpactSpec::linear(1.0, 1.0).unwrap(),
            ImpactSpec::new(PermanentImpact::Zero, TemporaryImpact::power(2.0, 0.6).unwrap()),
            ImpactSpec::new(
                PermanentImpact::Zero,
                TemporaryImpact::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 0.8]).unwrap(),
            ),
        ];
        for spec in &specs {
            assert_eq!(spec.permanent.eval(0.0), 0.0);
            assert_eq!(spec.temporary.eval(0.0), 0.0);
        }
    }

    #[test]
    fn invalid_families_rejected() {
        assert!(TemporaryImpact::power(1.0, 0.0).is_err());
        assert!(TemporaryImpact::power(1.0, 1.5).is_err());
        assert!(TemporaryImpact::power(-1.0, 0.5).is_err());
        assert!(PermanentImpact::linear(f64::NAN).is_err());
        assert!(TemporaryImpact::tabulated(vec![0.5, 1.0], vec![0.0, 1.0]).is_err());
        assert!(TemporaryImpact::tabulated(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn eval_f_examples() {
        let lin = ImpactSpec::linear(1.0, 1.0).unwrap();
        assert_eq!(eval_f(&lin, &mkt(), 0.0, 0.0).unwrap(), 0.0);

        let v = eval_f(&lin, &mkt(), 0.0, 1.0).unwrap();
        assert!((v - 1.0_f64.exp()).abs() < 1e-12);

        let pow = ImpactSpec::new(
            PermanentImpact::linear(1.0).unwrap(),
            TemporaryImpact::power(1.0, 0.6).unwrap(),
        );
        let m2 = MarketParams::new(2.0, 0.2).unwrap();
        let v = eval_f(&pow, &m2, 1.0, 1.0).unwrap();
        assert!((v - 2.0 * 2.0_f64.exp()).abs() < 1e-12, "2 e^2, got {v}");
    }

    #[test]
    fn eval_f_overflow_guard() {
        let lin = ImpactSpec::linear(1.0, 1.0).unwrap();
        let err = eval_f(&lin, &mkt(), 800.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::ExponentOverflow { .. }));
        // zero rate short-circuits before the exponent cap
        assert_eq!(eval_f(&lin, &mkt(), 800.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn partials_examples() {
        let lin = ImpactSpec::linear(1.0, 1.0).unwrap();
        let (df, dfp) = eval_f_partials(&lin, &mkt(), 0.0, 1.0).unwrap();
        let e = 1.0_f64.exp();
        assert!((df - e).abs() < 1e-12);
        assert!((dfp - 2.0 * e).abs() < 1e-12);

        let no_temp = ImpactSpec::new(PermanentImpact::linear(1.0).unwrap(), TemporaryImpact::Zero);
        let (df, dfp) = eval_f_partials(&no_temp, &mkt(), 0.0, 2.0).unwrap();
        assert!((df - 2.0).abs() < 1e-12);
        assert!((dfp - 1.0).abs() < 1e-12);

        let pow = ImpactSpec::new(
            PermanentImpact::linear(1.0).unwrap(),
            TemporaryImpact::power(1.0, 0.6).unwrap(),
        );
        let (df, dfp) = eval_f_partials(&pow, &mkt(), 0.0, 1.0).unwrap();
        assert!((df - e).abs() < 1e-12);
        assert!((dfp - 1.6 * e).abs() < 1e-12);
    }

    #[test]
    fn singular_rate_below_floor() {
        let pow = ImpactSpec::new(
            PermanentImpact::linear(1.0).unwrap(),
            TemporaryImpact::power(1.0, 0.6).unwrap(),
        );
        let err = eval_f_partials(&pow, &mkt(), 0.0, 1e-9).unwrap_err();
        assert!(matches!(err, Error::SingularRate { .. }));
    }

    #[test]
    fn trajectory_validation() {
        let prob = ExecutionProblem::new(3.0, 1.0, 0.0).unwrap();
        let traj = Trajectory::uniform(&prob, 100);
        assert_eq!(traj.len(), 101);
        assert_eq!(traj.values()[0], 0.0);
        assert!((traj.terminal() - 3.0).abs() < 1e-12);
        assert!(traj.consistency_error() < 1e-12);

        // interpolation matches the line
        assert!((traj.value_at(0.5) - 1.5).abs() < 1e-12);
        assert!((traj.rate_at(0.37) - 3.0).abs() < 1e-12);

        // non-increasing grid rejected
        assert!(Trajectory::new(vec![0.0, 0.5, 0.5], vec![0.0, 1.0, 2.0], vec![2.0; 3]).is_err());
        // values inconsistent with rates rejected
        assert!(Trajectory::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 2.0, 2.5],
            vec![1.0, 1.0, 1.0]
        )
        .is_err());
        // nonzero start rejected
        assert!(Trajectory::new(
            vec![0.0, 0.5, 1.0],
            vec![0.5, 1.0, 1.5],
            vec![1.0, 1.0, 1.0]
        )
        .is_err());
    }

    #[test]
    fn tabulated_interpolates_knots_and_is_monotone() {
        let h = TemporaryImpact::tabulated(
            vec![0.0, 1.0, 2.0, 4.0],
            vec![0.0, 0.9, 1.4, 2.0],
        )
        .unwrap();
        assert!((h.eval(1.0) - 0.9).abs() < 1e-12);
        assert!((h.eval(4.0) - 2.0).abs() < 1e-12);
        let mut prev = h.eval(0.0);
        for i in 1..=400 {
            let x = 4.5 * i as f64 / 400.0;
            let v = h.eval(x);
            assert!(v >= prev - 1e-12, "monotonicity violated at {x}");
            prev = v;
        }
        // derivative consistent with a finite difference
        let x = 1.7;
        let fd = (h.eval(x + 1e-6) - h.eval(x - 1e-6)) / 2e-6;
        assert!((h.deriv(x).unwrap() - fd).abs() < 1e-5);
    }

    proptest! {
        // analytic partials match central finite differences of eval_f
        #[test]
        fn partials_match_finite_differences(
            f in 0.0..5.0_f64,
            fp in 1e-3..5.0_f64,
            family in 0..3usize,
            alpha in 0.1..2.0_f64,
            eta in 0.1..2.0_f64,
            p in 0.2..1.0_f64,
        ) {
            let temporary = match family {
                0 => TemporaryImpact::Zero,
                1 => TemporaryImpact::linear(eta).unwrap(),
                _ => TemporaryImpact::power(eta, p).unwrap(),
            };
            let spec = ImpactSpec::new(PermanentImpact::linear(alpha).unwrap(), temporary);
            let m = mkt();
            let (df, dfp) = eval_f_partials(&spec, &m, f, fp).unwrap();

            let hf = 1e-6 * f.abs().max(1.0);
            let fd_f = (eval_f(&spec, &m, f + hf, fp).unwrap()
                - eval_f(&spec, &m, f - hf, fp).unwrap()) / (2.0 * hf);
            let hp = 1e-7 * fp.max(1.0);
            let fd_p = (eval_f(&spec, &m, f, fp + hp).unwrap()
                - eval_f(&spec, &m, f, fp - hp).unwrap()) / (2.0 * hp);

            let scale = df.abs().max(1.0);
            prop_assert!((df - fd_f).abs() / scale < 1e-6, "dF/df {} vs fd {}", df, fd_f);
            let scale = dfp.abs().max(1.0);
            prop_assert!((dfp - fd_p).abs() / scale < 1e-6, "dF/df' {} vs fd {}", dfp, fd_p);
        }

        // linear(eta) and power(eta, 1) agree everywhere
        #[test]
        fn linear_is_power_one(eta in 0.0..3.0_f64, x in 0.0..10.0_f64) {
            let a = TemporaryImpact::linear(eta).unwrap();
            let b = TemporaryImpact::power(eta, 1.0).unwrap();
            prop_assert!((a.eval(x) - b.eval(x)).abs() < 1e-12);
            prop_assert!((a.deriv(x).unwrap() - b.deriv(x).unwrap()).abs() < 1e-12);
        }

        // F strictly increasing in f for fixed positive rate (alpha > 0)
        #[test]
        fn f_increasing_in_position(f in 0.0..4.0_f64, df in 0.01..1.0_f64, fp in 0.1..4.0_f64) {
            let spec = ImpactSpec::linear(1.0, 1.0).unwrap();
            let m = mkt();
            let lo = eval_f(&spec, &m, f, fp).unwrap();
            let hi = eval_f(&spec, &m, f + df, fp).unwrap();
            prop_assert!(hi > lo);
        }
    }
}
