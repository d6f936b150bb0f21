//! Monte Carlo engine for the impacted price, the accumulated spend
//! `xi = integral c S`, and the companion linear SDE whose product with the
//! price reproduces `xi` pathwise. Brownian increments are generated once per
//! path and shared by every process, so the product identity holds up to
//! discretization error only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ImpactSpec, MarketParams, Trajectory, EXP_CAP};
use crate::quad::compensated_sum;

/// Discretization scheme for the price process; the companion SDE is always
/// Euler-Maruyama.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exponential closed form of the price evaluated on the grid.
    ExactPrice,
    /// Euler-Maruyama on the price SDE.
    EulerMaruyama,
}

/// Simulation controls. Identical configs produce bit-identical results on
/// one platform: paths are keyed by `(seed, path index)` through independent
/// ChaCha streams, so results do not depend on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Pair each path with its sign-flipped twin (variance reduction).
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig { n_paths, n_steps, seed, scheme: Scheme::ExactPrice, antithetic: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::InvalidParam("n_paths must be >= 1".into()));
        }
        if self.n_steps < 10 {
            return Err(Error::InvalidParam(format!(
                "n_steps must be >= 10, got {}",
                self.n_steps
            )));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::InvalidParam(
                "antithetic sampling needs an even path count".into(),
            ));
        }
        Ok(())
    }
}

/// Sample statistics of the terminal spend and the pathwise product identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathStats {
    pub xi_mean: f64,
    pub xi_mean_se: f64,
    pub xi_second: f64,
    pub xi_second_se: f64,
    /// `E[Y]` with `Y = xi_T - Ks`, `K` the trajectory's terminal value.
    pub shortfall_mean: f64,
    pub shortfall_var: f64,
    /// Mean over paths of `sup_t |xi_t - S_t X_t|`.
    pub sup_product_error: f64,
}

/// Per-path price grids.
#[derive(Debug, Clone)]
pub struct PricePaths {
    pub times: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
}

/// Per-path spend grids plus sample statistics.
#[derive(Debug, Clone)]
pub struct XiPaths {
    pub times: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
    pub stats: PathStats,
}

/// Per-path companion-process grids.
#[derive(Debug, Clone)]
pub struct XPaths {
    pub times: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
}

/// Aggregated product-identity error at one step count.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProductIdentity {
    pub n_steps: usize,
    pub mean_sup_error: f64,
    pub max_sup_error: f64,
    pub mean_xi_terminal: f64,
}

/// Trajectory resampled onto the uniform simulation grid with every
/// deterministic ingredient precomputed.
struct SimGrid {
    times: Vec<f64>,
    dt: f64,
    rates: Vec<f64>,
    /// running integral of g(c)
    g_prefix: Vec<f64>,
    /// h(c_t)
    h: Vec<f64>,
    /// g(c) + dh(c(t))/dt with the chain rule h'(c) c'
    drift: Vec<f64>,
}

impl SimGrid {
    fn new(impact: &ImpactSpec, traj: &Trajectory, n_steps: usize) -> Result<Self> {
        let horizon = traj.horizon();
        let dt = horizon / n_steps as f64;
        let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
        let rates: Vec<f64> = times.iter().map(|&t| traj.rate_at(t).max(0.0)).collect();
        // accumulated permanent drift = alpha f(t) for the zero/linear
        // families, matching the moment quadrature exactly
        let alpha = impact.permanent.slope();
        let g_prefix: Vec<f64> = times.iter().map(|&t| alpha * traj.value_at(t)).collect();
        let g_of_c: Vec<f64> = rates.iter().map(|&c| impact.permanent.eval(c)).collect();
        let h: Vec<f64> = rates.iter().map(|&c| impact.temporary.eval(c)).collect();
        let n = times.len();
        let mut drift = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            let c_dot = (rates[hi] - rates[lo]) / (times[hi] - times[lo]);
            let h_slope = impact.temporary.deriv(rates[i].max(crate::model::RATE_FLOOR))?;
            drift.push(g_of_c[i] + h_slope * c_dot);
        }
        for (i, (&g, &hv)) in g_prefix.iter().zip(&h).enumerate() {
            if g + hv > EXP_CAP {
                return Err(Error::ExponentOverflow { exponent: g + hv, cap: EXP_CAP });
            }
            let _ = i;
        }
        Ok(SimGrid { times, dt, rates, g_prefix, h, drift })
    }

    fn len(&self) -> usize {
        self.times.len()
    }
}

/// One path of everything, from a fixed increment vector.
struct PathRun {
    s: Vec<f64>,
    xi: Vec<f64>,
    x: Vec<f64>,
    sup_err: f64,
}

fn run_path(grid: &SimGrid, mkt: &MarketParams, scheme: Scheme, db: &[f64]) -> Result<PathRun> {
    let n = grid.len();
    let sigma = mkt.sigma;
    let s2 = sigma * sigma;
    let dt = grid.dt;

    let mut s = Vec::with_capacity(n);
    match scheme {
        Scheme::ExactPrice => {
            let mut b = 0.0;
            s.push(mkt.s * (grid.g_prefix[0] + grid.h[0]).exp());
            for i in 1..n {
                b += db[i - 1];
                let expo = grid.g_prefix[i] + grid.h[i] - 0.5 * s2 * grid.times[i] + sigma * b;
                s.push(mkt.s * expo.exp());
            }
        }
        Scheme::EulerMaruyama => {
            // the closed form carries h(c(0)) in its initial value
            let mut cur = mkt.s * grid.h[0].exp();
            s.push(cur);
            for i in 0..n - 1 {
                cur += cur * (grid.drift[i] * dt + sigma * db[i]);
                s.push(cur);
            }
        }
    }

    // spend accumulated by the trapezoid rule along the path
    let mut xi = Vec::with_capacity(n);
    xi.push(0.0);
    for i in 1..n {
        let inc = 0.5 * (grid.rates[i] * s[i] + grid.rates[i - 1] * s[i - 1]) * dt;
        xi.push(xi[i - 1] + inc);
    }

    // Euler-Maruyama companion process sharing the same increments
    let mut x = Vec::with_capacity(n);
    x.push(0.0);
    let mut cur = 0.0_f64;
    for i in 0..n - 1 {
        cur += (grid.rates[i] - (grid.drift[i] - s2) * cur) * dt - sigma * cur * db[i];
        x.push(cur);
    }
    if !cur.is_finite() || !s.last().unwrap().is_finite() {
        return Err(Error::OdeBlowUp {
            t: grid.times[n - 1],
            detail: format!("simulation diverged (X = {cur})"),
        });
    }

    let mut sup_err = 0.0_f64;
    for i in 0..n {
        sup_err = sup_err.max((xi[i] - s[i] * x[i]).abs());
    }
    Ok(PathRun { s, xi, x, sup_err })
}

fn increments(cfg: &SimConfig, path: usize, n_steps: usize, dt: f64) -> Vec<f64> {
    let (stream, sign) = if cfg.antithetic {
        (path / 2, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (path, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream as u64 + 1);
    let scale = sign * dt.sqrt();
    (0..n_steps)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        })
        .collect()
}

fn run_all_paths(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    cfg: &SimConfig,
) -> Result<(SimGrid, Vec<PathRun>)> {
    cfg.validate()?;
    let grid = SimGrid::new(impact, traj, cfg.n_steps)?;
    let runs: Result<Vec<PathRun>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let db = increments(cfg, p, cfg.n_steps, grid.dt);
            run_path(&grid, mkt, cfg.scheme, &db)
        })
        .collect();
    Ok((grid, runs?))
}

/// Per-sample terminal summaries. With antithetic sampling each sample is the
/// average over a +/- increment pair.
fn terminal_samples(runs: &[PathRun], antithetic: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    if antithetic {
        let n = runs.len() / 2;
        let mut xi = Vec::with_capacity(n);
        let mut xi_sq = Vec::with_capacity(n);
        let mut sup = Vec::with_capacity(n);
        for k in 0..n {
            let a = *runs[2 * k].xi.last().unwrap();
            let b = *runs[2 * k + 1].xi.last().unwrap();
            xi.push(0.5 * (a + b));
            xi_sq.push(0.5 * (a * a + b * b));
            sup.push(0.5 * (runs[2 * k].sup_err + runs[2 * k + 1].sup_err));
        }
        (xi, xi_sq, sup)
    } else {
        let xi: Vec<f64> = runs.iter().map(|r| *r.xi.last().unwrap()).collect();
        let xi_sq: Vec<f64> = xi.iter().map(|v| v * v).collect();
        let sup: Vec<f64> = runs.iter().map(|r| r.sup_err).collect();
        (xi, xi_sq, sup)
    }
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = compensated_sum(samples.iter().copied()) / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(samples.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn assemble_stats(runs: &[PathRun], cfg: &SimConfig, mkt: &MarketParams, terminal: f64) -> PathStats {
    let (xi, xi_sq, sup) = terminal_samples(runs, cfg.antithetic);
    let (xi_mean, xi_mean_se) = mean_and_se(&xi);
    let (xi_second, xi_second_se) = mean_and_se(&xi_sq);
    let (sup_mean, _) = mean_and_se(&sup);
    let ks = terminal * mkt.s;
    PathStats {
        xi_mean,
        xi_mean_se,
        xi_second,
        xi_second_se,
        shortfall_mean: xi_mean - ks,
        shortfall_var: xi_second - xi_mean * xi_mean,
        sup_product_error: sup_mean,
    }
}

/// Impacted price paths `S_t` on the simulation grid.
pub fn simulate_price(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    cfg: &SimConfig,
) -> Result<PricePaths> {
    let (grid, runs) = run_all_paths(impact, mkt, traj, cfg)?;
    Ok(PricePaths { times: grid.times, paths: runs.into_iter().map(|r| r.s).collect() })
}

/// Spend paths `xi_t` with terminal sample statistics. Keeps every path grid
/// in memory; use [`xi_stats`] for large path counts.
pub fn simulate_xi(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    cfg: &SimConfig,
) -> Result<XiPaths> {
    let (grid, runs) = run_all_paths(impact, mkt, traj, cfg)?;
    let stats = assemble_stats(&runs, cfg, mkt, traj.terminal());
    Ok(XiPaths { times: grid.times, paths: runs.into_iter().map(|r| r.xi).collect(), stats })
}

/// Companion-process paths `X_t` (Euler-Maruyama, shared increments).
pub fn simulate_brennan_schwartz(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    cfg: &SimConfig,
) -> Result<XPaths> {
    let (grid, runs) = run_all_paths(impact, mkt, traj, cfg)?;
    Ok(XPaths { times: grid.times, paths: runs.into_iter().map(|r| r.x).collect() })
}

/// Terminal statistics only; paths are simulated in parallel, reduced in path
/// order, and never stored.
pub fn xi_stats(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    cfg: &SimConfig,
) -> Result<PathStats> {
    cfg.validate()?;
    let grid = SimGrid::new(impact, traj, cfg.n_steps)?;
    struct Light {
        xi_t: f64,
        sup_err: f64,
    }
    let light: Result<Vec<Light>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let db = increments(cfg, p, cfg.n_steps, grid.dt);
            let run = run_path(&grid, mkt, cfg.scheme, &db)?;
            Ok(Light { xi_t: *run.xi.last().unwrap(), sup_err: run.sup_err })
        })
        .collect();
    let light = light?;

    let (xi, xi_sq, sup): (Vec<f64>, Vec<f64>, Vec<f64>) = if cfg.antithetic {
        let n = light.len() / 2;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for k in 0..n {
            let (u, v) = (light[2 * k].xi_t, light[2 * k + 1].xi_t);
            a.push(0.5 * (u + v));
            b.push(0.5 * (u * u + v * v));
            c.push(0.5 * (light[2 * k].sup_err + light[2 * k + 1].sup_err));
        }
        (a, b, c)
    } else {
        (
            light.iter().map(|l| l.xi_t).collect(),
            light.iter().map(|l| l.xi_t * l.xi_t).collect(),
            light.iter().map(|l| l.sup_err).collect(),
        )
    };
    let (xi_mean, xi_mean_se) = mean_and_se(&xi);
    let (xi_second, xi_second_se) = mean_and_se(&xi_sq);
    let (sup_mean, _) = mean_and_se(&sup);
    let ks = traj.terminal() * mkt.s;
    Ok(PathStats {
        xi_mean,
        xi_mean_se,
        xi_second,
        xi_second_se,
        shortfall_mean: xi_mean - ks,
        shortfall_var: xi_second - xi_mean * xi_mean,
        sup_product_error: sup_mean,
    })
}

/// Joint run summarizing the pathwise identity error at one resolution.
pub fn product_identity(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    cfg: &SimConfig,
) -> Result<ProductIdentity> {
    let (_, runs) = run_all_paths(impact, mkt, traj, cfg)?;
    Ok(summarize_identity(&runs, cfg.n_steps))
}

fn summarize_identity(runs: &[PathRun], n_steps: usize) -> ProductIdentity {
    let n = runs.len() as f64;
    let mean_sup = compensated_sum(runs.iter().map(|r| r.sup_err)) / n;
    let max_sup = runs.iter().fold(0.0_f64, |m, r| m.max(r.sup_err));
    let mean_xi = compensated_sum(runs.iter().map(|r| *r.xi.last().unwrap())) / n;
    ProductIdentity { n_steps, mean_sup_error: mean_sup, max_sup_error: max_sup, mean_xi_terminal: mean_xi }
}

/// Identity error under step refinement with nested Brownian paths: the
/// increments are drawn at the finest level and aggregated onto each coarser
/// grid, so every level sees the same underlying path.
pub fn product_identity_refinement(
    impact: &ImpactSpec,
    mkt: &MarketParams,
    traj: &Trajectory,
    cfg: &SimConfig,
    step_counts: &[usize],
) -> Result<Vec<ProductIdentity>> {
    cfg.validate()?;
    if step_counts.is_empty() {
        return Err(Error::InvalidParam("need at least one step count".into()));
    }
    let finest = *step_counts.iter().max().unwrap();
    for &n in step_counts {
        if n < 10 || !finest.is_multiple_of(n) {
            return Err(Error::InvalidParam(format!(
                "step count {n} must be >= 10 and divide the finest level {finest}"
            )));
        }
    }
    let grids: Vec<SimGrid> = step_counts
        .iter()
        .map(|&n| SimGrid::new(impact, traj, n))
        .collect::<Result<_>>()?;
    let horizon = traj.horizon();
    let fine_dt = horizon / finest as f64;
    let fine_cfg = SimConfig { n_steps: finest, ..*cfg };

    let per_path: Result<Vec<Vec<(f64, f64)>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let fine_db = increments(&fine_cfg, p, finest, fine_dt);
            let mut out = Vec::with_capacity(step_counts.len());
            for (grid, &n) in grids.iter().zip(step_counts) {
                let group = finest / n;
                let db: Vec<f64> = (0..n)
                    .map(|i| fine_db[i * group..(i + 1) * group].iter().sum())
                    .collect();
                let run = run_path(grid, mkt, cfg.scheme, &db)?;
                out.push((run.sup_err, *run.xi.last().unwrap()));
            }
            Ok(out)
        })
        .collect();
    let per_path = per_path?;

    let n = cfg.n_paths as f64;
    Ok(step_counts
        .iter()
        .enumerate()
        .map(|(level, &steps)| {
            let mean_sup =
                compensated_sum(per_path.iter().map(|path| path[level].0)) / n;
            let max_sup = per_path.iter().fold(0.0_f64, |m, path| m.max(path[level].0));
            let mean_xi = compensated_sum(per_path.iter().map(|path| path[level].1)) / n;
            ProductIdentity {
                n_steps: steps,
                mean_sup_error: mean_sup,
                max_sup_error: max_sup,
                mean_xi_terminal: mean_xi,
            }
        })
        .collect())
}
