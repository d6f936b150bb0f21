//! Run-configuration file: structured TOML with strict unknown-key rejection.
//! Silent typos in numeric experiment configs are the main operator hazard,
//! so every section denies unknown fields and family-specific keys are
//! cross-checked.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{
    ExecutionProblem, ImpactSpec, MarketParams, PermanentImpact, TemporaryImpact,
};
use crate::simulate::{Scheme, SimConfig};
use crate::variational::ShootingConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub market: MarketSection,
    pub impact: ImpactSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub sim: Option<SimSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub s: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactSection {
    pub permanent: String,
    pub alpha: Option<f64>,
    pub temporary: String,
    pub eta: Option<f64>,
    pub p: Option<f64>,
    pub knots_x: Option<Vec<f64>>,
    pub knots_y: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub shares: f64,
    pub horizon: f64,
    pub risk_aversion: f64,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
    pub max_iter: Option<usize>,
    pub bc_tol: Option<f64>,
    pub ode_steps: Option<usize>,
    pub basis_size: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub antithetic: bool,
    /// Which schedule to simulate: the uniform line or the solved optimum.
    #[serde(default = "default_sim_trajectory")]
    pub trajectory: String,
    /// Step counts for the product-identity convergence table.
    #[serde(default = "default_refinement")]
    pub refinement: Vec<usize>,
}

fn default_scheme() -> String {
    "exact-price".into()
}

fn default_sim_trajectory() -> String {
    "uniform".into()
}

fn default_refinement() -> Vec<usize> {
    vec![200, 400, 800]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_out_dir() -> String {
    "out".into()
}

fn default_format() -> String {
    "csv".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir(), format: default_format() }
    }
}

/// Output data-file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Which schedule a simulation run draws paths along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTrajectory {
    Uniform,
    Solved,
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub market: MarketParams,
    pub impact: ImpactSpec,
    pub problem: ExecutionProblem,
    pub shooting: ShootingConfig,
    pub basis_size: usize,
    pub sim: Option<SimRun>,
    pub out_dir: String,
    pub format: OutputFormat,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub config: SimConfig,
    pub trajectory: SimTrajectory,
    pub refinement: Vec<usize>,
}

impl RunConfig {
    /// Parse and validate a TOML config. Unknown keys and inconsistent
    /// family parameters are rejected with a single-line diagnostic.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let msg: Vec<&str> = e.message().lines().collect();
            Error::InvalidParam(msg.join(" "))
        })?;
        raw.validate()
    }
}

impl RawConfig {
    pub fn validate(&self) -> Result<RunConfig> {
        let market = MarketParams::new(self.market.s, self.market.sigma)?;
        let impact = self.impact.build()?;
        let problem = ExecutionProblem::new(
            self.problem.shares,
            self.problem.horizon,
            self.problem.risk_aversion,
        )?;

        let defaults = ShootingConfig::default();
        let slope_bracket = match (self.solver.slope_min, self.solver.slope_max) {
            (None, None) => None,
            (Some(lo), Some(hi)) => Some((lo, hi)),
            _ => {
                return Err(Error::InvalidParam(
                    "slope_min and slope_max must be given together".into(),
                ))
            }
        };
        let shooting = ShootingConfig {
            slope_bracket,
            max_iter: self.solver.max_iter.unwrap_or(defaults.max_iter),
            bc_tol: self.solver.bc_tol.unwrap_or(defaults.bc_tol),
            ode_steps: self.solver.ode_steps.unwrap_or(defaults.ode_steps),
        };
        let basis_size = self.solver.basis_size.unwrap_or(8);

        let sim = match &self.sim {
            None => None,
            Some(section) => {
                let scheme = match section.scheme.as_str() {
                    "exact-price" => Scheme::ExactPrice,
                    "euler-maruyama" => Scheme::EulerMaruyama,
                    other => {
                        return Err(Error::InvalidParam(format!(
                            "unknown scheme `{other}`, expected `exact-price` or `euler-maruyama`"
                        )))
                    }
                };
                let trajectory = match section.trajectory.as_str() {
                    "uniform" => SimTrajectory::Uniform,
                    "solved" => SimTrajectory::Solved,
                    other => {
                        return Err(Error::InvalidParam(format!(
                            "unknown sim trajectory `{other}`, expected `uniform` or `solved`"
                        )))
                    }
                };
                let mut config = SimConfig::new(section.n_paths, section.n_steps, section.seed)?;
                config.scheme = scheme;
                config.antithetic = section.antithetic;
                Some(SimRun { config, trajectory, refinement: section.refinement.clone() })
            }
        };

        let format = match self.output.format.as_str() {
            "csv" => OutputFormat::Csv,
            "json" => OutputFormat::Json,
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown output format `{other}`, expected `csv` or `json`"
                )))
            }
        };

        Ok(RunConfig {
            market,
            impact,
            problem,
            shooting,
            basis_size,
            sim,
            out_dir: self.output.dir.clone(),
            format,
        })
    }
}

impl ImpactSection {
    fn build(&self) -> Result<ImpactSpec> {
        let permanent = match self.permanent.as_str() {
            "zero" => {
                if self.alpha.is_some() {
                    return Err(Error::InvalidParam(
                        "`alpha` is not allowed with zero permanent impact".into(),
                    ));
                }
                PermanentImpact::Zero
            }
            "linear" => {
                let alpha = self.alpha.ok_or_else(|| {
                    Error::InvalidParam("linear permanent impact requires `alpha`".into())
                })?;
                PermanentImpact::linear(alpha)?
            }
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown permanent impact family `{other}`, expected `zero` or `linear`"
                )))
            }
        };

        let reject = |key: &str, present: bool| -> Result<()> {
            if present {
                return Err(Error::InvalidParam(format!(
                    "`{key}` is not allowed with temporary impact `{}`",
                    self.temporary
                )));
            }
            Ok(())
        };
        let temporary = match self.temporary.as_str() {
            "zero" => {
                reject("eta", self.eta.is_some())?;
                reject("p", self.p.is_some())?;
                reject("knots_x", self.knots_x.is_some())?;
                reject("knots_y", self.knots_y.is_some())?;
                TemporaryImpact::Zero
            }
            "linear" => {
                reject("p", self.p.is_some())?;
                reject("knots_x", self.knots_x.is_some())?;
                reject("knots_y", self.knots_y.is_some())?;
                let eta = self.eta.ok_or_else(|| {
                    Error::InvalidParam("linear temporary impact requires `eta`".into())
                })?;
                TemporaryImpact::linear(eta)?
            }
            "power" => {
                reject("knots_x", self.knots_x.is_some())?;
                reject("knots_y", self.knots_y.is_some())?;
                let eta = self.eta.ok_or_else(|| {
                    Error::InvalidParam("power temporary impact requires `eta`".into())
                })?;
                let p = self.p.ok_or_else(|| {
                    Error::InvalidParam("power temporary impact requires `p`".into())
                })?;
                TemporaryImpact::power(eta, p)?
            }
            "tabulated" => {
                reject("eta", self.eta.is_some())?;
                reject("p", self.p.is_some())?;
                let xs = self.knots_x.clone().ok_or_else(|| {
                    Error::InvalidParam("tabulated temporary impact requires `knots_x`".into())
                })?;
                let ys = self.knots_y.clone().ok_or_else(|| {
                    Error::InvalidParam("tabulated temporary impact requires `knots_y`".into())
                })?;
                TemporaryImpact::tabulated(xs, ys)?
            }
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown temporary impact family `{other}`, expected `zero`, `linear`, `power` or `tabulated`"
                )))
            }
        };
        Ok(ImpactSpec::new(permanent, temporary))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[market]
s = 1.0
sigma = 0.2

[impact]
permanent = "linear"
alpha = 1.0
temporary = "linear"
eta = 1.0

[problem]
shares = 3.0
horizon = 1.0
risk_aversion = 1.0
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.problem.shares, 3.0);
        assert_eq!(cfg.basis_size, 8);
        assert_eq!(cfg.shooting.ode_steps, 4000);
        assert_eq!(cfg.out_dir, "out");
        assert_eq!(cfg.format, OutputFormat::Csv);
        assert!(cfg.sim.is_none());
    }

    #[test]
    fn unknown_key_named_in_single_line_error() {
        let text = BASE.replace("shares = 3.0", "shards = 3.0");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("shards"), "diagnostic should name the key: {err}");
        assert!(!err.contains('\n'), "diagnostic must be a single line: {err:?}");
    }

    #[test]
    fn unknown_section_rejected() {
        let text = format!("{BASE}\n[mystery]\nx = 1\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn family_parameter_cross_checks() {
        // alpha with zero permanent impact
        let text = BASE.replace("permanent = \"linear\"", "permanent = \"zero\"");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");

        // missing eta
        let text = BASE.replace("eta = 1.0", "");
        assert!(RunConfig::parse(&text).is_err());

        // power family needs p
        let text = BASE.replace("temporary = \"linear\"", "temporary = \"power\"");
        assert!(RunConfig::parse(&text).is_err());

        // unknown family
        let text = BASE.replace("temporary = \"linear\"", "temporary = \"quadratic\"");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("quadratic"), "{err}");
    }

    #[test]
    fn sim_section_parsed_and_validated() {
        let text = format!(
            "{BASE}\n[sim]\nn_paths = 1000\nn_steps = 100\nseed = 7\nscheme = \"euler-maruyama\"\ntrajectory = \"solved\"\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let sim = cfg.sim.unwrap();
        assert_eq!(sim.config.seed, 7);
        assert_eq!(sim.config.scheme, Scheme::EulerMaruyama);
        assert_eq!(sim.trajectory, SimTrajectory::Solved);
        assert_eq!(sim.refinement, vec![200, 400, 800]);

        let bad = format!("{BASE}\n[sim]\nn_paths = 10\nn_steps = 100\nseed = 1\nscheme = \"magic\"\n");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn invalid_numbers_rejected() {
        let text = BASE.replace("sigma = 0.2", "sigma = -0.2");
        assert!(RunConfig::parse(&text).is_err());
        let text = BASE.replace("horizon = 1.0", "horizon = 0.0");
        assert!(RunConfig::parse(&text).is_err());
    }
}
