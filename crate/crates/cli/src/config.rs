//! Run configuration read from `--params`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wedge_core::fbp_solver::ShootTolerances;
use wedge_core::model::{derive_aux, AuxParams, Costs, MarketParams};
use wedge_core::policy::Position;
use wedge_core::simulate::SimConfig;
use wedge_core::verify::SweepSpec;

use crate::CliError;

/// Reduced parameters given directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reduced {
    #[serde(rename = "R")]
    pub risk_aversion: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    #[serde(default = "one")]
    pub b4: f64,
    /// Round-trip cost; taken as a pure purchase cost (`lambda = xi`, `gamma = 0`).
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// Free choices used to build raw parameters from reduced ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Realize {
    pub r: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl Default for Realize {
    fn default() -> Self {
        Self { r: 0.02, rho: 0.0, sigma: 0.25 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced: Option<Reduced>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ShootTolerances>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realize: Option<Realize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

/// Everything derived from a validated configuration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub aux: AuxParams,
    pub costs: Costs,
    /// Raw parameters as given, or realized from the reduced ones.
    pub market: Option<MarketParams>,
    /// True when `market` was given rather than realized.
    pub market_given: bool,
    pub tol: ShootTolerances,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn problem(&self, tol_override: Option<f64>) -> Result<Problem, CliError> {
        let mut tol = self.tolerances.unwrap_or_default();
        if let Some(t) = tol_override {
            if !(t.is_finite() && t > 0.0) {
                return Err(CliError::Input(format!("--tol must be positive, got {t}")));
            }
            tol.rtol = t;
            tol.atol = 1e-2 * t;
        }
        match (&self.market, &self.reduced) {
            (Some(m), None) => {
                if self.realize.is_some() {
                    return Err(CliError::Input("`realize` only applies to reduced parameters".into()));
                }
                let aux = derive_aux(m)?;
                Ok(Problem { aux, costs: m.costs()?, market: Some(*m), market_given: true, tol })
            }
            (None, Some(r)) => {
                let costs = match (r.xi, r.lambda, r.gamma) {
                    (Some(xi), None, None) => Costs::from_xi(xi)?,
                    (None, Some(l), g) => Costs::new(l, g.unwrap_or(0.0))?,
                    (None, None, Some(g)) => Costs::new(0.0, g)?,
                    (None, None, None) => {
                        return Err(CliError::Input("reduced parameters need `xi` or `lambda`/`gamma`".into()))
                    }
                    _ => return Err(CliError::Input("give either `xi` or `lambda`/`gamma`, not both".into())),
                };
                let aux = AuxParams::from_reduced(r.risk_aversion, r.b1, r.b2, r.b3, r.b4, costs.xi())?;
                let re = self.realize.unwrap_or_default();
                let market = MarketParams::realize(&aux, costs, re.r, re.rho, re.sigma)?;
                Ok(Problem { aux, costs, market: Some(market), market_given: false, tol })
            }
            (Some(_), Some(_)) => Err(CliError::Input("give either `market` or `reduced`, not both".into())),
            (None, None) => Err(CliError::Input("configuration needs a `market` or `reduced` section".into())),
        }
    }
}

/// One swept coordinate: `name:lin|log:start:stop:count`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub name: String,
    pub values: Vec<f64>,
}

impl GridSpec {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let bad = |m: &str| CliError::Input(format!("bad grid `{spec}`: {m}"));
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 5 {
            return Err(bad("expected name:lin|log:start:stop:count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("start and stop must be numbers"));
        let (a, b) = (num(parts[2])?, num(parts[3])?);
        let n: usize = parts[4].parse().map_err(|_| bad("count must be a non-negative integer"))?;
        if n == 0 {
            return Err(bad("empty grid"));
        }
        if !(a.is_finite() && b.is_finite()) {
            return Err(bad("bounds must be finite"));
        }
        let t = |i: usize| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let values = match parts[1] {
            "lin" => (0..n).map(|i| a + (b - a) * t(i)).collect(),
            "log" => {
                if a <= 0.0 || b <= 0.0 {
                    return Err(bad("log grids need positive bounds"));
                }
                (0..n).map(|i| (a.ln() + (b.ln() - a.ln()) * t(i)).exp()).collect()
            }
            _ => return Err(bad("spacing must be `lin` or `log`")),
        };
        Ok(Self { name: parts[0].to_string(), values })
    }
}
