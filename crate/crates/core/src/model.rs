//! Market parameters, the reduced parameter set and case classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp_solver::{self, ShootTolerances};
use crate::ode_field::FieldContext;

/// `b2` within this distance of 1 is rejected as degenerate.
pub const DEFAULT_B2_TOLERANCE: f64 = 1e-9;

/// Raw market description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eta: f64,
    pub rho: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub risk_aversion: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Proportional costs: pay `1 + lambda` per unit bought, receive `1 - gamma` per unit sold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    pub lambda: f64,
    pub gamma: f64,
}

impl Costs {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
            return Err(Error::InvalidParams(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if lambda + gamma <= 0.0 {
            return Err(Error::InvalidParams("lambda + gamma must be positive".into()));
        }
        Ok(Self { lambda, gamma })
    }

    /// Purchase-only costs with the given round-trip cost.
    pub fn from_xi(xi: f64) -> Result<Self> {
        Self::new(xi, 0.0)
    }

    /// Round-trip cost `(lambda + gamma) / (1 - gamma)`.
    pub fn xi(&self) -> f64 {
        (self.lambda + self.gamma) / (1.0 - self.gamma)
    }
}

impl MarketParams {
    pub fn costs(&self) -> Result<Costs> {
        Costs::new(self.lambda, self.gamma)
    }

    /// Sharpe ratio of the liquid risky asset.
    pub fn beta(&self) -> f64 {
        (self.mu - self.r) / self.sigma
    }

    /// Sharpe ratio of the illiquid asset.
    pub fn nu(&self) -> f64 {
        (self.alpha - self.r) / self.eta
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.r,
            self.mu,
            self.sigma,
            self.alpha,
            self.eta,
            self.rho,
            self.delta,
            self.risk_aversion,
            self.lambda,
            self.gamma,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("all market parameters must be finite".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParams(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.eta <= 0.0 {
            return Err(Error::InvalidParams(format!("eta must be positive, got {}", self.eta)));
        }
        if self.rho.abs() >= 1.0 {
            return Err(Error::InvalidParams(format!("|rho| must be < 1, got {}", self.rho)));
        }
        check_risk_aversion(self.risk_aversion)?;
        self.costs()?;
        Ok(())
    }

    /// Builds raw parameters that reproduce a reduced parameter set.
    ///
    /// `r`, `rho` and `sigma` are free; `eta`, `mu`, `alpha` and `delta` are
    /// solved for. The liquid Sharpe ratio takes the root
    /// `beta = eta R (rho + sqrt((b2 - 1)(1 - rho^2)))`.
    pub fn realize(aux: &AuxParams, costs: Costs, r: f64, rho: f64, sigma: f64) -> Result<Self> {
        if rho.abs() >= 1.0 || sigma <= 0.0 {
            return Err(Error::InvalidParams("realization needs |rho| < 1 and sigma > 0".into()));
        }
        let big_r = aux.risk_aversion;
        let one_m_rho2 = 1.0 - rho * rho;
        let eta = (2.0 / (aux.b4 * one_m_rho2)).sqrt();
        let beta = eta * big_r * (rho + ((aux.b2 - 1.0) * one_m_rho2).sqrt());
        let nu = aux.b3 * eta * one_m_rho2 / 2.0 + beta * rho;
        let delta = aux.b1 * eta * eta * one_m_rho2 / 2.0
            + r * (1.0 - big_r)
            + beta * beta * (1.0 - big_r) / (2.0 * big_r);
        let p = MarketParams {
            r,
            mu: r + beta * sigma,
            sigma,
            alpha: r + nu * eta,
            eta,
            rho,
            delta,
            risk_aversion: big_r,
            lambda: costs.lambda,
            gamma: costs.gamma,
        };
        p.validate()?;
        Ok(p)
    }
}

fn check_risk_aversion(big_r: f64) -> Result<()> {
    if !(big_r.is_finite() && big_r > 0.0) {
        return Err(Error::InvalidParams(format!("R must be positive, got {big_r}")));
    }
    if big_r == 1.0 {
        return Err(Error::InvalidParams("R = 1 (logarithmic utility) is not supported".into()));
    }
    Ok(())
}

/// The reduced parameter set the free boundary problem depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxParams {
    #[serde(rename = "R")]
    pub risk_aversion: f64,
    pub beta: Option<f64>,
    pub nu: Option<f64>,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub xi: f64,
    pub q_m: f64,
    pub m_m: f64,
}

/// Reduced parameters from raw market parameters.
pub fn derive_aux(p: &MarketParams) -> Result<AuxParams> {
    p.validate()?;
    let big_r = p.risk_aversion;
    let beta = p.beta();
    let nu = p.nu();
    let one_m_rho2 = 1.0 - p.rho * p.rho;
    let eta2 = p.eta * p.eta;
    let b1 = 2.0 * (p.delta - p.r * (1.0 - big_r) - beta * beta * (1.0 - big_r) / (2.0 * big_r))
        / (eta2 * one_m_rho2);
    let b2 = (beta * beta - 2.0 * big_r * p.eta * p.rho * beta + eta2 * big_r * big_r)
        / (eta2 * big_r * big_r * one_m_rho2);
    let b3 = 2.0 * (nu - beta * p.rho) / (p.eta * one_m_rho2);
    let b4 = 2.0 / (eta2 * one_m_rho2);
    let mut aux = AuxParams::from_reduced(big_r, b1, b2, b3, b4, p.costs()?.xi())?;
    aux.beta = Some(beta);
    aux.nu = Some(nu);
    Ok(aux)
}

impl AuxParams {
    /// Validates and completes a reduced parameter set.
    pub fn from_reduced(big_r: f64, b1: f64, b2: f64, b3: f64, b4: f64, xi: f64) -> Result<Self> {
        Self::from_reduced_with(big_r, b1, b2, b3, b4, xi, DEFAULT_B2_TOLERANCE)
    }

    /// As [`AuxParams::from_reduced`], with an explicit tolerance: `b2 <= 1 + b2_tolerance`
    /// is rejected as degenerate.
    pub fn from_reduced_with(
        big_r: f64,
        b1: f64,
        b2: f64,
        b3: f64,
        b4: f64,
        xi: f64,
        b2_tolerance: f64,
    ) -> Result<Self> {
        check_risk_aversion(big_r)?;
        if ![b1, b2, b3, b4, xi].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("reduced parameters must be finite".into()));
        }
        if b1 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "b1 must be positive (the problem without the illiquid asset is ill-posed), got {b1}"
            )));
        }
        if b2 <= 1.0 {
            return Err(Error::InvalidParams(format!("b2 must exceed 1, got {b2}")));
        }
        if b2 <= 1.0 + b2_tolerance {
            return Err(Error::InvalidParams(format!(
                "b2 = {b2} is within {b2_tolerance:e} of 1 (degenerate correlation)"
            )));
        }
        if b3 <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "b3 must be positive (illiquid asset with positive effective Sharpe ratio), got {b3}"
            )));
        }
        if b4 <= 0.0 {
            return Err(Error::InvalidParams(format!("b4 must be positive, got {b4}")));
        }
        if xi <= 0.0 {
            return Err(Error::InvalidParams(format!("xi must be positive, got {xi}")));
        }
        let q_m = b3 / (2.0 * big_r);
        let m_m = 1.0 - b3 * b3 * (1.0 - big_r) / (4.0 * b1 * big_r);
        Ok(Self { risk_aversion: big_r, beta: None, nu: None, b1, b2, b3, b4, xi, q_m, m_m })
    }

    pub fn field(&self) -> FieldContext {
        FieldContext::new(self.risk_aversion, self.b1, self.b2, self.b3)
    }

    pub fn with_xi(&self, xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi > 0.0) {
            return Err(Error::InvalidParams(format!("xi must be positive, got {xi}")));
        }
        Ok(Self { xi, ..*self })
    }

    /// Scaling constant of the value function, `(b1 / (R b4))^(-R)`.
    pub fn upsilon(&self) -> f64 {
        (self.b1 / (self.risk_aversion * self.b4)).powf(-self.risk_aversion)
    }
}

/// The four parameter regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// `R < 1`, `m_M >= 0`.
    Case1,
    /// `R < 1`, `m_M < 0`, `l(1) <= 0`: ill-posed.
    Case2,
    /// `R < 1`, `m_M < 0`, `l(1) > 0`: well-posed above a critical cost.
    Case3,
    /// `R > 1`.
    Case4,
}

impl Case {
    /// Short label with the well-posedness tag: W, I or CW.
    pub fn label(&self) -> &'static str {
        match self {
            Case::Case1 => "Case1-W",
            Case::Case2 => "Case2-I",
            Case::Case3 => "Case3-CW",
            Case::Case4 => "Case4-W",
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            Case::Case1 => 1,
            Case::Case2 => 2,
            Case::Case3 => 3,
            Case::Case4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: Case,
    pub m_m: f64,
    pub q_m: f64,
    pub m_at_one: f64,
    pub ell_at_one: f64,
    /// Smaller root of `m`, when `m_M <= 0`.
    pub p_minus: Option<f64>,
    /// Larger root of `m`, when `m_M <= 0`.
    pub p_plus: Option<f64>,
    /// Critical round-trip cost, Case 3 only.
    pub xi_bar: Option<f64>,
    pub posed_for_given_xi: bool,
}

/// Classifies the parameter regime; computes the critical cost in Case 3.
pub fn classify(aux: &AuxParams) -> Result<CaseReport> {
    classify_with(aux, &ShootTolerances::default())
}

pub fn classify_with(aux: &AuxParams, tol: &ShootTolerances) -> Result<CaseReport> {
    let ctx = aux.field();
    let big_r = aux.risk_aversion;
    let m_at_one = ctx.m(1.0);
    let ell_at_one = ctx.ell(1.0)?;
    let (p_minus, p_plus) = match ctx.roots_of_m() {
        Some((a, b)) if aux.m_m <= 0.0 => (Some(a), Some(b)),
        _ => (None, None),
    };
    let case = if big_r > 1.0 {
        Case::Case4
    } else if aux.m_m >= 0.0 {
        Case::Case1
    } else if ell_at_one <= 0.0 {
        Case::Case2
    } else {
        Case::Case3
    };
    let (xi_bar, posed) = match case {
        Case::Case1 | Case::Case4 => (None, true),
        Case::Case2 => (None, false),
        Case::Case3 => {
            let xb = fbp_solver::critical_xi(&ctx, tol)?;
            (Some(xb), aux.xi > xb)
        }
    };
    Ok(CaseReport {
        case,
        m_m: aux.m_m,
        q_m: aux.q_m,
        m_at_one,
        ell_at_one,
        p_minus,
        p_plus,
        xi_bar,
        posed_for_given_xi: posed,
    })
}
