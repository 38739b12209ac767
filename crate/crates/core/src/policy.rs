//! Value function, certainty equivalent and optimal controls from a solved
//! free boundary problem.
//!
//! Inside the wedge everything is parametrized by `q`. With
//! `J(q) = I(q) - ln(1 + lambda)` the paper-wealth fraction is
//! `p(q) = q / (q + e^{-J(q)} (1 - q))`, which is smooth through `q = 1`.
//! Writing `rho = (1 - p)/(1 - q) = p e^{-J} / q`,
//!
//! * `G = n^{-R} rho^{1-R}`
//! * `G - p G'/(1-R) = n^{-R} rho^{-R}`
//! * `G' = (1-R) n^{-R} rho^{-R} (rho - 1) / p`
//!
//! and `G''` follows from
//! `p^2 G'' + 2RpG' - R(1-R)G = [(1-R)G - pG']^2 / (G T)` with
//! `T = (1-R)[(1-R) - R(1-q)F] / (R[((1-R)q + R)F - (1-R)])`, `F = n'/n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp_solver::{self, FreeBoundarySolution, ShootTolerances};
use crate::model::{derive_aux, AuxParams, Costs, MarketParams};
use crate::ode_field::FieldContext;

/// Half-width of the window around `p = 1` mapped directly to `q = 1`.
pub const P1_WINDOW: f64 = 1e-9;

/// Holdings: `x` in cash and the liquid asset, `theta` units of the illiquid asset at price `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    /// Paper wealth `x + y theta`.
    pub fn wealth(&self) -> f64 {
        self.x + self.y * self.theta
    }

    /// Fraction of paper wealth in the illiquid asset.
    pub fn fraction(&self) -> f64 {
        self.y * self.theta / self.wealth()
    }

    /// Liquidation value `x + theta+ y (1-gamma) - theta- y (1+lambda)`.
    pub fn liquidation_value(&self, costs: &Costs) -> f64 {
        if self.theta >= 0.0 {
            self.x + self.theta * self.y * (1.0 - costs.gamma)
        } else {
            self.x + self.theta * self.y * (1.0 + costs.lambda)
        }
    }

    pub fn check(&self, costs: &Costs) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()) {
            return Err(Error::InvalidParams("position must be finite".into()));
        }
        if self.y <= 0.0 {
            return Err(Error::InvalidParams(format!("price y must be positive, got {}", self.y)));
        }
        let liq = self.liquidation_value(costs);
        if liq < 0.0 {
            return Err(Error::Insolvent(format!("liquidation value {liq:e} is negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Buy,
    NoTrade,
    Sell,
}

/// `G` and its first two derivatives at one `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GValue {
    pub p: f64,
    pub g: f64,
    pub g1: f64,
    pub g2: f64,
    pub region: Region,
    /// Matching `q` inside the wedge.
    pub q: Option<f64>,
}

/// Inside-wedge quantities at one `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WedgePoint {
    pub q: f64,
    pub p: f64,
    pub n: f64,
    /// `(1-p)/(1-q)`.
    pub rho: f64,
    pub g: f64,
    pub g1: f64,
    pub g2: f64,
    /// `G - p G'/(1-R)`.
    pub h: f64,
    /// `p^2 G'' + 2RpG' - R(1-R)G`.
    pub curvature: f64,
}

/// Optimal consumption and liquid-asset investment at a position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub consumption: f64,
    pub liquid_investment: f64,
}

/// Trade returning a position to the closed wedge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rebalance {
    /// Units of the illiquid asset bought (positive) or sold (negative).
    pub units: f64,
    pub after: Position,
}

/// `(p_*, p^*)` from the `q` boundaries.
pub fn wedge_in_p(sol: &FreeBoundarySolution, costs: &Costs) -> (f64, f64) {
    let (lambda, gamma) = (costs.lambda, costs.gamma);
    (
        sol.q_star / (1.0 + lambda * (1.0 - sol.q_star)),
        sol.q_upper / (1.0 - gamma * (1.0 - sol.q_upper)),
    )
}

/// Minimal trade, charged at the proportional costs, that brings the
/// illiquid fraction into `[lo, hi]`. Positions with `w <= 0` are left alone.
pub fn project_to_band(pos: &Position, costs: &Costs, lo: f64, hi: f64) -> Rebalance {
    let Costs { lambda, gamma } = *costs;
    let (x, y, theta) = (pos.x, pos.y, pos.theta);
    let w = pos.wealth();
    if w <= 0.0 {
        return Rebalance { units: 0.0, after: *pos };
    }
    let p = y * theta / w;
    let units = if p < lo {
        (x * lo - (1.0 - lo) * y * theta) / (y * (1.0 + lambda * lo))
    } else if p > hi {
        -((1.0 - hi) * y * theta - hi * x) / (y * (1.0 - gamma * hi))
    } else {
        0.0
    };
    let cash = if units >= 0.0 { (1.0 + lambda) * y * units } else { (1.0 - gamma) * y * units };
    Rebalance { units, after: Position { x: x - cash, y, theta: theta + units } }
}

/// Value of the problem without the illiquid asset, `Upsilon x^{1-R} / (1-R)`.
pub fn merton_value(x: f64, aux: &AuxParams) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidParams(format!("wealth must be positive, got {x}")));
    }
    let big_r = aux.risk_aversion;
    Ok(aux.upsilon() * x.powf(1.0 - big_r) / (1.0 - big_r))
}

/// The solved problem together with everything needed to evaluate `G`.
#[derive(Debug, Clone)]
pub struct PolicySurface {
    pub aux: AuxParams,
    pub solution: FreeBoundarySolution,
    pub p_star: f64,
    pub p_upper: f64,
    ctx: FieldContext,
    /// `(q, p)` at the stored path nodes.
    nodes: Vec<(f64, f64)>,
}

impl PolicySurface {
    /// Solves the free boundary problem for `aux` at the costs `costs`.
    pub fn build(aux: &AuxParams, costs: Costs, tol: &ShootTolerances) -> Result<Self> {
        let ctx = aux.field();
        let sol = fbp_solver::solve_boundaries(&ctx, costs, tol)?;
        Self::from_solution(aux, sol)
    }

    pub fn from_solution(aux: &AuxParams, solution: FreeBoundarySolution) -> Result<Self> {
        let aux = aux.with_xi(solution.xi)?;
        let ctx = aux.field();
        let (p_star, p_upper) = wedge_in_p(&solution, &solution.costs);
        let mut surf = Self { aux, solution, p_star, p_upper, ctx, nodes: Vec::new() };
        let nodes = surf
            .solution
            .path
            .samples
            .iter()
            .map(|s| (s.q, surf.p_from_i(s.q, s.i)))
            .collect();
        surf.nodes = nodes;
        Ok(surf)
    }

    pub fn costs(&self) -> Costs {
        self.solution.costs
    }

    pub fn field(&self) -> &FieldContext {
        &self.ctx
    }

    pub fn region(&self, p: f64) -> Region {
        if p < self.p_star {
            Region::Buy
        } else if p > self.p_upper {
            Region::Sell
        } else {
            Region::NoTrade
        }
    }

    fn p_from_i(&self, q: f64, i: f64) -> f64 {
        let e = (self.costs().lambda.ln_1p() - i).exp();
        q / (q + e * (1.0 - q))
    }

    /// `p(q)` on `[q_*, q^*]`.
    pub fn p_of_q(&self, q: f64) -> Result<f64> {
        let i = self.solution.path.i_at(q)?;
        Ok(self.p_from_i(q, i))
    }

    /// Inverse of [`PolicySurface::p_of_q`] on the wedge.
    pub fn q_of_p(&self, p: f64) -> Result<f64> {
        let slack = 1e-12 * self.p_upper.abs().max(1.0);
        if !(p >= self.p_star - slack && p <= self.p_upper + slack) {
            return Err(Error::OutOfDomain(format!(
                "p = {p} outside the wedge [{}, {}]",
                self.p_star, self.p_upper
            )));
        }
        let (q_star, q_upper) = (self.solution.q_star, self.solution.q_upper);
        if (p - 1.0).abs() < P1_WINDOW && q_star <= 1.0 && 1.0 <= q_upper {
            return Ok(1.0);
        }
        if p <= self.p_star {
            return Ok(q_star);
        }
        if p >= self.p_upper {
            return Ok(q_upper);
        }
        let k = self.nodes.partition_point(|&(_, pk)| pk <= p);
        if k == 0 {
            return Ok(q_star);
        }
        if k >= self.nodes.len() {
            return Ok(q_upper);
        }
        let (q0, p0) = self.nodes[k - 1];
        let (q1, p1) = self.nodes[k];
        if p == p0 {
            return Ok(q0);
        }
        fbp_solver::roots::brent(|q| Ok(self.p_of_q(q)? - p), q0, q1, p0 - p, p1 - p, 1e-15, 0.0)
    }

    /// Inside-wedge quantities at `q`.
    pub fn wedge_point(&self, q: f64) -> Result<WedgePoint> {
        let big_r = self.aux.risk_aversion;
        let (n, i) = self.solution.path.eval(q)?;
        let e_m1 = (self.costs().lambda.ln_1p() - i).exp_m1();
        let e = 1.0 + e_m1;
        let p = q / (q + e * (1.0 - q));
        let rho = e / (q + e * (1.0 - q));
        let nr = n.powf(-big_r);
        let h = nr * rho.powf(-big_r);
        let g = h * rho;
        // (rho - 1) / p = e - 1 exactly; this form avoids cancellation near rho = 1.
        let g1 = (1.0 - big_r) * h * e_m1;
        let f = self.ctx.f_field(q, n).value;
        let lin = (1.0 - big_r) * q + big_r;
        let t = (1.0 - big_r) * ((1.0 - big_r) - big_r * (1.0 - q) * f)
            / (big_r * (lin * f - (1.0 - big_r)));
        let curvature = (1.0 - big_r) * (1.0 - big_r) * h * h / (g * t);
        let g2 = (curvature - 2.0 * big_r * p * g1 + big_r * (1.0 - big_r) * g) / (p * p);
        Ok(WedgePoint { q, p, n, rho, g, g1, g2, h, curvature })
    }

    /// `G(p)`, `G'(p)`, `G''(p)` on `[-1/lambda, 1/gamma]`.
    pub fn g(&self, p: f64) -> Result<GValue> {
        let big_r = self.aux.risk_aversion;
        let Costs { lambda, gamma } = self.costs();
        if !p.is_finite() || (lambda > 0.0 && p < -1.0 / lambda) || (gamma > 0.0 && p > 1.0 / gamma) {
            return Err(Error::OutOfDomain(format!("p = {p} outside the solvency range")));
        }
        match self.region(p) {
            Region::Buy => {
                let a = self.solution.a_star;
                let base = 1.0 + lambda * p;
                Ok(GValue {
                    p,
                    g: a * base.powf(1.0 - big_r),
                    g1: a * (1.0 - big_r) * lambda * base.powf(-big_r),
                    g2: -a * big_r * (1.0 - big_r) * lambda * lambda * base.powf(-big_r - 1.0),
                    region: Region::Buy,
                    q: None,
                })
            }
            Region::Sell => {
                let a = self.solution.a_upper;
                let base = 1.0 - gamma * p;
                Ok(GValue {
                    p,
                    g: a * base.powf(1.0 - big_r),
                    g1: -a * (1.0 - big_r) * gamma * base.powf(-big_r),
                    g2: -a * big_r * (1.0 - big_r) * gamma * gamma * base.powf(-big_r - 1.0),
                    region: Region::Sell,
                    q: None,
                })
            }
            Region::NoTrade => {
                let q = self.q_of_p(p)?;
                let w = self.wedge_point(q)?;
                Ok(GValue { p, g: w.g, g1: w.g1, g2: w.g2, region: Region::NoTrade, q: Some(q) })
            }
        }
    }

    /// `V(x, y, theta) = Upsilon w^{1-R} G(p) / (1-R)`.
    pub fn value_function(&self, pos: &Position) -> Result<f64> {
        pos.check(&self.costs())?;
        let big_r = self.aux.risk_aversion;
        let w = pos.wealth();
        if w <= 0.0 {
            return Ok(if big_r < 1.0 { 0.0 } else { f64::NEG_INFINITY });
        }
        let g = self.g(pos.fraction())?.g;
        Ok(self.aux.upsilon() * w.powf(1.0 - big_r) * g / (1.0 - big_r))
    }

    /// Liquid wealth equivalent to the position, less the liquid wealth held.
    pub fn certainty_equivalent(&self, pos: &Position) -> Result<f64> {
        pos.check(&self.costs())?;
        let w = pos.wealth();
        if w <= 0.0 {
            return Ok(-pos.x);
        }
        let g = self.g(pos.fraction())?.g;
        Ok(w * g.powf(1.0 / (1.0 - self.aux.risk_aversion)) - pos.x)
    }

    /// Consumption per unit paper wealth at `p` in the wedge.
    pub fn consumption_rate(&self, p: f64) -> Result<f64> {
        let w = self.wedge_point(self.q_of_p(p)?)?;
        Ok(self.aux.b1 / (self.aux.risk_aversion * self.aux.b4) * w.h.powf(-1.0 / self.aux.risk_aversion))
    }

    /// Liquid risky investment per unit paper wealth at `p` in the wedge.
    pub fn liquid_weight(&self, p: f64, market: &MarketParams) -> Result<f64> {
        let w = self.wedge_point(self.q_of_p(p)?)?;
        Ok(self.liquid_weight_at(&w, market))
    }

    fn liquid_weight_at(&self, w: &WedgePoint, market: &MarketParams) -> f64 {
        let big_r = self.aux.risk_aversion;
        let p = w.p;
        let num = market.beta() * (1.0 - big_r) * w.h
            + market.eta
                * market.rho
                * (-big_r * (1.0 - big_r) * p * w.g + big_r * p * (2.0 * p - 1.0) * w.g1
                    - p * p * (1.0 - p) * w.g2);
        -num / (market.sigma * w.curvature)
    }

    /// Checks that `market` reproduces the reduced parameters of this surface.
    pub fn check_market(&self, market: &MarketParams) -> Result<()> {
        let aux = derive_aux(market)?;
        let pairs = [
            (aux.risk_aversion, self.aux.risk_aversion),
            (aux.b1, self.aux.b1),
            (aux.b2, self.aux.b2),
            (aux.b3, self.aux.b3),
            (aux.b4, self.aux.b4),
            (aux.xi, self.aux.xi),
        ];
        for (a, b) in pairs {
            if (a - b).abs() > 1e-9 * b.abs().max(1.0) {
                return Err(Error::InvalidParams(
                    "market parameters do not match the solved reduced parameters".into(),
                ));
            }
        }
        Ok(())
    }

    /// `(C*, Pi*)` at a position inside the closed wedge.
    pub fn feedback_controls(&self, pos: &Position, market: &MarketParams) -> Result<Controls> {
        pos.check(&self.costs())?;
        self.check_market(market)?;
        let wealth = pos.wealth();
        if wealth <= 0.0 {
            return Err(Error::OutOfDomain("zero paper wealth".into()));
        }
        let w = self.wedge_point(self.q_of_p(pos.fraction())?)?;
        let c = self.aux.b1 / (self.aux.risk_aversion * self.aux.b4) * w.h.powf(-1.0 / self.aux.risk_aversion);
        Ok(Controls { consumption: wealth * c, liquid_investment: wealth * self.liquid_weight_at(&w, market) })
    }

    /// Minimal trade moving the position onto the nearest wedge boundary.
    pub fn rebalance_to_wedge(&self, pos: &Position) -> Result<Rebalance> {
        pos.check(&self.costs())?;
        Ok(project_to_band(pos, &self.costs(), self.p_star, self.p_upper))
    }

    /// Terms of the reduced HJB equation at `p`; their sum is `L*V / (Upsilon w^{1-R}/(1-R))`.
    pub fn hjb_terms(&self, gv: &GValue, market: &MarketParams) -> [f64; 7] {
        let big_r = self.aux.risk_aversion;
        let (p, g, g1, g2) = (gv.p, gv.g, gv.g1, gv.g2);
        let h = g - p * g1 / (1.0 - big_r);
        let curv = p * p * g2 + 2.0 * big_r * p * g1 - big_r * (1.0 - big_r) * g;
        let cross = market.beta() * ((1.0 - big_r) * g - p * g1)
            + market.eta
                * market.rho
                * (-big_r * (1.0 - big_r) * p * g + big_r * p * (2.0 * p - 1.0) * g1
                    - p * p * (1.0 - p) * g2);
        [
            self.aux.b1 / self.aux.b4 * h.powf(1.0 - 1.0 / big_r),
            -market.delta * g,
            market.r * (1.0 - p) * ((1.0 - big_r) * g - p * g1),
            market.alpha * ((1.0 - big_r) * p * g + p * (1.0 - p) * g1),
            0.5 * market.eta
                * market.eta
                * (p * p * (1.0 - p) * (1.0 - p) * g2 - 2.0 * big_r * p * p * (1.0 - p) * g1
                    - big_r * (1.0 - big_r) * p * p * g),
            -cross * cross / (2.0 * curv),
            0.0,
        ]
    }

    /// `M V` divided by `Upsilon y w^{-R}`.
    pub fn m_operator(&self, gv: &GValue) -> f64 {
        let big_r = self.aux.risk_aversion;
        let lambda = self.costs().lambda;
        ((1.0 + lambda * gv.p) * gv.g1 - lambda * (1.0 - big_r) * gv.g) / (1.0 - big_r)
    }

    /// `N V` divided by `Upsilon y w^{-R}`.
    pub fn n_operator(&self, gv: &GValue) -> f64 {
        let big_r = self.aux.risk_aversion;
        let gamma = self.costs().gamma;
        -(gamma * (1.0 - big_r) * gv.g + (1.0 - gamma * gv.p) * gv.g1) / (1.0 - big_r)
    }
}
