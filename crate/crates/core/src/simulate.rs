//! Monte Carlo evaluation of feedback policies with reflection at a band.
//!
//! Each path is an Euler-Maruyama discretization of the liquid wealth `X`
//! and `ln Y`. Whenever the illiquid fraction leaves the band it is pushed
//! back onto the nearest edge by the minimal trade at the proportional
//! costs. Discounted utility of consumption is accumulated by the left
//! endpoint rule.
//!
//! Under the optimal policy `U(C*) = kappa(p) V` with
//! `kappa(p) = b1 n(q(p)) / (R b4)`, so
//! `d/dt E[e^{-delta t} V_t] = -E[kappa(P_t) e^{-delta t} V_t]` and the value
//! left beyond the horizon is at most `|V_0| exp(-kappa_min T)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Costs, MarketParams};
use crate::policy::{project_to_band, PolicySurface, Position};

/// Default number of `p` nodes in the tabulated optimal policy.
pub const TABLE_POINTS: usize = 4097;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Horizon in years; `None` sizes it from the truncation bound.
    pub horizon: Option<f64>,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Target for `truncation_bound / |V|` when the horizon is sized automatically.
    pub truncation_rel: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { horizon: None, dt: 5e-4, paths: 100_000, seed: 0, antithetic: true, truncation_rel: 1e-3 }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {}", self.dt)));
        }
        if self.paths == 0 {
            return Err(Error::InvalidParams("at least one path is required".into()));
        }
        if self.antithetic && self.paths % 2 == 1 {
            return Err(Error::InvalidParams("antithetic sampling needs an even path count".into()));
        }
        if !(self.truncation_rel > 0.0 && self.truncation_rel < 1.0) {
            return Err(Error::InvalidParams("truncation_rel must lie in (0, 1)".into()));
        }
        if let Some(t) = self.horizon {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidParams(format!("horizon must be positive, got {t}")));
            }
            let k = t / self.dt;
            if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                return Err(Error::InvalidParams(format!("horizon {t} is not a multiple of dt {}", self.dt)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimDiagnostics {
    pub steps_per_path: u64,
    /// Steps at which a purchase was needed.
    pub buy_hits: u64,
    pub sell_hits: u64,
    pub solvency_violations: u64,
    /// Largest distance of the fraction outside the band before projection.
    pub max_overshoot: f64,
}

impl SimDiagnostics {
    fn merge(self, o: Self) -> Self {
        Self {
            steps_per_path: self.steps_per_path.max(o.steps_per_path),
            buy_hits: self.buy_hits + o.buy_hits,
            sell_hits: self.sell_hits + o.sell_hits,
            solvency_violations: self.solvency_violations + o.solvency_violations,
            max_overshoot: self.max_overshoot.max(o.max_overshoot),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub estimate: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub horizon: f64,
    pub paths: usize,
    /// Bound on the expected discounted value beyond the horizon (optimal policy only).
    pub truncation_bound: Option<f64>,
    pub diagnostics: SimDiagnostics,
}

/// Consumption and liquid investment per unit of paper wealth, and the no-trade band.
pub trait FeedbackPolicy: Sync {
    fn band(&self) -> (f64, f64);
    /// `(C / w, Pi / w)` at fraction `p` inside the band.
    fn controls(&self, p: f64) -> (f64, f64);
}

/// Optimal policy tabulated on a uniform `p` grid over the wedge.
#[derive(Debug, Clone)]
pub struct TabulatedPolicy {
    lo: f64,
    hi: f64,
    /// Nodes per unit of `p`.
    scale: f64,
    consumption: Vec<f64>,
    liquid: Vec<f64>,
}

impl TabulatedPolicy {
    pub fn optimal(surface: &PolicySurface, market: &MarketParams, points: usize) -> Result<Self> {
        surface.check_market(market)?;
        let points = points.max(2);
        let (lo, hi) = (surface.p_star, surface.p_upper);
        let rows = (0..points)
            .into_par_iter()
            .map(|i| {
                let p = lo + (hi - lo) * i as f64 / (points - 1) as f64;
                Ok((surface.consumption_rate(p)?, surface.liquid_weight(p, market)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let (consumption, liquid) = rows.into_iter().unzip();
        let scale = (points - 1) as f64 / (hi - lo);
        Ok(Self { lo, hi, scale, consumption, liquid })
    }
}

impl FeedbackPolicy for TabulatedPolicy {
    fn band(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn controls(&self, p: f64) -> (f64, f64) {
        let n = self.consumption.len();
        let s = ((p - self.lo) * self.scale).clamp(0.0, (n - 1) as f64);
        let k = (s as usize).min(n - 2);
        let t = s - k as f64;
        let lerp = |v: &[f64]| v[k] + t * (v[k + 1] - v[k]);
        (lerp(&self.consumption), lerp(&self.liquid))
    }
}

/// Constant consumption rate and liquid weight, with a fixed band for the illiquid fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantPolicy {
    pub consumption: f64,
    pub liquid_weight: f64,
    pub band: (f64, f64),
}

impl FeedbackPolicy for ConstantPolicy {
    fn band(&self) -> (f64, f64) {
        self.band
    }

    fn controls(&self, _p: f64) -> (f64, f64) {
        (self.consumption, self.liquid_weight)
    }
}

/// Smallest `U(C*)/V` over the wedge, `b1 min n / (R b4)`.
pub fn kappa_min(surface: &PolicySurface) -> f64 {
    let n_min = surface.solution.path.samples.iter().map(|s| s.n).fold(f64::INFINITY, f64::min);
    surface.aux.b1 * n_min / (surface.aux.risk_aversion * surface.aux.b4)
}

/// Bound on `|E[e^{-delta T} V(state_T)]|` when starting from value `value`.
pub fn truncation_bound(surface: &PolicySurface, value: f64, horizon: f64) -> f64 {
    value.abs() * (-kappa_min(surface) * horizon).exp()
}

/// Smallest multiple of `dt` with truncation bound below `rel |V|`.
pub fn horizon_for(surface: &PolicySurface, rel: f64, dt: f64) -> f64 {
    let t = (1.0 / rel).ln() / kappa_min(surface);
    (t / dt).ceil() * dt
}

/// One row of a path dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub path: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub p: f64,
    pub consumption: f64,
}

#[derive(Clone, Copy)]
struct State {
    x: f64,
    y: f64,
    theta: f64,
    utility: f64,
    alive: bool,
}

#[derive(Clone, Copy)]
struct Snapshot {
    x: f64,
    y: f64,
    theta: f64,
    p: f64,
    c: f64,
}

struct Stepper<'a, P: FeedbackPolicy> {
    policy: &'a P,
    costs: Costs,
    lo: f64,
    hi: f64,
    dt: f64,
    sqrt_dt: f64,
    r: f64,
    excess: f64,
    sigma: f64,
    y_drift: f64,
    eta: f64,
    rho: f64,
    rho_bar: f64,
    one_m_r: f64,
}

impl<P: FeedbackPolicy> Stepper<'_, P> {
    /// Projects, consumes and advances one step; returns the projected state with `p` and `C` before the move.
    fn step(&self, s: &mut State, disc: f64, z1: f64, z2: f64, d: &mut SimDiagnostics) -> Snapshot {
        let mut w = s.x + s.y * s.theta;
        let mut p = s.y * s.theta / w;
        if p < self.lo || p > self.hi {
            let out = if p < self.lo { self.lo - p } else { p - self.hi };
            d.max_overshoot = d.max_overshoot.max(out);
            if p < self.lo {
                d.buy_hits += 1;
            } else {
                d.sell_hits += 1;
            }
            let pos = Position { x: s.x, y: s.y, theta: s.theta };
            let after = project_to_band(&pos, &self.costs, self.lo, self.hi).after;
            s.x = after.x;
            s.theta = after.theta;
            w = s.x + s.y * s.theta;
            p = (s.y * s.theta / w).clamp(self.lo, self.hi);
        }
        let (c_rate, pi_rate) = self.policy.controls(p);
        let c = c_rate * w;
        let pi = pi_rate * w;
        let snap = Snapshot { x: s.x, y: s.y, theta: s.theta, p, c };
        let u = if self.one_m_r == 0.5 { c.sqrt() } else { c.powf(self.one_m_r) };
        s.utility += disc * u / self.one_m_r * self.dt;
        s.x += (self.excess * pi + self.r * s.x - c) * self.dt + self.sigma * pi * self.sqrt_dt * z1;
        s.y *= (self.y_drift * self.dt + self.eta * self.sqrt_dt * (self.rho * z1 + self.rho_bar * z2)).exp();
        let liq = Position { x: s.x, y: s.y, theta: s.theta }.liquidation_value(&self.costs);
        if !(liq >= 0.0) || !s.x.is_finite() {
            d.solvency_violations += 1;
            s.alive = false;
        }
        snap
    }
}

struct Run<'a, P: FeedbackPolicy> {
    stepper: Stepper<'a, P>,
    start: Position,
    steps: u64,
    decay: f64,
    seed: u64,
    antithetic: bool,
}

impl<P: FeedbackPolicy> Run<'_, P> {
    /// Simulates sample `k` (a pair when antithetic); returns the per-sample mean utility.
    fn sample(&self, k: usize, mut dump: Option<&mut Vec<PathRow>>, stride: u64) -> (f64, SimDiagnostics) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        let width = if self.antithetic { 2 } else { 1 };
        let init = State { x: self.start.x, y: self.start.y, theta: self.start.theta, utility: 0.0, alive: true };
        let mut st = [init; 2];
        let mut d = SimDiagnostics { steps_per_path: self.steps, ..Default::default() };
        let mut disc = 1.0;
        for i in 0..self.steps {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            for (j, s) in st.iter_mut().take(width).enumerate() {
                if !s.alive {
                    continue;
                }
                let sign = if j == 0 { 1.0 } else { -1.0 };
                let snap = self.stepper.step(s, disc, sign * z1, sign * z2, &mut d);
                if let Some(rows) = dump.as_deref_mut() {
                    if i % stride == 0 {
                        rows.push(PathRow {
                            path: width * k + j,
                            t: i as f64 * self.stepper.dt,
                            x: snap.x,
                            y: snap.y,
                            theta: snap.theta,
                            p: snap.p,
                            consumption: snap.c,
                        });
                    }
                }
            }
            disc *= self.decay;
        }
        let total: f64 = st.iter().take(width).map(|s| s.utility).sum();
        (total / width as f64, d)
    }
}

fn build_run<'a, P: FeedbackPolicy>(
    pos: &Position,
    policy: &'a P,
    market: &MarketParams,
    cfg: &SimConfig,
    horizon: f64,
) -> Result<Run<'a, P>> {
    market.validate()?;
    let costs = market.costs()?;
    pos.check(&costs)?;
    let (lo, hi) = policy.band();
    let start = project_to_band(pos, &costs, lo, hi).after;
    let stepper = Stepper {
        policy,
        costs,
        lo,
        hi,
        dt: cfg.dt,
        sqrt_dt: cfg.dt.sqrt(),
        r: market.r,
        excess: market.mu - market.r,
        sigma: market.sigma,
        y_drift: market.alpha - 0.5 * market.eta * market.eta,
        eta: market.eta,
        rho: market.rho,
        rho_bar: (1.0 - market.rho * market.rho).sqrt(),
        one_m_r: 1.0 - market.risk_aversion,
    };
    Ok(Run {
        stepper,
        start,
        steps: (horizon / cfg.dt).round() as u64,
        decay: (-market.delta * cfg.dt).exp(),
        seed: cfg.seed,
        antithetic: cfg.antithetic,
    })
}

/// Pairwise summation, independent of how the values were produced.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Estimates expected discounted utility of `policy` from `pos` over `horizon`.
pub fn simulate_policy<P: FeedbackPolicy>(
    pos: &Position,
    policy: &P,
    market: &MarketParams,
    cfg: &SimConfig,
    horizon: f64,
) -> Result<SimResult> {
    cfg.validate()?;
    let run = build_run(pos, policy, market, cfg, horizon)?;
    let samples = if cfg.antithetic { cfg.paths / 2 } else { cfg.paths };
    let out: Vec<(f64, SimDiagnostics)> = (0..samples).into_par_iter().map(|k| run.sample(k, None, 1)).collect();
    let values: Vec<f64> = out.iter().map(|o| o.0).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite path utility".into()));
    }
    let diagnostics = out.iter().fold(SimDiagnostics::default(), |a, o| a.merge(o.1));
    let m = values.len() as f64;
    let mean = pairwise_sum(&values) / m;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if values.len() > 1 { pairwise_sum(&dev) / (m - 1.0) } else { f64::INFINITY };
    let se = (var / m).sqrt();
    Ok(SimResult {
        estimate: mean,
        std_error: se,
        ci95: (mean - 1.96 * se, mean + 1.96 * se),
        horizon,
        paths: cfg.paths,
        truncation_bound: None,
        diagnostics,
    })
}

/// Simulates the tabulated optimal policy, sizing the horizon from the truncation bound when unset.
pub fn simulate_optimal(
    pos: &Position,
    surface: &PolicySurface,
    market: &MarketParams,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    let horizon = cfg.horizon.unwrap_or_else(|| horizon_for(surface, cfg.truncation_rel, cfg.dt));
    let policy = TabulatedPolicy::optimal(surface, market, TABLE_POINTS)?;
    let start = surface.rebalance_to_wedge(pos)?.after;
    let value = surface.value_function(&start)?;
    let mut res = simulate_policy(pos, &policy, market, cfg, horizon)?;
    res.truncation_bound = Some(truncation_bound(surface, value, horizon));
    Ok(res)
}

/// States of the first `count` paths every `stride` steps, replaying the same random streams.
pub fn dump_paths<P: FeedbackPolicy>(
    pos: &Position,
    policy: &P,
    market: &MarketParams,
    cfg: &SimConfig,
    horizon: f64,
    count: usize,
    stride: u64,
) -> Result<Vec<PathRow>> {
    cfg.validate()?;
    let run = build_run(pos, policy, market, cfg, horizon)?;
    let width = if cfg.antithetic { 2 } else { 1 };
    let samples = count.min(cfg.paths).div_ceil(width);
    let mut rows = Vec::new();
    for k in 0..samples {
        run.sample(k, Some(&mut rows), stride.max(1));
    }
    rows.retain(|r| r.path < count);
    rows.sort_by(|a, b| a.path.cmp(&b.path).then(a.t.total_cmp(&b.t)));
    Ok(rows)
}
