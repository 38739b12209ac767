//! Verification suites: closed-form identities, HJB residuals and variational
//! inequalities, and comparative statics sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbp_solver::{self, FreeBoundarySolution, ShootTolerances};
use crate::model::{derive_aux, AuxParams, Costs, MarketParams};
use crate::ode_field::FieldContext;
use crate::policy::{PolicySurface, Position, Region};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Largest violation found (0 when the check is a pure ordering test that passed).
    pub worst: f64,
    pub tolerance: f64,
    /// Grid coordinate (q, n or p, or the swept parameter) of the worst case.
    pub location: Option<f64>,
    pub detail: String,
}

impl CheckReport {
    fn from_samples<I>(name: &str, tolerance: f64, detail: &str, samples: I) -> Self
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut worst = 0.0f64;
        let mut location = None;
        let mut nan = false;
        for (loc, err) in samples {
            if err.is_nan() {
                nan = true;
                location = Some(loc);
                break;
            }
            if err > worst || location.is_none() {
                if err >= worst {
                    worst = err;
                    location = Some(loc);
                }
            }
        }
        let passed = !nan && worst <= tolerance;
        CheckReport {
            name: name.to_string(),
            passed,
            worst: if nan { f64::NAN } else { worst },
            tolerance,
            location,
            detail: detail.to_string(),
        }
    }

    fn info(name: &str, detail: String) -> Self {
        CheckReport { name: name.to_string(), passed: true, worst: 0.0, tolerance: 0.0, location: None, detail }
    }

    fn failure(name: &str, detail: String) -> Self {
        CheckReport {
            name: name.to_string(),
            passed: false,
            worst: f64::NAN,
            tolerance: 0.0,
            location: None,
            detail,
        }
    }
}

/// True when every report passed.
pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

fn sorted(mut reports: Vec<CheckReport>) -> Vec<CheckReport> {
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    reports
}

/// Closed-form identities of the field functions on `grid` points.
pub fn run_identity_suite(ctx: &FieldContext, grid: usize) -> Vec<CheckReport> {
    let r = ctx.risk_aversion;
    let b2m1 = ctx.b2 - 1.0;
    let s = ctx.s();
    let lin = |q: f64| (1.0 - r) * q + r;
    let near_pole = |q: f64| ctx.pole().map_or(false, |p| (q - p).abs() < 1e-6);
    let qs: Vec<f64> = linspace(0.01, 3.0, grid).into_iter().filter(|&q| !near_pole(q)).collect();
    let ns = linspace(0.01, 3.0, grid);
    let tol = 1e-12;
    let mut out = Vec::new();

    out.push(CheckReport::from_samples(
        "identity.phi_on_m",
        tol,
        "phi(q, m(q)) = R(1-R)((1-q)^2 - (b2-1))",
        qs.iter().map(|&q| {
            (q, (ctx.phi(q, ctx.m(q)) - r * (1.0 - r) * ((1.0 - q) * (1.0 - q) - b2m1)).abs())
        }),
    ));
    out.push(CheckReport::from_samples(
        "identity.phi_on_ell",
        tol,
        "phi(q, l(q)) = (1-R)(1-q){(1-R)q+R - (b2-1)R^2/((1-R)q+R)}",
        qs.iter().map(|&q| {
            let ell = ctx.ell(q).unwrap_or(f64::NAN);
            let rhs = (1.0 - r) * (1.0 - q) * (lin(q) - b2m1 * r * r / lin(q));
            (q, (ctx.phi(q, ell) - rhs).abs())
        }),
    ));
    let ell1 = ctx.ell(1.0).unwrap_or(f64::NAN);
    out.push(CheckReport::from_samples(
        "identity.phi_at_one",
        tol,
        "phi(1, n) = b1 (n - l(1))",
        ns.iter().map(|&n| (n, (ctx.phi(1.0, n) - ctx.b1 * (n - ell1)).abs())),
    ));
    out.push(CheckReport::from_samples(
        "identity.v_on_m",
        tol,
        "v(q, m(q)) = -2R(1-R)(b2-1)",
        qs.iter().map(|&q| (q, (ctx.v(q, ctx.m(q)) + 2.0 * r * (1.0 - r) * b2m1).abs())),
    ));
    out.push(CheckReport::from_samples(
        "identity.v_on_ell",
        tol,
        "v(q, l(q)) in both sign regimes of (1-q)[(1-R)q+R]",
        qs.iter().map(|&q| {
            let ell = ctx.ell(q).unwrap_or(f64::NAN);
            let rhs = if (1.0 - q) * lin(q) > 0.0 {
                -2.0 * r * r * (1.0 - r) * (1.0 - q) * b2m1 / lin(q)
            } else {
                2.0 * (1.0 - r) * (1.0 - q) * lin(q)
            };
            (q, (ctx.v(q, ell) - rhs).abs())
        }),
    ));
    out.push(CheckReport::from_samples(
        "identity.v_at_one",
        tol,
        "v(1, n) = phi(1, n) - sgn(1-R)|phi(1, n)|",
        ns.iter().map(|&n| {
            let phi = ctx.phi(1.0, n);
            (n, (ctx.v(1.0, n) - (phi - s * phi.abs())).abs())
        }),
    ));
    out.push(CheckReport::from_samples(
        "identity.d_on_m",
        tol,
        "D(q, m(q)) = 0",
        qs.iter().map(|&q| (q, ctx.d_fn(q, ctx.m(q)).abs())),
    ));

    // Both closed forms of O on a (q, n) grid away from the singular curves.
    let side = (grid as f64).sqrt().ceil() as usize;
    let mut pts = Vec::new();
    for &q in &linspace(0.02, 2.9, side) {
        if (q - 1.0).abs() < 0.05 || near_pole(q) || ctx.pole().map_or(false, |p| (q - p).abs() < 0.05) {
            continue;
        }
        let ell = ctx.ell(q).unwrap_or(f64::NAN);
        for &n in &linspace(0.02, 2.9, side) {
            if (n - ell).abs() < 1e-2 {
                continue;
            }
            pts.push((q, n));
        }
    }
    out.push(CheckReport::from_samples(
        "identity.o_forms_agree",
        1e-10,
        "relative gap between the two closed forms of O",
        pts.iter().map(|&(q, n)| {
            let a = ctx.o_form(q, n);
            let b = ctx.o_form_alt(q, n);
            (q, (a - b).abs() / a.abs().max(b.abs()).max(1e-300))
        }),
    ));
    sorted(out)
}

/// Checks tied to one solved instance: the cost consistency integral and smooth fit.
pub fn run_solution_suite(sol: &FreeBoundarySolution) -> Vec<CheckReport> {
    let end = sol.path.end();
    let start = &sol.path.samples[0];
    let consistency = (end.i.exp_m1() - sol.xi).abs() / sol.xi;
    let mut out = vec![
        CheckReport::from_samples(
            "solution.cost_consistency",
            1e-8,
            "relative error of exp(I(q^*)) - 1 = xi",
            [(sol.q_upper, consistency)],
        ),
        CheckReport::from_samples(
            "solution.smooth_fit",
            1e-8,
            "|n'(q_*)| and |n'(q^*)|",
            [(sol.q_star, start.dn.abs()), (sol.q_upper, end.dn.abs())],
        ),
    ];
    if let Some(a) = sol.a_const {
        out.push(CheckReport::from_samples(
            "solution.a_bound",
            0.0,
            "|a| <= ln(1 + xi)",
            [(1.0, (a.abs() - sol.xi.ln_1p()).max(0.0))],
        ));
    }
    sorted(out)
}

/// Finite-difference weights for derivatives `0..=m` at `x0` from nodes `xs`.
fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// One-sided estimates of `(G, G', G'')` at `p0` from seven points on one side,
/// not including `p0` itself. `G''` is the difference quotient of `G'`.
fn one_sided(surface: &PolicySurface, p0: f64, h: f64, dir: f64) -> Result<[f64; 3]> {
    let xs: Vec<f64> = (1..=7).map(|k| dir * k as f64 * h).collect();
    let w = fd_weights(0.0, &xs, 1);
    let gs = xs.iter().map(|&x| surface.g(p0 + x)).collect::<Result<Vec<_>>>()?;
    let dot = |w: &[f64], f: &dyn Fn(&crate::policy::GValue) -> f64| -> f64 {
        w.iter().zip(&gs).map(|(a, g)| a * f(g)).sum()
    };
    Ok([dot(&w[0], &|g| g.g), dot(&w[1], &|g| g.g), dot(&w[1], &|g| g.g1)])
}

/// HJB residual, variational inequalities and C2 pasting on `grid` points.
pub fn run_hjb_suite(surface: &PolicySurface, market: &MarketParams, grid: usize) -> Vec<CheckReport> {
    if let Err(e) = surface.check_market(market) {
        return vec![CheckReport::failure("hjb.market_mismatch", e.to_string())];
    }
    let big_r = surface.aux.risk_aversion;
    let Costs { lambda, gamma } = surface.costs();
    let (ps, pu) = (surface.p_star, surface.p_upper);
    let inside = linspace(ps, pu, grid);
    // Stop short of the solvency limits, where G vanishes (R < 1) or blows up.
    let lo = if lambda > 0.0 { (-0.999 / lambda).max(ps - 5.0) } else { ps - 5.0 };
    let hi = if gamma > 0.0 { (0.999 / gamma).min(pu + 5.0) } else { pu + 5.0 };
    let buy: Vec<f64> = linspace(lo, ps, grid).into_iter().filter(|&p| p < ps).collect();
    let sell: Vec<f64> = linspace(pu, hi, grid).into_iter().filter(|&p| p > pu).collect();

    let g_in: Vec<_> = inside.par_iter().map(|&p| surface.g(p)).collect();
    let g_buy: Vec<_> = buy.par_iter().map(|&p| surface.g(p)).collect();
    let g_sell: Vec<_> = sell.par_iter().map(|&p| surface.g(p)).collect();
    let eval_err = g_in.iter().chain(&g_buy).chain(&g_sell).find_map(|g| g.as_ref().err().cloned());
    if let Some(e) = eval_err {
        return vec![CheckReport::failure("hjb.evaluation", e.to_string())];
    }
    let g_in: Vec<_> = g_in.into_iter().map(|g| g.unwrap()).collect();
    let g_buy: Vec<_> = g_buy.into_iter().map(|g| g.unwrap()).collect();
    let g_sell: Vec<_> = g_sell.into_iter().map(|g| g.unwrap()).collect();

    let mut out = Vec::new();
    out.push(CheckReport::from_samples(
        "hjb.residual_in_wedge",
        1e-6,
        "|sum of HJB terms| / max |term| inside the wedge",
        g_in.iter().map(|gv| {
            let t = surface.hjb_terms(gv, market);
            let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (gv.p, t.iter().sum::<f64>().abs() / scale)
        }),
    ));
    out.push(CheckReport::from_samples(
        "hjb.m_operator_in_wedge",
        1e-8,
        "M V / (Upsilon y w^-R) <= 0 inside the wedge",
        g_in.iter().map(|gv| (gv.p, surface.m_operator(gv).max(0.0))),
    ));
    out.push(CheckReport::from_samples(
        "hjb.n_operator_in_wedge",
        1e-8,
        "N V / (Upsilon y w^-R) <= 0 inside the wedge",
        g_in.iter().map(|gv| (gv.p, surface.n_operator(gv).max(0.0))),
    ));
    let lstar = |gv: &crate::policy::GValue| surface.hjb_terms(gv, market).iter().sum::<f64>() / (1.0 - big_r);
    out.push(CheckReport::from_samples(
        "hjb.generator_outside_wedge",
        1e-8,
        "L* V / (Upsilon w^(1-R)) <= 0 in the buy and sell regions",
        g_buy.iter().chain(&g_sell).map(|gv| (gv.p, lstar(gv).max(0.0))),
    ));
    out.push(CheckReport::from_samples(
        "hjb.n_operator_buy_region",
        1e-8,
        "N V / (Upsilon y w^-R) <= 0 in the buy region",
        g_buy.iter().map(|gv| (gv.p, surface.n_operator(gv).max(0.0))),
    ));
    out.push(CheckReport::from_samples(
        "hjb.m_operator_sell_region",
        1e-8,
        "M V / (Upsilon y w^-R) <= 0 in the sell region",
        g_sell.iter().map(|gv| (gv.p, surface.m_operator(gv).max(0.0))),
    ));
    let a_star = surface.solution.a_star;
    out.push(CheckReport::from_samples(
        "hjb.n_operator_buy_closed_form",
        1e-10,
        "N V = -A_* (lambda + gamma)(1 + lambda p)^-R on the buy region (relative)",
        g_buy.iter().map(|gv| {
            let exact = -a_star * (lambda + gamma) * (1.0 + lambda * gv.p).powf(-big_r);
            (gv.p, (surface.n_operator(gv) - exact).abs() / exact.abs())
        }),
    ));

    // C2 pasting by one-sided differences.
    let width = (pu - ps).min(1.0);
    let mut knots = vec![ps, pu];
    if ps < 1.0 - 0.05 * width && 1.0 + 0.05 * width < pu {
        knots.push(1.0);
    }
    let mut paste = Vec::new();
    for &p0 in &knots {
        let h = 3e-3 * width.min(p0.abs());
        match (one_sided(surface, p0, h, -1.0), one_sided(surface, p0, h, 1.0)) {
            (Ok(l), Ok(r)) => {
                // When both sides vanish (a free sale makes G flat beyond p^*), fall back to the size of G.
                let len = p0.abs().max(width);
                for k in 0..3 {
                    let floor = l[0].abs() / len.powi(k as i32);
                    paste.push((p0, (l[k] - r[k]).abs() / l[k].abs().max(r[k].abs()).max(floor)));
                }
            }
            (Err(e), _) | (_, Err(e)) => return vec![CheckReport::failure("hjb.c2_pasting", e.to_string())],
        }
    }
    out.push(CheckReport::from_samples(
        "hjb.c2_pasting",
        1e-4,
        "relative jump of one-sided seven-point estimates of G, G', G'' at p_*, p^* and p = 1",
        paste,
    ));

    // Transformation round trip back to n(q).
    let path = &surface.solution.path;
    out.push(CheckReport::from_samples(
        "hjb.transform_round_trip",
        1e-8,
        "G -> h -> w -> W -> N -> n reproduces q and n(q) (relative)",
        g_in.iter().filter(|gv| (gv.p - 1.0).abs() > 1e-3).map(|gv| {
            let q = gv.q.unwrap_or(f64::NAN);
            let p = gv.p;
            let sg = (1.0 - p).signum();
            let a = (1.0 - p).abs();
            let hh = sg * a.powf(big_r - 1.0) * gv.g;
            let dh = sg * a.powf(big_r - 1.0) * (gv.g1 + (1.0 - big_r) * gv.g / (1.0 - p));
            let w = p * (1.0 - p) * dh;
            let q_rec = w / ((1.0 - big_r) * hh);
            let n_rec = (hh.abs() * (1.0 - q_rec).abs().powf(1.0 - big_r)).powf(-1.0 / big_r);
            let n = path.n_at(q).unwrap_or(f64::NAN);
            let err = ((q_rec - q).abs() / q.abs().max(1.0)).max((n_rec - n).abs() / n);
            (p, err)
        }),
    ));
    sorted(out)
}

/// Grids for the comparative statics suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub xi_grid: Vec<f64>,
    pub b1_grid: Vec<f64>,
    pub b3_grid: Vec<f64>,
    pub b2_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Points at which `(1-R)G` is compared across sweeps.
    pub p_grid: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            xi_grid: logspace(1e-4, 10.0, 60),
            b1_grid: linspace(0.2, 0.4, 10),
            b3_grid: linspace(0.6, 0.9, 10),
            b2_grid: linspace(1.25, 2.5, 6),
            delta_grid: linspace(0.03, 0.08, 10),
            alpha_grid: linspace(0.035, 0.07, 10),
            p_grid: linspace(-0.5, 2.0, 51),
        }
    }
}

impl SweepSpec {
    /// Grids bracketing a base point, kept inside `b1 > 0` and `b3 > 0`.
    pub fn around(aux: &AuxParams, market: Option<&MarketParams>) -> Self {
        let mut s = Self {
            b1_grid: linspace(0.8 * aux.b1, 1.2 * aux.b1, 10),
            b3_grid: linspace(0.8 * aux.b3, 1.05 * aux.b3, 10),
            b2_grid: linspace(1.0 + 0.5 * (aux.b2 - 1.0), 1.0 + 1.5 * (aux.b2 - 1.0), 6),
            ..Self::default()
        };
        if let Some(m) = market {
            let r1 = 1.0 - m.risk_aversion;
            let beta = m.beta();
            let delta_crit = m.r * r1 + beta * beta * r1 / (2.0 * m.risk_aversion);
            let lo = (0.9 * m.delta).max(delta_crit + 0.25 * (m.delta - delta_crit));
            s.delta_grid = linspace(lo, 1.3 * m.delta, 10);
            let alpha_crit = m.r + m.eta * beta * m.rho;
            let lo = (0.9 * m.alpha).max(alpha_crit + 0.5 * (m.alpha - alpha_crit));
            s.alpha_grid = linspace(lo, 1.1 * m.alpha, 10);
        }
        s
    }
}

/// Base point of the statics sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticsBase {
    pub aux: AuxParams,
    pub costs: Costs,
    /// Raw parameters for the discount-rate and drift sweeps.
    pub market: Option<MarketParams>,
    /// Position at which the certainty equivalent is compared.
    pub position: Position,
}

struct SweepPoint {
    param: f64,
    surface: Option<PolicySurface>,
    skipped: Option<String>,
}

fn solve_points(points: Vec<(f64, AuxParams)>, costs: Costs, tol: &ShootTolerances) -> Result<Vec<SweepPoint>> {
    points
        .into_par_iter()
        .map(|(param, aux)| match PolicySurface::build(&aux, costs, tol) {
            Ok(s) => Ok(SweepPoint { param, surface: Some(s), skipped: None }),
            Err(e @ (Error::BelowCriticalCost { .. } | Error::IllPosed(_))) => {
                Ok(SweepPoint { param, surface: None, skipped: Some(e.to_string()) })
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// Checks that `values` move strictly in `dir` (+1 increasing, -1 decreasing).
///
/// Reversals no larger than `10 rtol max|v|` are below what the solver resolves and are not counted.
fn strict_order(name: &str, detail: &str, params: &[f64], values: &[f64], dir: f64, rtol: f64) -> CheckReport {
    let resolution = 10.0 * rtol * values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    CheckReport::from_samples(
        name,
        resolution,
        detail,
        params.windows(2).zip(values.windows(2)).map(|(p, v)| {
            let step = dir * (v[1] - v[0]);
            (p[1], if step > 0.0 { 0.0 } else { -step + f64::MIN_POSITIVE })
        }),
    )
}

fn sweep_reports(
    label: &str,
    pts: &[SweepPoint],
    dir: f64,
    spec: &SweepSpec,
    position: &Position,
    assert_bounds: bool,
    rtol: f64,
) -> Vec<CheckReport> {
    let mut out = Vec::new();
    for p in pts.iter().filter(|p| p.skipped.is_some()) {
        out.push(CheckReport::info(
            &format!("statics.{label}.skipped"),
            format!("point {} skipped: {}", p.param, p.skipped.as_deref().unwrap_or("")),
        ));
    }
    let ok: Vec<&PolicySurface> = pts.iter().filter_map(|p| p.surface.as_ref()).collect();
    let params: Vec<f64> = pts.iter().filter(|p| p.surface.is_some()).map(|p| p.param).collect();
    if ok.len() < 2 {
        out.push(CheckReport::failure(&format!("statics.{label}"), "fewer than two posed sweep points".into()));
        return out;
    }
    let cols: [(&str, Vec<f64>); 4] = [
        ("q_star", ok.iter().map(|s| s.solution.q_star).collect()),
        ("q_upper", ok.iter().map(|s| s.solution.q_upper).collect()),
        ("p_star", ok.iter().map(|s| s.p_star).collect()),
        ("p_upper", ok.iter().map(|s| s.p_upper).collect()),
    ];
    for (col, vals) in cols.iter() {
        let name = format!("statics.{label}.{col}");
        if assert_bounds {
            out.push(strict_order(&name, "strict monotonicity along the sweep", &params, vals, dir, rtol));
        } else {
            let d = format!("report only: {:?}", vals);
            out.push(CheckReport::info(&name, d));
        }
    }
    if !assert_bounds {
        return out;
    }
    let big_r = ok[0].aux.risk_aversion;
    let mut g_viol = Vec::new();
    for &p in &spec.p_grid {
        let vals: Vec<f64> = ok.iter().map(|s| s.g(p).map(|g| (1.0 - big_r) * g.g).unwrap_or(f64::NAN)).collect();
        for w in vals.windows(2) {
            let step = dir * (w[1] - w[0]);
            g_viol.push((p, if step >= -1e-12 * w[0].abs() { 0.0 } else { -step }));
        }
    }
    out.push(CheckReport::from_samples(
        &format!("statics.{label}.g_pointwise"),
        0.0,
        "(1-R)G monotone at every grid p",
        g_viol,
    ));
    let ce: Vec<f64> = ok.iter().map(|s| s.certainty_equivalent(position).unwrap_or(f64::NAN)).collect();
    out.push(strict_order(
        &format!("statics.{label}.certainty_equivalent"),
        "certainty equivalent monotone along the sweep",
        &params,
        &ce,
        dir,
        rtol,
    ));
    out
}

/// Monotonicity of the boundaries, `(1-R)G` and the certainty equivalent.
pub fn run_statics_suite(base: &StaticsBase, spec: &SweepSpec, tol: &ShootTolerances) -> Result<Vec<CheckReport>> {
    let aux = base.aux;
    let big_r = aux.risk_aversion;
    let mut out = Vec::new();

    // Round-trip cost: q_* decreasing, q^* increasing.
    if !spec.xi_grid.is_empty() {
        let ctx = aux.field();
        let sols: Vec<_> = spec
            .xi_grid
            .par_iter()
            .map(|&xi| (xi, Costs::from_xi(xi).and_then(|c| fbp_solver::solve_boundaries(&ctx, c, tol))))
            .collect();
        let mut xs = Vec::new();
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for (xi, s) in sols {
            match s {
                Ok(s) => {
                    xs.push(xi);
                    lo.push(s.q_star);
                    hi.push(s.q_upper);
                }
                Err(e @ (Error::BelowCriticalCost { .. } | Error::IllPosed(_))) => {
                    out.push(CheckReport::info("statics.xi.skipped", format!("xi = {xi}: {e}")));
                }
                Err(e) => return Err(e),
            }
        }
        out.push(strict_order("statics.xi.q_star", "q_* strictly decreasing in xi", &xs, &lo, -1.0, tol.rtol));
        out.push(strict_order("statics.xi.q_upper", "q^* strictly increasing in xi", &xs, &hi, 1.0, tol.rtol));
    }

    let with = |b1: f64, b2: f64, b3: f64| {
        AuxParams::from_reduced(big_r, b1, b2, b3, aux.b4, base.costs.xi())
    };
    if !spec.b1_grid.is_empty() {
        let pts = spec.b1_grid.iter().map(|&b| Ok((b, with(b, aux.b2, aux.b3)?))).collect::<Result<Vec<_>>>()?;
        let pts = solve_points(pts, base.costs, tol)?;
        out.extend(sweep_reports("b1", &pts, -1.0, spec, &base.position, true, tol.rtol));
    }
    if !spec.b3_grid.is_empty() && big_r < 1.0 {
        let pts = spec.b3_grid.iter().map(|&b| Ok((b, with(aux.b1, aux.b2, b)?))).collect::<Result<Vec<_>>>()?;
        let pts = solve_points(pts, base.costs, tol)?;
        out.extend(sweep_reports("b3", &pts, 1.0, spec, &base.position, true, tol.rtol));
    }
    if !spec.b2_grid.is_empty() {
        let pts = spec.b2_grid.iter().map(|&b| Ok((b, with(aux.b1, b, aux.b3)?))).collect::<Result<Vec<_>>>()?;
        let pts = solve_points(pts, base.costs, tol)?;
        out.extend(sweep_reports("b2", &pts, 0.0, spec, &base.position, false, tol.rtol));
    }
    if let Some(m) = base.market {
        let raw = |f: &dyn Fn(&mut MarketParams), v: f64| -> Result<(f64, AuxParams)> {
            let mut mm = m;
            f(&mut mm);
            Ok((v, derive_aux(&mm)?))
        };
        let costs = m.costs()?;
        if !spec.delta_grid.is_empty() {
            let pts = spec
                .delta_grid
                .iter()
                .map(|&d| raw(&|mm: &mut MarketParams| mm.delta = d, d))
                .collect::<Result<Vec<_>>>()?;
            let pts = solve_points(pts, costs, tol)?;
            out.extend(sweep_reports("delta", &pts, -1.0, spec, &base.position, true, tol.rtol));
        }
        if !spec.alpha_grid.is_empty() && big_r < 1.0 {
            let pts = spec
                .alpha_grid
                .iter()
                .map(|&a| raw(&|mm: &mut MarketParams| mm.alpha = a, a))
                .collect::<Result<Vec<_>>>()?;
            let pts = solve_points(pts, costs, tol)?;
            out.extend(sweep_reports("alpha", &pts, 1.0, spec, &base.position, true, tol.rtol));
        }
    }
    Ok(sorted(out))
}

/// Continuity of the boundaries in `xi` across the cost at which `q^*` passes 1.
pub fn run_crossing_continuity(ctx: &FieldContext, tol: &ShootTolerances, points: usize) -> Result<Vec<CheckReport>> {
    let coarse = logspace(1e-4, 10.0, 40);
    let mut cross = None;
    let mut prev: Option<(f64, f64)> = None;
    for &xi in &coarse {
        let s = fbp_solver::solve_boundaries(ctx, Costs::from_xi(xi)?, tol)?;
        if let Some((x0, q0)) = prev {
            if (q0 - 1.0) * (s.q_upper - 1.0) <= 0.0 {
                cross = Some((x0, xi));
                break;
            }
        }
        prev = Some((xi, s.q_upper));
    }
    let Some((a, b)) = cross else {
        return Ok(vec![CheckReport::info("statics.crossing", "q^* does not cross 1 on [1e-4, 10]".into())]);
    };
    let xs = logspace(a, b, points);
    let sols = xs
        .par_iter()
        .map(|&xi| fbp_solver::solve_boundaries(ctx, Costs::from_xi(xi)?, tol))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = sols.iter().map(|s| s.q_upper).collect();
    let steps: Vec<f64> = q.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mean = steps.iter().sum::<f64>() / steps.len() as f64;
    Ok(vec![CheckReport::from_samples(
        "statics.crossing.q_upper_continuity",
        5.0,
        "largest step of q^* across q^* = 1, relative to the mean step",
        xs[1..].iter().zip(&steps).map(|(&x, &s)| (x, s / mean)),
    )])
}

/// Region labels on a `p` grid, for plots.
pub fn region_of(surface: &PolicySurface, p: f64) -> Region {
    surface.region(p)
}
