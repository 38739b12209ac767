//! Shooting solver for the free boundary problem.
//!
//! For a left point `u` the initial value problem `n' = O(q, n)`, `n(u) = m(u)`
//! is integrated together with `I(q) = -int_u^q R/(s(1-R)) F(s, n(s)) ds`
//! until `n` crosses `m` again at `zeta(u)`. The boundaries solve
//! `Sigma(u) = exp(I(zeta(u))) - 1 = xi`.

mod dopri;
pub mod quad;
pub mod roots;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Case, Costs};
use crate::ode_field::FieldContext;

/// Integration and root-finding settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootTolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Width in `q` to which the crossing of `m` is located.
    pub event_tol: f64,
    /// Largest step, which also bounds the spacing of the stored path.
    pub h_max: f64,
    /// Smallest admissible left boundary point.
    pub u_min: f64,
    /// The solution is abandoned beyond this `q`.
    pub q_max: f64,
    pub max_steps: usize,
    /// Relative tolerance on `ln(1 + Sigma(u)) = ln(1 + xi)`.
    pub root_rel_tol: f64,
}

impl Default for ShootTolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            event_tol: 1e-12,
            h_max: 2e-3,
            u_min: 1e-9,
            q_max: 1e3,
            max_steps: 2_000_000,
            root_rel_tol: 1e-11,
        }
    }
}

/// A stored node of the integrated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub q: f64,
    pub n: f64,
    pub dn: f64,
    pub i: f64,
    pub di: f64,
}

/// Solution of one initial value problem.
///
/// Between stored nodes the path is evaluated by one Dormand-Prince step from
/// the left node, which keeps `n` smooth to near round-off. Paths without a
/// field (deserialized ones) fall back to cubic Hermite interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdePath {
    pub u: f64,
    pub zeta: f64,
    pub samples: Vec<PathSample>,
    #[serde(skip)]
    field: Option<FieldContext>,
}

impl OdePath {
    fn bracket(&self, q: f64) -> Result<(usize, f64, f64)> {
        let s = &self.samples;
        let (lo, hi) = (s[0].q, s[s.len() - 1].q);
        let slack = 1e-12 * hi.abs().max(1.0);
        if !(q >= lo - slack && q <= hi + slack) {
            return Err(Error::OutOfDomain(format!("q = {q} outside the path [{lo}, {hi}]")));
        }
        if s.len() == 1 {
            return Ok((0, 0.0, 0.0));
        }
        let q = q.clamp(lo, hi);
        let k = s.partition_point(|p| p.q <= q).clamp(1, s.len() - 1) - 1;
        let h = s[k + 1].q - s[k].q;
        Ok((k, h, (q - s[k].q) / h))
    }

    fn hermite(y0: f64, d0: f64, y1: f64, d1: f64, h: f64, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * d1
    }

    /// `(n(q), I(q))` on `[u, zeta]`.
    pub fn eval(&self, q: f64) -> Result<(f64, f64)> {
        let (k, h, t) = self.bracket(q)?;
        let s = &self.samples;
        if s.len() == 1 {
            return Ok((s[0].n, s[0].i));
        }
        let (a, b) = (&s[k], &s[k + 1]);
        if t == 0.0 {
            return Ok((a.n, a.i));
        }
        if let Some(ctx) = &self.field {
            let mut f = path_rhs(ctx);
            let dq = t * h;
            if let Some(tr) = dopri::trial(&mut f, a.q, &[a.n, a.i], &[a.dn, a.di], dq, 1.0, 1.0) {
                return Ok((tr.y[0], tr.y[1]));
            }
        }
        Ok((
            Self::hermite(a.n, a.dn, b.n, b.dn, h, t),
            Self::hermite(a.i, a.di, b.i, b.di, h, t),
        ))
    }

    pub fn n_at(&self, q: f64) -> Result<f64> {
        Ok(self.eval(q)?.0)
    }

    pub fn i_at(&self, q: f64) -> Result<f64> {
        Ok(self.eval(q)?.1)
    }

    pub fn end(&self) -> &PathSample {
        self.samples.last().expect("path has at least one sample")
    }
}

/// Right-hand side of `(n, I)`.
fn path_rhs(ctx: &FieldContext) -> impl FnMut(f64, &[f64; 2]) -> [f64; 2] + '_ {
    let big_r = ctx.risk_aversion;
    move |q: f64, y: &[f64; 2]| {
        if y[0] <= 0.0 {
            return [f64::NAN, f64::NAN];
        }
        let f = ctx.f_field(q, y[0]).value;
        [y[0] * f, -big_r / (q * (1.0 - big_r)) * f]
    }
}

/// Integrates from `(u, m(u))` to the next crossing of `m`.
///
/// Errors with `OutOfDomain` when the solution reaches `n <= 0` or a blow-up
/// of the field, and `NumericalFailure` when it runs past `q_max`.
pub fn shoot(ctx: &FieldContext, u: f64, tol: &ShootTolerances) -> Result<OdePath> {
    if !(u.is_finite() && u > 0.0) {
        return Err(Error::InvalidParams(format!("left point must be positive, got {u}")));
    }
    let big_r = ctx.risk_aversion;
    let one_m_r = 1.0 - big_r;
    let q_m = ctx.q_m();
    let n0 = ctx.m(u);
    if n0 <= 0.0 {
        return Err(Error::OutOfDomain(format!("m(u) = {n0} is not positive at u = {u}")));
    }
    let start = PathSample { q: u, n: n0, dn: 0.0, i: 0.0, di: 0.0 };
    if u >= q_m {
        return Ok(OdePath { u, zeta: u, samples: vec![start], field: Some(*ctx) });
    }

    let mut rhs = path_rhs(ctx);
    let gap = |q: f64, n: f64| one_m_r * (n - ctx.m(q));

    let mut q = u;
    let mut y = [n0, 0.0];
    let mut k = rhs(q, &y);
    let mut samples = vec![start];
    let mut h = (0.01 * u).min(0.25 * (q_m - u)).min(tol.h_max);
    let mut armed = false;

    for _ in 0..tol.max_steps {
        if q > tol.q_max {
            return Err(Error::NumericalFailure(format!(
                "solution from u = {u} did not cross m before q = {}",
                tol.q_max
            )));
        }
        h = h.min(tol.h_max);
        let h_min = 1e-14 * q.abs().max(1.0);
        if h < h_min {
            if !armed {
                // The crossing is closer than resolvable: u sits at the vertex.
                return Ok(OdePath { u, zeta: u, samples, field: Some(*ctx) });
            }
            return Err(Error::OutOfDomain(format!(
                "step size underflow at q = {q}, n = {} (field blow-up or n -> 0)",
                y[0]
            )));
        }
        let Some(tr) = dopri::trial(&mut rhs, q, &y, &k, h, tol.rtol, tol.atol) else {
            h *= 0.25;
            continue;
        };
        if tr.err > 1.0 {
            h *= dopri::step_factor(tr.err);
            continue;
        }
        if tr.y[0] <= 0.0 {
            return Err(Error::OutOfDomain(format!("n reached zero near q = {}", q + h)));
        }
        let g_new = gap(q + h, tr.y[0]);
        if !armed {
            if g_new > 0.0 {
                armed = true;
            } else {
                h *= 0.5;
                continue;
            }
        } else if g_new <= 0.0 {
            // Locate the crossing inside this step by bisection on the step length.
            let (mut lo, mut hi) = (0.0, h);
            let mut last = tr;
            while hi - lo > tol.event_tol {
                let mid = 0.5 * (lo + hi);
                match dopri::trial(&mut rhs, q, &y, &k, mid, tol.rtol, tol.atol) {
                    Some(t) if gap(q + mid, t.y[0]) > 0.0 => lo = mid,
                    Some(t) => {
                        hi = mid;
                        last = t;
                    }
                    None => hi = mid,
                }
            }
            let zeta = q + hi;
            samples.push(PathSample { q: zeta, n: last.y[0], dn: last.dy[0], i: last.y[1], di: last.dy[1] });
            return Ok(OdePath { u, zeta, samples, field: Some(*ctx) });
        }
        q += h;
        y = tr.y;
        k = tr.dy;
        samples.push(PathSample { q, n: y[0], dn: k[0], i: y[1], di: k[1] });
        h *= dopri::step_factor(tr.err);
    }
    Err(Error::NumericalFailure(format!("step limit reached shooting from u = {u}")))
}

/// Parameter regime from the field parameters alone.
pub fn case_of(ctx: &FieldContext) -> Case {
    if ctx.risk_aversion > 1.0 {
        Case::Case4
    } else if ctx.m_m() >= 0.0 {
        Case::Case1
    } else if ctx.ell(1.0).map_or(false, |l| l > 0.0) {
        Case::Case3
    } else {
        Case::Case2
    }
}

/// `ln(1 + Sigma(u)) = I(zeta(u))`.
pub fn log_sigma(ctx: &FieldContext, u: f64, tol: &ShootTolerances) -> Result<f64> {
    if let Some((p_minus, _)) = ctx.roots_of_m().filter(|_| ctx.m_m() < 0.0 && ctx.risk_aversion < 1.0) {
        if u >= p_minus {
            if u == p_minus {
                return Ok(critical_xi(ctx, tol)?.ln_1p());
            }
            return Err(Error::OutOfDomain(format!("u = {u} beyond p_- = {p_minus}")));
        }
    } else if u >= ctx.q_m() {
        if u == ctx.q_m() {
            return Ok(0.0);
        }
        return Err(Error::OutOfDomain(format!("u = {u} beyond q_M = {}", ctx.q_m())));
    }
    Ok(shoot(ctx, u, tol)?.end().i)
}

/// `Sigma(u)`: the round-trip cost consistent with left boundary `u`.
pub fn sigma(ctx: &FieldContext, u: f64, tol: &ShootTolerances) -> Result<f64> {
    Ok(log_sigma(ctx, u, tol)?.exp_m1())
}

fn critical_integrand(ctx: &FieldContext) -> impl Fn(f64) -> f64 + '_ {
    let big_r = ctx.risk_aversion;
    move |q: f64| -big_r / (q * (1.0 - big_r)) * ctx.f_field(q, 0.0).value
}

/// Critical round-trip cost `xi_bar` for Case 3, by adaptive Gauss-Kronrod.
pub fn critical_xi(ctx: &FieldContext, _tol: &ShootTolerances) -> Result<f64> {
    let (a, b) = critical_interval(ctx)?;
    let integral = quad::gauss_kronrod(critical_integrand(ctx), a, b, 1e-14, 1e-13)?;
    Ok(integral.exp_m1())
}

/// `xi_bar` by composite Gauss-Legendre; an independent cross-check.
pub fn critical_xi_gauss_legendre(ctx: &FieldContext) -> Result<f64> {
    let (a, b) = critical_interval(ctx)?;
    let integral = quad::gauss_legendre(critical_integrand(ctx), a, b, 64, 20);
    if !integral.is_finite() {
        return Err(Error::NumericalFailure("non-finite critical cost integral".into()));
    }
    Ok(integral.exp_m1())
}

fn critical_interval(ctx: &FieldContext) -> Result<(f64, f64)> {
    if case_of(ctx) != Case::Case3 {
        return Err(Error::InvalidParams("the critical cost is only defined in Case 3".into()));
    }
    ctx.roots_of_m()
        .ok_or_else(|| Error::NumericalFailure("m has no real roots".into()))
}

/// Solution of the free boundary problem for one cost level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundarySolution {
    pub case: Case,
    pub costs: Costs,
    pub xi: f64,
    pub q_star: f64,
    pub q_upper: f64,
    pub path: OdePath,
    /// `n(q_star)^(-R)`.
    pub a_star: f64,
    /// `n(q_upper)^(-R)`.
    pub a_upper: f64,
    /// `I(1) - ln(1 + lambda)` when `q_star <= 1 <= q_upper`.
    pub a_const: Option<f64>,
}

impl FreeBoundarySolution {
    pub fn n_star(&self) -> f64 {
        self.path.samples[0].n
    }

    pub fn n_upper(&self) -> f64 {
        self.path.end().n
    }
}

/// Solves for the boundaries at the round-trip cost of `costs`.
pub fn solve_boundaries(ctx: &FieldContext, costs: Costs, tol: &ShootTolerances) -> Result<FreeBoundarySolution> {
    let xi = costs.xi();
    let case = case_of(ctx);
    let target = xi.ln_1p();
    let (hi, f_hi) = match case {
        Case::Case2 => {
            return Err(Error::IllPosed(
                "Case2-I (R < 1, m_M < 0, l(1) <= 0): the value function is infinite for every cost".into(),
            ))
        }
        Case::Case3 => {
            let xi_bar = critical_xi(ctx, tol)?;
            if xi <= xi_bar {
                return Err(Error::BelowCriticalCost { xi, xi_bar });
            }
            let (p_minus, _) = critical_interval(ctx)?;
            (p_minus, xi_bar.ln_1p() - target)
        }
        Case::Case1 | Case::Case4 => (ctx.q_m(), -target),
    };
    let lo = tol.u_min;
    let f_lo = log_sigma(ctx, lo, tol)? - target;
    if f_lo <= 0.0 {
        return Err(Error::NumericalFailure(format!(
            "xi = {xi:e} exceeds the attainable range: Sigma(u_min = {lo:e}) = {:e}",
            (f_lo + target).exp_m1()
        )));
    }
    let f_tol = tol.root_rel_tol * target;
    let u = roots::brent(|u| Ok(log_sigma(ctx, u, tol)? - target), lo, hi, f_lo, f_hi, 1e-15, f_tol)?;
    let path = shoot(ctx, u, tol)?;
    let big_r = ctx.risk_aversion;
    let (q_star, q_upper) = (path.u, path.zeta);
    let a_const = if q_star <= 1.0 && 1.0 <= q_upper {
        Some(path.i_at(1.0)? - costs.lambda.ln_1p())
    } else {
        None
    };
    let n_star = path.samples[0].n;
    let n_upper = path.end().n;
    Ok(FreeBoundarySolution {
        case,
        costs,
        xi,
        q_star,
        q_upper,
        a_star: n_star.powf(-big_r),
        a_upper: n_upper.powf(-big_r),
        a_const,
        path,
    })
}
