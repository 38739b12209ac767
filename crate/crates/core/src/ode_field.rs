//! The reduced free-boundary ODE `n' = O(q, n)` and its building blocks.
//!
//! The closed form of `O` has removable singularities at `q = 1`, on
//! `n = l(q)` for `q > 1`, and at `q = R/(R-1)` when `R > 1`. The production
//! evaluator [`FieldContext::f_field`] uses a factored form that cancels the
//! `(1 - q)` factor analytically and switches to limit formulas inside small
//! windows around the remaining removable points. The literal formulas are
//! kept ([`FieldContext::o_form`], [`FieldContext::o_form_alt`]) as oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the window around `q = 1` where the limit formula is used.
pub const Q1_WINDOW: f64 = 1e-9;
/// Half-width of the window around `q = R/(R-1)`.
pub const POLE_WINDOW: f64 = 1e-9;
/// Relative half-width of the window around `n = l(q)` for `q > 1`.
pub const ELL_WINDOW: f64 = 1e-6;

/// Which evaluation path produced a field value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Regular,
    LimitQ1,
    LimitPole,
    LimitNEll,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub value: f64,
    pub branch: Branch,
}

impl FieldValue {
    fn regular(value: f64) -> Self {
        Self { value, branch: Branch::Regular }
    }

    /// True when the field blows up (the limit does not exist).
    pub fn is_blowup(&self) -> bool {
        self.value.is_infinite()
    }
}

/// The reduced parameters `(R, b1, b2, b3)` the ODE depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldContext {
    pub risk_aversion: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl FieldContext {
    pub fn new(risk_aversion: f64, b1: f64, b2: f64, b3: f64) -> Self {
        Self { risk_aversion, b1, b2, b3 }
    }

    /// `sgn(1 - R)`.
    pub fn s(&self) -> f64 {
        if self.risk_aversion < 1.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn q_m(&self) -> f64 {
        self.b3 / (2.0 * self.risk_aversion)
    }

    pub fn m_m(&self) -> f64 {
        self.m(self.q_m())
    }

    /// Location of the pole of `l`, only meaningful for `R > 1`.
    pub fn pole(&self) -> Option<f64> {
        let r = self.risk_aversion;
        (r > 1.0).then(|| r / (r - 1.0))
    }

    pub fn m(&self, q: f64) -> f64 {
        let (r, b1) = (self.risk_aversion, self.b1);
        ((r * q - self.b3) * (1.0 - r) * q) / b1 + 1.0
    }

    pub fn m_prime(&self, q: f64) -> f64 {
        let (r, b1) = (self.risk_aversion, self.b1);
        (1.0 - r) * (2.0 * r * q - self.b3) / b1
    }

    /// Real roots of `m`, smaller first.
    pub fn roots_of_m(&self) -> Option<(f64, f64)> {
        let r = self.risk_aversion;
        let a = r * (1.0 - r) / self.b1;
        let b = -self.b3 * (1.0 - r) / self.b1;
        let disc = b * b - 4.0 * a;
        if disc < 0.0 {
            return None;
        }
        let t = -0.5 * (b + b.signum() * disc.sqrt());
        let (x1, x2) = (t / a, 1.0 / t);
        Some((x1.min(x2), x1.max(x2)))
    }

    /// `(1-R) q + R`.
    fn lin(&self, q: f64) -> f64 {
        (1.0 - self.risk_aversion) * q + self.risk_aversion
    }

    /// `l(q)`; undefined at the pole `q = R/(R-1)`.
    pub fn ell(&self, q: f64) -> Result<f64> {
        let lin = self.lin(q);
        if lin == 0.0 {
            return Err(Error::OutOfDomain(format!("l(q) has a pole at q = {q}")));
        }
        Ok(self.ell_unchecked(q))
    }

    fn ell_unchecked(&self, q: f64) -> f64 {
        let (r, b1) = (self.risk_aversion, self.b1);
        self.m(q)
            + (1.0 - r) * q * (1.0 - q) / b1
            + (self.b2 - 1.0) * r * (1.0 - r) * q / (b1 * self.lin(q))
    }

    /// `[(1-R) q + R] (l(q) - n)`, computed without dividing by `(1-R) q + R`.
    pub fn g_scaled(&self, q: f64, n: f64) -> f64 {
        let (r, b1) = (self.risk_aversion, self.b1);
        self.lin(q) * (self.m(q) - n + (1.0 - r) * q * (1.0 - q) / b1)
            + (self.b2 - 1.0) * r * (1.0 - r) * q / b1
    }

    pub fn phi(&self, q: f64, n: f64) -> f64 {
        let r = self.risk_aversion;
        self.b1 * (n - 1.0) + (1.0 - r) * (self.b3 - 2.0 * r) * q + (2.0 - self.b2) * r * (1.0 - r)
    }

    /// `E^2` evaluated as `e0 (1-q)^2`.
    pub fn e_sq(&self, q: f64) -> f64 {
        self.e0() * (1.0 - q) * (1.0 - q)
    }

    fn e0(&self) -> f64 {
        let r = self.risk_aversion;
        4.0 * r * r * (1.0 - r) * (1.0 - r) * (self.b2 - 1.0)
    }

    pub fn v(&self, q: f64, n: f64) -> f64 {
        let phi = self.phi(q, n);
        phi - self.s() * phi.hypot(self.e_sq(q).sqrt())
    }

    /// `D(q, n)` from its defining formula.
    pub fn d_fn(&self, q: f64, n: f64) -> f64 {
        2.0 * self.b1 * self.lin(q) * (n - self.m(q)) - q * (self.v(q, n) - self.v(q, self.m(q)))
    }

    /// `A(q, n)` from its defining formula.
    pub fn a_fn(&self, q: f64, n: f64) -> f64 {
        let phi = self.phi(q, n);
        let root = phi.hypot(self.e_sq(q).sqrt());
        let bracket = 2.0 * self.b1 * self.lin(q) - self.b1 * q * (1.0 - self.s() * phi / root);
        (self.ell_unchecked(q) - n) * bracket + self.d_fn(q, n)
    }

    /// Literal closed form of `O`. Undefined on the singular curves.
    pub fn o_form(&self, q: f64, n: f64) -> f64 {
        let r = self.risk_aversion;
        let phi = self.phi(q, n);
        let root = phi.hypot(self.e_sq(q).sqrt());
        let den = 2.0 * (1.0 - r) * (1.0 - q) * self.lin(q) - phi - self.s() * root;
        (1.0 - r) * n / (r * (1.0 - q)) - (2.0 * (1.0 - r) * (1.0 - r) * q * n / r) / den
    }

    /// The alternative closed form of `O` in terms of `D`.
    pub fn o_form_alt(&self, q: f64, n: f64) -> f64 {
        let r = self.risk_aversion;
        -(1.0 - r) * n * self.d_fn(q, n)
            / (2.0 * r * (1.0 - q) * self.lin(q) * self.b1 * (self.ell_unchecked(q) - n))
    }

    /// `O(q, n) = n F(q, n)` with the continuous modification.
    pub fn o_field(&self, q: f64, n: f64) -> FieldValue {
        let f = self.f_field(q, n);
        FieldValue { value: n * f.value, branch: f.branch }
    }

    /// `F(q, n) = O(q, n) / n` with the continuous modification.
    ///
    /// Where no finite limit exists (`q <= 1` and `(1-R)(n - l(q)) >= 0`) the
    /// value is `-sgn(1-R) * inf`.
    pub fn f_field(&self, q: f64, n: f64) -> FieldValue {
        let s = self.s();
        let blowup = FieldValue::regular(-s * f64::INFINITY);
        if (q - 1.0).abs() < Q1_WINDOW {
            let ell1 = self.ell_unchecked(1.0);
            if (1.0 - self.risk_aversion) * (n - ell1) >= 0.0 {
                return blowup;
            }
            return FieldValue { value: self.f_limit_at_one(n), branch: Branch::LimitQ1 };
        }
        if let Some(pole) = self.pole() {
            if (q - pole).abs() < POLE_WINDOW && self.b2 > 1.0 {
                return FieldValue { value: self.f_limit_at_pole(n), branch: Branch::LimitPole };
            }
        }
        if q > 1.0 && self.lin(q) > 0.0 {
            let ell = self.ell_unchecked(q);
            let w = ELL_WINDOW * ell.abs().max(1.0);
            if (n - ell).abs() < w {
                // Quadratic through the two window edges and the limit value.
                let mid = self.f_limit_at_ell(q);
                let lo = self.f_regular(q, ell - w);
                let hi = self.f_regular(q, ell + w);
                let t = (n - ell) / w;
                let value = mid + 0.5 * t * (hi - lo) + 0.5 * t * t * (hi + lo - 2.0 * mid);
                return FieldValue { value, branch: Branch::LimitNEll };
            }
        }
        if q <= 1.0 && (1.0 - self.risk_aversion) * (n - self.ell_unchecked(q)) >= 0.0 {
            return blowup;
        }
        let f = self.f_regular(q, n);
        if f.is_nan() {
            return blowup;
        }
        FieldValue::regular(f)
    }

    /// Factored evaluation of `F` away from the removable points.
    ///
    /// With `D = b1 (n - m) K`, `K = 2[(1-R)q+R] - q[1 - s(phi_n + phi_m)/(S_n + S_m)]`
    /// and `S = sqrt(phi^2 + E^2)`. When `s phi <= 0` at both `n` and `m`,
    /// `K = (1-q)(2R + q(1-q) c)` with `c` free of cancellation.
    fn f_regular(&self, q: f64, n: f64) -> f64 {
        let r = self.risk_aversion;
        let s = self.s();
        let m = self.m(q);
        let phi_n = self.phi(q, n);
        let phi_m = self.phi(q, m);
        let e2 = self.e_sq(q);
        let s_n = (phi_n * phi_n + e2).sqrt();
        let s_m = (phi_m * phi_m + e2).sqrt();
        let g = self.g_scaled(q, n);
        if g == 0.0 {
            return -s * f64::INFINITY;
        }
        if s * phi_n <= 0.0 && s * phi_m <= 0.0 && s_n + s_m > 0.0 {
            let e0 = self.e0();
            let c = if e0 == 0.0 {
                0.0
            } else {
                e0 * (1.0 / (s_n + phi_n.abs()) + 1.0 / (s_m + phi_m.abs())) / (s_n + s_m)
            };
            -(1.0 - r) * (n - m) * (2.0 * r + q * (1.0 - q) * c) / (2.0 * r * g)
        } else {
            let k = 2.0 * self.lin(q) - q * (1.0 - s * (phi_n + phi_m) / (s_n + s_m));
            -(1.0 - r) * (n - m) * k / (2.0 * r * (1.0 - q) * g)
        }
    }

    /// `F(1, n)` for `(1-R) n < (1-R) l(1)`.
    pub fn f_limit_at_one(&self, n: f64) -> f64 {
        let r = self.risk_aversion;
        -(1.0 - r) * (n - self.m(1.0)) / (self.ell_unchecked(1.0) - n)
    }

    /// `F(q, l(q))` for `q > 1` (and `q < R/(R-1)` when `R > 1`).
    pub fn f_limit_at_ell(&self, q: f64) -> f64 {
        let r = self.risk_aversion;
        let lin = self.lin(q);
        let frac = q * lin / (lin * lin + (self.b2 - 1.0) * r * r);
        -(1.0 - r) / (r * (1.0 - q)) * (frac - 1.0)
    }

    /// `F(R/(R-1), n)` for `R > 1`.
    pub fn f_limit_at_pole(&self, n: f64) -> f64 {
        let r = self.risk_aversion;
        let q0 = r / (r - 1.0);
        (r - 1.0) * (r - 1.0) * self.d_fn(q0, n) / (2.0 * r * r * r * (self.b2 - 1.0))
    }
}
