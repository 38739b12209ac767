//! Bracketed scalar root finding.

use crate::error::{Error, Result};

/// Brent's method on `[a, b]` where `f(a)` and `f(b)` differ in sign.
///
/// `fa`, `fb` are the known end values. Stops when `|f| <= f_tol` or the
/// bracket is narrower than `x_tol`.
pub fn brent<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, x_tol: f64, f_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NumericalFailure(format!(
            "root not bracketed on [{a}, {b}]: f = {fa:e}, {fb:e}"
        )));
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..300 {
        if fb.abs() <= f_tol || (b - a).abs() <= x_tol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let between = if lo < b { s > lo && s < b } else { s > b && s < lo };
        let reject = !between
            || (bisected && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!bisected && (s - b).abs() >= (c - d).abs() / 2.0)
            || (bisected && (b - c).abs() < x_tol)
            || (!bisected && (c - d).abs() < x_tol);
        if reject {
            s = 0.5 * (a + b);
        }
        bisected = reject;
        let fs = f(s)?;
        d = c;
        c = b;
        fc = fb;
        if fa.signum() != fs.signum() {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Err(Error::NumericalFailure("Brent iteration did not converge".into()))
}
