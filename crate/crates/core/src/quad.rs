//! Adaptive Gauss-Legendre integration with interval bisection.

use gauss_quad::GaussLegendre;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("quadrature did not reach tolerance {tol:e} on [{a}, {b}] (estimate {estimate:e})")]
pub struct QuadError {
    pub a: f64,
    pub b: f64,
    pub tol: f64,
    pub estimate: f64,
}

const ORDER: usize = 12;
const MAX_DEPTH: u32 = 60;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(ORDER).unwrap()))
}

/// `∫_a^b f` to absolute tolerance `tol`. The tolerance is split across bisected halves.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let whole = rule().integrate(a, b, f);
    adapt(f, a, b, whole, tol, 0)
}

fn adapt(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Result<f64, QuadError> {
    let m = 0.5 * (a + b);
    let left = rule().integrate(a, m, f);
    let right = rule().integrate(m, b, f);
    let refined = left + right;
    let err = (refined - whole).abs();
    if err <= tol || (err <= 1e-15 * refined.abs()) {
        return Ok(refined);
    }
    if depth >= MAX_DEPTH || m <= a || m >= b {
        return Err(QuadError { a, b, tol, estimate: err });
    }
    Ok(adapt(f, a, m, left, 0.5 * tol, depth + 1)? + adapt(f, m, b, right, 0.5 * tol, depth + 1)?)
}

/// Like [`integrate`] but first splits `(a, b]` at dyadic points `b 2^-k` toward `a = 0`,
/// which keeps logarithmic endpoint behavior at 0 cheap.
pub fn integrate_from_zero(f: &impl Fn(f64) -> f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    let mut hi = b;
    let mut total = 0.0;
    let mut k = 0;
    while hi > 0.0 && k < 1000 {
        let lo = if k == 999 { 0.0 } else { 0.5 * hi };
        let piece = integrate(f, lo, hi, tol * 0.5f64.powi(k.min(60) + 1))?;
        total += piece;
        if piece.abs() < 1e-17 * total.abs().max(f64::MIN_POSITIVE) && k > 40 {
            break;
        }
        hi = lo;
        k += 1;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_logs() {
        let v = integrate(&|x: f64| x.powi(7), 0.0, 1.0, 1e-14).unwrap();
        assert!((v - 0.125).abs() < 1e-14);
        let v = integrate_from_zero(&|x: f64| x.ln(), 1.0, 1e-12).unwrap();
        assert!((v + 1.0).abs() < 1e-10, "{v}");
        let v = integrate_from_zero(&|x: f64| x.sqrt(), 1.0, 1e-13).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12, "{v}");
    }
}
