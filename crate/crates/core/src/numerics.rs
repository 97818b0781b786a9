//! Scalar root finding used by the bandwidth solver.

use std::f64::consts::E;

use crate::error::{Error, Result};

/// Absolute tolerance and iteration cap for iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Tolerance {
    pub fn new(abs_tol: f64, max_iter: usize) -> Result<Self> {
        if !(abs_tol > 0.0) {
            return Err(Error::InvalidTolerance("abs_tol must be positive"));
        }
        if max_iter == 0 {
            return Err(Error::InvalidTolerance("max_iter must be at least 1"));
        }
        Ok(Self { abs_tol, max_iter })
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs_tol: 1e-10, max_iter: 200 }
    }
}

/// Branch point of W0, `-1/e`.
pub const BRANCH_POINT: f64 = -1.0 / E;

/// Principal branch of the Lambert W function.
///
/// Arguments below `-1/e` by no more than `1e-10` are treated as the branch
/// point itself.
pub fn lambert_w0(x: f64) -> Result<f64> {
    lambert_w0_with_slack(x, Tolerance::default().abs_tol)
}

pub fn lambert_w0_with_slack(x: f64, slack: f64) -> Result<f64> {
    if x.is_nan() || x < BRANCH_POINT - slack {
        return Err(Error::LambertDomain { x });
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    // e*x + 1 measures the distance from the branch point
    let offset = E.mul_add(x, 1.0).max(0.0);
    Ok(w0_plus_one(offset, x) - 1.0)
}

/// `W0((c - 1)/e) + 1` for `c >= 0`.
///
/// Taking the branch offset `c` directly keeps full relative precision of
/// `W + 1` close to the branch point, where forming `(c - 1)/e` first would
/// cancel.
pub fn lambert_w0_shifted(c: f64) -> f64 {
    debug_assert!(c >= 0.0);
    if c.is_infinite() {
        return f64::INFINITY;
    }
    let c = c.max(0.0);
    w0_plus_one(c, (c - 1.0) / E)
}

fn w0_plus_one(offset: f64, x: f64) -> f64 {
    let p = (2.0 * offset).sqrt();
    if p < 1e-3 {
        return branch_series(p);
    }

    let mut w = if p < 1.0 {
        branch_series(p) - 1.0
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };

    // Halley on f(w)/e^w = w - x e^-w, which cannot overflow for large x.
    for _ in 0..64 {
        let t = w - x * (-w).exp();
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let step = t / (wp1 - (w + 2.0) * t / (2.0 * wp1));
        let next = w - step;
        if !next.is_finite() {
            break;
        }
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs());
        w = next;
        if done {
            break;
        }
    }
    w + 1.0
}

/// Puiseux expansion of `W0 + 1` in `p = sqrt(2(e x + 1))`.
fn branch_series(p: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        1.0,
        -1.0 / 3.0,
        11.0 / 72.0,
        -43.0 / 540.0,
        769.0 / 17280.0,
        -221.0 / 8505.0,
        680863.0 / 43545600.0,
        -1963.0 / 204120.0,
    ];
    let mut acc = 0.0;
    for c in COEFFS.iter().rev() {
        acc = acc * p + c;
    }
    acc * p
}

/// Final bracket `[lo, hi]` of a bisection; `f(lo)` and `f(hi)` keep the signs
/// they had at the start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Bisection for a sign change of a monotone `f` on `[lo, hi]`.
pub fn bisect<F>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo.abs() <= tol.abs_tol {
        return Ok(lo);
    }
    if f_hi.abs() <= tol.abs_tol {
        return Ok(hi);
    }
    bisect_bracket(f, lo, hi, tol).map(|b| b.midpoint())
}

/// Like [`bisect`] but returns the final bracket, which lets callers pick the
/// side of the crossing they need.
pub fn bisect_bracket<F>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<Bracket>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) {
        return Err(Error::NoBracket { lo, hi, f_lo: f64::NAN, f_hi: f64::NAN });
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(Bracket { lo, hi: lo });
    }
    if f_hi == 0.0 {
        return Ok(Bracket { lo: hi, hi });
    }
    if f_lo.is_nan() || f_hi.is_nan() || (f_lo > 0.0) == (f_hi > 0.0) {
        return Err(Error::NoBracket { lo, hi, f_lo, f_hi });
    }
    let lo_negative = f_lo < 0.0;
    let mut bracket = Bracket { lo, hi };
    for _ in 0..tol.max_iter {
        if bracket.width() <= tol.abs_tol {
            return Ok(bracket);
        }
        let mid = bracket.midpoint();
        if mid <= bracket.lo || mid >= bracket.hi {
            // floating point cannot split further
            return Ok(bracket);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(Bracket { lo: mid, hi: mid });
        }
        if (f_mid < 0.0) == lo_negative {
            bracket.lo = mid;
        } else {
            bracket.hi = mid;
        }
    }
    if bracket.width() <= tol.abs_tol {
        Ok(bracket)
    } else {
        Err(Error::NoConvergence { iterations: tol.max_iter })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Newton fixed point `w <- (w^2 e^w + x) / (e^w (w + 1))` from `ln(1 + x)`.
    fn newton_oracle(x: f64) -> f64 {
        let mut w = x.ln_1p();
        for _ in 0..200 {
            let ew = w.exp();
            let next = (w * w * ew + x) / (ew * (w + 1.0));
            if next == w {
                break;
            }
            w = next;
        }
        w
    }

    #[test]
    fn trivial_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        // BRANCH_POINT is -1/e rounded; W amplifies that rounding by a square root
        assert!((lambert_w0(BRANCH_POINT).unwrap() + 1.0).abs() < 1e-7);
    }

    #[test]
    fn omega_constant_matches_newton_oracle() {
        let oracle = newton_oracle(1.0);
        assert!((oracle - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert!((lambert_w0(1.0).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn below_branch_point_is_a_domain_error() {
        assert!(matches!(lambert_w0(-0.5), Err(Error::LambertDomain { .. })));
        // inside the slack
        assert!(lambert_w0(BRANCH_POINT - 1e-12).is_ok());
    }

    #[test]
    fn shifted_form_agrees_with_direct_form() {
        for &c in &[0.0, 1e-12, 1e-6, 1e-3, 0.1, 1.0, 3.5, 100.0, 1e6] {
            let direct = lambert_w0((c - 1.0) / E).unwrap() + 1.0;
            let shifted = lambert_w0_shifted(c);
            // the direct form loses the last bits of (c - 1)/e, worth ~1e-8 at the branch
            assert!((direct - shifted).abs() <= 1e-9 * shifted + 5e-8, "c = {c}");
        }
        assert_eq!(lambert_w0_shifted(0.0), 0.0);
    }

    #[test]
    fn shifted_form_near_branch_matches_series_limit() {
        // W + 1 ~ sqrt(2c) as c -> 0
        let c = 1e-14;
        let s = lambert_w0_shifted(c);
        assert!((s / (2.0 * c).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bisect_linear_and_cubic() {
        let tol = Tolerance::default();
        let r = bisect(|x| x - 2.0, 0.0, 10.0, tol).unwrap();
        assert!((r - 2.0).abs() <= tol.abs_tol);
        let r = bisect(|x| x * x * x - 8.0, 0.0, 10.0, tol).unwrap();
        assert!((r - 2.0).abs() <= tol.abs_tol);
    }

    #[test]
    fn bisect_rejects_missing_bracket() {
        let err = bisect(|x| x + 1.0, 0.0, 10.0, Tolerance::default()).unwrap_err();
        assert!(matches!(err, Error::NoBracket { .. }));
    }

    #[test]
    fn bisect_reports_non_convergence() {
        let tol = Tolerance::new(1e-12, 5).unwrap();
        let err = bisect(|x| x - 2.0, 0.0, 10.0, tol).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 5 }));
    }

    #[test]
    fn bisect_accepts_endpoint_root() {
        let r = bisect(|x| x - 10.0, 0.0, 10.0, Tolerance::default()).unwrap();
        assert_eq!(r, 10.0);
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerance::new(0.0, 10).is_err());
        assert!(Tolerance::new(1e-3, 0).is_err());
    }
}
