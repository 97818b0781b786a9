use std::f64::consts::E;

use kfl::numerics::{bisect, bisect_bracket, lambert_w0, lambert_w0_shifted, Tolerance, BRANCH_POINT};
use kfl::Error;
use proptest::prelude::*;

fn log_uniform() -> impl Strategy<Value = f64> {
    (-9.0f64..9.0).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #[test]
    fn identity_on_positive_axis(x in log_uniform()) {
        let w = lambert_w0(x).unwrap();
        prop_assert!((w * w.exp() - x).abs() <= 1e-10 * x.max(1.0));
    }

    #[test]
    fn identity_on_negative_branch(t in 1e-9f64..1.0) {
        let x = BRANCH_POINT * (1.0 - t);
        let w = lambert_w0(x).unwrap();
        prop_assert!(w >= -1.0);
        prop_assert!((w * w.exp() - x).abs() <= 1e-10);
    }

    #[test]
    fn monotone(a in log_uniform(), b in log_uniform()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(lambert_w0(lo).unwrap() <= lambert_w0(hi).unwrap());
    }

    #[test]
    fn shifted_form_agrees(c in 0.01f64..1e6) {
        let direct = lambert_w0((c - 1.0) / E).unwrap() + 1.0;
        let shifted = lambert_w0_shifted(c);
        prop_assert!((direct - shifted).abs() <= 1e-9 * shifted + 1e-12);
    }

    #[test]
    fn bisection_finds_cube_roots(a in 0.001f64..1000.0) {
        let tol = Tolerance::new(1e-12, 200).unwrap();
        let r = bisect(|x| x * x * x - a, 0.0, a.max(1.0), tol).unwrap();
        prop_assert!((r - a.cbrt()).abs() <= 1e-10 * a.cbrt().max(1.0));
    }

    #[test]
    fn bisection_is_deterministic(a in 0.001f64..1000.0) {
        let tol = Tolerance::default();
        let f = |x: f64| x.ln() - a.ln();
        let first = bisect_bracket(f, 1e-6, 2000.0, tol).unwrap();
        let second = bisect_bracket(f, 1e-6, 2000.0, tol).unwrap();
        prop_assert_eq!(first, second);
    }
}

#[test]
fn fixed_points() {
    assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
    assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
    assert!((lambert_w0(BRANCH_POINT).unwrap() + 1.0).abs() < 1e-7);
}

#[test]
fn below_branch_point_is_rejected() {
    assert!(matches!(lambert_w0(-0.5), Err(Error::LambertDomain { .. })));
    assert!(matches!(lambert_w0(f64::NAN), Err(Error::LambertDomain { .. })));
}

#[test]
fn unbracketed_root_is_reported() {
    let err = bisect(|x| x * x + 1.0, -1.0, 1.0, Tolerance::default()).unwrap_err();
    assert!(matches!(err, Error::NoBracket { .. }));
}
