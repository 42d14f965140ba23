//! Property tests for the bracket closed forms.
//!
//! The independent reference route used throughout: build explicit 2-d
//! vectors `g_d = a·(1, 0)` and `g_c = b·(cos φ, sin φ)` realising the
//! sampled stats, combine them as `λ·g_d + (1−λ)·g_c`, and take the squared
//! norm. The closed forms must reproduce that quantity without ever having
//! seen the vectors.

use kdlab_core::geometry::{
    GradientStats, LambdaBounds, bracket_coeffs, bracket_minimum, bracket_value,
    lambda_max_descent, lambda_min_descent,
};
use proptest::prelude::*;

fn q_from_vectors(a: f64, b: f64, c: f64, lambda: f64) -> f64 {
    let s = (1.0 - c * c).max(0.0).sqrt();
    let x = lambda * a + (1.0 - lambda) * (b * c);
    let y = (1.0 - lambda) * (b * s);
    x * x + y * y
}

/// |x − y| within `rtol` of the larger magnitude, with an absolute floor for
/// values drowned in f64 rounding noise (inputs here are O(1)).
fn close(x: f64, y: f64, rtol: f64, atol: f64) -> bool {
    (x - y).abs() <= rtol * x.abs().max(y.abs()) + atol
}

fn stats(a: f64, b: f64, c: f64) -> GradientStats {
    GradientStats::new(a, b, c).unwrap()
}

proptest! {
    /// Q is a squared norm: never meaningfully negative, and it agrees with
    /// the explicit vector construction.
    #[test]
    fn bracket_is_a_squared_norm(
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
        c in -1.0..=1.0f64,
        lambda in 0.0..=1.0f64,
    ) {
        let q = bracket_value(&stats(a, b, c), lambda).unwrap();
        prop_assert!(q >= -1e-12);
        let reference = q_from_vectors(a, b, c, lambda);
        prop_assert!(close(q, reference, 1e-10, 1e-13), "q={q} ref={reference}");
    }

    /// The direct evaluation and the regrouped quadratic are the same
    /// polynomial.
    #[test]
    fn coefficients_reproduce_direct_evaluation(
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
        c in -1.0..=1.0f64,
        lambda in 0.0..=1.0f64,
    ) {
        let st = stats(a, b, c);
        let q = bracket_value(&st, lambda).unwrap();
        let poly = bracket_coeffs(&st).eval(lambda);
        prop_assert!(close(q, poly, 1e-12, 1e-14), "q={q} poly={poly}");
    }

    /// Swapping the two gradients mirrors the curve: Q(a,b; λ) = Q(b,a; 1−λ).
    /// On dyadic λ the complement is exact, so the identity holds bitwise.
    #[test]
    fn swap_symmetry_is_exact_on_dyadic_lambdas(
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
        c in -1.0..=1.0f64,
        k in 0usize..=256,
    ) {
        let lambda = k as f64 / 256.0;
        let q_ab = bracket_value(&stats(a, b, c), lambda).unwrap();
        let q_ba = bracket_value(&stats(b, a, c), 1.0 - lambda).unwrap();
        prop_assert_eq!(q_ab.to_bits(), q_ba.to_bits());
    }

    /// Q(0) = b² and Q(1) = a², bit for bit.
    #[test]
    fn endpoint_identities_hold_exactly(
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
        c in -1.0..=1.0f64,
    ) {
        let st = stats(a, b, c);
        prop_assert_eq!(bracket_value(&st, 0.0).unwrap().to_bits(), (b * b).to_bits());
        prop_assert_eq!(bracket_value(&st, 1.0).unwrap().to_bits(), (a * a).to_bits());
    }

    /// Q at the unclamped vertex satisfies Q_min·A = a²b²(1 − cos²φ), over
    /// the full cosine range via the cancellation-free minimum.
    #[test]
    fn vertex_identity(
        a in 0.01..1.0f64,
        b in 0.01..1.0f64,
        c in -1.0..=1.0f64,
    ) {
        let coeffs = bracket_coeffs(&stats(a, b, c));
        prop_assume!(coeffs.a2 > 1e-12);
        let lhs = bracket_minimum(&stats(a, b, c)).unwrap() * coeffs.a2;
        let rhs = a * a * b * b * ((1.0 - c) * (1.0 + c));
        prop_assert!(close(lhs, rhs, 1e-9, 1e-18), "lhs={lhs} rhs={rhs}");
        // The polynomial route agrees too while the vertex is not drowned in
        // cancellation (|cos φ| away from 1).
        if c.abs() < 0.99 {
            let poly = coeffs.vertex_value().unwrap() * coeffs.a2;
            prop_assert!(close(poly, rhs, 1e-9, 1e-15), "poly={poly} rhs={rhs}");
        }
    }

    /// Closed-form arg-extrema agree with a 1e-4-step grid sweep of the
    /// vector route, on the magnitude scale the simulation samples from.
    #[test]
    fn controllers_agree_with_grid_sweep(
        a in 1e-5..0.1f64,
        b in 1e-5..0.1f64,
        c in -0.999..=0.999f64,
    ) {
        let bounds = LambdaBounds::default();
        let st = stats(a, b, c);
        let step = 1e-4;
        let n = ((bounds.hi() - bounds.lo()) / step).round() as usize;
        let mut arg_min = (f64::INFINITY, 0.0);
        let mut arg_max = (f64::NEG_INFINITY, 0.0);
        for k in 0..=n {
            let l = if k == n { bounds.hi() } else { bounds.lo() + k as f64 * step };
            let q = q_from_vectors(a, b, c, l);
            if q < arg_min.0 {
                arg_min = (q, l);
            }
            if q > arg_max.0 {
                arg_max = (q, l);
            }
        }
        let min_rec = lambda_min_descent(&st, bounds).unwrap();
        let max_rec = lambda_max_descent(&st, bounds).unwrap();
        prop_assert!((min_rec.lambda.value() - arg_min.1).abs() <= step + 1e-12);
        prop_assert!((max_rec.lambda.value() - arg_max.1).abs() <= step + 1e-12);
        prop_assert!((min_rec.q_value - arg_min.0).abs() <= 1e-9);
        prop_assert!((max_rec.q_value - arg_max.0).abs() <= 1e-9);
    }

    /// The recommendation's λ always lies inside its declared bounds, and the
    /// predicted change is never positive.
    #[test]
    fn recommendations_stay_in_bounds(
        a in 1e-6..1.0f64,
        b in 1e-6..1.0f64,
        c in -1.0..=1.0f64,
        lo in 0.01..0.4f64,
        width in 0.05..0.5f64,
        eta in 1e-4..1.0f64,
    ) {
        let bounds = LambdaBounds::new(lo, (lo + width).min(0.99)).unwrap();
        let st = stats(a, b, c);
        for rec in [
            lambda_min_descent(&st, bounds).unwrap(),
            lambda_max_descent(&st, bounds).unwrap(),
        ] {
            prop_assert!(bounds.contains(rec.lambda.value()));
            prop_assert!(rec.predicted_delta(eta) <= 0.0);
        }
    }
}
