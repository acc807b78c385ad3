//! Overflow-safe scalar primitives used throughout the flow layers.

/// ln(2*pi), the normalization constant of the standard normal.
pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// log(sum(exp(v))) with the usual max-shift so large magnitudes do not
/// overflow. Returns -inf for an empty slice or all -inf entries.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf (or empty): sum is 0. +inf propagates as +inf.
        return m;
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Log-density of a standard normal evaluated at a vector: sum of
/// -x_i^2/2 - ln(2*pi)/2.
pub fn log_normal_pdf(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &xi in x {
        acc += -0.5 * xi * xi - 0.5 * LN_2PI;
    }
    acc
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid, sigma(x) * (1 - sigma(x)).
pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// log(1 + exp(x)) without overflow for large |x|.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// log(sigma(x)) = -softplus(-x).
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Inverse sigmoid. Caller must guarantee p in (0,1).
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Relative error with the guarded denominator max(|a|, |b|, 1e-8); this is
/// the convention every tolerance in the test suites is stated in.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logsumexp_matches_direct_sum_on_small_values() {
        let v = [0.1f64, -0.3, 0.7];
        let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v) - direct).abs() < 1e-14);
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        // exp(1000) overflows f64; the shifted form must not.
        let v = [1000.0, 1000.0];
        assert!((logsumexp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let w = [-1000.0, -1000.0];
        assert!((logsumexp(&w) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_of_all_neg_inf_is_neg_inf() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_normal_pdf_at_origin() {
        // Each coordinate contributes -ln(2 pi)/2.
        let d = 4;
        let expect = -(d as f64) * 0.5 * LN_2PI;
        assert!((log_normal_pdf(&vec![0.0; d]) - expect).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn softplus_is_accurate_in_both_tails() {
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        assert!(softplus(-50.0) > 0.0);
        assert!((softplus(-50.0) - (-50.0f64).exp()).abs() < 1e-30);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &x in &[-7.0, -0.2, 0.0, 1.3, 9.0] {
            assert!((logit(sigmoid(x)) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn rel_err_guards_small_denominators() {
        // Both near zero: guarded by 1e-8 so the error is absolute-like.
        assert!(rel_err(1e-12, 0.0) < 1e-3);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        // Shift invariance: logsumexp(v + c) = logsumexp(v) + c, up to
        // rounding of the shifted inputs.
        #[test]
        fn logsumexp_shift_invariance(
            v in proptest::collection::vec(-50.0f64..50.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = logsumexp(&shifted);
            let b = logsumexp(&v) + c;
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }

        // Monotonicity: adding an element can only increase the value.
        #[test]
        fn logsumexp_monotone_in_elements(
            v in proptest::collection::vec(-30.0f64..30.0, 1..6),
            extra in -30.0f64..30.0,
        ) {
            let mut w = v.clone();
            w.push(extra);
            prop_assert!(logsumexp(&w) >= logsumexp(&v) - 1e-12);
        }
    }
}
