// Plain quadrature, the cascade-corrected integral, the modulated
// exponential, and the voided-interval length identities.

use proptest::prelude::*;

use sfl_core::bigscale::{pow_tower, BigReal};
use sfl_core::cascade::{
    generalized_solution, run_cascade, CascadeConfig, CascadeTrace, RescalingSchedule,
};
use sfl_core::genint::{
    cantor_residual_length, cantor_void_length, extended_integral, measure_replacement,
    modulated_exp, riemann, DfSource, Integrand,
};
use sfl_core::SflError;

fn big(s: &str, p: u32) -> BigReal {
    BigReal::parse_decimal(s, p).unwrap()
}

fn trivial_trace(eta: &str, depth: u32) -> CascadeTrace {
    let config = CascadeConfig::new(big(eta, 256), depth, RescalingSchedule::Never, 0);
    run_cascade(&config).unwrap()
}

// ----- plain quadrature ------------------------------------------------------

#[test]
fn riemann_integrates_constant_exactly() {
    let f = Integrand::new(|x| BigReal::one(x.prec()));
    let got = riemann(&f, &BigReal::zero(256), &BigReal::one(256), 7).unwrap();
    assert!(got.ulp_distance(&BigReal::one(256)) <= 4.0);
}

#[test]
fn riemann_integrates_identity_to_one_half() {
    let f = Integrand::new(|x| x.clone());
    let got = riemann(&f, &BigReal::zero(256), &BigReal::one(256), 3).unwrap();
    assert!(got.ulp_distance(&big("0.5", 256)) <= 4.0);
}

#[test]
fn riemann_log_derivative_over_unit_log_interval() {
    // integral of 1/t over [1, e] is exactly 1
    let one = BigReal::one(256);
    let e = one.exp();
    let f = Integrand::new(|x| x.recip().unwrap());
    let got = riemann(&f, &one, &e, 64).unwrap();
    let err = got.sub(&BigReal::one(256)).abs();
    assert!(err < big("1e-30", 256), "quadrature error {err}");
}

#[test]
fn riemann_rejects_unordered_bounds_and_zero_panels() {
    let f = Integrand::new(|x| x.clone());
    assert!(matches!(
        riemann(&f, &BigReal::one(64), &BigReal::zero(64), 4),
        Err(SflError::Domain(_))
    ));
    assert!(matches!(
        riemann(&f, &BigReal::one(64), &BigReal::one(64), 4),
        Err(SflError::Domain(_))
    ));
    assert!(matches!(
        riemann(&f, &BigReal::zero(64), &BigReal::one(64), 0),
        Err(SflError::Domain(_))
    ));
}

// ----- replaced log-measure --------------------------------------------------

#[test]
fn measure_replacement_on_trivial_trace_telescopes() {
    // depth 5, eta = 0.1: the factor product is (1 - 1e-64) / 0.9, so the
    // accumulated logarithm sits 1e-64-close below -ln(0.9).
    let trace = trivial_trace("0.1", 5);
    let got = measure_replacement(&trace).unwrap();
    let reference = big("0.9", 256).ln().unwrap().neg();
    let diff = got.sub(&reference).abs();
    assert!(diff < big("1e-63", 256), "telescoping defect {diff}");
    assert!(got < reference, "partial product must sit below the limit");
    assert!(got > BigReal::zero(256), "replaced measure is positive");
}

#[test]
fn measure_replacement_depth_one_reference_value() {
    // factors 1.1 and 1.01: ln(1.111) = 0.10526...
    let trace = trivial_trace("0.1", 1);
    let got = measure_replacement(&trace).unwrap();
    let reference = big("1.111", 256).ln().unwrap();
    assert!(got.ulp_distance(&reference) <= 16.0);
}

#[test]
fn measure_replacement_of_empty_trace_is_zero() {
    let trace = CascadeTrace::empty(big("0.3", 128), 128);
    let got = measure_replacement(&trace).unwrap();
    assert!(got.is_zero());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn measure_replacement_tail_is_bounded_by_scale_tower(
        eta_raw in 0.05f64..0.3,
        depth in 1u32..5,
    ) {
        let p = 320;
        let eta = BigReal::from_f64(eta_raw, p);
        let config = CascadeConfig::new(eta.clone(), depth, RescalingSchedule::Never, 0)
            .with_precision(p);
        let trace = run_cascade(&config).unwrap();
        let got = measure_replacement(&trace).unwrap();
        let limit = BigReal::one(p).sub(&eta).ln().unwrap().neg();
        let tail = pow_tower(&eta, depth + 1).unwrap().mul_exp2(1);
        let diff = limit.sub(&got);
        prop_assert!(!diff.is_sign_negative(), "partial sum exceeded its limit");
        prop_assert!(diff < tail, "tail {} not within 2 * eta^(2^(depth+1)) = {}", diff, tail);
    }
}

// ----- extended integral -----------------------------------------------------

#[test]
fn extended_integral_with_zero_epsilon_is_plain_quadrature() {
    let trace = trivial_trace("0.1", 3);
    let tau = generalized_solution(&trace).unwrap();
    let f = Integrand::new(|x| x.clone()).with_derivative(|x| BigReal::one(x.prec()));
    let a = big("0.9", 256);
    let t = BigReal::one(256);
    let result = extended_integral(&f, &a, &t, &BigReal::zero(256), &trace, &tau, 8).unwrap();
    let plain = riemann(&f, &a, &t, 8).unwrap();
    assert_eq!(result.total.prec(), plain.prec());
    assert!(
        result.total.ulp_distance(&plain) == 0.0,
        "zero epsilon must reproduce the plain integral bit for bit"
    );
    assert_eq!(result.correction_terms.len(), 3);
}

#[test]
fn extended_integral_constant_integrand_has_pure_log_corrections() {
    // f = 1, df = 0: each correction term collapses to ln(1/t'_{n+}).
    let trace = trivial_trace("0.1", 3);
    let tau = generalized_solution(&trace).unwrap();
    let f = Integrand::new(|x| BigReal::one(x.prec()))
        .with_derivative(|x| BigReal::zero(x.prec()));
    let a = big("0.9", 256);
    let t = BigReal::one(256);
    let eps = big("0.01", 256);
    let result = extended_integral(&f, &a, &t, &eps, &trace, &tau, 8).unwrap();

    let mut sum = BigReal::zero(256);
    for (term, t_plus) in result.correction_terms.iter().zip(&trace.t_plus) {
        let oracle = t_plus.recip().unwrap().ln().unwrap();
        assert!(term.ulp_distance(&oracle) <= 2.0);
        assert!(term.is_sign_negative(), "log weights lie below zero");
        sum = sum.add(term);
    }
    let oracle_total = result.riemann_part.add(&eps.mul(&sum));
    assert!(result.total.ulp_distance(&oracle_total) <= 2.0);

    // the plain part integrates 1 over [0.9, 1]
    assert!(result.riemann_part.ulp_distance(&big("0.1", 256)) <= 8.0);
}

#[test]
fn extended_integral_carries_the_first_order_taylor_summand() {
    // with df = 1 each term gains tau_g(t) * t relative to the df = 0 run
    let trace = trivial_trace("0.1", 3);
    let tau = generalized_solution(&trace).unwrap();
    let a = big("0.9", 256);
    let t = BigReal::one(256);
    let eps = big("0.01", 256);

    let with_df = Integrand::new(|x| x.clone()).with_derivative(|x| BigReal::one(x.prec()));
    let without_df = Integrand::new(|x| x.clone()).with_derivative(|x| BigReal::zero(x.prec()));
    let got = extended_integral(&with_df, &a, &t, &eps, &trace, &tau, 8).unwrap();
    let base = extended_integral(&without_df, &a, &t, &eps, &trace, &tau, 8).unwrap();

    let shift = tau.value(&t).unwrap().mul(&t);
    for ((term, bare), t_plus) in got
        .correction_terms
        .iter()
        .zip(&base.correction_terms)
        .zip(&trace.t_plus)
    {
        let log_weight = t_plus.recip().unwrap().ln().unwrap();
        let oracle = bare.add(&shift.mul(&log_weight));
        assert!(term.ulp_distance(&oracle) <= 8.0);
    }
}

#[test]
fn extended_integral_finite_difference_fallback_matches_analytic_derivative() {
    let trace = trivial_trace("0.1", 3);
    let tau = generalized_solution(&trace).unwrap();
    let a = big("0.9", 256);
    let t = BigReal::one(256);
    let eps = big("0.01", 256);

    let analytic = Integrand::new(|x| x.square()).with_derivative(|x| x.mul_exp2(1));
    let fallback = Integrand::new(|x| x.square());
    let got_analytic = extended_integral(&analytic, &a, &t, &eps, &trace, &tau, 8).unwrap();
    let got_fallback = extended_integral(&fallback, &a, &t, &eps, &trace, &tau, 8).unwrap();

    assert_eq!(got_analytic.df_source, DfSource::Provided);
    assert_eq!(got_fallback.df_source, DfSource::FiniteDifference);
    // central difference with step 2^(-64) leaves an O(2^(-128)) defect
    let diff = got_analytic.total.sub(&got_fallback.total).abs();
    assert!(diff < big("1e-36", 256), "fallback drift {diff}");
}

#[test]
fn extended_integral_corrections_decrease_on_trivial_traces() {
    let trace = trivial_trace("0.25", 5);
    let tau = generalized_solution(&trace).unwrap();
    let f = Integrand::new(|x| x.clone()).with_derivative(|x| BigReal::one(x.prec()));
    let a = big("0.75", 256);
    let t = BigReal::one(256);
    let result =
        extended_integral(&f, &a, &t, &big("1e-4", 256), &trace, &tau, 8).unwrap();
    for pair in result.correction_terms.windows(2) {
        assert!(
            pair[1].abs() < pair[0].abs(),
            "correction magnitudes must decrease level over level"
        );
    }
}

#[test]
fn extended_integral_residual_bound_tracks_the_scale_tower() {
    // for |f| = 1 the bound is exactly 2 * eta^(2^(depth+1))
    let trace = trivial_trace("0.1", 3);
    let tau = generalized_solution(&trace).unwrap();
    let f = Integrand::new(|x| BigReal::one(x.prec()));
    let a = big("0.9", 256);
    let t = BigReal::one(256);
    let result = extended_integral(&f, &a, &t, &big("0.01", 256), &trace, &tau, 4).unwrap();
    let oracle = pow_tower(&big("0.1", 256), 4).unwrap().mul_exp2(1);
    assert!(result.residual_bound.ulp_distance(&oracle) <= 2.0);
    assert!(!result.residual_bound.is_sign_negative());
}

#[test]
fn extended_integral_rejects_negative_epsilon_and_mismatched_solution() {
    let trace = trivial_trace("0.1", 3);
    let tau = generalized_solution(&trace).unwrap();
    let f = Integrand::new(|x| x.clone());
    let a = big("0.9", 256);
    let t = BigReal::one(256);
    assert!(matches!(
        extended_integral(&f, &a, &t, &big("-1e-9", 256), &trace, &tau, 4),
        Err(SflError::Domain(_))
    ));

    let other = trivial_trace("0.2", 3);
    let other_tau = generalized_solution(&other).unwrap();
    assert!(matches!(
        extended_integral(&f, &a, &t, &big("0.01", 256), &trace, &other_tau, 4),
        Err(SflError::Domain(_))
    ));
}

#[test]
fn extended_integral_json_exposes_the_result_fields() {
    let trace = trivial_trace("0.1", 2);
    let tau = generalized_solution(&trace).unwrap();
    let f = Integrand::new(|x| x.clone());
    let result = extended_integral(
        &f,
        &big("0.9", 256),
        &BigReal::one(256),
        &big("0.01", 256),
        &trace,
        &tau,
        4,
    )
    .unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&result.to_json()).unwrap();
    let object = parsed.as_object().unwrap();
    for key in [
        "riemann_part",
        "correction_terms",
        "epsilon",
        "total",
        "residual_bound",
        "df_source",
    ] {
        assert!(object.contains_key(key), "missing field {key}");
    }
    assert_eq!(object.len(), 6);
    assert_eq!(object["df_source"], "finite_difference");
    assert_eq!(object["correction_terms"].as_array().unwrap().len(), 2);
}

// ----- modulated exponential -------------------------------------------------

#[test]
fn modulated_exp_first_rescaled_plus_point() {
    // eta = 0.1: the next scale is 0.01 / 0.9, so t_{1+} = 91/90
    let got = modulated_exp(&big("0.1", 256), 3).unwrap();
    let oracle = BigReal::from_u64(91, 256)
        .div(&BigReal::from_u64(90, 256))
        .unwrap();
    assert!(got.plus_points[1].ulp_distance(&oracle) <= 4.0);

    // eta = 0.2: 0.04 / 0.8 = 0.05 exactly
    let got = modulated_exp(&big("0.2", 256), 2).unwrap();
    assert!(got.plus_points[1].ulp_distance(&big("1.05", 256)) <= 4.0);
}

#[test]
fn modulated_exp_scale_increments_follow_the_resolved_recursion() {
    // eta_{k+1} / eta_k^2 = 1 / (1 - eta_k) at every level
    let got = modulated_exp(&big("0.3", 256), 5).unwrap();
    let one = BigReal::one(256);
    for pair in got.plus_points.windows(2) {
        // recovering a deep scale from 1 + eta sheds its lowest bits, so
        // compare absolutely rather than in ulps
        let eta_k = pair[0].sub(&one);
        let eta_next = pair[1].sub(&one);
        let lhs = eta_next.div(&eta_k.square()).unwrap();
        let rhs = one.sub(&eta_k).recip().unwrap();
        let diff = lhs.sub(&rhs).abs();
        assert!(diff < big("1e-50", 256), "increment ratio defect {diff}");
    }
}

#[test]
fn modulated_exp_plus_points_decrease_toward_one() {
    let got = modulated_exp(&big("0.4", 256), 6).unwrap();
    let one = BigReal::one(256);
    assert_eq!(got.plus_points.len(), 7);
    assert!(got.plus_points[0].ulp_distance(&big("1.4", 256)) <= 2.0);
    for pair in got.plus_points.windows(2) {
        assert!(pair[1] < pair[0]);
        assert!(pair[1] > one);
    }
}

#[test]
fn modulated_exp_reaches_the_degenerate_limit() {
    // as eta tends to 0 every plus-point tends to 1 and the value to e^(depth+1)
    let got = modulated_exp(&big("1e-40", 256), 4).unwrap();
    let e5 = BigReal::from_u64(5, 256).exp();
    let rel = got.value.sub(&e5).abs().div(&e5).unwrap();
    assert!(rel < big("1e-38", 256), "relative defect {rel}");
}

#[test]
fn modulated_exp_reports_the_raw_exponent_sum() {
    let got = modulated_exp(&big("0.1", 256), 3).unwrap();
    let mut oracle = BigReal::zero(256);
    for t_plus in &got.plus_points {
        oracle = oracle.add(&t_plus.recip().unwrap());
    }
    assert!(got.exponent_sum.ulp_distance(&oracle) <= 2.0);
    assert!(got.value.ulp_distance(&got.exponent_sum.exp()) == 0.0);
}

#[test]
fn modulated_exp_rejects_scales_outside_the_contracting_range() {
    assert!(matches!(
        modulated_exp(&big("0.5", 128), 3),
        Err(SflError::Domain(_))
    ));
    assert!(matches!(
        modulated_exp(&big("0.7", 128), 3),
        Err(SflError::Domain(_))
    ));
    assert!(matches!(
        modulated_exp(&BigReal::zero(128), 3),
        Err(SflError::Domain(_))
    ));
    assert!(matches!(
        modulated_exp(&big("0.1", 128), 0),
        Err(SflError::Domain(_))
    ));
}

// ----- voided-interval lengths -----------------------------------------------

#[test]
fn void_length_matches_telescoped_form_at_reference_point() {
    // 2 * (0.25 - 0.25^(2^21)) rounds to 0.5 at 256 bits: the tail term
    // 2^(-2^22) sits far below one ulp of 0.5.
    let got = cantor_void_length(&big("0.25", 256), 20).unwrap();
    assert!(got.ulp_distance(&big("0.5", 256)) <= 4.0);
}

#[test]
fn residual_length_exact_dyadic_reference() {
    // eps = 0.5, depth 5: 2 * (2^-2 + 2^-4 + 2^-8 + 2^-16 + 2^-32), every
    // partial sum exactly representable
    let got = cantor_residual_length(&big("0.5", 256), 5).unwrap();
    let oracle = big("0.6328430180437862873077392578125", 256);
    assert!(got.ulp_distance(&oracle) == 0.0);
}

#[test]
fn residual_length_at_depth_zero_is_zero() {
    let got = cantor_residual_length(&big("0.3", 128), 0).unwrap();
    assert!(got.is_zero());
}

#[test]
fn void_length_approaches_twice_the_seed() {
    // thirteen termwise roundings, so allow a small ulp budget
    let got = cantor_void_length(&big("0.3", 256), 12).unwrap();
    assert!(got.ulp_distance(&big("0.6", 256)) <= 64.0);
}

#[test]
fn cantor_lengths_reject_seeds_outside_the_unit_interval() {
    for bad in ["0", "1", "1.5", "-0.25"] {
        assert!(matches!(
            cantor_void_length(&big(bad, 128), 3),
            Err(SflError::Domain(_))
        ));
        assert!(matches!(
            cantor_residual_length(&big(bad, 128), 3),
            Err(SflError::Domain(_))
        ));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn void_length_telescopes(eps_raw in 0.05f64..0.95, depth in 0u32..8) {
        let p = 192;
        let eps = BigReal::from_f64(eps_raw, p);
        let got = cantor_void_length(&eps, depth).unwrap();
        let tail = pow_tower(&eps, depth + 1).unwrap();
        let oracle = eps.sub(&tail).mul_exp2(1);
        prop_assert!(
            got.ulp_distance(&oracle) <= 64.0,
            "termwise sum strays from the telescoped form: {} vs {}",
            got,
            oracle
        );
    }

    #[test]
    fn void_and_residual_lengths_are_positive_and_monotone(
        eps_raw in 0.05f64..0.95,
        depth in 1u32..8,
    ) {
        let p = 192;
        let eps = BigReal::from_f64(eps_raw, p);
        let void = cantor_void_length(&eps, depth).unwrap();
        let residual = cantor_residual_length(&eps, depth).unwrap();
        let residual_next = cantor_residual_length(&eps, depth + 1).unwrap();
        prop_assert!(void > BigReal::zero(p));
        // capped by twice the seed in exact arithmetic; the termwise sum may
        // overshoot by a few ulps once the true tail drops below one ulp
        let cap = eps.mul_exp2(1);
        let slack = cap.ulp().mul(&BigReal::from_u64(64, p));
        prop_assert!(void <= cap.add(&slack), "void length strays above twice the seed");
        prop_assert!(residual > BigReal::zero(p));
        // deeper voiding keeps at least as much measured length; the
        // increment can round away entirely at extreme depths
        prop_assert!(residual_next >= residual);
    }
}
