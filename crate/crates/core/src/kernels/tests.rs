use super::*;
use crate::expr::Expression;
use approx::assert_relative_eq;
use proptest::prelude::*;

#[test]
fn frac_constant_closed_forms() {
    // Gamma(1) = 1, Gamma(1/2) = sqrt(pi): A(1,-1) = 1/pi
    assert_relative_eq!(
        frac_constant(1, 1.0),
        1.0 / std::f64::consts::PI,
        epsilon = 1e-12
    );
    // Gamma(3/2) = sqrt(pi)/2: A(2,-1) = 1/(2 pi)
    assert_relative_eq!(
        frac_constant(2, 1.0),
        1.0 / (2.0 * std::f64::consts::PI),
        epsilon = 1e-12
    );
    for d in 1..=3 {
        for alpha in [0.3, 0.9, 1.4, 1.9] {
            let v = frac_constant(d, alpha);
            assert!(v.is_finite() && v > 0.0);
        }
    }
}

#[test]
fn q_envelope_values() {
    let p = KernelParams {
        d: 1,
        alpha: 1.0,
        rho: 1.0,
    };
    // both terms equal 1 at the origin
    assert_relative_eq!(q_envelope(&p, 1.0, &[0.0]), 2.0, epsilon = 1e-14);
    for d in 1..=3 {
        let p = KernelParams {
            d,
            alpha: 0.7,
            rho: 0.3,
        };
        assert_relative_eq!(
            q_envelope(&p, 1.0, &vec![0.0; d]),
            2.0,
            epsilon = 1e-14
        );
    }
    // direct arithmetic of the display at d=1, alpha=1, rho=1, t=1, |z|=2:
    // e^{-4} + min(1, 1/2^2) = 0.26831563...
    let v = q_envelope(&p, 1.0, &[2.0]);
    assert_relative_eq!(v, (-4.0f64).exp() + 0.25, epsilon = 1e-14);
    assert_relative_eq!(v, 0.2683156388887342, epsilon = 1e-12);
}

#[test]
fn q_envelope_monotone_and_continuous_at_crossover() {
    let p = KernelParams {
        d: 2,
        alpha: 1.3,
        rho: 0.5,
    };
    let t = 0.7;
    let mut prev = f64::INFINITY;
    for i in 0..400 {
        let r = 1e-3 + i as f64 * 0.02;
        let v = q_envelope_radial(&p, t, r);
        assert!(v <= prev * (1.0 + 1e-12), "not decreasing at r = {r}");
        prev = v;
    }
    // crossover radius of the min: t^{-d/2} = t/r^{d+alpha}
    let r_star = t.powf((1.0 + p.d as f64 / 2.0) / (p.d as f64 + p.alpha));
    let eps = 1e-9;
    let a = q_envelope_radial(&p, t, r_star - eps);
    let b = q_envelope_radial(&p, t, r_star + eps);
    assert_relative_eq!(a, b, epsilon = 1e-6);
}

fn pv_of(expr: &str, x: &[f64], alpha: f64) -> PvResult {
    let phi = Expression::parse(expr, x.len()).unwrap();
    frac_laplacian_pv(
        &phi,
        x,
        alpha,
        &[0.2, 0.1, 0.05, 0.025],
        &PvConfig::default(),
    )
    .unwrap()
}

#[test]
fn pv_constant_vanishes() {
    let r = pv_of("42", &[0.3], 1.0);
    assert_eq!(r.value, 0.0);
}

#[test]
fn pv_reproduces_fourier_symbol_on_cosines() {
    // eigenrelation: the operator maps cos(xi .) to -|xi|^alpha cos(xi .)
    let r = pv_of("cos(x1)", &[0.0], 1.0);
    assert!(
        (r.value - (-1.0)).abs() <= 1e-3,
        "alpha=1, xi=1: {}",
        r.value
    );
    let r = pv_of("cos(2*x1)", &[0.0], 1.5);
    let want = -(2f64.powf(1.5));
    assert!(
        (r.value - want).abs() <= 5e-3,
        "alpha=1.5, xi=2: {} vs {want}",
        r.value
    );
    // off-origin evaluation picks up the cos(xi x) factor
    let r = pv_of("cos(x1)", &[0.7], 1.2);
    let want = -(0.7f64.cos());
    assert!(
        (r.value - want).abs() <= 0.01 * want.abs(),
        "x=0.7: {} vs {want}",
        r.value
    );
}

#[test]
fn pv_compactly_supported_bump_in_2d_is_negative_at_center() {
    // the operator applied at the max of a bump must be negative
    let r = pv_of("max(0, 1 - x1^2 - x2^2)^3", &[0.0, 0.0], 1.0);
    assert!(r.value < -0.1, "value {}", r.value);
}

#[test]
fn bundle_defaults_satisfy_all_inequalities() {
    let b = ExponentBundle::with_defaults(2, 2.0, 1.0, 1.0).unwrap();
    let q = b.q.unwrap();
    assert_relative_eq!(q, 2.0);
    assert_relative_eq!(b.q_star.unwrap(), 4.0 / 3.0);
    let beta = b.beta.unwrap();
    assert!(beta > 0.0 && beta < 2.0 / (2.0 * q));
    let gamma = b.gamma_exp.unwrap();
    assert!(gamma > 2.0 / (2.0 * 2.0) && gamma < 1.0);
    assert!(b.delta > 0.0 && b.delta < 0.5);
    // sharp envelope constants: e^{|x|} >= M |x|^r with M = (e/r)^r
    let m3 = b.m3;
    for t in [0.01f64, 0.1, 1.0, 5.0, 50.0] {
        assert!(t.exp() >= m3 * t.powf(1.0 / 6.0) * (1.0 - 1e-12));
    }
    // sharpness: equality is attained at x = r
    let r = 1.0f64 / 6.0;
    assert_relative_eq!(r.exp(), m3 * r.powf(r), epsilon = 1e-12);

    let b1 = ExponentBundle::with_defaults(1, 2.0, 1.0, 1.0).unwrap();
    assert!(b1.q.is_none() && b1.beta.is_none());
}

proptest! {
    #[test]
    fn bundle_rejects_out_of_range_exponents(
        p in 1.01f64..6.0,
        alpha in 0.1f64..1.9,
        beta_t in -0.5f64..1.5,
        gamma_t in -0.5f64..1.5,
        delta_t in -0.5f64..1.5,
    ) {
        let d = 2usize;
        let df = 2.0;
        let q = p / (p - 1.0);
        let beta_lo = df / 2.0 - 1.0;
        let beta_hi = df / (2.0 * q);
        let beta = beta_lo + beta_t * (beta_hi - beta_lo);
        let gamma_lo = df / (2.0 * p);
        let gamma = gamma_lo + gamma_t * (1.0 - gamma_lo);
        let delta = delta_t * 0.5 * (2.0 - alpha);
        let ok_beta = beta_t > 0.0 && beta_t < 1.0;
        let ok_gamma = gamma_t > 0.0 && gamma_t < 1.0;
        let ok_delta = delta_t > 0.0 && delta_t < 1.0;
        let r = ExponentBundle::new(d, p, alpha, 1.0, Some(beta), Some(gamma), delta);
        prop_assert_eq!(r.is_ok(), ok_beta && ok_gamma && ok_delta);
    }
}

#[test]
fn lemma22_zero_mu_passes_trivially() {
    let bundle = ExponentBundle::with_defaults(1, 2.0, 1.0, 1.0).unwrap();
    let mu = Expression::parse("0", 1).unwrap();
    let report =
        check_lemma22(1, 1.0, &bundle, &mu, 1.0, &[1.0, 0.25], 1.0, &[vec![0.0]]).unwrap();
    assert!(report.pass);
    for d in &report.displays {
        for row in &d.rows {
            assert_eq!(row.lhs, 0.0);
            assert_eq!(row.ratio, 0.0);
        }
    }
}

#[test]
fn lemma22_explicit_d1_bound_holds_for_indicator() {
    let bundle = ExponentBundle::with_defaults(1, 2.0, 1.0, 1.0).unwrap();
    let mu = Expression::parse("step(1 - x1^2)", 1).unwrap();
    let report =
        check_lemma22(1, 1.0, &bundle, &mu, 1.0, &[1.0], 1.0, &[vec![0.0]]).unwrap();
    let explicit = &report.displays[0];
    assert_eq!(explicit.explicit_bound, Some(1.0));
    let row = &explicit.rows[0];
    // |mu|_1 = 2, so the stated bound is lhs <= 8
    assert!(row.lhs <= 8.0, "lhs {}", row.lhs);
    assert!(row.ratio <= 1.0 && row.ratio > 0.2, "ratio {}", row.ratio);
    assert!(explicit.pass);
}

#[test]
fn lemma22_d2_ratios_bounded_nonincreasing_quick() {
    let bundle = ExponentBundle::with_defaults(2, 2.0, 1.0, 1.0).unwrap();
    let mu = Expression::parse("step(1 - x1^2 - x2^2)", 2).unwrap();
    let report = check_lemma22(
        2,
        1.0,
        &bundle,
        &mu,
        1.0,
        &[1.0, 0.25],
        1.0,
        &[vec![0.0, 0.0]],
    )
    .unwrap();
    assert!(report.pass, "{:#?}", report.displays);
}

#[test]
fn mu_norms_of_indicator() {
    let mu = Expression::parse("step(1 - x1^2)", 1).unwrap();
    // |1_{[-1,1]}|_1 = 2, |.|_2 = sqrt(2)
    assert_relative_eq!(mu_norm(&mu, 1, 1.0, 1.0).unwrap(), 2.0, epsilon = 1e-5);
    assert_relative_eq!(
        mu_norm(&mu, 1, 1.0, 2.0).unwrap(),
        2f64.sqrt(),
        epsilon = 1e-5
    );
    let disk = Expression::parse("step(1 - x1^2 - x2^2)", 2).unwrap();
    assert_relative_eq!(
        mu_norm(&disk, 2, 1.0, 1.0).unwrap(),
        std::f64::consts::PI,
        epsilon = 1e-4
    );
}

#[test]
fn envelope_pure_gaussian_upper_dominates() {
    // a = 0: density is exactly (4 pi t)^{-d/2} exp(-|z|^2/(4t)); the Gaussian
    // envelope term dominates for rho < 1/4
    let noise = NoiseParams::new(1.0, 0.0, 1);
    let report = empirical_density_envelope(&noise, 1.0, 1_000_000, 314);
    assert_eq!(report.upper_violation_fraction, 0.0);
    assert!(report.violation_fraction < 1e-3, "{report:?}");
    assert!(report.pass);
    assert!(report.c3 >= report.c1 && report.c1 > 0.0);
}

#[test]
fn envelope_stable_tail_has_exponent_d_plus_alpha() {
    let noise = NoiseParams::new(1.0, 1.0, 1);
    let report = empirical_density_envelope(&noise, 1.0, 1_000_000, 315);
    let slope = report.tail_slope.expect("tail decade present");
    assert!(
        (slope - (-2.0)).abs() <= 0.3,
        "tail slope {slope}, want -2 +- 0.3"
    );
    assert!(report.c3 >= report.c1 && report.c1 > 0.0);
    assert!(report.pass, "{report:?}");
}
