use super::*;
use crate::path::PathConfig;

fn spec_2d(c: &str, b_hat: [&str; 2], f: &str, g: &str) -> ProblemSpec {
    ProblemSpec {
        d: 2,
        a: 1.0,
        alpha: 1.0,
        p: 2.0,
        b: VectorExpression::zero(2),
        c: Expression::parse(c, 2).unwrap(),
        b_hat: VectorExpression::parse(&b_hat, 2).unwrap(),
        h: Expression::parse("0", 2).unwrap(),
        f: Expression::parse(f, 2).unwrap(),
        g: Expression::parse(g, 2).unwrap(),
        domain: Domain::ball(vec![0.0, 0.0], 1.0).unwrap(),
    }
}

fn quick_cfg(n_paths: usize, seed: u64) -> SolveConfig {
    SolveConfig {
        k_ladder: vec![2, 4],
        n_paths,
        path: PathConfig::new(2e-3, 0.3, 50.0),
        seed,
        probes: vec![vec![0.0, 0.0], vec![0.3, 0.2]],
        extrapolation_tol: 0.02,
        mollifier_points: 16,
        cache_resolution: 0,
        validation_mode: false,
    }
}

#[test]
fn weight_rate_reduces_to_ck_for_zero_bhat() {
    let spec = spec_2d("x1", ["0", "0"], "0", "0");
    let rate = weight_rate(&spec, 2, 16, 0).unwrap();
    // c(x) = x1 is fixed by the even kernel
    assert!((rate.value(&[0.4, 0.1]).unwrap() - 0.4).abs() < 1e-6);
}

#[test]
fn weight_rate_of_identity_bhat_is_dimension() {
    let spec = spec_2d("0", ["x1", "x2"], "0", "0");
    let rate = weight_rate(&spec, 2, 24, 0).unwrap();
    assert!((rate.value(&[0.2, -0.3]).unwrap() - 2.0).abs() < 1e-5);
}

#[test]
fn constant_rate_is_detected_as_constant() {
    let spec = spec_2d("-1", ["0", "0"], "0", "0");
    let rate = weight_rate(&spec, 4, 16, 0).unwrap();
    assert_eq!(rate.as_const(), Some(-1.0));
    assert_eq!(rate.value(&[0.99, 0.0]).unwrap(), -1.0);
}

#[test]
fn trivial_data_gives_exact_constant() {
    let spec = spec_2d("0", ["0", "0"], "0", "1");
    let cfg = quick_cfg(500, 11);
    let est = estimate_u(&spec, &cfg, &[0.0, 0.0], 2).unwrap();
    assert_eq!(est.mean, 1.0);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn solve_on_constant_data_converges_immediately() {
    let spec = spec_2d("0", ["0", "0"], "0", "2.5");
    let cfg = quick_cfg(200, 12);
    let report = solve(&spec, &cfg).unwrap();
    for p in &report.probes {
        assert_eq!(p.u_star, 2.5);
        assert_eq!(p.stderr, 0.0);
        assert_eq!(p.converged_at, Some(4));
    }
}

#[test]
fn killing_shrinks_the_estimate() {
    // c = -1: u(0) = E[e^{-tau}] must fall strictly inside (0, 1)
    let spec = spec_2d("-1", ["0", "0"], "0", "1");
    let cfg = quick_cfg(2_000, 13);
    let est = estimate_u(&spec, &cfg, &[0.0, 0.0], 2).unwrap();
    assert!(est.mean > 0.0 && est.mean < 1.0, "mean {}", est.mean);
}

#[test]
fn payoff_is_linear_in_g_pathwise() {
    // with c = 0, b_hat = 0 the weight is exactly 1 and the per-path payoff
    // for g = g1 + g2 is the exact sum of the per-path payoffs
    let g1 = spec_2d("0", ["0", "0"], "0", "x1");
    let g2 = spec_2d("0", ["0", "0"], "0", "3");
    let sum = spec_2d("0", ["0", "0"], "0", "x1 + 3");
    let cfg = quick_cfg(400, 14);
    let rate = ConstField(0.0);
    let d1 = estimate_u_detailed(&g1, &cfg, &rate, &[0.0, 0.0], 0).unwrap();
    let d2 = estimate_u_detailed(&g2, &cfg, &rate, &[0.0, 0.0], 0).unwrap();
    let ds = estimate_u_detailed(&sum, &cfg, &rate, &[0.0, 0.0], 0).unwrap();
    for ((a, b), s) in d1.payoffs.iter().zip(&d2.payoffs).zip(&ds.payoffs) {
        assert_eq!(a + b, *s);
    }
    assert!(
        (d1.estimate.mean + d2.estimate.mean - ds.estimate.mean).abs()
            <= 1e-13 * (1.0 + ds.estimate.mean.abs())
    );
}

#[test]
fn nonnegative_data_gives_nonnegative_estimates() {
    let spec = spec_2d("0", ["0", "0"], "1", "max(x1, 0)");
    let cfg = quick_cfg(1_000, 15);
    let rate = ConstField(0.0);
    let d = estimate_u_detailed(&spec, &cfg, &rate, &[0.1, 0.0], 0).unwrap();
    assert!(d.payoffs.iter().all(|p| *p >= 0.0));
    assert!(d.estimate.mean >= 0.0);
}

#[test]
fn identical_config_reproduces_report() {
    let spec = || spec_2d("-0.5", ["x1", "x2"], "1", "x1");
    let cfg = quick_cfg(400, 16);
    let r1 = solve(&spec(), &cfg).unwrap();
    let r2 = solve(&spec(), &cfg).unwrap();
    assert_eq!(r1.rows.len(), r2.rows.len());
    for (a, b) in r1.rows.iter().zip(&r2.rows) {
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.k, b.k);
    }
}

#[test]
fn moments_with_zero_h_are_exact() {
    let spec = spec_2d("0", ["0", "0"], "0", "1");
    let cfg = quick_cfg(300, 17);
    let diag = diagnose_moments(&spec, &cfg, &[0.1, 0.2]).unwrap();
    assert_eq!(diag.occupation_bound, 0.0);
    for m in &diag.exp_moment_8h {
        assert_eq!(m.estimate.mean, 1.0);
        assert_eq!(m.estimate.stderr, 0.0);
        assert!(!m.tail_heavy);
    }
    assert_eq!(diag.verdict, MomentVerdict::WeightsStable);
    // exponential moments of a nonnegative exponent never dip below 1
    for per_probe in &diag.exp_moment_nu_tau {
        for m in per_probe {
            assert!(m.estimate.mean >= 1.0);
        }
    }
}

#[test]
fn constant_h_occupation_matches_mean_exit_time() {
    let eta = 0.7;
    let mut spec = spec_2d("0", ["0", "0"], "0", "1");
    spec.h = Expression::parse("0.7", 2).unwrap();
    let mut cfg = quick_cfg(4_000, 18);
    cfg.probes = vec![vec![0.0, 0.0]];
    let diag = diagnose_moments(&spec, &cfg, &[0.1]).unwrap();
    // independent estimate of E[tau] through the generic path reduction
    let proc = spec.process();
    let est_tau = crate::path::estimate_mean_functional(
        &proc,
        &spec.domain,
        &cfg.path,
        |s| s.tau,
        &[0.0, 0.0],
        4_000,
        999,
    )
    .unwrap();
    let occ = &diag.occupation[0];
    let combined = (occ.estimate.stderr.powi(2) + (eta * est_tau.stderr).powi(2)).sqrt();
    assert!(
        (occ.estimate.mean - eta * est_tau.mean).abs() <= 3.0 * combined + 1e-9,
        "occupation {} vs eta E[tau] {}",
        occ.estimate.mean,
        eta * est_tau.mean
    );
}

#[test]
fn exp_moments_increase_in_nu() {
    let spec = spec_2d("0", ["0", "0"], "0", "1");
    let mut cfg = quick_cfg(2_000, 19);
    cfg.probes = vec![vec![0.0, 0.0]];
    let grid = [0.05, 0.1, 0.2, 0.4];
    let diag = diagnose_moments(&spec, &cfg, &grid).unwrap();
    let means: Vec<f64> = diag.exp_moment_nu_tau[0]
        .iter()
        .map(|m| m.estimate.mean)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] > w[0], "not increasing: {means:?}");
    }
    assert!(means[0] > 1.0);
}

#[test]
fn mann_kendall_detects_monotone_sequences() {
    let down: Vec<f64> = (0..8).map(|i| 1.0 / (i as f64 + 1.0)).collect();
    let t = mann_kendall_decreasing(&down);
    assert_eq!(t.s_statistic, 28);
    assert!(t.decreasing_at_95);
    let up: Vec<f64> = (0..8).map(|i| i as f64).collect();
    assert!(!mann_kendall_decreasing(&up).decreasing_at_95);
    let flat = vec![1.0; 8];
    assert!(!mann_kendall_decreasing(&flat).decreasing_at_95);
}

#[test]
fn boundary_probe_without_continuity_claim_reports_table_only() {
    // g has a jump at the probed boundary point: hypothesis violated, so no
    // trend verdict is emitted, but the table is still produced
    let spec = spec_2d("0", ["0", "0"], "0", "step(x1 - 1)");
    let mut cfg = quick_cfg(300, 20);
    cfg.path = PathConfig::new(5e-3, 0.3, 50.0);
    let z = [1.0, 0.0];
    let dir = spec.domain.inward_normal(&z);
    let report =
        boundary_continuity_probe(&spec, &cfg, &z, &dir, &[0.4, 0.2, 0.1], false).unwrap();
    assert!(report.trend.is_none());
    assert_eq!(report.rows.len(), 3);
}

#[test]
fn validation_rejects_bad_inputs() {
    let mut spec = spec_2d("0", ["0", "0"], "0", "1");
    spec.a = 0.0;
    assert!(matches!(
        spec.validate(false),
        Err(SolveError::Validation(_))
    ));
    assert!(spec.validate(true).is_ok());

    let mut spec = spec_2d("0", ["0", "0"], "0", "1");
    spec.p = 0.5; // d/2 = 1
    assert!(spec.validate(false).is_err());

    let spec = spec_2d("0", ["0", "0"], "0", "1");
    let mut cfg = quick_cfg(100, 1);
    cfg.probes = vec![vec![2.0, 0.0]];
    assert!(cfg.validate(&spec).is_err());
    let mut cfg = quick_cfg(100, 1);
    cfg.k_ladder = vec![4, 2];
    assert!(cfg.validate(&spec).is_err());

    let mut spec = spec_2d("0", ["0", "0"], "0", "1");
    spec.h = Expression::parse("-1", 2).unwrap();
    assert!(spec.validate(false).is_err());
}

#[test]
fn rate_blowup_aborts_estimate() {
    let mut spec = spec_2d("0", ["0", "0"], "0", "1");
    // c blows up near the boundary ring |x| = 1 hard enough to overflow
    spec.c = Expression::parse("1 / (1.0000001 - x1^2 - x2^2)^8", 2).unwrap();
    let mut cfg = quick_cfg(300, 21);
    cfg.path = PathConfig::new(1e-3, 0.3, 50.0);
    let r = estimate_u(&spec, &cfg, &[0.0, 0.0], 2);
    assert!(r.is_err(), "expected blow-up failure");
}
