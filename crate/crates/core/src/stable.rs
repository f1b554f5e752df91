//! Exact-in-law sampling of the driving noise.
//!
//! Conventions fixed here and inherited by every other module:
//! - generator Delta  => Gaussian increments with variance 2*dt per coordinate,
//! - generator Delta^{alpha/2} => characteristic exponent -|xi|^alpha,
//! - the jump amplitude enters as a * Y with Y standard, so the mixed generator
//!   a^alpha Delta^{alpha/2} has characteristic exponent -a^alpha |xi|^alpha.
//!
//! Isotropic alpha-stable increments are sampled by subordination: a Gaussian
//! at an independent one-sided (alpha/2)-stable time, which is exact in law in
//! any dimension and needs only the 1-D Kanter/Chambers-Mallows-Stuck formula.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Parameters of the driving noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Stability index in (0, 2).
    pub alpha: f64,
    /// Jump amplitude a >= 0 (a = 0 only in validation mode).
    pub a: f64,
    /// Ambient dimension.
    pub d: usize,
}

impl NoiseParams {
    pub fn new(alpha: f64, a: f64, d: usize) -> Self {
        assert!(alpha > 0.0 && alpha < 2.0, "alpha must be in (0, 2)");
        assert!(a >= 0.0, "jump amplitude must be nonnegative");
        assert!(d >= 1, "dimension must be positive");
        NoiseParams { alpha, a, d }
    }
}

/// Deterministic pseudorandom stream derived from (master seed, stream index)
/// by a counter-based scheme: distinct indices give statistically independent
/// streams, identical (seed, index) reproduce bit-identical sequences
/// regardless of scheduling.
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha12Rng);

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(index);
        RngStream(rng)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.0.random()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
}

#[inline]
fn clamp_open01(u: f64) -> f64 {
    u.clamp(1e-12, 1.0 - 1e-12)
}

/// Gaussian increment of the process with generator Delta over time dt:
/// each component ~ Normal(0, 2*dt), independent.
pub fn sample_gaussian_increment(dt: f64, d: usize, rng: &mut RngStream) -> Vec<f64> {
    debug_assert!(dt > 0.0);
    let sd = (2.0 * dt).sqrt();
    (0..d).map(|_| sd * rng.standard_normal()).collect()
}

#[inline]
pub fn fill_gaussian_increment(dt: f64, rng: &mut RngStream, out: &mut [f64]) {
    let sd = (2.0 * dt).sqrt();
    for v in out {
        *v = sd * rng.standard_normal();
    }
}

/// One-sided stable increment with Laplace transform
/// E[exp(-lambda S)] = exp(-dt * lambda^alpha_half), for alpha_half in (0, 1).
/// Kanter's representation of the Chambers-Mallows-Stuck sampler under the
/// Laplace-exponent normalization.
pub fn sample_subordinator_increment(alpha_half: f64, dt: f64, rng: &mut RngStream) -> f64 {
    debug_assert!(alpha_half > 0.0 && alpha_half < 1.0);
    debug_assert!(dt > 0.0);
    let b = alpha_half;
    let u = clamp_open01(rng.uniform()) * PI;
    let w = -clamp_open01(rng.uniform()).ln();
    let s1 = (b * u).sin() / u.sin().powf(1.0 / b);
    let s2 = (((1.0 - b) * u).sin() / w).powf((1.0 - b) / b);
    dt.powf(1.0 / b) * s1 * s2
}

/// Isotropic alpha-stable increment over dt scaled by the amplitude a:
/// characteristic function exp(-dt * a^alpha * |xi|^alpha). Returns the zero
/// vector when a = 0.
pub fn sample_stable_increment(p: &NoiseParams, dt: f64, rng: &mut RngStream) -> Vec<f64> {
    let mut out = vec![0.0; p.d];
    fill_stable_increment(p, dt, rng, &mut out);
    out
}

/// In-place variant of [`sample_stable_increment`] for hot loops. Always draws
/// the same number of variates so that paths sharing a stream stay coupled.
#[inline]
pub fn fill_stable_increment(p: &NoiseParams, dt: f64, rng: &mut RngStream, out: &mut [f64]) {
    let s = sample_subordinator_increment(0.5 * p.alpha, dt, rng);
    let sd = p.a * (2.0 * s).sqrt();
    for v in out.iter_mut() {
        *v = sd * rng.standard_normal();
    }
}

/// Empirical characteristic function estimate at frequency xi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharfnEstimate {
    pub re: f64,
    pub im: f64,
    pub re_stderr: f64,
    pub im_stderr: f64,
    pub n: usize,
}

/// Monte Carlo average of (cos<xi, X>, sin<xi, X>) over n draws of `sampler`.
pub fn empirical_charfn<F>(mut sampler: F, xi: &[f64], n: usize, rng: &mut RngStream) -> CharfnEstimate
where
    F: FnMut(&mut RngStream) -> Vec<f64>,
{
    assert!(n >= 1_000, "need at least 1e3 samples");
    let mut sum_c = 0.0;
    let mut sum_c2 = 0.0;
    let mut sum_s = 0.0;
    let mut sum_s2 = 0.0;
    for _ in 0..n {
        let x = sampler(rng);
        let dot: f64 = xi.iter().zip(&x).map(|(a, b)| a * b).sum();
        let (s, c) = dot.sin_cos();
        sum_c += c;
        sum_c2 += c * c;
        sum_s += s;
        sum_s2 += s * s;
    }
    let nf = n as f64;
    let re = sum_c / nf;
    let im = sum_s / nf;
    let var_c = ((sum_c2 - nf * re * re) / (nf - 1.0)).max(0.0);
    let var_s = ((sum_s2 - nf * im * im) / (nf - 1.0)).max(0.0);
    CharfnEstimate {
        re,
        im,
        re_stderr: (var_c / nf).sqrt(),
        im_stderr: (var_s / nf).sqrt(),
        n,
    }
}

/// Analytic characteristic function of the stable increment:
/// exp(-dt * a^alpha * |xi|^alpha).
pub fn stable_charfn(p: &NoiseParams, dt: f64, xi: &[f64]) -> f64 {
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    (-dt * p.a.powf(p.alpha) * norm.powf(p.alpha)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::erf::erfc;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = {
            let mut r = RngStream::new(42, 7);
            (0..100).map(|_| r.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut r = RngStream::new(42, 7);
            (0..100).map(|_| r.uniform()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<f64> = {
            let mut r = RngStream::new(42, 8);
            (0..100).map(|_| r.uniform()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_increment_moments() {
        let mut rng = RngStream::new(1, 0);
        let n = 1_000_000;
        let dt = 0.5;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = sample_gaussian_increment(dt, 1, &mut rng);
            sum += x[0];
            sum2 += x[0] * x[0];
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        // mean 0 within 4 sigma of the mean estimator
        assert!(mean.abs() <= 4.0 * (2.0 * dt / n as f64).sqrt());
        // variance 2*dt within 1%
        assert_relative_eq!(var, 1.0, max_relative = 0.01);
    }

    #[test]
    fn subordinator_laplace_transform() {
        let mut rng = RngStream::new(2, 0);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let s = sample_subordinator_increment(0.5, 1.0, &mut rng);
            assert!(s > 0.0);
            acc += (-s).exp();
        }
        let got = acc / n as f64;
        assert!(
            (got - (-1.0f64).exp()).abs() < 0.002,
            "E[e^-S] = {got}, want e^-1"
        );
    }

    #[test]
    fn subordinator_levy_cdf() {
        // For alpha_half = 1/2, dt = 1 the law is Levy(0, 1/2) with
        // P(S <= x) = erfc(sqrt(1/(4x))); at x = 1 this is erfc(1/2).
        let expect = erfc(0.5);
        assert_relative_eq!(expect, 0.4795, epsilon = 5e-5);
        let mut rng = RngStream::new(3, 0);
        let n = 1_000_000;
        let mut below = 0usize;
        for _ in 0..n {
            if sample_subordinator_increment(0.5, 1.0, &mut rng) <= 1.0 {
                below += 1;
            }
        }
        let got = below as f64 / n as f64;
        assert!(
            (got - expect).abs() < 0.005,
            "P(S<=1) = {got}, want {expect}"
        );
    }

    #[test]
    fn stable_zero_amplitude_is_zero_vector() {
        let p = NoiseParams::new(1.0, 0.0, 3);
        let mut rng = RngStream::new(4, 0);
        assert_eq!(sample_stable_increment(&p, 1.0, &mut rng), vec![0.0; 3]);
    }

    #[test]
    fn stable_charfn_examples() {
        let mut rng = RngStream::new(5, 0);
        let p = NoiseParams::new(1.0, 1.0, 1);
        let est = empirical_charfn(
            |r| sample_stable_increment(&p, 1.0, r),
            &[1.0],
            1_000_000,
            &mut rng,
        );
        assert!(
            (est.re - (-1.0f64).exp()).abs() < 0.003,
            "re = {}, want e^-1",
            est.re
        );

        let p = NoiseParams::new(1.5, 2.0, 2);
        let est = empirical_charfn(
            |r| sample_stable_increment(&p, 0.25, r),
            &[1.0, 0.0],
            1_000_000,
            &mut rng,
        );
        let want = stable_charfn(&p, 0.25, &[1.0, 0.0]);
        assert_relative_eq!(want, 0.49307, epsilon = 1e-5);
        assert!((est.re - want).abs() < 0.005, "re = {}, want {want}", est.re);
    }

    #[test]
    fn charfn_at_zero_and_isotropy() {
        let p = NoiseParams::new(1.2, 1.0, 2);
        let mut rng = RngStream::new(6, 0);
        let est = empirical_charfn(
            |r| sample_stable_increment(&p, 1.0, r),
            &[0.0, 0.0],
            10_000,
            &mut rng,
        );
        assert_eq!(est.re, 1.0);
        assert_eq!(est.im, 0.0);
        let est = empirical_charfn(
            |r| sample_stable_increment(&p, 1.0, r),
            &[0.7, -0.3],
            200_000,
            &mut rng,
        );
        assert!(est.im.abs() <= 4.0 * est.im_stderr.max(1e-12));
    }

    #[test]
    fn gaussian_charfn_variance_two_convention() {
        let mut rng = RngStream::new(7, 0);
        let est = empirical_charfn(
            |r| sample_gaussian_increment(1.0, 1, r),
            &[1.0],
            1_000_000,
            &mut rng,
        );
        let want = (-1.0f64).exp();
        assert!(
            (est.re - want).abs() <= 3.0 * est.re_stderr + 1e-3,
            "re = {}, want {want}",
            est.re
        );
    }

    /// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
    fn ks2_pvalue(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (n, m) = (a.len(), b.len());
        let mut i = 0;
        let mut j = 0;
        let mut d: f64 = 0.0;
        while i < n && j < m {
            let x = a[i].min(b[j]);
            while i < n && a[i] <= x {
                i += 1;
            }
            while j < m && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
        let ne = ((n * m) as f64 / (n + m) as f64).sqrt();
        let lambda = (ne + 0.12 + 0.11 / ne) * d;
        let mut p = 0.0;
        for k in 1..101 {
            let kf = k as f64;
            p += 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn scaling_invariance_in_dt() {
        // |dX| over dt equals dt^{1/alpha} |dX| over 1 in law
        let p = NoiseParams::new(1.3, 1.0, 2);
        let mut rng = RngStream::new(8, 0);
        let n = 20_000;
        let dt = 0.2f64;
        let scale = dt.powf(1.0 / p.alpha);
        let a: Vec<f64> = (0..n)
            .map(|_| {
                let x = sample_stable_increment(&p, dt, &mut rng);
                (x[0] * x[0] + x[1] * x[1]).sqrt()
            })
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|_| {
                let x = sample_stable_increment(&p, 1.0, &mut rng);
                scale * (x[0] * x[0] + x[1] * x[1]).sqrt()
            })
            .collect();
        let p_val = ks2_pvalue(a, b);
        assert!(p_val > 0.01, "KS p-value {p_val}");
    }

    #[test]
    fn isotropy_chi_square_over_orthants() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = NoiseParams::new(0.8, 1.0, 2);
        let mut rng = RngStream::new(9, 0);
        let n = 40_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let x = sample_stable_increment(&p, 1.0, &mut rng);
            let idx = (x[0] > 0.0) as usize + 2 * ((x[1] > 0.0) as usize);
            counts[idx] += 1;
        }
        let expect = n as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        let dist = ChiSquared::new(3.0).unwrap();
        let p_val = 1.0 - dist.cdf(chi2);
        assert!(p_val > 0.01, "chi2 = {chi2}, p = {p_val}");
    }

    #[test]
    fn subordination_consistency_on_xi_grid() {
        let p = NoiseParams::new(1.0, 1.0, 1);
        let dt = 1.0;
        let mut worst = 0.0f64;
        for (i, xi) in [0.25, 0.5, 1.0, 2.0, 4.0].iter().enumerate() {
            let mut rng = RngStream::new(10, i as u64);
            let est = empirical_charfn(
                |r| sample_stable_increment(&p, dt, r),
                &[*xi],
                1_000_000,
                &mut rng,
            );
            let want = stable_charfn(&p, dt, &[*xi]);
            worst = worst.max((est.re - want).abs());
        }
        assert!(worst <= 5e-3, "max charfn deviation {worst}");
    }

    #[test]
    fn deterministic_draw_sequence() {
        let mut a = RngStream::new(11, 3);
        let mut b = RngStream::new(11, 3);
        for _ in 0..100 {
            let x = sample_stable_increment(&NoiseParams::new(1.7, 0.5, 2), 0.1, &mut a);
            let y = sample_stable_increment(&NoiseParams::new(1.7, 0.5, 2), 0.1, &mut b);
            assert_eq!(x, y);
        }
    }
}
