//! Gauss-Legendre quadrature building blocks shared by the mollifier,
//! kernel checks and weak-form assembly.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Computes the rule by Newton iteration on the Legendre polynomial roots.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_deriv(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussRule { nodes, weights }
    }

    /// Cached shared rule (rules are requested repeatedly with few distinct orders).
    pub fn shared(n: usize) -> &'static GaussRule {
        static CACHE: OnceLock<Mutex<HashMap<usize, &'static GaussRule>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        map.entry(n)
            .or_insert_with(|| Box::leak(Box::new(GaussRule::new(n))))
    }

    /// Integrates `f` over [a, b] with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrates `f` over [a, b] with `order`-point panels on the given breakpoints.
pub fn panel_integrate<F: FnMut(f64) -> f64>(breaks: &[f64], order: usize, mut f: F) -> f64 {
    let rule = GaussRule::shared(order);
    let mut acc = 0.0;
    for w in breaks.windows(2) {
        acc += rule.integrate(w[0], w[1], &mut f);
    }
    acc
}

/// Geometric breakpoints a, a*ratio, ... capped at b (always includes both ends).
pub fn geometric_breaks(a: f64, b: f64, ratio: f64) -> Vec<f64> {
    assert!(a > 0.0 && b > a && ratio > 1.0);
    let mut v = vec![a];
    let mut x = a;
    loop {
        x *= ratio;
        if x >= b {
            break;
        }
        v.push(x);
    }
    v.push(b);
    v
}

/// Breakpoints with geometric growth that never exceed a fixed panel width,
/// for integrands that oscillate on an O(width_cap) scale far out.
pub fn capped_breaks(a: f64, b: f64, ratio: f64, width_cap: f64) -> Vec<f64> {
    assert!(a > 0.0 && b > a && ratio > 1.0 && width_cap > 0.0);
    let mut v = vec![a];
    let mut x = a;
    while x < b {
        let step = (x * (ratio - 1.0)).min(width_cap);
        x = (x + step).min(b);
        v.push(x);
    }
    v
}

/// Adaptive Simpson on [a, b]; used for slowly varying 1-D oracles.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Tensor grid over a box: iterates over node/weight pairs of the d-fold
/// product of one Gauss rule, calling `visit(point, weight)`.
pub fn tensor_gauss<F: FnMut(&[f64], f64)>(
    lo: &[f64],
    hi: &[f64],
    points_per_axis: usize,
    mut visit: F,
) {
    let d = lo.len();
    assert_eq!(d, hi.len());
    let rule = GaussRule::shared(points_per_axis);
    let n = points_per_axis;
    let total = n.pow(d as u32);
    let mut point = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for dim in 0..d {
            let idx = rem % n;
            rem /= n;
            let mid = 0.5 * (lo[dim] + hi[dim]);
            let half = 0.5 * (hi[dim] - lo[dim]);
            point[dim] = mid + half * rule.nodes[idx];
            w *= rule.weights[idx] * half;
        }
        visit(&point, w);
    }
}

/// Surface area of the unit sphere in R^d.
pub fn unit_sphere_area(d: usize) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let df = d as f64;
    2.0 * (0.5 * df * std::f64::consts::PI.ln() - ln_gamma(0.5 * df)).exp()
}


/// Halton low-discrepancy sequence point (1-indexed) in [0,1)^d.
pub fn halton_point(index: usize, d: usize) -> Vec<f64> {
    const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    assert!(d <= PRIMES.len());
    (0..d)
        .map(|axis| {
            let base = PRIMES[axis];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}
