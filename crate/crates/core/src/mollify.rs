//! Mollification ladder for rough lower-order coefficients.
//!
//! J is the standard normalized bump supported in the unit ball,
//! J_k(x) = k^d J(kx), and the mollified coefficients are the convolutions
//! c_k = c * J_k. The divergence of a mollified vector field moves the
//! derivative onto the kernel, (b_i * d_i J_k), so merely measurable fields
//! are never differentiated.
//!
//! Two evaluation routes:
//! - smooth bases convolve against a precomputed radial x angular stencil in
//!   kernel coordinates (fast; constants and linear fields are reproduced
//!   exactly by construction/symmetry);
//! - kinked bases (step/abs/min/max) are integrated adaptively in base
//!   coordinates, where the kink sits at a fixed location, so the mollified
//!   field is smooth in the evaluation point.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::expr::{EvalError, ScalarField, VectorField};
use crate::quad::{adaptive_simpson, unit_sphere_area, GaussRule};

/// Mollification level and the quadrature resolution used for the convolution
/// over the support ball of J_k (radial nodes; the angular resolution scales
/// with it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MollifierSpec {
    pub k: u32,
    pub points_per_axis: usize,
}

impl MollifierSpec {
    pub fn new(k: u32, points_per_axis: usize) -> Self {
        assert!(k >= 1, "mollification level must be positive");
        assert!(points_per_axis >= 8, "quadrature must resolve J_k");
        MollifierSpec { k, points_per_axis }
    }
}

fn j_raw(y2: f64) -> f64 {
    if y2 < 1.0 {
        (-1.0 / (1.0 - y2)).exp()
    } else {
        0.0
    }
}

/// Reference normalization Z_d = integral of exp(-1/(1-|y|^2)) over the unit
/// ball, computed radially once per dimension.
fn z_ref(d: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    *map.entry(d).or_insert_with(|| {
        let df = d as f64;
        unit_sphere_area(d)
            * adaptive_simpson(
                &|r: f64| r.powf(df - 1.0) * j_raw(r * r),
                0.0,
                1.0,
                1e-14,
            )
    })
}

/// Pointwise value of the mollifier J_k(x) = k^d J(kx); zero for |kx| >= 1
/// and normalized so the kernel integrates to one.
pub fn mollifier_value(x: &[f64], k: u32) -> f64 {
    let d = x.len();
    let kf = k as f64;
    let y2: f64 = x.iter().map(|v| (v * kf) * (v * kf)).sum();
    kf.powi(d as i32) * j_raw(y2) / z_ref(d)
}

/// tanh-sinh nodes/weights on (0, 1); handles the C-infinity flatness of the
/// bump at the sphere far better than Gauss-Legendre.
fn tanh_sinh_01(n: usize) -> Vec<(f64, f64)> {
    let t_max = 3.2;
    let h = 2.0 * t_max / (n as f64 - 1.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = -t_max + h * i as f64;
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let x = 0.5 * (1.0 + s.tanh());
        let w = 0.5 * h * std::f64::consts::FRAC_PI_2 * t.cosh() / (s.cosh() * s.cosh());
        if w.is_finite() && w > 1e-300 {
            out.push((x, w));
        }
    }
    out
}

/// Precomputed convolution stencil in normalized kernel coordinates: nodes
/// y_i in the unit ball with weights w J(y_i)/Z and w dJ(y_i)/Z, where Z is
/// the quadrature mass of the kernel under the same rule so that mollifying a
/// constant is exact to machine precision.
struct Stencil {
    /// (node, kernel weight, gradient-kernel weights per axis)
    entries: Vec<(Vec<f64>, f64, Vec<f64>)>,
}

impl Stencil {
    fn get(d: usize, points_per_axis: usize) -> Arc<Stencil> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Stencil>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap();
        map.entry((d, points_per_axis))
            .or_insert_with(|| Arc::new(Stencil::build(d, points_per_axis)))
            .clone()
    }

    fn build(d: usize, points_per_axis: usize) -> Stencil {
        // unit directions with angular weights summing to the sphere area
        let dirs: Vec<(Vec<f64>, f64)> = match d {
            1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
            2 => {
                let m = (4 * points_per_axis).max(32);
                (0..m)
                    .map(|i| {
                        let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / m as f64;
                        (
                            vec![th.cos(), th.sin()],
                            2.0 * std::f64::consts::PI / m as f64,
                        )
                    })
                    .collect()
            }
            3 => {
                let m_phi = (4 * points_per_axis).max(32);
                let rule = GaussRule::shared(points_per_axis.max(16));
                let mut dirs = Vec::new();
                for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
                    let st = (1.0 - u * u).sqrt();
                    for i in 0..m_phi {
                        let phi = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / m_phi as f64;
                        dirs.push((
                            vec![st * phi.cos(), st * phi.sin(), *u],
                            wu * 2.0 * std::f64::consts::PI / m_phi as f64,
                        ));
                    }
                }
                dirs
            }
            _ => panic!("mollifier stencil supports d <= 3"),
        };
        let radial = tanh_sinh_01(2 * points_per_axis);
        let mut entries: Vec<(Vec<f64>, f64, Vec<f64>)> = Vec::new();
        let mut z_q = 0.0;
        for (r, wr) in &radial {
            let r2 = r * r;
            let j = j_raw(r2);
            if j == 0.0 {
                continue;
            }
            let denom = (1.0 - r2) * (1.0 - r2);
            let radial_w = wr * r.powi(d as i32 - 1);
            for (dir, wd) in &dirs {
                let y: Vec<f64> = dir.iter().map(|c| c * r).collect();
                let w = radial_w * wd;
                let grad: Vec<f64> = y.iter().map(|yi| w * j * (-2.0 * yi / denom)).collect();
                z_q += w * j;
                entries.push((y, w * j, grad));
            }
        }
        for (_, wj, wg) in &mut entries {
            *wj /= z_q;
            for g in wg {
                *g /= z_q;
            }
        }
        Stencil { entries }
    }
}

// -- adaptive convolution in base coordinates for kinked fields --------------

struct AdaptiveConv<'a> {
    x: &'a [f64],
    k: f64,
    d: usize,
    err: std::cell::RefCell<Option<EvalError>>,
}

impl<'a> AdaptiveConv<'a> {
    /// integral over the ball |z - x| < 1/k of f(z) kern(k (x - z)),
    /// where `kern` is evaluated in kernel coordinates.
    fn run(
        x: &'a [f64],
        k: f64,
        f: &dyn Fn(&[f64]) -> Result<f64, EvalError>,
        kern: &dyn Fn(&[f64]) -> f64,
        tol: f64,
    ) -> Result<f64, EvalError> {
        let d = x.len();
        let this = AdaptiveConv {
            x,
            k,
            d,
            err: std::cell::RefCell::new(None),
        };
        let mut z = vec![0.0; d];
        let v = this.level(0, &mut z, f, kern, tol);
        if let Some(e) = this.err.into_inner() {
            return Err(e);
        }
        Ok(v)
    }

    fn level(
        &self,
        axis: usize,
        z: &mut Vec<f64>,
        f: &dyn Fn(&[f64]) -> Result<f64, EvalError>,
        kern: &dyn Fn(&[f64]) -> f64,
        tol: f64,
    ) -> f64 {
        let lo = self.x[axis] - 1.0 / self.k;
        let hi = self.x[axis] + 1.0 / self.k;
        let inner = |zi: f64| -> f64 {
            if self.err.borrow().is_some() {
                return 0.0;
            }
            let mut z_local = z.clone();
            z_local[axis] = zi;
            if axis + 1 < self.d {
                self.level(axis + 1, &mut z_local, f, kern, tol * 0.5)
            } else {
                // kernel coordinates u = k (x - z)
                let u: Vec<f64> = self
                    .x
                    .iter()
                    .zip(z_local.iter())
                    .map(|(xi, zi)| self.k * (xi - zi))
                    .collect();
                let kv = kern(&u);
                if kv == 0.0 {
                    return 0.0;
                }
                match f(&z_local) {
                    Ok(v) => v * kv,
                    Err(e) => {
                        *self.err.borrow_mut() = Some(e);
                        0.0
                    }
                }
            }
        };
        adaptive_simpson(&inner, lo, hi, tol)
    }
}

/// A smooth approximation c_k of a scalar coefficient.
pub struct MollifiedScalar {
    base: Arc<dyn ScalarField>,
    spec: MollifierSpec,
    d: usize,
    stencil: Option<Arc<Stencil>>,
    base_const: Option<f64>,
}

impl MollifiedScalar {
    pub fn new(base: Arc<dyn ScalarField>, d: usize, spec: MollifierSpec) -> Self {
        let base_const = base.as_const();
        let stencil = if base.is_smooth() {
            Some(Stencil::get(d, spec.points_per_axis))
        } else {
            None
        };
        MollifiedScalar {
            base,
            spec,
            d,
            stencil,
            base_const,
        }
    }

    pub fn spec(&self) -> MollifierSpec {
        self.spec
    }
}

impl ScalarField for MollifiedScalar {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        if let Some(v) = self.base_const {
            return Ok(v);
        }
        if let Some(stencil) = &self.stencil {
            let inv_k = 1.0 / self.spec.k as f64;
            let mut acc = 0.0;
            let mut probe = vec![0.0; self.d];
            for (y, wj, _) in &stencil.entries {
                for (p, (xi, yi)) in probe.iter_mut().zip(x.iter().zip(y)) {
                    *p = xi - yi * inv_k;
                }
                acc += wj * self.base.value(&probe)?;
            }
            Ok(acc)
        } else {
            let k = self.spec.k as f64;
            let d = self.d;
            let scale = k.powi(d as i32) / z_ref(d);
            let base = &self.base;
            AdaptiveConv::run(
                x,
                k,
                &|z| base.value(z),
                &|u| {
                    let u2: f64 = u.iter().map(|v| v * v).sum();
                    scale * j_raw(u2)
                },
                1e-9,
            )
        }
    }

    fn as_const(&self) -> Option<f64> {
        self.base_const
    }

    fn is_smooth(&self) -> bool {
        true
    }
}

/// A smooth approximation of a vector coefficient, with the exact divergence
/// of the mollified field available through the kernel gradient.
pub struct MollifiedVector {
    base: Arc<dyn VectorField>,
    spec: MollifierSpec,
    d: usize,
    stencil: Option<Arc<Stencil>>,
    base_zero: bool,
}

impl MollifiedVector {
    pub fn new(base: Arc<dyn VectorField>, spec: MollifierSpec) -> Self {
        let d = base.dim();
        let base_zero = base.is_zero();
        let stencil = if base.is_smooth() {
            Some(Stencil::get(d, spec.points_per_axis))
        } else {
            None
        };
        MollifiedVector {
            base,
            spec,
            d,
            stencil,
            base_zero,
        }
    }

    pub fn spec(&self) -> MollifierSpec {
        self.spec
    }

    /// The i-th component of the mollified field.
    pub fn component_value(&self, i: usize, x: &[f64]) -> Result<f64, EvalError> {
        if self.base_zero {
            return Ok(0.0);
        }
        let d = self.d;
        if let Some(stencil) = &self.stencil {
            let inv_k = 1.0 / self.spec.k as f64;
            let mut acc = 0.0;
            let mut probe = vec![0.0; d];
            let mut vals = vec![0.0; d];
            for (y, wj, _) in &stencil.entries {
                for (p, (xi, yi)) in probe.iter_mut().zip(x.iter().zip(y)) {
                    *p = xi - yi * inv_k;
                }
                self.base.value_into(&probe, &mut vals)?;
                acc += wj * vals[i];
            }
            Ok(acc)
        } else {
            let k = self.spec.k as f64;
            let scale = k.powi(d as i32) / z_ref(d);
            let base = &self.base;
            let vals = vec![0.0; d];
            AdaptiveConv::run(
                x,
                k,
                &|z| {
                    let mut v = vals.clone();
                    base.value_into(z, &mut v)?;
                    Ok(v[i])
                },
                &|u| {
                    let u2: f64 = u.iter().map(|v| v * v).sum();
                    scale * j_raw(u2)
                },
                1e-9,
            )
        }
    }

    /// div b_k(x) = sum_i (b_i * d_i J_k)(x): exact differentiation moved onto
    /// the kernel, valid for merely measurable base fields.
    pub fn divergence(&self, x: &[f64]) -> Result<f64, EvalError> {
        if self.base_zero {
            return Ok(0.0);
        }
        let d = self.d;
        let kf = self.spec.k as f64;
        if let Some(stencil) = &self.stencil {
            let inv_k = 1.0 / kf;
            let mut acc = 0.0;
            let mut probe = vec![0.0; d];
            let mut vals = vec![0.0; d];
            for (y, _, wg) in &stencil.entries {
                for (p, (xi, yi)) in probe.iter_mut().zip(x.iter().zip(y)) {
                    *p = xi - yi * inv_k;
                }
                self.base.value_into(&probe, &mut vals)?;
                let mut dot = 0.0;
                for (g, v) in wg.iter().zip(&vals) {
                    dot += g * v;
                }
                acc += dot;
            }
            Ok(kf * acc)
        } else {
            // sum over components of the adaptive convolution against d_i J_k
            let scale = kf.powi(d as i32 + 1) / z_ref(d);
            let mut total = 0.0;
            for i in 0..d {
                let base = &self.base;
                let vals = vec![0.0; d];
                total += AdaptiveConv::run(
                    x,
                    kf,
                    &|z| {
                        let mut v = vals.clone();
                        base.value_into(z, &mut v)?;
                        Ok(v[i])
                    },
                    &|u| {
                        let u2: f64 = u.iter().map(|v| v * v).sum();
                        let j = j_raw(u2);
                        if j == 0.0 {
                            return 0.0;
                        }
                        let denom = (1.0 - u2) * (1.0 - u2);
                        scale * j * (-2.0 * u[i] / denom)
                    },
                    1e-9,
                )?;
            }
            Ok(total)
        }
    }
}

impl VectorField for MollifiedVector {
    fn dim(&self) -> usize {
        self.d
    }
    fn value_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for i in 0..self.dim() {
            out[i] = self.component_value(i, x)?;
        }
        Ok(())
    }
    fn is_zero(&self) -> bool {
        self.base_zero
    }
    fn is_smooth(&self) -> bool {
        true
    }
}

/// Scalar field cached on a uniform lattice with multilinear interpolation.
/// Interpolation reproduces constants and componentwise-linear fields exactly,
/// so the exactness contracts of constant coefficients survive caching.
pub struct CachedField {
    lo: Vec<f64>,
    step: Vec<f64>,
    dims: Vec<usize>,
    values: Vec<f64>,
    fallback: Arc<dyn ScalarField>,
    constant: Option<f64>,
}

impl CachedField {
    pub fn build(
        field: Arc<dyn ScalarField>,
        lo: &[f64],
        hi: &[f64],
        nodes_per_axis: usize,
    ) -> Result<Self, EvalError> {
        assert!(nodes_per_axis >= 2);
        if let Some(v) = field.as_const() {
            return Ok(CachedField {
                lo: lo.to_vec(),
                step: vec![1.0; lo.len()],
                dims: vec![2; lo.len()],
                values: Vec::new(),
                fallback: field,
                constant: Some(v),
            });
        }
        let d = lo.len();
        let dims = vec![nodes_per_axis; d];
        let step: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(l, h)| (h - l) / (nodes_per_axis - 1) as f64)
            .collect();
        let total: usize = dims.iter().product();
        let mut values = vec![0.0; total];
        let mut point = vec![0.0; d];
        for (flat, slot) in values.iter_mut().enumerate() {
            let mut rem = flat;
            for i in 0..d {
                let idx = rem % dims[i];
                rem /= dims[i];
                point[i] = lo[i] + step[i] * idx as f64;
            }
            *slot = field.value(&point)?;
        }
        Ok(CachedField {
            lo: lo.to_vec(),
            step,
            dims,
            values,
            fallback: field,
            constant: None,
        })
    }
}

impl ScalarField for CachedField {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        if let Some(v) = self.constant {
            return Ok(v);
        }
        let d = self.lo.len();
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for i in 0..d {
            let t = (x[i] - self.lo[i]) / self.step[i];
            if t < 0.0 || t > (self.dims[i] - 1) as f64 {
                // outside the cached window: evaluate directly
                return self.fallback.value(x);
            }
            let idx = (t.floor() as usize).min(self.dims[i] - 2);
            base[i] = idx;
            frac[i] = t - idx as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            let mut stride = 1usize;
            for i in 0..d {
                let hi_side = (corner >> i) & 1 == 1;
                w *= if hi_side { frac[i] } else { 1.0 - frac[i] };
                flat += (base[i] + hi_side as usize) * stride;
                stride *= self.dims[i];
            }
            acc += w * self.values[flat];
        }
        Ok(acc)
    }

    fn as_const(&self) -> Option<f64> {
        self.constant
    }

    fn is_smooth(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expression, VectorExpression};
    use crate::quad::{tensor_gauss, GaussRule};
    use approx::assert_relative_eq;

    fn expr(s: &str, d: usize) -> Arc<dyn ScalarField> {
        Arc::new(Expression::parse(s, d).unwrap())
    }

    #[test]
    fn mollifier_support_and_normalization() {
        assert_eq!(mollifier_value(&[1.1], 1), 0.0);
        assert_eq!(mollifier_value(&[0.3], 4), 0.0); // |kx| = 1.2 >= 1
        // d=1 value at the origin: e^{-1}/Z with Z the explicit integral
        let z = adaptive_simpson(&|y: f64| j_raw(y * y), -1.0, 1.0, 1e-14);
        assert_relative_eq!(
            mollifier_value(&[0.0], 1),
            (-1.0f64).exp() / z,
            epsilon = 1e-10
        );
        // integral of J_k over its support stays 1 across the ladder
        for k in [1u32, 2, 4, 8] {
            let rule = GaussRule::shared(96);
            let half = 1.0 / k as f64;
            let mass = rule.integrate(-half, half, |y| mollifier_value(&[y], k));
            assert!((mass - 1.0).abs() < 1e-8, "k={k}: mass {mass}");
        }
    }

    #[test]
    fn mollifier_normalization_2d() {
        let k = 2u32;
        let mut mass = 0.0;
        tensor_gauss(&[-0.5, -0.5], &[0.5, 0.5], 96, |y, w| {
            mass += w * mollifier_value(y, k);
        });
        assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
    }

    #[test]
    fn constant_field_mollifies_exactly() {
        let m = MollifiedScalar::new(expr("3", 2), 2, MollifierSpec::new(4, 12));
        assert_eq!(m.value(&[0.2, -0.7]).unwrap(), 3.0);
    }

    #[test]
    fn linear_field_is_fixed_by_symmetry() {
        let m = MollifiedScalar::new(expr("x1", 2), 2, MollifierSpec::new(2, 16));
        for x in [[0.0, 0.0], [0.4, -0.3], [-1.0, 2.0]] {
            assert!(
                (m.value(&x).unwrap() - x[0]).abs() <= 1e-6,
                "at {x:?}: {}",
                m.value(&x).unwrap()
            );
        }
    }

    #[test]
    fn quadratic_field_shift_matches_kernel_moment() {
        // c(x) = x1^2 in d=1: c_k(0) = m2(J)/k^2 with m2 the second moment of J
        let m2 = adaptive_simpson(&|y: f64| y * y * j_raw(y * y), -1.0, 1.0, 1e-14)
            / adaptive_simpson(&|y: f64| j_raw(y * y), -1.0, 1.0, 1e-14);
        let m = MollifiedScalar::new(expr("x1^2", 1), 1, MollifierSpec::new(4, 24));
        assert!(
            (m.value(&[0.0]).unwrap() - m2 / 16.0).abs() <= 1e-6,
            "got {}, want {}",
            m.value(&[0.0]).unwrap(),
            m2 / 16.0
        );
    }

    #[test]
    fn divergence_of_constant_field_vanishes() {
        let v = Arc::new(VectorExpression::parse(&["2", "-5"], 2).unwrap());
        let m = MollifiedVector::new(v, MollifierSpec::new(2, 16));
        assert_relative_eq!(m.divergence(&[0.1, 0.3]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn divergence_of_identity_field_is_dimension() {
        let v = Arc::new(VectorExpression::parse(&["x1", "x2"], 2).unwrap());
        let m = MollifiedVector::new(v, MollifierSpec::new(2, 24));
        for x in [[0.0, 0.0], [0.5, -0.2]] {
            let div = m.divergence(&x).unwrap();
            assert!((div - 2.0).abs() <= 1e-5, "div at {x:?} = {div}");
        }
    }

    #[test]
    fn step_divergence_matches_finite_differences_of_mollified_field() {
        // b = (step(x1), 0): divergence of the mollified field at the kink is
        // checked against central differences of the (smooth) component
        let v = Arc::new(VectorExpression::parse(&["step(x1)", "0"], 2).unwrap());
        let m = MollifiedVector::new(v, MollifierSpec::new(2, 32));
        let x = [0.0, 0.0];
        let div = m.divergence(&x).unwrap();
        let h = 1e-4;
        let fd = (m.component_value(0, &[h, 0.0]).unwrap()
            - m.component_value(0, &[-h, 0.0]).unwrap())
            / (2.0 * h);
        assert!((div - fd).abs() <= 1e-3, "kernel {div} vs FD {fd}");
        // the mollified jump has positive smeared slope at the kink
        assert!(div > 0.1);
    }

    #[test]
    fn divergence_consistency_for_smooth_fields() {
        let v = Arc::new(VectorExpression::parse(&["sin(x2)", "x1*x2"], 2).unwrap());
        let m = MollifiedVector::new(v, MollifierSpec::new(4, 24));
        for x in [[0.0, 0.0], [0.3, -0.4], [-0.2, 0.6]] {
            let div = m.divergence(&x).unwrap();
            let h = 1e-4;
            let mut fd = 0.0;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                fd += (m.component_value(i, &xp).unwrap() - m.component_value(i, &xm).unwrap())
                    / (2.0 * h);
            }
            assert!((div - fd).abs() <= 1e-3, "at {x:?}: {div} vs {fd}");
        }
    }

    #[test]
    fn mollification_error_decreases_in_k() {
        // continuous non-smooth field: |x1|; sup error over probes shrinks with k
        let probes: Vec<[f64; 1]> = (-8..=8).map(|i| [i as f64 / 8.0]).collect();
        let base = expr("abs(x1)", 1);
        let sup_err = |k: u32| {
            let m = MollifiedScalar::new(base.clone(), 1, MollifierSpec::new(k, 24));
            probes
                .iter()
                .map(|x| (m.value(x).unwrap() - x[0].abs()).abs())
                .fold(0.0, f64::max)
        };
        let errs: Vec<f64> = [1u32, 2, 4, 8].iter().map(|&k| sup_err(k)).collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "errors not decreasing: {errs:?}");
        }
    }

    #[test]
    fn smooth_field_converges_at_second_order() {
        // C^2 field: observed rate of |c_k - c| at a probe is O(k^-2)
        let base = expr("cos(x1)", 1);
        let err = |k: u32| {
            let m = MollifiedScalar::new(base.clone(), 1, MollifierSpec::new(k, 24));
            (m.value(&[0.3]).unwrap() - 0.3f64.cos()).abs()
        };
        let e2 = err(2);
        let e8 = err(8);
        let rate = (e2 / e8).log2() / 2.0;
        assert!(rate > 1.7, "observed rate {rate} (errors {e2}, {e8})");
    }

    #[test]
    fn cached_field_is_exact_for_linear_and_constant() {
        let lin = CachedField::build(expr("2*x1 - x2", 2), &[-1.0, -1.0], &[1.0, 1.0], 9).unwrap();
        for x in [[0.33, -0.71], [-0.9, 0.4]] {
            assert_relative_eq!(lin.value(&x).unwrap(), 2.0 * x[0] - x[1], epsilon = 1e-12);
        }
        let c = CachedField::build(expr("7", 2), &[-1.0, -1.0], &[1.0, 1.0], 9).unwrap();
        assert_eq!(c.value(&[0.123, 0.456]).unwrap(), 7.0);
        assert_eq!(c.as_const(), Some(7.0));
    }

    #[test]
    fn cached_field_approximates_smooth_fields() {
        let f = CachedField::build(expr("sin(x1)*cos(x2)", 2), &[-2.0, -2.0], &[2.0, 2.0], 257)
            .unwrap();
        let x = [0.37f64, -0.92];
        let want = x[0].sin() * x[1].cos();
        assert!((f.value(&x).unwrap() - want).abs() < 1e-3);
        // outside the window falls back to the exact field
        let y = [5.0f64, 0.0];
        assert_relative_eq!(f.value(&y).unwrap(), y[0].sin() * y[1].cos(), epsilon = 1e-12);
    }
}
