//! Bounded Lipschitz domains (balls, boxes, convex polytopes) with
//! membership/exit queries and the geometric constants used by the kernel
//! bounds.
//!
//! All variants describe the open set D; the topological boundary belongs to
//! D^c, so a path landing exactly on the boundary has exited.

use thiserror::Error;

/// One half-space {x : <normal, x> <= offset}.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Bounded nonempty intersection of half-spaces.
    Polytope {
        half_spaces: Vec<HalfSpace>,
        dim: usize,
    },
}

/// Constants of the domain used by the kernel bound checkers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConstants {
    /// varsigma = sup_{x in D} |x|
    pub varsigma: f64,
    pub diameter: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("vertex enumeration failed: {0}")]
    VertexEnumeration(String),
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, DomainError> {
        if radius <= 0.0 || !radius.is_finite() {
            return Err(DomainError::Invalid("ball radius must be positive".into()));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(DomainError::Invalid("ball center must be finite".into()));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn rect(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DomainError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(DomainError::Invalid("box corner dimensions differ".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(DomainError::Invalid(
                "box requires lo < hi componentwise".into(),
            ));
        }
        Ok(Domain::Box { lo, hi })
    }

    pub fn polytope(half_spaces: Vec<HalfSpace>, dim: usize) -> Result<Self, DomainError> {
        if half_spaces.len() < dim + 1 {
            return Err(DomainError::Invalid(
                "a bounded polytope needs at least dim+1 half-spaces".into(),
            ));
        }
        for hs in &half_spaces {
            if hs.normal.len() != dim {
                return Err(DomainError::Invalid("half-space dimension mismatch".into()));
            }
            let n2: f64 = hs.normal.iter().map(|v| v * v).sum();
            if n2 <= 0.0 {
                return Err(DomainError::Invalid("zero half-space normal".into()));
            }
        }
        let d = Domain::Polytope { half_spaces, dim };
        // boundedness and nonemptiness are certified by the vertex enumeration
        let verts = d.vertices()?;
        if verts.is_empty() {
            return Err(DomainError::Invalid(
                "half-space intersection has no vertices".into(),
            ));
        }
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
            Domain::Polytope { dim, .. } => *dim,
        }
    }

    /// True iff x lies in the open set D.
    pub fn contains(&self, x: &[f64]) -> bool {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Domain::Ball { center, radius } => {
                let mut r2 = 0.0;
                for (xi, ci) in x.iter().zip(center) {
                    let d = xi - ci;
                    r2 += d * d;
                }
                r2 < radius * radius
            }
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(xi, (l, h))| *l < *xi && *xi < *h),
            Domain::Polytope { half_spaces, .. } => half_spaces.iter().all(|hs| {
                let dot: f64 = hs.normal.iter().zip(x).map(|(n, xi)| n * xi).sum();
                dot < hs.offset
            }),
        }
    }

    /// Negative inside, positive outside, zero on the boundary. Exact for
    /// balls and boxes; for polytopes exact inside and a conservative lower
    /// bound on the true distance outside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { center, radius } => {
                let mut r2 = 0.0;
                for (xi, ci) in x.iter().zip(center) {
                    let d = xi - ci;
                    r2 += d * d;
                }
                r2.sqrt() - radius
            }
            Domain::Box { lo, hi } => {
                // componentwise distance to the slab; standard box SDF
                let mut out2 = 0.0;
                let mut inner = f64::NEG_INFINITY;
                for (xi, (l, h)) in x.iter().zip(lo.iter().zip(hi)) {
                    let q = (l - xi).max(xi - h);
                    if q > 0.0 {
                        out2 += q * q;
                    }
                    inner = inner.max(q);
                }
                if out2 > 0.0 {
                    out2.sqrt()
                } else {
                    inner
                }
            }
            Domain::Polytope { half_spaces, .. } => half_spaces
                .iter()
                .map(|hs| {
                    let dot: f64 = hs.normal.iter().zip(x).map(|(n, xi)| n * xi).sum();
                    let norm: f64 = hs.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (dot - hs.offset) / norm
                })
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Unit vector pointing into D from a boundary point z.
    pub fn inward_normal(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Domain::Ball { center, .. } => {
                let mut v: Vec<f64> = center.iter().zip(z).map(|(c, zi)| c - zi).collect();
                normalize(&mut v);
                v
            }
            Domain::Box { lo, hi } => {
                // face with the largest slab coordinate
                let mut best = (0usize, f64::NEG_INFINITY, 1.0);
                for (i, (zi, (l, h))) in z.iter().zip(lo.iter().zip(hi)).enumerate() {
                    let to_lo = l - zi;
                    let to_hi = zi - h;
                    if to_lo > best.1 {
                        best = (i, to_lo, 1.0);
                    }
                    if to_hi > best.1 {
                        best = (i, to_hi, -1.0);
                    }
                }
                let mut v = vec![0.0; z.len()];
                v[best.0] = best.2;
                v
            }
            Domain::Polytope { half_spaces, .. } => {
                let hs = half_spaces
                    .iter()
                    .max_by(|a, b| {
                        let da = plane_dist(a, z);
                        let db = plane_dist(b, z);
                        da.partial_cmp(&db).unwrap()
                    })
                    .expect("polytope has half-spaces");
                let mut v: Vec<f64> = hs.normal.iter().map(|n| -n).collect();
                normalize(&mut v);
                v
            }
        }
    }

    pub fn geometry_constants(&self) -> Result<GeometryConstants, DomainError> {
        match self {
            Domain::Ball { center, radius } => {
                let c_norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
                Ok(GeometryConstants {
                    varsigma: c_norm + radius,
                    diameter: 2.0 * radius,
                })
            }
            Domain::Box { lo, hi } => {
                let mut vs2 = 0.0;
                let mut diam2 = 0.0;
                for (l, h) in lo.iter().zip(hi) {
                    vs2 += l.abs().max(h.abs()).powi(2);
                    diam2 += (h - l).powi(2);
                }
                Ok(GeometryConstants {
                    varsigma: vs2.sqrt(),
                    diameter: diam2.sqrt(),
                })
            }
            Domain::Polytope { .. } => {
                let verts = self.vertices()?;
                let varsigma = verts
                    .iter()
                    .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                let mut diameter = 0.0f64;
                for i in 0..verts.len() {
                    for j in (i + 1)..verts.len() {
                        let d2: f64 = verts[i]
                            .iter()
                            .zip(&verts[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        diameter = diameter.max(d2.sqrt());
                    }
                }
                Ok(GeometryConstants { varsigma, diameter })
            }
        }
    }

    /// Axis-aligned bounding box of D.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Polytope { dim, .. } => {
                let verts = self.vertices().expect("validated at construction");
                let mut lo = vec![f64::INFINITY; *dim];
                let mut hi = vec![f64::NEG_INFINITY; *dim];
                for v in &verts {
                    for (i, c) in v.iter().enumerate() {
                        lo[i] = lo[i].min(*c);
                        hi[i] = hi[i].max(*c);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Vertices of a polytope: feasible intersection points of dim-subsets of
    /// bounding hyperplanes. Errors on degenerate half-space sets.
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>, DomainError> {
        let Domain::Polytope { half_spaces, dim } = self else {
            return Err(DomainError::VertexEnumeration(
                "vertices are defined for polytopes".into(),
            ));
        };
        let d = *dim;
        let m = half_spaces.len();
        let mut verts: Vec<Vec<f64>> = Vec::new();
        let mut idx: Vec<usize> = (0..d).collect();
        let tol = 1e-9;
        loop {
            // solve the d x d system of the selected hyperplanes
            let mut a = vec![vec![0.0; d + 1]; d];
            for (row, &hs_i) in idx.iter().enumerate() {
                a[row][..d].copy_from_slice(&half_spaces[hs_i].normal);
                a[row][d] = half_spaces[hs_i].offset;
            }
            if let Some(x) = solve_dense(&mut a) {
                let feasible = half_spaces.iter().all(|hs| {
                    let dot: f64 = hs.normal.iter().zip(&x).map(|(n, xi)| n * xi).sum();
                    dot <= hs.offset + tol
                });
                if feasible && x.iter().all(|v| v.is_finite()) {
                    if x.iter().any(|v| v.abs() > 1e12) {
                        return Err(DomainError::VertexEnumeration(
                            "unbounded or nearly degenerate intersection".into(),
                        ));
                    }
                    if !verts
                        .iter()
                        .any(|v| v.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-7))
                    {
                        verts.push(x);
                    }
                }
            }
            // next combination
            let mut i = d;
            loop {
                if i == 0 {
                    return Ok(verts);
                }
                i -= 1;
                if idx[i] + (d - i) < m {
                    idx[i] += 1;
                    for j in (i + 1)..d {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }
}

fn plane_dist(hs: &HalfSpace, x: &[f64]) -> f64 {
    let dot: f64 = hs.normal.iter().zip(x).map(|(n, xi)| n * xi).sum();
    let norm: f64 = hs.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot - hs.offset) / norm
}

fn normalize(v: &mut [f64]) {
    let n: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n > 0.0 {
        for c in v {
            *c /= n;
        }
    }
}

/// Gaussian elimination with partial pivoting on an augmented d x (d+1) system.
fn solve_dense(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let (piv, piv_val) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())?;
        if piv_val < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in (col + 1)..n {
            let factor = a[r][col] / a[col][col];
            for c in col..=n {
                a[r][c] -= factor * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = a[row][n];
        for c in (row + 1)..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}
