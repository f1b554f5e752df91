//! The solver: assembles the exit-weighted payoff at mollification level k,
//! estimates u_k(x) with confidence intervals, monitors convergence across the
//! k-ladder under common random numbers, and runs the exponential-moment
//! diagnostics that stand in for the smallness condition on h.
//!
//! The runtime weight is always exp(integral of (c_k + div b_hat_k)): the
//! abstract additive-functional weight is never constructed, since at any
//! mollification level the divergence identity collapses it to exactly this
//! rate.

use std::sync::Arc;

use statrs::function::erf::erf;
use thiserror::Error;

use crate::domain::Domain;
use crate::expr::{ConstField, EvalError, Expression, ScalarField, VectorExpression, VectorField};
use crate::mollify::{CachedField, MollifiedScalar, MollifiedVector, MollifierSpec};
use crate::path::{
    reduce_samples, sample_paths, Estimate, PathConfig, PathError, ProcessSpec, RecordSpec,
};
use crate::quad::halton_point;
use crate::stable::NoiseParams;

/// The full coefficient tuple defining one complement value problem.
pub struct ProblemSpec {
    pub d: usize,
    /// Jump amplitude a > 0 (a = 0 only in validation mode).
    pub a: f64,
    pub alpha: f64,
    /// Integrability exponent, p > d/2.
    pub p: f64,
    pub b: VectorExpression,
    pub c: Expression,
    pub b_hat: VectorExpression,
    /// Dominating field for c + div b_hat; nonnegative standing hypothesis.
    pub h: Expression,
    pub f: Expression,
    /// Complement data, evaluable on D^c.
    pub g: Expression,
    pub domain: Domain,
}

impl ProblemSpec {
    /// Checks the standing hypotheses. `validation_mode` permits a = 0.
    pub fn validate(&self, validation_mode: bool) -> Result<(), SolveError> {
        if self.alpha <= 0.0 || self.alpha >= 2.0 {
            return Err(SolveError::Validation("alpha must lie in (0, 2)".into()));
        }
        if self.a < 0.0 || (self.a == 0.0 && !validation_mode) {
            return Err(SolveError::Validation(
                "jump amplitude a must be positive (a = 0 requires validation mode)".into(),
            ));
        }
        if self.p <= self.d as f64 / 2.0 {
            return Err(SolveError::Validation("p must exceed d/2".into()));
        }
        if self.domain.dim() != self.d
            || self.b.dim() != self.d
            || self.b_hat.dim() != self.d
            || self.c.dim() != self.d
            || self.h.dim() != self.d
            || self.f.dim() != self.d
            || self.g.dim() != self.d
        {
            return Err(SolveError::Validation(
                "coefficient dimensions must match the ambient dimension".into(),
            ));
        }
        // h >= 0 sampled over quasi-random interior points
        let (lo, hi) = self.domain.bounding_box();
        let mut checked = 0usize;
        let mut idx = 1usize;
        while checked < 100 && idx < 100_000 {
            let u = halton_point(idx, self.d);
            idx += 1;
            let x: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .zip(&u)
                .map(|((l, h_), t)| l + (h_ - l) * t)
                .collect();
            if !self.domain.contains(&x) {
                continue;
            }
            checked += 1;
            let hv = self
                .h
                .eval(&x)
                .map_err(|e| SolveError::Validation(format!("h not evaluable: {e}")))?;
            if hv < -1e-12 {
                return Err(SolveError::Validation(format!(
                    "h must be nonnegative; h({x:?}) = {hv}"
                )));
            }
        }
        Ok(())
    }

    fn process(&self) -> ProcessSpec {
        ProcessSpec::new(
            NoiseParams::new(self.alpha, self.a, self.d),
            Arc::new(self.b.clone()),
        )
    }
}

/// Solver configuration.
#[derive(Clone)]
pub struct SolveConfig {
    /// Strictly increasing mollification levels.
    pub k_ladder: Vec<u32>,
    /// Paths per (probe, level).
    pub n_paths: usize,
    pub path: PathConfig,
    pub seed: u64,
    /// Probe points, strictly inside D.
    pub probes: Vec<Vec<f64>>,
    pub extrapolation_tol: f64,
    /// Radial quadrature resolution of the mollifier stencil.
    pub mollifier_points: usize,
    /// Lattice nodes per axis for cached rate evaluation; 0 = direct quadrature.
    pub cache_resolution: usize,
    /// Permit a = 0 / disabled sub-mechanisms (sampler validation only).
    pub validation_mode: bool,
}

impl SolveConfig {
    pub fn validate(&self, spec: &ProblemSpec) -> Result<(), SolveError> {
        if self.k_ladder.is_empty() || self.k_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SolveError::Validation(
                "k ladder must be strictly increasing and nonempty".into(),
            ));
        }
        if self.n_paths < 2 {
            return Err(SolveError::Validation("need at least two paths".into()));
        }
        if self.probes.is_empty() {
            return Err(SolveError::Validation("need at least one probe".into()));
        }
        for p in &self.probes {
            if p.len() != spec.d {
                return Err(SolveError::Validation("probe dimension mismatch".into()));
            }
            if spec.domain.signed_distance(p) >= 0.0 {
                return Err(SolveError::Validation(format!(
                    "probe {p:?} is not strictly inside D"
                )));
            }
        }
        if self.extrapolation_tol <= 0.0 {
            return Err(SolveError::Validation(
                "extrapolation tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid problem or configuration: {0}")]
    Validation(String),
    #[error("path simulation failed: {0}")]
    Path(#[from] PathError),
    #[error("{failed} of {total} paths failed (> 1% tolerated)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("field evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// The runtime weight rate x -> c_k(x) + div b_hat_k(x).
pub struct RateField {
    c_k: MollifiedScalar,
    b_hat_k: MollifiedVector,
    rate_const: Option<f64>,
}

impl RateField {
    fn new(spec: &ProblemSpec, k: u32, points: usize) -> Self {
        let ms = MollifierSpec::new(k, points);
        let c_k = MollifiedScalar::new(Arc::new(spec.c.clone()), spec.d, ms);
        let b_hat_k = MollifiedVector::new(Arc::new(spec.b_hat.clone()), ms);
        let rate_const = match (c_k.as_const(), b_hat_k.is_zero()) {
            (Some(v), true) => Some(v),
            _ => None,
        };
        RateField {
            c_k,
            b_hat_k,
            rate_const,
        }
    }
}

impl ScalarField for RateField {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        if let Some(v) = self.rate_const {
            return Ok(v);
        }
        Ok(self.c_k.value(x)? + self.b_hat_k.divergence(x)?)
    }
    fn as_const(&self) -> Option<f64> {
        self.rate_const
    }
}

/// Builds the weight rate c_k + div b_hat_k at level k, optionally cached on a
/// lattice over the bounding box of D (multilinear interpolation keeps
/// constant and linear rates exact).
pub fn weight_rate(
    spec: &ProblemSpec,
    k: u32,
    mollifier_points: usize,
    cache_resolution: usize,
) -> Result<Arc<dyn ScalarField>, SolveError> {
    let rate = Arc::new(RateField::new(spec, k, mollifier_points));
    if cache_resolution == 0 || rate.as_const().is_some() {
        return Ok(rate);
    }
    let (lo, hi) = spec.domain.bounding_box();
    let margin: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| 1e-9 * (h - l).abs().max(1.0))
        .collect();
    let lo: Vec<f64> = lo.iter().zip(&margin).map(|(l, m)| l - m).collect();
    let hi: Vec<f64> = hi.iter().zip(&margin).map(|(h, m)| h + m).collect();
    let cached = CachedField::build(rate, &lo, &hi, cache_resolution)?;
    Ok(Arc::new(cached))
}

/// One solved (probe, level) cell.
#[derive(Debug, Clone)]
pub struct SolveRow {
    pub probe_index: usize,
    pub k: u32,
    pub estimate: Estimate,
}

/// Ladder summary for one probe.
#[derive(Debug, Clone)]
pub struct ProbeSummary {
    pub probe_index: usize,
    pub u_star: f64,
    pub stderr: f64,
    /// Level at which the ladder was declared converged, if any.
    pub converged_at: Option<u32>,
    /// Last monitored difference u_k - u_prev and the stderr of that paired
    /// difference under common random numbers.
    pub last_diff: Option<f64>,
    pub last_diff_stderr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub rows: Vec<SolveRow>,
    pub probes: Vec<ProbeSummary>,
}

struct EstimateDetail {
    estimate: Estimate,
    payoffs: Vec<f64>,
}

fn estimate_u_detailed(
    spec: &ProblemSpec,
    cfg: &SolveConfig,
    rate: &dyn ScalarField,
    x: &[f64],
    stream_base: u64,
) -> Result<EstimateDetail, SolveError> {
    let proc = spec.process();
    let ensemble = sample_paths(
        &proc,
        &spec.domain,
        &cfg.path,
        rate,
        &spec.f,
        x,
        cfg.n_paths,
        cfg.seed,
        stream_base,
    );
    if ensemble.failures.len() * 100 > cfg.n_paths {
        return Err(SolveError::TooManyFailures {
            failed: ensemble.failures.len(),
            total: cfg.n_paths,
        });
    }
    if !ensemble.failures.is_empty() && ensemble.samples.len() < 2 {
        let (_, e) = ensemble.failures.into_iter().next().unwrap();
        return Err(SolveError::Path(e));
    }
    let mut payoffs = Vec::with_capacity(ensemble.samples.len());
    let mut truncated = 0usize;
    for s in &ensemble.samples {
        if s.truncated {
            truncated += 1;
        }
        let gv = spec.g.eval(&s.x_exit)?;
        payoffs.push(s.log_weight.exp() * gv + s.weighted_f_integral);
    }
    let estimate = reduce_samples(&payoffs, truncated);
    Ok(EstimateDetail { estimate, payoffs })
}

/// Monte Carlo estimate of u_k(x) = E_x[e_k(tau) g(X_tau) + int e_k(s) f(X_s) ds].
pub fn estimate_u(
    spec: &ProblemSpec,
    cfg: &SolveConfig,
    x: &[f64],
    k: u32,
) -> Result<Estimate, SolveError> {
    spec.validate(cfg.validation_mode)?;
    let rate = weight_rate(spec, k, cfg.mollifier_points, cfg.cache_resolution)?;
    Ok(estimate_u_detailed(spec, cfg, rate.as_ref(), x, 0)?.estimate)
}

/// Runs the full probe x ladder table with common random numbers per probe
/// across levels, declaring convergence at the first level whose paired
/// difference from the previous level is within tolerance + 3 stderr.
pub fn solve(spec: &ProblemSpec, cfg: &SolveConfig) -> Result<SolveReport, SolveError> {
    spec.validate(cfg.validation_mode)?;
    cfg.validate(spec)?;
    let mut rows = Vec::new();
    let mut probes = Vec::new();
    // rates are probe-independent; build lazily and reuse across probes
    let mut rates: Vec<Option<Arc<dyn ScalarField>>> = vec![None; cfg.k_ladder.len()];
    for (pi, probe) in cfg.probes.iter().enumerate() {
        let stream_base = (pi as u64) << 40;
        let mut prev: Option<(u32, Vec<f64>, Estimate)> = None;
        let mut summary = ProbeSummary {
            probe_index: pi,
            u_star: f64::NAN,
            stderr: f64::NAN,
            converged_at: None,
            last_diff: None,
            last_diff_stderr: None,
        };
        for (ki, &k) in cfg.k_ladder.iter().enumerate() {
            let rate = match &rates[ki] {
                Some(r) => r.clone(),
                None => {
                    let r = weight_rate(spec, k, cfg.mollifier_points, cfg.cache_resolution)?;
                    rates[ki] = Some(r.clone());
                    r
                }
            };
            let detail = estimate_u_detailed(spec, cfg, rate.as_ref(), probe, stream_base)?;
            rows.push(SolveRow {
                probe_index: pi,
                k,
                estimate: detail.estimate,
            });
            summary.u_star = detail.estimate.mean;
            summary.stderr = detail.estimate.stderr;
            if let Some((_, prev_payoffs, _)) = &prev {
                // paired difference: same streams, so u_k - u_prev collapses
                // to a low-variance per-path difference
                let diffs: Vec<f64> = detail
                    .payoffs
                    .iter()
                    .zip(prev_payoffs)
                    .map(|(a, b)| a - b)
                    .collect();
                let dstats = reduce_samples(&diffs, 0);
                summary.last_diff = Some(dstats.mean);
                summary.last_diff_stderr = Some(dstats.stderr);
                if dstats.mean.abs() <= cfg.extrapolation_tol + 3.0 * dstats.stderr {
                    summary.converged_at = Some(k);
                    break;
                }
            }
            prev = Some((k, detail.payoffs, detail.estimate));
        }
        probes.push(summary);
    }
    Ok(SolveReport { rows, probes })
}

/// One diagnosed moment with a heavy-tail stability flag: flagged unstable
/// when the top 1% of samples carries more than half of the sample sum.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub estimate: Estimate,
    pub tail_heavy: bool,
}

fn moment_from_samples(values: &[f64], truncated: usize) -> MomentEstimate {
    let estimate = reduce_samples(values, truncated);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = sorted.len().div_ceil(100);
    let top_sum: f64 = sorted[..top].iter().sum();
    let total: f64 = sorted.iter().sum();
    let tail_heavy = total > 0.0 && top_sum > 0.5 * total && sorted[0] != sorted[sorted.len() - 1];
    MomentEstimate {
        estimate,
        tail_heavy,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentVerdict {
    WeightsStable,
    WeightsUnstable,
}

impl std::fmt::Display for MomentVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MomentVerdict::WeightsStable => write!(f, "weights-stable"),
            MomentVerdict::WeightsUnstable => write!(f, "weights-unstable"),
        }
    }
}

/// Khasminskii-style moment diagnostics at the finest configured level.
#[derive(Debug, Clone)]
pub struct MomentDiagnostics {
    /// sup over probes of the estimated occupation integral E_x[int h_k ds].
    pub occupation_bound: f64,
    /// Per-probe occupation estimates.
    pub occupation: Vec<MomentEstimate>,
    /// Per-probe E_x[exp(int 8 h_k ds)].
    pub exp_moment_8h: Vec<MomentEstimate>,
    /// Per-probe, per-nu E_x[exp(nu tau)].
    pub exp_moment_nu_tau: Vec<Vec<MomentEstimate>>,
    pub nu_grid: Vec<f64>,
    pub verdict: MomentVerdict,
}

/// Estimates the occupation and exponential moments that the existence
/// theory requires to be small/finite; verdicts are advisory, not proofs.
pub fn diagnose_moments(
    spec: &ProblemSpec,
    cfg: &SolveConfig,
    nu_grid: &[f64],
) -> Result<MomentDiagnostics, SolveError> {
    spec.validate(cfg.validation_mode)?;
    cfg.validate(spec)?;
    let k = *cfg.k_ladder.last().unwrap();
    let ms = MollifierSpec::new(k, cfg.mollifier_points);
    let h_k: Arc<dyn ScalarField> = Arc::new(MollifiedScalar::new(
        Arc::new(spec.h.clone()),
        spec.d,
        ms,
    ));
    let proc = spec.process();
    let mut path_cfg = cfg.path.clone();
    path_cfg.record = vec![RecordSpec {
        name: "h_k".into(),
        field: h_k,
    }];
    let zero = ConstField(0.0);

    let mut occupation = Vec::new();
    let mut exp8 = Vec::new();
    let mut exp_nu = Vec::new();
    for (pi, probe) in cfg.probes.iter().enumerate() {
        let ensemble = sample_paths(
            &proc,
            &spec.domain,
            &path_cfg,
            &zero,
            &zero,
            probe,
            cfg.n_paths,
            cfg.seed,
            (pi as u64) << 40,
        );
        if ensemble.failures.len() * 100 > cfg.n_paths {
            return Err(SolveError::TooManyFailures {
                failed: ensemble.failures.len(),
                total: cfg.n_paths,
            });
        }
        let truncated = ensemble.samples.iter().filter(|s| s.truncated).count();
        let occ: Vec<f64> = ensemble.samples.iter().map(|s| s.integrals[0]).collect();
        let e8: Vec<f64> = occ.iter().map(|v| (8.0 * v).exp()).collect();
        occupation.push(moment_from_samples(&occ, truncated));
        exp8.push(moment_from_samples(&e8, truncated));
        let mut per_nu = Vec::new();
        for &nu in nu_grid {
            let vals: Vec<f64> = ensemble
                .samples
                .iter()
                .map(|s| (nu * s.tau).exp())
                .collect();
            per_nu.push(moment_from_samples(&vals, truncated));
        }
        exp_nu.push(per_nu);
    }
    let occupation_bound = occupation
        .iter()
        .map(|m| m.estimate.mean)
        .fold(0.0, f64::max);
    let any_heavy = exp8.iter().any(|m| m.tail_heavy)
        || exp_nu.iter().flatten().any(|m| m.tail_heavy);
    Ok(MomentDiagnostics {
        occupation_bound,
        occupation,
        exp_moment_8h: exp8,
        exp_moment_nu_tau: exp_nu,
        nu_grid: nu_grid.to_vec(),
        verdict: if any_heavy {
            MomentVerdict::WeightsUnstable
        } else {
            MomentVerdict::WeightsStable
        },
    })
}

/// Mann-Kendall one-sided trend test for a decreasing sequence.
#[derive(Debug, Clone, Copy)]
pub struct TrendTest {
    pub s_statistic: i64,
    pub z_score: f64,
    /// True when the decreasing trend is significant at the 95% level.
    pub decreasing_at_95: bool,
}

pub fn mann_kendall_decreasing(values: &[f64]) -> TrendTest {
    let n = values.len();
    let mut s: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            // count concordant (decreasing) pairs positively
            s += match values[i].partial_cmp(&values[j]).unwrap() {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    let var = (n * (n - 1) * (2 * n + 5)) as f64 / 18.0;
    let z = if s > 0 {
        (s as f64 - 1.0) / var.sqrt()
    } else if s < 0 {
        (s as f64 + 1.0) / var.sqrt()
    } else {
        0.0
    };
    TrendTest {
        s_statistic: s,
        z_score: z,
        decreasing_at_95: z > 1.645,
    }
}

/// Gaussian CDF via the error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone)]
pub struct BoundaryProbeRow {
    pub radius: f64,
    pub point: Vec<f64>,
    pub estimate: Estimate,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryProbeReport {
    pub z: Vec<f64>,
    pub g_at_z: f64,
    pub rows: Vec<BoundaryProbeRow>,
    /// Present only when g was asserted continuous at z.
    pub trend: Option<TrendTest>,
}

/// Estimates u along an inward radius ladder from the boundary point z and
/// reports the gaps |u(x_j) - g(z)|. When `g_continuous_at_z` is asserted the
/// gap sequence gets a monotone-decrease trend test; otherwise no convergence
/// claim is emitted and the table is still reported.
pub fn boundary_continuity_probe(
    spec: &ProblemSpec,
    cfg: &SolveConfig,
    z: &[f64],
    direction: &[f64],
    radii: &[f64],
    g_continuous_at_z: bool,
) -> Result<BoundaryProbeReport, SolveError> {
    spec.validate(cfg.validation_mode)?;
    let g_at_z = spec.g.eval(z)?;
    let k = *cfg.k_ladder.last().unwrap();
    let rate = weight_rate(spec, k, cfg.mollifier_points, cfg.cache_resolution)?;
    let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(SolveError::Validation("zero probe direction".into()));
    }
    let mut rows = Vec::new();
    for (ri, &r) in radii.iter().enumerate() {
        let x: Vec<f64> = z
            .iter()
            .zip(direction)
            .map(|(zi, di)| zi + r * di / norm)
            .collect();
        if !spec.domain.contains(&x) {
            return Err(SolveError::Validation(format!(
                "probe at radius {r} lies outside D"
            )));
        }
        let detail = estimate_u_detailed(spec, cfg, rate.as_ref(), &x, (ri as u64) << 40)?;
        rows.push(BoundaryProbeRow {
            radius: r,
            point: x,
            gap: (detail.estimate.mean - g_at_z).abs(),
            estimate: detail.estimate,
        });
    }
    // order gaps from the largest radius inward
    let mut ordered: Vec<(f64, f64)> = rows.iter().map(|r| (r.radius, r.gap)).collect();
    ordered.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let trend = if g_continuous_at_z {
        Some(mann_kendall_decreasing(
            &ordered.iter().map(|(_, g)| *g).collect::<Vec<_>>(),
        ))
    } else {
        None
    };
    Ok(BoundaryProbeReport {
        z: z.to_vec(),
        g_at_z,
        rows,
        trend,
    })
}

#[cfg(test)]
mod tests;
