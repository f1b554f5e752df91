//! Exit-time simulation of the process driven by drift + Gaussian + stable
//! jumps, with online accumulation of path integrals and the exponential
//! log-weight.
//!
//! Each step of size h performs (1) drift + Gaussian sub-move, exit check,
//! (2) stable jump sub-move, exit check. Exits through the continuous part
//! land O(sqrt(h)) outside the boundary; jump exits land wherever the jump
//! does — they are never projected back onto the boundary, since the data g
//! lives on all of D^c.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::Domain;
use crate::expr::{EvalError, ScalarField, VectorField};
use crate::stable::{fill_gaussian_increment, fill_stable_increment, NoiseParams, RngStream};

/// The law of the driving process.
pub struct ProcessSpec {
    pub noise: NoiseParams,
    /// Drift b, zero-extended off D (evaluated only at points inside D).
    pub drift: Arc<dyn VectorField>,
    /// Validation-only switch: disable the Gaussian part.
    pub include_diffusion: bool,
    /// Validation-only switch: disable the drift.
    pub include_drift: bool,
}

impl ProcessSpec {
    pub fn new(noise: NoiseParams, drift: Arc<dyn VectorField>) -> Self {
        ProcessSpec {
            noise,
            drift,
            include_diffusion: true,
            include_drift: true,
        }
    }
}

/// A named scalar field whose path integral is recorded.
#[derive(Clone)]
pub struct RecordSpec {
    pub name: String,
    pub field: Arc<dyn ScalarField>,
}

/// Step-size and truncation controls.
#[derive(Clone)]
pub struct PathConfig {
    /// Base step.
    pub dt: f64,
    /// Step shrink factor applied within sqrt(dt) of the boundary, in (0, 1].
    pub dt_boundary_factor: f64,
    /// Truncation horizon.
    pub t_max: f64,
    /// Scalar fields to path-integrate (left-endpoint Riemann sums).
    pub record: Vec<RecordSpec>,
}

impl PathConfig {
    pub fn new(dt: f64, dt_boundary_factor: f64, t_max: f64) -> Self {
        assert!(dt > 0.0 && dt <= t_max, "need 0 < dt <= t_max");
        assert!(
            dt_boundary_factor > 0.0 && dt_boundary_factor <= 1.0,
            "boundary factor must lie in (0, 1]"
        );
        PathConfig {
            dt,
            dt_boundary_factor,
            t_max,
            record: Vec::new(),
        }
    }

    pub fn with_record(mut self, record: Vec<RecordSpec>) -> Self {
        self.record = record;
        self
    }
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitSample {
    /// X_tau; lies in D^c unless the path was truncated.
    pub x_exit: Vec<f64>,
    /// Exit (or truncation) time.
    pub tau: f64,
    /// Left-endpoint Riemann sums of the recorded fields.
    pub integrals: Vec<f64>,
    /// Total accumulated log-weight: integral of the weight rate up to tau.
    pub log_weight: f64,
    /// Online sum of e(s) f(X_s) ds.
    pub weighted_f_integral: f64,
    /// True when the horizon t_max was reached before exit.
    pub truncated: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("coefficient evaluation failed at t = {t}, x = {position:?}: {source}")]
    Eval {
        position: Vec<f64>,
        t: f64,
        source: EvalError,
    },
    #[error("weight blow-up at t = {t}, x = {position:?} (log-weight {log_weight})")]
    WeightBlowup {
        position: Vec<f64>,
        t: f64,
        log_weight: f64,
    },
    #[error("start point must lie inside D")]
    StartOutside,
}

// beyond this the weight exp() overflows f64
const LOG_WEIGHT_CAP: f64 = 700.0;

/// Simulates one path from `start` to its exit from D, accumulating the
/// weight-rate integral (log-weight), the online weighted f-integral and any
/// recorded path integrals.
pub fn simulate_to_exit(
    proc: &ProcessSpec,
    domain: &Domain,
    cfg: &PathConfig,
    weight_rate: &dyn ScalarField,
    f: &dyn ScalarField,
    start: &[f64],
    rng: &mut RngStream,
) -> Result<ExitSample, PathError> {
    if !domain.contains(start) {
        return Err(PathError::StartOutside);
    }
    let d = proc.noise.d;
    debug_assert_eq!(start.len(), d);

    let rate_const = weight_rate.as_const();
    let f_const = f.as_const();
    let drift_active = proc.include_drift && !proc.drift.is_zero();
    let jumps_active = proc.noise.a > 0.0;
    let shrink_band = cfg.dt.sqrt();

    let mut x = start.to_vec();
    let mut t = 0.0f64;
    let mut log_w = 0.0f64;
    let mut wf = 0.0f64;
    let mut integrals = vec![0.0; cfg.record.len()];
    let mut drift_buf = vec![0.0; d];
    let mut noise_buf = vec![0.0; d];

    let eval_err = |x: &[f64], t: f64, e: EvalError| PathError::Eval {
        position: x.to_vec(),
        t,
        source: e,
    };

    loop {
        if t >= cfg.t_max {
            return Ok(ExitSample {
                x_exit: x,
                tau: t,
                integrals,
                log_weight: log_w,
                weighted_f_integral: wf,
                truncated: true,
            });
        }
        let mut h = if domain.signed_distance(&x).abs() < shrink_band {
            cfg.dt * cfg.dt_boundary_factor
        } else {
            cfg.dt
        };
        h = h.min(cfg.t_max - t);

        // left-endpoint accumulation over [t, t+h]
        let fv = match f_const {
            Some(v) => v,
            None => f.value(&x).map_err(|e| eval_err(&x, t, e))?,
        };
        wf += log_w.exp() * fv * h;
        let rate = match rate_const {
            Some(v) => v,
            None => weight_rate.value(&x).map_err(|e| eval_err(&x, t, e))?,
        };
        log_w += rate * h;
        if !log_w.is_finite() || log_w > LOG_WEIGHT_CAP {
            return Err(PathError::WeightBlowup {
                position: x,
                t,
                log_weight: log_w,
            });
        }
        for (acc, rec) in integrals.iter_mut().zip(&cfg.record) {
            *acc += rec.field.value(&x).map_err(|e| eval_err(&x, t, e))? * h;
        }

        // sub-move 1: drift + Gaussian
        if drift_active {
            proc.drift
                .value_into(&x, &mut drift_buf)
                .map_err(|e| eval_err(&x, t, e))?;
            for (xi, bi) in x.iter_mut().zip(&drift_buf) {
                *xi += bi * h;
            }
        }
        if proc.include_diffusion {
            fill_gaussian_increment(h, rng, &mut noise_buf);
            for (xi, ni) in x.iter_mut().zip(&noise_buf) {
                *xi += ni;
            }
        }
        t += h;
        if !domain.contains(&x) {
            return Ok(ExitSample {
                x_exit: x,
                tau: t,
                integrals,
                log_weight: log_w,
                weighted_f_integral: wf,
                truncated: false,
            });
        }

        // sub-move 2: stable jump over the same slice
        if jumps_active {
            fill_stable_increment(&proc.noise, h, rng, &mut noise_buf);
            for (xi, ni) in x.iter_mut().zip(&noise_buf) {
                *xi += ni;
            }
            if !domain.contains(&x) {
                return Ok(ExitSample {
                    x_exit: x,
                    tau: t,
                    integrals,
                    log_weight: log_w,
                    weighted_f_integral: wf,
                    truncated: false,
                });
            }
        }
    }
}

/// Monte Carlo point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    /// Fraction of paths that hit the horizon before exiting.
    pub truncation_fraction: f64,
}

/// Reduces per-sample values to a mean/stderr estimate. All samples equal
/// gives stderr exactly 0 (constant-payoff contract).
pub fn reduce_samples(values: &[f64], truncated: usize) -> Estimate {
    let n = values.len();
    assert!(n >= 2, "need at least two samples");
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return Estimate {
            mean: first,
            stderr: 0.0,
            n,
            truncation_fraction: truncated as f64 / n as f64,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    Estimate {
        mean,
        stderr: (var / n as f64).sqrt(),
        n,
        truncation_fraction: truncated as f64 / n as f64,
    }
}

/// Per-path outputs collected by [`sample_paths`]; reductions over these are
/// deterministic regardless of worker scheduling because samples are stored
/// by path index and reduced sequentially.
pub struct PathEnsemble {
    pub samples: Vec<ExitSample>,
    pub failures: Vec<(usize, PathError)>,
}

/// Runs n independent paths with per-path streams derived from
/// (seed, stream_base + path index).
#[allow(clippy::too_many_arguments)]
pub fn sample_paths(
    proc: &ProcessSpec,
    domain: &Domain,
    cfg: &PathConfig,
    weight_rate: &dyn ScalarField,
    f: &dyn ScalarField,
    start: &[f64],
    n: usize,
    seed: u64,
    stream_base: u64,
) -> PathEnsemble {
    let results: Vec<Result<ExitSample, PathError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, stream_base + i as u64);
            simulate_to_exit(proc, domain, cfg, weight_rate, f, start, &mut rng)
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => failures.push((i, e)),
        }
    }
    PathEnsemble { samples, failures }
}

/// Mean of a payoff functional over n paths. Fails if any path fails.
#[allow(clippy::too_many_arguments)]
pub fn estimate_mean_functional<P>(
    proc: &ProcessSpec,
    domain: &Domain,
    cfg: &PathConfig,
    payoff: P,
    start: &[f64],
    n: usize,
    seed: u64,
) -> Result<Estimate, PathError>
where
    P: Fn(&ExitSample) -> f64 + Sync,
{
    assert!(n >= 2);
    let zero = crate::expr::ConstField(0.0);
    let ensemble = sample_paths(proc, domain, cfg, &zero, &zero, start, n, seed, 0);
    if let Some((_, e)) = ensemble.failures.into_iter().next() {
        return Err(e);
    }
    let truncated = ensemble.samples.iter().filter(|s| s.truncated).count();
    let values: Vec<f64> = ensemble.samples.iter().map(&payoff).collect();
    Ok(reduce_samples(&values, truncated))
}
