//! NEES scoring against chi-square bounds.
//!
//! `eps = e^T S^-1 e` with `e = mean - truth`. For a consistent Gaussian
//! estimator `eps` is chi-square distributed with `dim(e)` degrees of freedom,
//! which holds for the inverse-weighted (Mahalanobis) form used here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::geometry::GaussianState;
use crate::unscented::pd_factor;

/// Normalized estimation error squared of `estimate` against `truth`.
pub fn nees(estimate: &GaussianState, truth: &DVector<f64>) -> Result<f64> {
    if truth.len() != estimate.dim() {
        return Err(Error::invalid(format!(
            "estimate has dimension {} but truth has {}",
            estimate.dim(),
            truth.len()
        )));
    }
    let l = pd_factor(&estimate.cov)?;
    let e = &estimate.mean - truth;
    let y = l
        .solve_lower_triangular(&e)
        .ok_or_else(|| Error::Numeric("singular covariance factor".into()))?;
    Ok(y.norm_squared())
}

/// Convenience form for fixed-size estimates.
pub fn nees_fixed<const N: usize>(
    mean: &nalgebra::SVector<f64, N>,
    cov: &nalgebra::SMatrix<f64, N, N>,
    truth: &nalgebra::SVector<f64, N>,
) -> Result<f64> {
    let g = GaussianState {
        mean: DVector::from_column_slice(mean.as_slice()),
        cov: DMatrix::from_column_slice(N, N, cov.as_slice()),
    };
    nees(&g, &DVector::from_column_slice(truth.as_slice()))
}

pub const MAX_DOF: usize = 10;

/// Two-sided 95% interval `[chi2_dof(0.025), chi2_dof(0.975)]`.
pub fn chi2_bounds(dof: usize) -> Result<(f64, f64)> {
    chi2_interval(dof, 0.95)
}

/// Central interval containing `mass` of the chi-square distribution.
pub fn chi2_interval(dof: usize, mass: f64) -> Result<(f64, f64)> {
    if !(1..=MAX_DOF).contains(&dof) {
        return Err(Error::invalid(format!(
            "unsupported degrees of freedom {dof} (expected 1..={MAX_DOF})"
        )));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::invalid(format!(
            "interval mass {mass} outside (0, 1)"
        )));
    }
    let tail = 0.5 * (1.0 - mass);
    Ok((chi2_quantile(dof, tail), chi2_quantile(dof, 1.0 - tail)))
}

/// Inverse chi-square CDF by bisection on the regularized lower incomplete
/// gamma function `P(dof/2, x/2)`.
pub fn chi2_quantile(dof: usize, p: f64) -> f64 {
    assert!(dof >= 1 && p > 0.0 && p < 1.0, "chi2_quantile domain");
    let a = 0.5 * dof as f64;
    let cdf = |x: f64| gamma_lr(a, 0.5 * x);
    let mut hi = dof as f64 + 10.0;
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One scored sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeesRecord {
    pub epsilon: f64,
    pub dof: usize,
    pub in_bounds: bool,
}

impl NeesRecord {
    /// Scores `epsilon` against the 95% interval for `dof`.
    pub fn new(epsilon: f64, dof: usize) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!("NEES must be >= 0, got {epsilon}")));
        }
        let (lo, hi) = chi2_bounds(dof)?;
        Ok(NeesRecord {
            epsilon,
            dof,
            in_bounds: lo <= epsilon && epsilon <= hi,
        })
    }
}

/// Fraction of records inside their bounds.
pub fn in_bound_rate(records: &[NeesRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no NEES records"));
    }
    let inside = records.iter().filter(|r| r.in_bounds).count();
    Ok(inside as f64 / records.len() as f64)
}

/// Pooled statistics of a set of NEES records sharing one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeesSummary {
    pub dof: usize,
    pub count: usize,
    pub in_bounds: usize,
    pub in_bound_rate: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub below_lower: usize,
    pub above_upper: usize,
    pub mean_nees: f64,
    pub median_nees: f64,
    pub histogram: Histogram,
}

/// Fixed-width histogram on `[0, upper)` with a final overflow bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl NeesSummary {
    pub fn from_records(records: &[NeesRecord]) -> Result<Self> {
        let rate = in_bound_rate(records)?;
        let dof = records[0].dof;
        if records.iter().any(|r| r.dof != dof) {
            return Err(Error::invalid("mixed degrees of freedom in one summary"));
        }
        let (lo, hi) = chi2_bounds(dof)?;
        let mut eps: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        eps.sort_by(f64::total_cmp);
        let n = eps.len();
        let median = if n % 2 == 1 {
            eps[n / 2]
        } else {
            0.5 * (eps[n / 2 - 1] + eps[n / 2])
        };
        let bins = 40;
        let bin_width = 2.0 * hi / bins as f64;
        let mut counts = vec![0usize; bins];
        let mut overflow = 0;
        for e in &eps {
            let b = (e / bin_width) as usize;
            if b < bins {
                counts[b] += 1;
            } else {
                overflow += 1;
            }
        }
        Ok(NeesSummary {
            dof,
            count: n,
            in_bounds: records.iter().filter(|r| r.in_bounds).count(),
            in_bound_rate: rate,
            lower_bound: lo,
            upper_bound: hi,
            below_lower: eps.iter().filter(|e| **e < lo).count(),
            above_upper: eps.iter().filter(|e| **e > hi).count(),
            mean_nees: mean,
            median_nees: median,
            histogram: Histogram {
                bin_width,
                counts,
                overflow,
            },
        })
    }
}
