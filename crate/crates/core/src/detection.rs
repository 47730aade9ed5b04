//! Test decision and periods of significant change.
//!
//! `H0: |f′(t)| ≤ λ for all t` is rejected when the lower band exceeds `λ`
//! anywhere. The set of exceedance is split into maximal runs of grid points
//! (coherent subsets); each run reports its start, end and the time at which
//! `lower − λ` peaks.

use serde::{Deserialize, Serialize};

use crate::bootstrap::ConfidenceBand;
use crate::error::{Error, Result};
use crate::fitting::FitResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub label: String,
}

impl Threshold {
    pub fn absolute(value: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be non-negative, got {value}")));
        }
        Ok(Threshold {
            value,
            label: format!("{value}"),
        })
    }
}

/// `λ = log₂(fold) / (fraction · t̄)`: the slope of a straight line that
/// changes by `log₂(fold)` over `fraction` of the study duration.
pub fn default_lambda(duration: f64, fold: f64, fraction: f64) -> Result<Threshold> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidConfig(format!("study duration must be positive, got {duration}")));
    }
    if !(fold >= 1.0 && fold.is_finite()) {
        return Err(Error::InvalidConfig(format!("fold change must be at least 1, got {fold}")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let denominator = fraction * duration;
    Ok(Threshold {
        value: fold.log2() / denominator,
        label: format!("log2({fold})/{denominator}"),
    })
}

/// One coherent subset of significant change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSubset {
    pub start: f64,
    pub end: f64,
    pub t_max: f64,
    /// First and last grid index inside the subset.
    pub first_index: usize,
    pub last_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub lambda: f64,
    pub reject_h0: bool,
    pub subsets: Vec<ChangeSubset>,
}

impl ChangeReport {
    pub fn count(&self) -> usize {
        self.subsets.len()
    }
}

/// True iff the band exceeds `λ` at some grid point.
pub fn test_h0(band: &ConfidenceBand, lambda: f64) -> bool {
    band.lower.iter().any(|&l| l > lambda)
}

/// Root of the linear interpolant through `(x0, y0)` and `(x1, y1)`.
fn crossing(x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let denom = y1 - y0;
    if denom == 0.0 {
        return x0;
    }
    let w = (-y0 / denom).clamp(0.0, 1.0);
    x0 + w * (x1 - x0)
}

/// Extracts the coherent subsets of `{t : L(t) > λ}`.
///
/// Endpoints are refined by linear interpolation of `L − λ` between the
/// bracketing grid points. A run touching the first or last grid point is
/// reported as starting at `t_1` or ending at `t_m`.
pub fn extract_regions(band: &ConfidenceBand, lambda: f64) -> ChangeReport {
    let grid = &band.grid;
    let excess: Vec<f64> = band.lower.iter().map(|l| l - lambda).collect();
    let last = grid.len().saturating_sub(1);
    let mut subsets = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if !(band.lower[i] > lambda) {
            i += 1;
            continue;
        }
        let first_index = i;
        while i + 1 < grid.len() && band.lower[i + 1] > lambda {
            i += 1;
        }
        let last_index = i;

        let start = if first_index == 0 {
            band.span.0
        } else {
            let j = first_index;
            crossing(grid[j - 1], excess[j - 1], grid[j], excess[j])
        };
        let end = if last_index == last {
            band.span.1
        } else {
            let j = last_index;
            crossing(grid[j], excess[j], grid[j + 1], excess[j + 1])
        };
        let mut peak = first_index;
        for k in first_index..=last_index {
            if excess[k] > excess[peak] {
                peak = k;
            }
        }
        subsets.push(ChangeSubset {
            start: start.clamp(band.span.0, band.span.1),
            end: end.clamp(band.span.0, band.span.1),
            t_max: grid[peak],
            first_index,
            last_index,
        });
        i += 1;
    }
    ChangeReport {
        lambda,
        reject_h0: !subsets.is_empty(),
        subsets,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub subset: usize,
    pub duration: f64,
    /// `f(t_end, θ̂) − f(t_start, θ̂)`.
    pub change: f64,
    /// `|change| / |b̂|`; `None` when `b̂ = 0`.
    pub fraction_of_b: Option<f64>,
}

/// Model change across each subset and the share of the total (4pLL) or peak
/// (beta) change it accounts for.
pub fn change_summary(fit: &FitResult, report: &ChangeReport) -> Result<Vec<ChangeSummary>> {
    report
        .subsets
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let change = fit.spec.eval(&fit.params, s.end)? - fit.spec.eval(&fit.params, s.start)?;
            let b = fit.params.b().abs();
            Ok(ChangeSummary {
                subset: j,
                duration: s.end - s.start,
                change,
                fraction_of_b: (b > 0.0).then(|| change.abs() / b),
            })
        })
        .collect()
}
