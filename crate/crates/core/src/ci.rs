//! Percentile confidence intervals for the start, end and peak of each
//! period of significant change.
//!
//! An outer bootstrap level draws `B3` datasets from `(θ̂, σ̂)`. Each is refitted
//! and run through the full two-level band procedure; runs whose number of
//! coherent subsets differs from the original analysis are dismissed, and the
//! remaining time points are pooled per subset index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{lower_band, simulate_dataset, BootstrapConfig};
use crate::data::Dataset;
use crate::detection::{extract_regions, ChangeReport};
use crate::error::{Error, Result};
use crate::fitting::{fit_ols, FitOptions, FitResult};
use crate::rng::StreamSeed;

/// Minimum share of the outer runs that must survive subset-count filtering.
pub const MIN_KEPT_FRACTION: f64 = 0.2;

const OUTER_DATA: u64 = 3;
const OUTER_BAND: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiConfig {
    pub band: BootstrapConfig,
    pub b3: usize,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            band: BootstrapConfig::default(),
            b3: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimePointKind {
    Start,
    End,
    Max,
}

impl TimePointKind {
    pub const ALL: [TimePointKind; 3] = [TimePointKind::Start, TimePointKind::End, TimePointKind::Max];

    pub fn of(self, report: &ChangeReport, subset: usize) -> f64 {
        let s = &report.subsets[subset];
        match self {
            TimePointKind::Start => s.start,
            TimePointKind::End => s.end,
            TimePointKind::Max => s.t_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePointCi {
    pub kind: TimePointKind,
    pub subset: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub valid_runs: usize,
    pub contains_estimate: bool,
}

/// Result of one outer bootstrap replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OuterRun {
    Kept(ChangeReport),
    /// Subset count differed from the original analysis.
    Mismatched(usize),
    Failed(String),
}

impl OuterRun {
    pub fn kept(&self) -> Option<&ChangeReport> {
        match self {
            OuterRun::Kept(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub intervals: Vec<TimePointCi>,
    pub kept_runs: usize,
    pub mismatched_runs: usize,
    pub failed_runs: usize,
}

/// Lower and upper percentile bounds: order statistics of rank `⌈(α/2)K⌉`
/// and `⌈(1 − α/2)K⌉`.
pub fn percentile_interval(values: &[f64], alpha: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len() as f64;
    let pick = |q: f64| {
        let rank = ((q * k) - 1e-9).ceil().max(1.0) as usize;
        sorted[rank.min(sorted.len()) - 1]
    };
    (pick(alpha / 2.0), pick(1.0 - alpha / 2.0))
}

/// Runs the outer bootstrap level and returns every replicate's outcome, in
/// replicate order.
pub fn outer_bootstrap(
    data: &Dataset,
    fit: &FitResult,
    expected_subsets: usize,
    cfg: &CiConfig,
    lambda: f64,
) -> Result<Vec<OuterRun>> {
    cfg.band.validate()?;
    if cfg.b3 == 0 {
        return Err(Error::InvalidConfig("B3 must be positive".into()));
    }
    let root = StreamSeed::new(cfg.band.seed);
    let design = data.design();
    let runs = (0..cfg.b3)
        .into_par_iter()
        .map(|k| {
            let mut rng = root.child(OUTER_DATA).child(k as u64).rng();
            let sample = simulate_dataset(&fit.spec, &fit.params, fit.sigma(), design, &mut rng);
            let outcome = fit_ols(&sample, &fit.spec, &FitOptions::warm(fit.params)).and_then(|star| {
                let band_cfg = BootstrapConfig {
                    seed: root.child(OUTER_BAND).child(k as u64).key(),
                    ..cfg.band.clone()
                };
                lower_band(&sample, &star, &band_cfg)
            });
            match outcome {
                Ok(band) => {
                    let report = extract_regions(&band, lambda);
                    if report.count() == expected_subsets {
                        OuterRun::Kept(report)
                    } else {
                        OuterRun::Mismatched(report.count())
                    }
                }
                Err(e) => OuterRun::Failed(e.to_string()),
            }
        })
        .collect();
    Ok(runs)
}

/// Percentile confidence intervals for every time point of interest in `report`.
pub fn time_point_cis(data: &Dataset, fit: &FitResult, report: &ChangeReport, cfg: &CiConfig) -> Result<CiResult> {
    if report.count() == 0 {
        return Err(Error::InvalidConfig(
            "confidence intervals need at least one period of significant change".into(),
        ));
    }
    let runs = outer_bootstrap(data, fit, report.count(), cfg, report.lambda)?;
    summarize_runs(report, &runs, cfg)
}

fn summarize_runs(report: &ChangeReport, runs: &[OuterRun], cfg: &CiConfig) -> Result<CiResult> {
    let kept: Vec<&ChangeReport> = runs.iter().filter_map(OuterRun::kept).collect();
    let mismatched_runs = runs.iter().filter(|r| matches!(r, OuterRun::Mismatched(_))).count();
    let failed_runs = runs.iter().filter(|r| matches!(r, OuterRun::Failed(_))).count();
    let need = (MIN_KEPT_FRACTION * cfg.b3 as f64).ceil() as usize;
    if kept.len() < need.max(1) {
        return Err(Error::InsufficientSamples {
            have: kept.len(),
            need: need.max(1),
        });
    }
    let mut intervals = Vec::with_capacity(3 * report.count());
    for subset in 0..report.count() {
        for kind in TimePointKind::ALL {
            let values: Vec<f64> = kept.iter().map(|r| kind.of(r, subset)).collect();
            let (lower, upper) = percentile_interval(&values, cfg.band.alpha);
            let estimate = kind.of(report, subset);
            intervals.push(TimePointCi {
                kind,
                subset,
                estimate,
                lower,
                upper,
                valid_runs: values.len(),
                contains_estimate: lower <= estimate && estimate <= upper,
            });
        }
    }
    Ok(CiResult {
        intervals,
        kept_runs: kept.len(),
        mismatched_runs,
        failed_runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetComparison {
    /// `t_start(A) − t_start(B)` of the first subset.
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub pairs_used: usize,
    pub pairs_dropped: usize,
}

/// One group of a two-group onset comparison.
pub struct Group<'a> {
    pub data: &'a Dataset,
    pub fit: &'a FitResult,
    pub report: &'a ChangeReport,
}

/// Difference of the first onsets of two groups with a percentile interval
/// built from outer-bootstrap onsets paired by replicate index.
pub fn compare_onsets(a: Group<'_>, b: Group<'_>, cfg: &CiConfig) -> Result<OnsetComparison> {
    for (name, g) in [("A", &a), ("B", &b)] {
        if g.report.count() == 0 {
            return Err(Error::InvalidConfig(format!(
                "group {name} shows no period of significant change"
            )));
        }
    }
    let root = StreamSeed::new(cfg.band.seed);
    let group_cfg = |idx: u64| CiConfig {
        band: BootstrapConfig {
            seed: root.child(idx).key(),
            ..cfg.band.clone()
        },
        b3: cfg.b3,
    };
    let runs_a = outer_bootstrap(a.data, a.fit, a.report.count(), &group_cfg(0), a.report.lambda)?;
    let runs_b = outer_bootstrap(b.data, b.fit, b.report.count(), &group_cfg(1), b.report.lambda)?;
    let diffs: Vec<f64> = runs_a
        .iter()
        .zip(&runs_b)
        .filter_map(|(ra, rb)| Some(ra.kept()?.subsets[0].start - rb.kept()?.subsets[0].start))
        .collect();
    let need = ((MIN_KEPT_FRACTION * cfg.b3 as f64).ceil() as usize).max(1);
    if diffs.len() < need {
        return Err(Error::InsufficientSamples {
            have: diffs.len(),
            need,
        });
    }
    let (lower, upper) = percentile_interval(&diffs, cfg.band.alpha);
    Ok(OnsetComparison {
        estimate: a.report.subsets[0].start - b.report.subsets[0].start,
        lower,
        upper,
        pairs_used: diffs.len(),
        pairs_dropped: cfg.b3 - diffs.len(),
    })
}
