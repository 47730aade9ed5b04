//! End-to-end workflows: model choice, band, detection at one or more
//! thresholds, optional time-point intervals, and batch screening.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{lower_band, BootstrapConfig, ConfidenceBand};
use crate::ci::{time_point_cis, CiConfig, CiResult};
use crate::data::Dataset;
use crate::detection::{change_summary, default_lambda, extract_regions, ChangeReport, ChangeSummary, Threshold};
use crate::error::{Error, Result};
use crate::fitting::{fit_ols, select_model, CandidateFit, FitOptions, FitResult, ModelSelection};
use crate::models::{default_scal, Family, ModelSpec};
use crate::rng::StreamSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    #[serde(rename = "4pll")]
    FourPll,
    Beta,
    /// Minimum AIC over both families.
    Auto,
}

impl std::str::FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4pll" => Ok(ModelChoice::FourPll),
            "beta" => Ok(ModelChoice::Beta),
            "auto" => Ok(ModelChoice::Auto),
            _ => Err(Error::InvalidConfig(format!("unknown model '{s}' (expected 4pll, beta or auto)"))),
        }
    }
}

/// How relevance thresholds are specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaSpec {
    Absolute(Vec<f64>),
    /// `log₂(fold) / (fraction · t̄)` for each fraction.
    Relative { fold: f64, fractions: Vec<f64> },
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Relative {
            fold: 1.5,
            fractions: vec![1.0],
        }
    }
}

impl LambdaSpec {
    pub fn resolve(&self, data: &Dataset) -> Result<Vec<Threshold>> {
        let out = match self {
            LambdaSpec::Absolute(values) => values.iter().map(|&v| Threshold::absolute(v)).collect::<Result<Vec<_>>>()?,
            LambdaSpec::Relative { fold, fractions } => fractions
                .iter()
                .map(|&f| default_lambda(data.design().duration(), *fold, f))
                .collect::<Result<Vec<_>>>()?,
        };
        if out.is_empty() {
            return Err(Error::InvalidConfig("at least one threshold is required".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub model: ModelChoice,
    /// Beta scaling constant; defaults to `1.2 × t_m`.
    pub scal: Option<f64>,
    pub lambda: LambdaSpec,
    pub band: BootstrapConfig,
    /// Outer replicates for time-point intervals; `None` skips them.
    pub b3: Option<usize>,
}

impl Default for AnalysisRequest {
    fn default() -> Self {
        AnalysisRequest {
            model: ModelChoice::Auto,
            scal: None,
            lambda: LambdaSpec::default(),
            band: BootstrapConfig::default(),
            b3: None,
        }
    }
}

/// Candidate specs for a model choice on `data`.
pub fn candidate_specs(choice: ModelChoice, scal: Option<f64>, data: &Dataset) -> Result<Vec<ModelSpec>> {
    let beta = || ModelSpec::beta(scal.unwrap_or_else(|| default_scal(data.design().last())));
    Ok(match choice {
        ModelChoice::FourPll => vec![ModelSpec::four_pll()],
        ModelChoice::Beta => vec![beta()?],
        ModelChoice::Auto => vec![ModelSpec::four_pll(), beta()?],
    })
}

pub fn fit_choice(data: &Dataset, choice: ModelChoice, scal: Option<f64>) -> Result<ModelSelection> {
    let specs = candidate_specs(choice, scal, data)?;
    if specs.len() == 1 {
        let fit = fit_ols(data, &specs[0], &FitOptions::default())?;
        return Ok(ModelSelection {
            candidates: vec![CandidateFit {
                spec: fit.spec,
                aic: fit.aic,
                error: None,
            }],
            best: fit,
        });
    }
    select_model(data, &specs, &FitOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: Threshold,
    pub report: ChangeReport,
    pub summary: Vec<ChangeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<CiResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub fit: FitResult,
    pub candidates: Vec<CandidateFit>,
    pub band: ConfidenceBand,
    pub thresholds: Vec<ThresholdResult>,
}

/// Fits, builds the band and detects change at every requested threshold.
pub fn analyze(data: &Dataset, req: &AnalysisRequest) -> Result<AnalysisReport> {
    let selection = fit_choice(data, req.model, req.scal)?;
    let fit = selection.best;
    let band = lower_band(data, &fit, &req.band)?;
    let thresholds = req.lambda.resolve(data)?;
    let mut results = Vec::with_capacity(thresholds.len());
    for (i, threshold) in thresholds.into_iter().enumerate() {
        let report = extract_regions(&band, threshold.value);
        let summary = change_summary(&fit, &report)?;
        let (intervals, interval_error) = match req.b3 {
            Some(b3) if report.reject_h0 => {
                let cfg = CiConfig {
                    band: BootstrapConfig {
                        seed: StreamSeed::new(req.band.seed).child(100 + i as u64).key(),
                        ..req.band.clone()
                    },
                    b3,
                };
                match time_point_cis(data, &fit, &report, &cfg) {
                    Ok(ci) => (Some(ci), None),
                    Err(e @ Error::InvalidConfig(_)) => return Err(e),
                    Err(e) => (None, Some(e.to_string())),
                }
            }
            _ => (None, None),
        };
        results.push(ThresholdResult {
            threshold,
            report,
            summary,
            intervals,
            interval_error,
        });
    }
    Ok(AnalysisReport {
        fit,
        candidates: selection.candidates,
        band,
        thresholds: results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Some subset lies entirely inside the window.
    Contain,
    /// Some subset intersects the window.
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub mode: WindowMode,
}

impl Window {
    pub fn new(lo: f64, hi: f64, mode: WindowMode) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!("invalid window [{lo}, {hi}]")));
        }
        Ok(Window { lo, hi, mode })
    }

    pub fn passes(&self, report: &ChangeReport) -> bool {
        report.subsets.iter().any(|s| match self.mode {
            WindowMode::Contain => s.start >= self.lo && s.end <= self.hi,
            WindowMode::Overlap => s.start <= self.hi && s.end >= self.lo,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub id: String,
    pub family: Option<Family>,
    pub candidates: Vec<CandidateFit>,
    pub report: Option<ChangeReport>,
    pub error: Option<String>,
    pub pass: bool,
}

fn screen_one(data: &Dataset, req: &AnalysisRequest, seed: u64) -> Result<(ModelSelection, ChangeReport)> {
    let selection = fit_choice(data, req.model, req.scal)?;
    let cfg = BootstrapConfig {
        seed,
        ..req.band.clone()
    };
    let band = lower_band(data, &selection.best, &cfg)?;
    let lambda = req.lambda.resolve(data)?[0].value;
    Ok((selection, extract_regions(&band, lambda)))
}

/// Analyzes every series at the first requested threshold and applies the
/// window filter. Per-series failures are recorded; only a batch in which
/// every series fails is an error.
pub fn batch_screen(series: &[(String, Dataset)], req: &AnalysisRequest, window: &Window) -> Result<Vec<BatchResult>> {
    req.band.validate()?;
    let root = StreamSeed::new(req.band.seed);
    let results: Vec<BatchResult> = series
        .par_iter()
        .enumerate()
        .map(|(i, (id, data))| match screen_one(data, req, root.child(i as u64).key()) {
            Ok((selection, report)) => BatchResult {
                id: id.clone(),
                family: Some(selection.best.spec.family),
                candidates: selection.candidates,
                pass: window.passes(&report),
                report: Some(report),
                error: None,
            },
            Err(e) => BatchResult {
                id: id.clone(),
                family: None,
                candidates: Vec::new(),
                report: None,
                error: Some(e.to_string()),
                pass: false,
            },
        })
        .collect();
    if !results.is_empty() && results.iter().all(|r| r.error.is_some()) {
        return Err(Error::InvalidDesign(format!(
            "every series failed; first error: {}",
            results[0].error.as_deref().unwrap_or_default()
        )));
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::ChangeSubset;

    fn report(intervals: &[(f64, f64)]) -> ChangeReport {
        ChangeReport {
            lambda: 0.013,
            reject_h0: !intervals.is_empty(),
            subsets: intervals
                .iter()
                .map(|&(start, end)| ChangeSubset {
                    start,
                    end,
                    t_max: start,
                    first_index: 0,
                    last_index: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn window_containment() {
        let w = Window::new(10.0, 25.0, WindowMode::Contain).unwrap();
        assert!(w.passes(&report(&[(12.0, 20.0)])));
        assert!(!w.passes(&report(&[(5.0, 20.0)])));
        assert!(!w.passes(&report(&[])));
        assert!(w.passes(&report(&[(1.0, 3.0), (11.0, 24.0)])));
        let o = Window::new(10.0, 25.0, WindowMode::Overlap).unwrap();
        assert!(o.passes(&report(&[(5.0, 20.0)])));
        assert!(!o.passes(&report(&[(26.0, 30.0)])));
        assert!(Window::new(5.0, 1.0, WindowMode::Contain).is_err());
    }

    #[test]
    fn model_choice_parsing() {
        assert_eq!("4pll".parse::<ModelChoice>().unwrap(), ModelChoice::FourPll);
        assert_eq!("auto".parse::<ModelChoice>().unwrap(), ModelChoice::Auto);
        assert!("emax".parse::<ModelChoice>().is_err());
    }
}
