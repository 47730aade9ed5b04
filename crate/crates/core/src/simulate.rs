//! Built-in simulation scenarios and the repeated-analysis harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{lower_band, simulate_dataset, BootstrapConfig};
use crate::ci::TimePointKind;
use crate::data::TimeDesign;
use crate::detection::{default_lambda, extract_regions, ChangeReport};
use crate::error::{Error, Result};
use crate::fitting::{fit_ols, FitOptions};
use crate::models::{default_scal, ModelSpec, ParamVector};
use crate::rng::StreamSeed;

/// Real-data anchor for the 4pLL scenarios: standard deviation and the change `|b|` it belongs to.
pub const FOUR_PLL_ANCHOR: (f64, f64) = (1.190, 3.783);
/// Real-data anchor for the beta scenarios.
pub const BETA_ANCHOR: (f64, f64) = (0.566, 2.952);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaLevel {
    Small,
    MidSmall,
    Medium,
    MidLarge,
    Large,
}

impl SigmaLevel {
    pub const ALL: [SigmaLevel; 5] = [
        SigmaLevel::Small,
        SigmaLevel::MidSmall,
        SigmaLevel::Medium,
        SigmaLevel::MidLarge,
        SigmaLevel::Large,
    ];

    /// Multiplier applied to the medium level.
    pub fn multiplier(self) -> f64 {
        match self {
            SigmaLevel::Small => 0.5,
            SigmaLevel::MidSmall => 0.75,
            SigmaLevel::Medium => 1.0,
            SigmaLevel::MidLarge => 1.5,
            SigmaLevel::Large => 2.0,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SigmaLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaLevel::Small => "small",
            SigmaLevel::MidSmall => "mid-small",
            SigmaLevel::Medium => "medium",
            SigmaLevel::MidLarge => "mid-large",
            SigmaLevel::Large => "large",
        })
    }
}

impl FromStr for SigmaLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SigmaLevel::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sigma level '{s}'")))
    }
}

/// Printed standard deviations per scenario, columns small..large.
pub const SIGMA_TABLE: [[f64; 5]; 6] = [
    [0.014, 0.021, 0.028, 0.042, 0.056],
    [0.149, 0.223, 0.297, 0.446, 0.595],
    [0.595, 0.892, 1.190, 1.784, 2.380],
    [0.283, 0.424, 0.566, 0.849, 1.132],
    [0.283, 0.424, 0.566, 0.849, 1.132],
    [0.283, 0.424, 0.566, 0.849, 1.132],
];

/// `σ_medium = (b_scenario / b_real) · σ_real`.
pub fn sigma_transform(b_scenario: f64, b_real: f64, sigma_real: f64) -> Result<f64> {
    if b_real == 0.0 {
        return Err(Error::InvalidConfig("reference change must be non-zero".into()));
    }
    Ok(b_scenario / b_real * sigma_real)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub name: String,
    pub model: ModelSpec,
    pub params: ParamVector,
    pub level: SigmaLevel,
    pub sigma: f64,
    pub design: TimeDesign,
    pub lambda: f64,
    /// Periods of relevant change of the true curve as printed with the scenario.
    pub reported_regions: Vec<Interval>,
}

/// Scenario `id` (1–6) at the given noise level.
pub fn builtin_scenario(id: u8, level: SigmaLevel) -> Result<ScenarioSpec> {
    let design = TimeDesign::reference();
    let beta = ModelSpec::beta(default_scal(design.last()))?;
    let iv = |start, end| Interval { start, end };
    let (name, model, params, regions) = match id {
        1 => ("No relevant change", ModelSpec::four_pll(), ParamVector::new(8.791, -0.089, 17.589, 10.0), vec![]),
        2 => ("Small jump", ModelSpec::four_pll(), ParamVector::new(8.791, -0.946, 17.589, 10.0), vec![iv(11.7, 24.5)]),
        3 => ("Large jump", ModelSpec::four_pll(), ParamVector::new(8.791, -3.783, 17.589, 5.0), vec![iv(5.9, 36.3)]),
        4 => ("Dip", beta, ParamVector::new(6.997, 2.952, 0.506, 0.215), vec![iv(0.0, 33.6), iv(41.2, 45.0)]),
        5 => ("Dip alternative", beta, ParamVector::new(6.997, 2.952, 3.286, 1.290), vec![iv(5.7, 38.1), iv(39.4, 45.0)]),
        6 => ("No dip", beta, ParamVector::new(6.997, 2.952, 0.228, 0.084), vec![iv(0.0, 28.9)]),
        _ => return Err(Error::InvalidConfig(format!("scenario id must be 1-6, got {id}"))),
    };
    let lambda = default_lambda(design.duration(), 1.5, 1.0)?.value;
    Ok(ScenarioSpec {
        id,
        name: name.to_string(),
        model,
        params,
        level,
        sigma: SIGMA_TABLE[id as usize - 1][level.index()],
        design,
        lambda,
        reported_regions: regions,
    })
}

/// Derived standard deviation of a scenario at a level, before rounding.
pub fn derived_sigma(id: u8, level: SigmaLevel) -> Result<f64> {
    let spec = builtin_scenario(id, level)?;
    let (sigma_real, b_real) = match spec.model.family {
        crate::models::Family::FourPll => FOUR_PLL_ANCHOR,
        crate::models::Family::Beta => BETA_ANCHOR,
    };
    Ok(sigma_transform(spec.params.b().abs(), b_real, sigma_real)? * level.multiplier())
}

fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut g_lo = g(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if (g_mid > 0.0) == (g_lo > 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact intervals where `|f′(t, θ)| > λ` on the study period, by a bracket
/// scan of step 0.01 followed by bisection. Unrounded.
pub fn true_regions_exact(model: &ModelSpec, params: &ParamVector, design: &TimeDesign, lambda: f64) -> Vec<Interval> {
    let (t0, t1) = (design.first(), design.last());
    let g = |t: f64| {
        let t = if t <= 0.0 { 1e-9 } else { t };
        model.abs_derivative(params, t).unwrap_or(f64::INFINITY) - lambda
    };
    let step = 0.01;
    let count = ((t1 - t0) / step).round() as usize;
    let mut regions = Vec::new();
    let mut open: Option<f64> = if g(t0) > 0.0 { Some(t0) } else { None };
    let mut prev_t = t0;
    let mut prev_g = g(t0);
    for k in 1..=count {
        let t = if k == count { t1 } else { t0 + k as f64 * step };
        let gt = g(t);
        if (gt > 0.0) != (prev_g > 0.0) {
            let root = bisect(g, prev_t, t);
            match open.take() {
                Some(start) => regions.push(Interval { start, end: root }),
                None => open = Some(root),
            }
        }
        prev_t = t;
        prev_g = gt;
    }
    if let Some(start) = open {
        regions.push(Interval { start, end: t1 });
    }
    regions
}

/// True periods of relevant change with interior endpoints rounded inward
/// to one decimal (starts up, ends down); study limits are kept exactly.
pub fn true_regions(spec: &ScenarioSpec) -> Vec<Interval> {
    let (t0, t1) = (spec.design.first(), spec.design.last());
    true_regions_exact(&spec.model, &spec.params, &spec.design, spec.lambda)
        .into_iter()
        .map(|iv| Interval {
            start: if iv.start == t0 { t0 } else { (iv.start * 10.0 - 1e-9).ceil() / 10.0 },
            end: if iv.end == t1 { t1 } else { (iv.end * 10.0 + 1e-9).floor() / 10.0 },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePointStats {
    pub kind: TimePointKind,
    pub subset: usize,
    pub truth: f64,
    pub matched_runs: usize,
    /// Mean of `estimate − truth`.
    pub bias: f64,
    /// Sample variance of the estimates.
    pub variance: f64,
    pub mean_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub report: Option<ChangeReport>,
    /// The band lay below the true `|f′|` on the whole grid.
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: u8,
    pub level: SigmaLevel,
    pub sigma: f64,
    pub lambda: f64,
    /// Completed runs.
    pub runs: usize,
    pub failed_runs: usize,
    pub rejections: usize,
    /// Completed runs whose band lay below the true `|f′|` everywhere.
    pub covered_runs: usize,
    /// Completed runs by number of detected subsets.
    pub subset_histogram: BTreeMap<usize, usize>,
    pub truth: Vec<Interval>,
    pub time_points: Vec<TimePointStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_run: Option<Vec<RunRecord>>,
}

impl SimulationSummary {
    pub fn time_point(&self, kind: TimePointKind, subset: usize) -> Option<&TimePointStats> {
        self.time_points.iter().find(|s| s.kind == kind && s.subset == subset)
    }
}

fn analyze_run(spec: &ScenarioSpec, cfg: &BootstrapConfig, run: usize) -> Result<(ChangeReport, bool)> {
    let root = StreamSeed::new(cfg.seed).child(run as u64);
    let mut rng = root.child(0).rng();
    let data = simulate_dataset(&spec.model, &spec.params, spec.sigma, &spec.design, &mut rng);
    let fit = fit_ols(&data, &spec.model, &FitOptions::default())?;
    let band_cfg = BootstrapConfig {
        seed: root.child(1).key(),
        ..cfg.clone()
    };
    let band = lower_band(&data, &fit, &band_cfg)?;
    let covered = band.covers(&spec.model, &spec.params)?;
    Ok((extract_regions(&band, spec.lambda), covered))
}

/// Repeats data generation, fitting, band construction and detection `runs` times.
pub fn run_simulation(spec: &ScenarioSpec, runs: usize, cfg: &BootstrapConfig, keep_runs: bool) -> Result<SimulationSummary> {
    cfg.validate()?;
    let records: Vec<RunRecord> = (0..runs)
        .into_par_iter()
        .map(|run| match analyze_run(spec, cfg, run) {
            Ok((report, covered)) => RunRecord {
                run,
                report: Some(report),
                covered: Some(covered),
                error: None,
            },
            Err(e) => RunRecord {
                run,
                report: None,
                covered: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let truth = true_regions(spec);
    let reports: Vec<&ChangeReport> = records.iter().filter_map(|r| r.report.as_ref()).collect();
    let mut subset_histogram = BTreeMap::new();
    for r in &reports {
        *subset_histogram.entry(r.count()).or_insert(0) += 1;
    }
    let matched: Vec<&&ChangeReport> = reports.iter().filter(|r| r.count() == truth.len()).collect();
    let mut time_points = Vec::new();
    for (j, iv) in truth.iter().enumerate() {
        for (kind, true_value) in [(TimePointKind::Start, iv.start), (TimePointKind::End, iv.end)] {
            let values: Vec<f64> = matched.iter().map(|r| kind.of(r, j)).collect();
            let k = values.len();
            let mean = if k > 0 { values.iter().sum::<f64>() / k as f64 } else { f64::NAN };
            let variance = if k > 1 {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64
            } else {
                f64::NAN
            };
            time_points.push(TimePointStats {
                kind,
                subset: j,
                truth: true_value,
                matched_runs: k,
                bias: mean - true_value,
                variance,
                mean_estimate: mean,
            });
        }
    }
    Ok(SimulationSummary {
        scenario: spec.id,
        level: spec.level,
        sigma: spec.sigma,
        lambda: spec.lambda,
        runs: reports.len(),
        failed_runs: records.len() - reports.len(),
        rejections: reports.iter().filter(|r| r.reject_h0).count(),
        covered_runs: records.iter().filter(|r| r.covered == Some(true)).count(),
        subset_histogram,
        truth,
        time_points,
        per_run: keep_runs.then_some(records),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_registry() {
        let s = builtin_scenario(2, SigmaLevel::Small).unwrap();
        assert_eq!(s.params.0, [8.791, -0.946, 17.589, 10.0]);
        assert_eq!(s.sigma, 0.149);
        let s = builtin_scenario(5, SigmaLevel::Medium).unwrap();
        assert_eq!(s.params.0, [6.997, 2.952, 3.286, 1.290]);
        assert_eq!(s.sigma, 0.566);
        assert_eq!(s.model.scal, Some(54.0));
        assert_eq!(builtin_scenario(1, SigmaLevel::Large).unwrap().sigma, 0.056);
        assert!(builtin_scenario(7, SigmaLevel::Small).is_err());
    }

    #[test]
    fn level_multipliers_relate_to_medium() {
        for row in SIGMA_TABLE {
            let medium = row[2];
            for level in SigmaLevel::ALL {
                let derived = medium * level.multiplier();
                assert!((derived - row[level.index()]).abs() <= 0.0011, "{row:?} {level}");
            }
        }
    }

    #[test]
    fn sigma_transform_examples() {
        assert_eq!(sigma_transform(2.0, 2.0, 0.7).unwrap(), 0.7);
        let s2 = sigma_transform(0.946, 3.783, 1.190).unwrap();
        assert!((s2 - 0.2976).abs() < 1e-4);
        assert_eq!(sigma_transform(0.0, 3.0, 1.0).unwrap(), 0.0);
        assert!(sigma_transform(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn level_names_round_trip() {
        for level in SigmaLevel::ALL {
            assert_eq!(level.to_string().parse::<SigmaLevel>().unwrap(), level);
        }
        assert!("huge".parse::<SigmaLevel>().is_err());
    }

    #[test]
    fn no_region_when_lambda_exceeds_slope() {
        let spec = builtin_scenario(2, SigmaLevel::Small).unwrap();
        let regions = true_regions_exact(&spec.model, &spec.params, &spec.design, 1.0);
        assert!(regions.is_empty());
        assert!(true_regions(&builtin_scenario(1, SigmaLevel::Small).unwrap()).is_empty());
    }
}
