//! Two-step parametric bootstrap for a lower simultaneous confidence band of
//! `|f′(t, θ)|`.
//!
//! First level: `B1` datasets are simulated from `(θ̂, σ̂)` and refitted. Their
//! spread gives the pointwise standard deviation of `|f′(t, θ̂)|`. Second
//! level: every first-level fit seeds `B2` further datasets whose spread
//! studentizes that replicate's maximal deviation
//! `D_l = max_t (|f′(t, θ̂*_l)| − |f′(t, θ̂)|) / σ̂_l(t)`. The empirical
//! `(1 − α)`-quantile of the `D_l` is the critical value `c`, and the band is
//! `|f′(t, θ̂)| − c·σ̂(t)`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TimeDesign};
use crate::error::{Error, Result};
use crate::fitting::{fit_ols, FitOptions, FitResult};
use crate::models::{EvalGrid, ModelSpec, ParamVector, DEFAULT_GRID_STEP};
use crate::rng::StreamSeed;

/// Smallest number of valid studentized maxima needed for a critical value.
pub const MIN_CRITICAL_SAMPLES: usize = 50;

/// Relative size of the pointwise standard-deviation floor.
pub const SD_FLOOR_RELATIVE: f64 = 1e-8;

const FIRST_LEVEL: u64 = 1;
const SECOND_LEVEL: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b1: usize,
    pub b2: usize,
    pub alpha: f64,
    pub seed: u64,
    pub grid_step: f64,
    pub max_refit_failure_fraction: f64,
    /// Replace near-zero pointwise standard deviations by a relative floor.
    pub sd_floor: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b1: 500,
            b2: 25,
            alpha: 0.05,
            seed: 0,
            grid_step: DEFAULT_GRID_STEP,
            max_refit_failure_fraction: 0.10,
            sd_floor: true,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b1 < MIN_CRITICAL_SAMPLES {
            return Err(Error::InvalidConfig(format!("B1 must be at least 50, got {}", self.b1)));
        }
        if self.b2 < 5 {
            return Err(Error::InvalidConfig(format!("B2 must be at least 5, got {}", self.b2)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(Error::InvalidConfig(format!("grid step must be positive, got {}", self.grid_step)));
        }
        if !(0.0..=1.0).contains(&self.max_refit_failure_fraction) {
            return Err(Error::InvalidConfig(
                "refit failure fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandDiagnostics {
    pub first_level_valid: usize,
    pub first_level_failed: usize,
    pub second_level_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    /// Study period `[t_1, t_m]`.
    pub span: (f64, f64),
    pub grid: Vec<f64>,
    pub point_estimate: Vec<f64>,
    pub pointwise_sd: Vec<f64>,
    pub critical_value: f64,
    pub alpha: f64,
    pub lower: Vec<f64>,
    pub diagnostics: BandDiagnostics,
}

impl ConfidenceBand {
    /// Assembles `lower = estimate − c·sd`.
    pub fn assemble(
        span: (f64, f64),
        grid: Vec<f64>,
        point_estimate: Vec<f64>,
        pointwise_sd: Vec<f64>,
        critical_value: f64,
        alpha: f64,
    ) -> Self {
        let lower = point_estimate
            .iter()
            .zip(&pointwise_sd)
            .map(|(e, s)| e - critical_value * s)
            .collect();
        ConfidenceBand {
            span,
            grid,
            point_estimate,
            pointwise_sd,
            critical_value,
            alpha,
            lower,
            diagnostics: BandDiagnostics::default(),
        }
    }

    /// Whether the band lies below `|f′(t, θ)|` at every grid point.
    pub fn covers(&self, spec: &ModelSpec, theta: &ParamVector) -> Result<bool> {
        for (&t, &l) in self.grid.iter().zip(&self.lower) {
            if l > spec.abs_derivative(theta, t)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Draws `y_pq = f(t_p, θ) + σ·ε_pq` with standard normal `ε`.
pub fn simulate_dataset<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: &ParamVector,
    sigma: f64,
    design: &TimeDesign,
    rng: &mut R,
) -> Dataset {
    let responses = design
        .times()
        .iter()
        .zip(design.replicates())
        .map(|(&t, &n)| {
            let mean = spec.eval_unchecked(theta, t);
            (0..n)
                .map(|_| {
                    let eps: f64 = rng.sample(StandardNormal);
                    mean + sigma * eps
                })
                .collect()
        })
        .collect();
    Dataset::new(design.clone(), responses).expect("simulated data match their design")
}

/// Running mean/variance per grid point (Welford).
struct ColumnMoments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ColumnMoments {
    fn new(len: usize) -> Self {
        ColumnMoments {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, row: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(row) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    fn sd(&self) -> Vec<f64> {
        let d = (self.count.max(2) - 1) as f64;
        self.m2.iter().map(|s| (s.max(0.0) / d).sqrt()).collect()
    }
}

/// Applies the relative floor `1e-8 · max(sd)` to a standard-deviation vector.
/// With the floor disabled, any zero entry is an error.
pub fn floor_sd(sd: &mut [f64], grid: &[f64], enabled: bool) -> Result<()> {
    if enabled {
        let max = sd.iter().copied().fold(0.0, f64::max);
        let floor = SD_FLOOR_RELATIVE * max.max(1e-300);
        for s in sd.iter_mut() {
            if *s < floor {
                *s = floor;
            }
        }
        Ok(())
    } else if let Some(index) = sd.iter().position(|&s| s <= 0.0) {
        Err(Error::DegenerateVariance {
            index,
            t: grid.get(index).copied().unwrap_or(f64::NAN),
        })
    } else {
        Ok(())
    }
}

/// Sample standard deviation (divisor `k − 1`) of each column of `samples`.
pub fn pointwise_sd(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            have: samples.len(),
            need: 2,
        });
    }
    let mut moments = ColumnMoments::new(samples[0].len());
    for row in samples {
        moments.push(row);
    }
    Ok(moments.sd())
}

/// Order statistic of rank `⌈q·k⌉` (at least 1) of `values`.
pub fn upper_rank_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let rank = ((q * k as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(k) - 1]
}

/// Empirical `(1 − α)`-quantile of the studentized maxima.
pub fn critical_value(samples: &[f64], alpha: f64) -> Result<f64> {
    let valid: Vec<f64> = samples.iter().copied().filter(|d| d.is_finite()).collect();
    if valid.len() < MIN_CRITICAL_SAMPLES {
        return Err(Error::InsufficientSamples {
            have: valid.len(),
            need: MIN_CRITICAL_SAMPLES,
        });
    }
    Ok(upper_rank_quantile(&valid, 1.0 - alpha))
}

struct FirstLevel {
    abs_derivative: Vec<f64>,
    studentized_max: f64,
    second_failures: usize,
}

fn refit(data: &Dataset, spec: &ModelSpec, start: &ParamVector) -> Option<FitResult> {
    fit_ols(data, spec, &FitOptions::warm(*start))
        .ok()
        .filter(|f| f.params.is_finite() && f.sigma2.is_finite())
}

/// Raw bootstrap output before the critical value is fixed; lets callers
/// evaluate several `α` on the same draws.
pub struct BootstrapDraws {
    span: (f64, f64),
    grid: Vec<f64>,
    point_estimate: Vec<f64>,
    first_level_sd: Vec<f64>,
    studentized_max: Vec<f64>,
    diagnostics: BandDiagnostics,
}

impl BootstrapDraws {
    pub fn studentized_max(&self) -> &[f64] {
        &self.studentized_max
    }

    pub fn band(&self, alpha: f64) -> Result<ConfidenceBand> {
        let c = critical_value(&self.studentized_max, alpha)?;
        let mut band = ConfidenceBand::assemble(
            self.span,
            self.grid.clone(),
            self.point_estimate.clone(),
            self.first_level_sd.clone(),
            c,
            alpha,
        );
        band.diagnostics = self.diagnostics.clone();
        Ok(band)
    }
}

/// Runs both bootstrap levels for `fit` on `data`'s design.
pub fn bootstrap_draws(data: &Dataset, fit: &FitResult, cfg: &BootstrapConfig) -> Result<BootstrapDraws> {
    cfg.validate()?;
    let design = data.design();
    let spec = fit.spec;
    let theta = fit.params;
    let sigma = fit.sigma();
    let grid = EvalGrid::new(design.first(), design.last(), cfg.grid_step)?;
    let estimate = grid.abs_derivative(&spec, &theta);
    let root = StreamSeed::new(cfg.seed);

    let first: Vec<Option<FirstLevel>> = (0..cfg.b1)
        .into_par_iter()
        .map(|l| {
            let mut rng = root.child(FIRST_LEVEL).child(l as u64).rng();
            let sample = simulate_dataset(&spec, &theta, sigma, design, &mut rng);
            let star = refit(&sample, &spec, &theta)?;
            let abs_star = grid.abs_derivative(&spec, &star.params);

            let mut moments = ColumnMoments::new(grid.len());
            let mut buf = vec![0.0; grid.len()];
            let mut failures = 0;
            let second_root = root.child(SECOND_LEVEL).child(l as u64);
            for k in 0..cfg.b2 {
                let mut rng = second_root.child(k as u64).rng();
                let inner = simulate_dataset(&spec, &star.params, star.sigma(), design, &mut rng);
                match refit(&inner, &spec, &star.params) {
                    Some(f) => {
                        grid.abs_derivative_into(&spec, &f.params, &mut buf);
                        moments.push(&buf);
                    }
                    None => failures += 1,
                }
            }
            if moments.count < 2 {
                return None;
            }
            let mut sd = moments.sd();
            floor_sd(&mut sd, grid.times(), true).ok()?;
            let studentized_max = abs_star
                .iter()
                .zip(&estimate)
                .zip(&sd)
                .map(|((s, e), d)| (s - e) / d)
                .fold(f64::NEG_INFINITY, f64::max);
            Some(FirstLevel {
                abs_derivative: abs_star,
                studentized_max,
                second_failures: failures,
            })
        })
        .collect();

    let valid: Vec<&FirstLevel> = first.iter().flatten().collect();
    let failed = cfg.b1 - valid.len();
    if failed as f64 > cfg.max_refit_failure_fraction * cfg.b1 as f64 {
        return Err(Error::RefitFailures {
            failed,
            total: cfg.b1,
        });
    }
    let mut moments = ColumnMoments::new(grid.len());
    for l in &valid {
        moments.push(&l.abs_derivative);
    }
    if moments.count < 2 {
        return Err(Error::InsufficientSamples {
            have: moments.count,
            need: 2,
        });
    }
    let mut sd = moments.sd();
    floor_sd(&mut sd, grid.times(), cfg.sd_floor)?;

    Ok(BootstrapDraws {
        span: (design.first(), design.last()),
        grid: grid.times().to_vec(),
        point_estimate: estimate,
        first_level_sd: sd,
        studentized_max: valid.iter().map(|l| l.studentized_max).collect(),
        diagnostics: BandDiagnostics {
            first_level_valid: valid.len(),
            first_level_failed: failed,
            second_level_failed: valid.iter().map(|l| l.second_failures).sum(),
        },
    })
}

/// Builds the lower simultaneous `(1 − α)` confidence band for `|f′|`.
pub fn lower_band(data: &Dataset, fit: &FitResult, cfg: &BootstrapConfig) -> Result<ConfidenceBand> {
    bootstrap_draws(data, fit, cfg)?.band(cfg.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    #[test]
    fn sd_examples() {
        let sd = pointwise_sd(&[vec![0.0, 1.0, 4.0], vec![2.0, 2.0, 4.0], vec![4.0, 3.0, 4.0]]).unwrap();
        assert!((sd[0] - 2.0).abs() < 1e-12);
        assert!((sd[1] - 1.0).abs() < 1e-12);
        assert_eq!(sd[2], 0.0);
        let sd = pointwise_sd(&[vec![0.0], vec![2.0]]).unwrap();
        assert!((sd[0] - 2f64.sqrt()).abs() < 1e-12);
        assert!(pointwise_sd(&[vec![1.0]]).is_err());
    }

    #[test]
    fn floor_replaces_zero_or_errors() {
        let grid = [1.0, 2.0];
        let mut sd = vec![0.0, 2.0];
        floor_sd(&mut sd, &grid, true).unwrap();
        assert_eq!(sd[0], 2e-8);
        let mut sd = vec![0.0, 2.0];
        assert!(matches!(
            floor_sd(&mut sd, &grid, false),
            Err(Error::DegenerateVariance { index: 0, .. })
        ));
        let mut all_zero = vec![0.0, 0.0];
        floor_sd(&mut all_zero, &grid, true).unwrap();
        assert!(all_zero.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn critical_value_order_statistic() {
        let samples: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(critical_value(&samples, 0.05).unwrap(), 95.0);
        assert_eq!(critical_value(&[3.5; 60], 0.05).unwrap(), 3.5);
        assert!(matches!(
            critical_value(&[1.0; 49], 0.05),
            Err(Error::InsufficientSamples { have: 49, .. })
        ));
        let mut with_nan = vec![f64::NAN; 10];
        with_nan.extend((1..=60).map(f64::from));
        assert_eq!(critical_value(&with_nan, 0.5).unwrap(), 30.0);
    }

    #[test]
    fn critical_value_normal_quantile() {
        let mut rng = StreamSeed::new(7).rng();
        let samples: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let c = critical_value(&samples, 0.05).unwrap();
        assert!((c - 1.645).abs() < 0.05, "{c}");
    }

    #[test]
    fn simulate_without_noise_is_exact() {
        let spec = ModelSpec::four_pll();
        let theta = ParamVector::new(8.791, -0.946, 17.589, 10.0);
        let design = TimeDesign::reference();
        let mut rng = StreamSeed::new(1).rng();
        let data = simulate_dataset(&spec, &theta, 0.0, &design, &mut rng);
        assert_eq!(data.design().n(), 47);
        for (t, y) in data.observations() {
            assert_eq!(y, spec.eval(&theta, t).unwrap());
        }
    }

    #[test]
    fn simulate_is_deterministic_per_stream() {
        let spec = ModelSpec::four_pll();
        let theta = ParamVector::new(8.791, -0.946, 17.589, 10.0);
        let design = TimeDesign::reference();
        let a = simulate_dataset(&spec, &theta, 0.3, &design, &mut StreamSeed::new(9).rng());
        let b = simulate_dataset(&spec, &theta, 0.3, &design, &mut StreamSeed::new(9).rng());
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(BootstrapConfig::default().validate().is_ok());
        for bad in [
            BootstrapConfig { b1: 10, ..Default::default() },
            BootstrapConfig { b2: 2, ..Default::default() },
            BootstrapConfig { alpha: 1.0, ..Default::default() },
            BootstrapConfig { grid_step: 0.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
