//! Time-response model families and their analytic first derivatives.
//!
//! Two families are supported:
//!
//! * `FourPll` (sigmoid Emax): `f(t) = a + b·t^h / (c^h + t^h)`
//! * `Beta`: `f(t) = a + b·B(δ)·(t/scal)^δ1·(1 − t/scal)^δ2` with
//!   `B(δ) = (δ1+δ2)^(δ1+δ2) / (δ1^δ1·δ2^δ2)`, so that `b` is the peak change.
//!
//! Evaluation is done in log space so large Hill slopes and shape parameters do
//! not overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest Hill slope or beta shape accepted for evaluation.
pub const MAX_SHAPE: f64 = 150.0;

/// Default grid step in weeks.
pub const DEFAULT_GRID_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(rename = "4pll")]
    FourPll,
    Beta,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::FourPll => f.write_str("4pll"),
            Family::Beta => f.write_str("beta"),
        }
    }
}

/// A model family together with its fixed constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Fixed scaling constant of the beta model; `None` for 4pLL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scal: Option<f64>,
}

/// Model parameters in family order: `(a, b, c, h)` or `(a, b, δ1, δ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub [f64; 4]);

impl ParamVector {
    pub fn new(a: f64, b: f64, p3: f64, p4: f64) -> Self {
        ParamVector([a, b, p3, p4])
    }

    /// Baseline.
    pub fn a(&self) -> f64 {
        self.0[0]
    }

    /// Total (4pLL) or peak (beta) change.
    pub fn b(&self) -> f64 {
        self.0[1]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// `ln B(δ)`.
fn ln_beta_norm(d1: f64, d2: f64) -> f64 {
    let s = d1 + d2;
    s * s.ln() - d1 * d1.ln() - d2 * d2.ln()
}

/// `B(δ) = (δ1+δ2)^(δ1+δ2) / (δ1^δ1 δ2^δ2)`.
pub fn beta_norm(d1: f64, d2: f64) -> f64 {
    ln_beta_norm(d1, d2).exp()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ModelSpec {
    pub fn four_pll() -> Self {
        ModelSpec {
            family: Family::FourPll,
            scal: None,
        }
    }

    pub fn beta(scal: f64) -> Result<Self> {
        if !(scal.is_finite() && scal > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "beta scaling constant must be positive and finite, got {scal}"
            )));
        }
        Ok(ModelSpec {
            family: Family::Beta,
            scal: Some(scal),
        })
    }

    pub fn param_count(&self) -> usize {
        4
    }

    pub fn param_names(&self) -> [&'static str; 4] {
        match self.family {
            Family::FourPll => ["a", "b", "c", "h"],
            Family::Beta => ["a", "b", "delta1", "delta2"],
        }
    }

    fn scal_value(&self) -> f64 {
        self.scal.unwrap_or(f64::NAN)
    }

    pub fn validate(&self, theta: &ParamVector) -> Result<()> {
        if !theta.is_finite() {
            return Err(Error::InvalidParameters(format!(
                "non-finite parameter in {:?}",
                theta.0
            )));
        }
        let [_, _, p3, p4] = theta.0;
        match self.family {
            Family::FourPll => {
                if !(p3 > 0.0) {
                    return Err(Error::InvalidParameters(format!("c must be positive, got {p3}")));
                }
                if !(p4 > 0.0 && p4 <= MAX_SHAPE) {
                    return Err(Error::InvalidParameters(format!(
                        "h must lie in (0, {MAX_SHAPE}], got {p4}"
                    )));
                }
            }
            Family::Beta => {
                let scal = self.scal_value();
                if !(scal.is_finite() && scal > 0.0) {
                    return Err(Error::InvalidParameters(
                        "beta model requires a positive scaling constant".into(),
                    ));
                }
                for (name, d) in [("delta1", p3), ("delta2", p4)] {
                    if !(d > 0.0 && d <= MAX_SHAPE) {
                        return Err(Error::InvalidParameters(format!(
                            "{name} must lie in (0, {MAX_SHAPE}], got {d}"
                        )));
                    }
                }
                let norm = beta_norm(p3, p4);
                if !(norm.is_finite() && norm >= 1.0 - 1e-12) {
                    return Err(Error::InvalidParameters(format!(
                        "beta normalising constant is {norm}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain {
                t,
                reason: "time must be finite and non-negative",
            });
        }
        if self.family == Family::Beta && t >= self.scal_value() {
            return Err(Error::Domain {
                t,
                reason: "beta model requires t < scal",
            });
        }
        Ok(())
    }

    /// Evaluates `f(t, θ)`.
    pub fn eval(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.validate(theta)?;
        self.check_time(t)?;
        Ok(self.eval_unchecked(theta, t))
    }

    /// Evaluates `f′(t, θ)`.
    pub fn derivative(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.validate(theta)?;
        self.check_time(t)?;
        let [_, b, p3, p4] = theta.0;
        if t == 0.0 {
            let exponent = match self.family {
                Family::FourPll => p4,
                Family::Beta => p3,
            };
            if exponent < 1.0 {
                return Err(Error::Singular(t));
            }
            if exponent > 1.0 || b == 0.0 {
                return Ok(0.0);
            }
            return Ok(match self.family {
                Family::FourPll => b / p3,
                Family::Beta => b * beta_norm(p3, p4) * p3 / self.scal_value(),
            });
        }
        Ok(self.derivative_unchecked(theta, t, t.ln()))
    }

    /// Evaluates `|f′(t, θ)|`.
    pub fn abs_derivative(&self, theta: &ParamVector, t: f64) -> Result<f64> {
        self.derivative(theta, t).map(f64::abs)
    }

    pub(crate) fn eval_unchecked(&self, theta: &ParamVector, t: f64) -> f64 {
        let [a, b, p3, p4] = theta.0;
        if t <= 0.0 {
            return a;
        }
        match self.family {
            Family::FourPll => a + b * logistic(p4 * (t.ln() - p3.ln())),
            Family::Beta => {
                let x = t / self.scal_value();
                a + b * (ln_beta_norm(p3, p4) + p3 * x.ln() + p4 * (-x).ln_1p()).exp()
            }
        }
    }

    /// `f′` at `t > 0` given `ln t`.
    #[inline]
    pub(crate) fn derivative_unchecked(&self, theta: &ParamVector, t: f64, ln_t: f64) -> f64 {
        let [_, b, p3, p4] = theta.0;
        match self.family {
            Family::FourPll => {
                let u = logistic(p4 * (ln_t - p3.ln()));
                b * p4 * u * (1.0 - u) / t
            }
            Family::Beta => {
                let scal = self.scal_value();
                let x = t / scal;
                let ln_x = ln_t - scal.ln();
                let core = (ln_beta_norm(p3, p4) + (p3 - 1.0) * ln_x + (p4 - 1.0) * (-x).ln_1p()).exp();
                b * core * (p3 - (p3 + p4) * x) / scal
            }
        }
    }

    /// Model value and its gradient with respect to the four parameters.
    pub(crate) fn value_and_gradient(&self, theta: &ParamVector, t: f64) -> (f64, [f64; 4]) {
        let [a, b, p3, p4] = theta.0;
        if t <= 0.0 {
            return (a, [1.0, 0.0, 0.0, 0.0]);
        }
        match self.family {
            Family::FourPll => {
                let log_ratio = t.ln() - p3.ln();
                let u = logistic(p4 * log_ratio);
                let w = u * (1.0 - u);
                (
                    a + b * u,
                    [1.0, u, -b * w * p4 / p3, b * w * log_ratio],
                )
            }
            Family::Beta => {
                let x = t / self.scal_value();
                let ln_x = x.ln();
                let ln_1mx = (-x).ln_1p();
                let g = (ln_beta_norm(p3, p4) + p3 * ln_x + p4 * ln_1mx).exp();
                let s = p3 + p4;
                (
                    a + b * g,
                    [
                        1.0,
                        g,
                        b * g * ((s / p3).ln() + ln_x),
                        b * g * ((s / p4).ln() + ln_1mx),
                    ],
                )
            }
        }
    }
}

/// The conventional beta scaling constant: `1.2 × t_m`.
pub fn default_scal(t_last: f64) -> f64 {
    1.2 * t_last
}

/// A uniform evaluation grid over the study period `[t_1, t_m]`.
///
/// The point `t = 0` is never part of the grid: the derivative may be singular
/// there, so a grid starting at 0 begins at the first step instead. The last
/// point is always exactly `t_m`.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    start: f64,
    end: f64,
    times: Vec<f64>,
    ln_times: Vec<f64>,
}

impl EvalGrid {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
        }
        if !(start >= 0.0 && end > start && end.is_finite()) {
            return Err(Error::InvalidDesign(format!(
                "study period [{start}, {end}] is not a valid non-negative interval"
            )));
        }
        let span = end - start;
        let count = (span / step + 1e-9).floor() as usize;
        let mut times = Vec::with_capacity(count + 2);
        for k in 0..=count {
            let t = start + k as f64 * step;
            if t <= 0.0 {
                continue;
            }
            times.push(t.min(end));
        }
        match times.last() {
            Some(&last) if (end - last).abs() <= 1e-9 * step => {
                *times.last_mut().unwrap() = end;
            }
            _ => times.push(end),
        }
        let ln_times = times.iter().map(|t| t.ln()).collect();
        Ok(EvalGrid {
            start,
            end,
            times,
            ln_times,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Study period covered by the grid (before guarding).
    pub fn span(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Writes `|f′(t, θ)|` at every grid point into `out`.
    pub fn abs_derivative_into(&self, spec: &ModelSpec, theta: &ParamVector, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.times.len());
        for ((o, &t), &ln_t) in out.iter_mut().zip(&self.times).zip(&self.ln_times) {
            *o = spec.derivative_unchecked(theta, t, ln_t).abs();
        }
    }

    pub fn abs_derivative(&self, spec: &ModelSpec, theta: &ParamVector) -> Vec<f64> {
        let mut out = vec![0.0; self.times.len()];
        self.abs_derivative_into(spec, theta, &mut out);
        out
    }
}
