//! Ordinary least-squares fitting and AIC model selection.
//!
//! The residual sum of squares over all replicates decomposes into a
//! within-group part (independent of θ) plus `Σ_p n_p (ȳ_p − f(t_p, θ))²`, so
//! the optimizer works on the `m` group means with weights `√n_p`. A damped
//! Gauss-Newton (Levenberg-Marquardt) iteration with box projection does the
//! work; Nelder-Mead takes over when it does not converge.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Family, ModelSpec, ParamVector};

const HILL_MAX: f64 = 50.0;
const HILL_MIN: f64 = 1e-3;
const SHAPE_MAX: f64 = 50.0;
const SHAPE_MIN: f64 = 1e-3;
const LOCATION_MAX_FACTOR: f64 = 5.0;

const FOUR_PLL_HILL_STARTS: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];
const FOUR_PLL_LOCATION_STARTS: [f64; 3] = [0.25, 0.5, 0.75];
const BETA_SHAPE_STARTS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Relative RSS change that counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Start from these parameters first; the multi-start grid is only used
    /// when this start fails to converge.
    pub warm_start: Option<ParamVector>,
    /// Return an error instead of a flagged fit when all responses are equal.
    pub reject_degenerate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-10,
            max_iterations: 500,
            warm_start: None,
            reject_degenerate: false,
        }
    }
}

impl FitOptions {
    pub fn warm(theta: ParamVector) -> Self {
        FitOptions {
            warm_start: Some(theta),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ParamVector,
    /// `RSS / (n − r)`.
    pub sigma2: f64,
    pub rss: f64,
    /// `None` when the fit is exact (`rss == 0`).
    pub aic: Option<f64>,
    pub n: usize,
    pub converged: bool,
    pub n_starts_used: usize,
    /// All responses were identical.
    pub degenerate: bool,
}

impl FitResult {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Gaussian AIC up to an additive constant: `n·ln(rss/n) + 2(r+1)`.
pub fn aic(rss: f64, n: usize, param_count: usize) -> Result<f64> {
    if !(rss > 0.0) || n == 0 {
        return Err(Error::Domain {
            t: rss,
            reason: "AIC requires a positive residual sum of squares",
        });
    }
    let n = n as f64;
    Ok(n * (rss / n).ln() + 2.0 * (param_count as f64 + 1.0))
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    lo: [f64; 4],
    hi: [f64; 4],
}

impl Bounds {
    fn for_spec(spec: &ModelSpec, t_last: f64) -> Self {
        let inf = f64::INFINITY;
        match spec.family {
            Family::FourPll => Bounds {
                lo: [-inf, -inf, 1e-6 * t_last.max(1.0), HILL_MIN],
                hi: [inf, inf, LOCATION_MAX_FACTOR * t_last.max(1.0), HILL_MAX],
            },
            Family::Beta => Bounds {
                lo: [-inf, -inf, SHAPE_MIN, SHAPE_MIN],
                hi: [inf, inf, SHAPE_MAX, SHAPE_MAX],
            },
        }
    }

    fn project(&self, p: [f64; 4]) -> [f64; 4] {
        let mut out = p;
        for k in 0..4 {
            out[k] = out[k].clamp(self.lo[k], self.hi[k]);
        }
        out
    }
}

/// Least-squares problem reduced to group means.
struct Problem<'a> {
    spec: &'a ModelSpec,
    times: &'a [f64],
    counts: Vec<f64>,
    means: Vec<f64>,
    within: f64,
    bounds: Bounds,
    /// Absolute RSS below which a fit counts as exact.
    exact: f64,
}

struct Outcome {
    params: [f64; 4],
    rss: f64,
    converged: bool,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a ModelSpec, data: &'a Dataset) -> Self {
        let design = data.design();
        let counts: Vec<f64> = design.replicates().iter().map(|&n| n as f64).collect();
        let means = data.group_means();
        let within = data.within_ss();
        let scale: f64 = counts.iter().zip(&means).map(|(n, y)| n * y * y).sum::<f64>() + within;
        Problem {
            spec,
            times: design.times(),
            counts,
            means,
            within,
            bounds: Bounds::for_spec(spec, design.last()),
            exact: 1e-30 * scale.max(1.0),
        }
    }

    fn rss(&self, p: &[f64; 4]) -> f64 {
        let theta = ParamVector(*p);
        let mut s = self.within;
        for ((&t, &n), &y) in self.times.iter().zip(&self.counts).zip(&self.means) {
            let r = y - self.spec.eval_unchecked(&theta, t);
            s += n * r * r;
        }
        if s.is_finite() {
            s
        } else {
            f64::INFINITY
        }
    }

    /// Weighted linear least squares for `(a, b)` given the shape parameters.
    fn linear_start(&self, p3: f64, p4: f64) -> [f64; 4] {
        let shape = ParamVector::new(0.0, 1.0, p3, p4);
        let g: Vec<f64> = self.times.iter().map(|&t| self.spec.eval_unchecked(&shape, t)).collect();
        let n: f64 = self.counts.iter().sum();
        let g_bar = self.counts.iter().zip(&g).map(|(w, g)| w * g).sum::<f64>() / n;
        let y_bar = self.counts.iter().zip(&self.means).map(|(w, y)| w * y).sum::<f64>() / n;
        let mut sgg = 0.0;
        let mut sgy = 0.0;
        for ((w, gp), yp) in self.counts.iter().zip(&g).zip(&self.means) {
            sgg += w * (gp - g_bar) * (gp - g_bar);
            sgy += w * (gp - g_bar) * (yp - y_bar);
        }
        if sgg > 1e-14 * n && sgg.is_finite() {
            let b = sgy / sgg;
            [y_bar - b * g_bar, b, p3, p4]
        } else {
            let first = self.means[0];
            let last = self.means[self.means.len() - 1];
            [first, last - first, p3, p4]
        }
    }

    fn normal_equations(&self, p: &[f64; 4]) -> ([[f64; 4]; 4], [f64; 4]) {
        let theta = ParamVector(*p);
        let mut h = [[0.0; 4]; 4];
        let mut g = [0.0; 4];
        for ((&t, &n), &y) in self.times.iter().zip(&self.counts).zip(&self.means) {
            let (f, grad) = self.spec.value_and_gradient(&theta, t);
            let r = y - f;
            for i in 0..4 {
                g[i] += n * grad[i] * r;
                for j in 0..=i {
                    h[i][j] += n * grad[i] * grad[j];
                }
            }
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                h[i][j] = h[j][i];
            }
        }
        (h, g)
    }

    fn levenberg_marquardt(&self, start: [f64; 4], opts: &FitOptions) -> Outcome {
        let mut p = self.bounds.project(start);
        let mut rss = self.rss(&p);
        if !rss.is_finite() {
            return Outcome {
                params: p,
                rss,
                converged: false,
            };
        }
        let mut mu = 1e-3;
        for _ in 0..opts.max_iterations {
            if rss - self.within <= self.exact {
                return Outcome {
                    params: p,
                    rss,
                    converged: true,
                };
            }
            let (h, g) = self.normal_equations(&p);
            if !h.iter().flatten().chain(g.iter()).all(|v| v.is_finite()) {
                break;
            }
            let max_diag = (0..4).map(|i| h[i][i]).fold(0.0, f64::max);
            let floor = 1e-12 * max_diag.max(1e-300);
            loop {
                let mut a = h;
                for i in 0..4 {
                    a[i][i] += mu * h[i][i].max(floor);
                }
                let accepted = match solve4(a, g) {
                    Some(step) => {
                        let mut trial = p;
                        for k in 0..4 {
                            trial[k] += step[k];
                        }
                        let trial = self.bounds.project(trial);
                        let trial_rss = self.rss(&trial);
                        if trial_rss < rss {
                            let decrease = rss - trial_rss;
                            p = trial;
                            rss = trial_rss;
                            mu = (mu * 0.3).max(1e-12);
                            Some(decrease)
                        } else {
                            None
                        }
                    }
                    None => None,
                };
                match accepted {
                    Some(decrease) => {
                        if decrease <= opts.tolerance * rss {
                            return Outcome {
                                params: p,
                                rss,
                                converged: true,
                            };
                        }
                        break;
                    }
                    None => {
                        mu *= 10.0;
                        if mu > 1e12 {
                            // no descent direction left: stationary point
                            return Outcome {
                                params: p,
                                rss,
                                converged: true,
                            };
                        }
                    }
                }
            }
        }
        Outcome {
            params: p,
            rss,
            converged: false,
        }
    }

    fn nelder_mead(&self, start: [f64; 4], opts: &FitOptions) -> Outcome {
        let eval = |x: &[f64; 4]| self.rss(&self.bounds.project(*x));
        let mut simplex: Vec<([f64; 4], f64)> = Vec::with_capacity(5);
        simplex.push((start, eval(&start)));
        for k in 0..4 {
            let mut x = start;
            x[k] += if x[k] != 0.0 { 0.05 * x[k] } else { 0.01 };
            simplex.push((x, eval(&x)));
        }
        let max_evals = 20 * opts.max_iterations;
        let mut evals = 5;
        let mut converged = false;
        while evals < max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[4].1;
            if (worst - best) <= opts.tolerance * best.abs().max(self.exact) {
                converged = true;
                break;
            }
            let mut centroid = [0.0; 4];
            for (x, _) in &simplex[..4] {
                for k in 0..4 {
                    centroid[k] += x[k] / 4.0;
                }
            }
            let along = |coef: f64| {
                let mut y = [0.0; 4];
                for k in 0..4 {
                    y[k] = centroid[k] + coef * (simplex[4].0[k] - centroid[k]);
                }
                y
            };
            let reflected = along(-1.0);
            let fr = eval(&reflected);
            evals += 1;
            if fr < simplex[0].1 {
                let expanded = along(-2.0);
                let fe = eval(&expanded);
                evals += 1;
                simplex[4] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            } else if fr < simplex[3].1 {
                simplex[4] = (reflected, fr);
            } else {
                let contracted = if fr < worst { along(-0.5) } else { along(0.5) };
                let fc = eval(&contracted);
                evals += 1;
                if fc < worst.min(fr) {
                    simplex[4] = (contracted, fc);
                } else {
                    let x0 = simplex[0].0;
                    for (x, f) in simplex.iter_mut().skip(1) {
                        for k in 0..4 {
                            x[k] = x0[k] + 0.5 * (x[k] - x0[k]);
                        }
                        *f = eval(x);
                    }
                    evals += 4;
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let params = self.bounds.project(simplex[0].0);
        Outcome {
            params,
            rss: simplex[0].1,
            converged: converged && simplex[0].1.is_finite(),
        }
    }

    fn solve_from(&self, start: [f64; 4], opts: &FitOptions) -> Outcome {
        let lm = self.levenberg_marquardt(start, opts);
        if lm.converged {
            return lm;
        }
        let nm = self.nelder_mead(lm.params, opts);
        if nm.rss <= lm.rss || !lm.rss.is_finite() {
            nm
        } else {
            Outcome {
                converged: nm.converged,
                ..lm
            }
        }
    }

    fn grid_starts(&self, data: &Dataset) -> Vec<[f64; 4]> {
        let design = data.design();
        match self.spec.family {
            Family::FourPll => {
                let mut starts = Vec::with_capacity(15);
                for frac in FOUR_PLL_LOCATION_STARTS {
                    let c = design.first() + frac * design.duration();
                    for h in FOUR_PLL_HILL_STARTS {
                        starts.push(self.linear_start(c.max(self.bounds.lo[2]), h));
                    }
                }
                starts
            }
            Family::Beta => {
                let mut starts = Vec::with_capacity(25);
                for d1 in BETA_SHAPE_STARTS {
                    for d2 in BETA_SHAPE_STARTS {
                        starts.push(self.linear_start(d1, d2));
                    }
                }
                starts
            }
        }
    }
}

/// Solves a symmetric positive-definite 4×4 system by Cholesky factorization.
fn solve4(a: [[f64; 4]; 4], b: [f64; 4]) -> Option<[f64; 4]> {
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; 4];
    for i in 0..4 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let mut s = y[i];
        for k in (i + 1)..4 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn check_inputs(data: &Dataset, spec: &ModelSpec) -> Result<()> {
    let design = data.design();
    let r = spec.param_count();
    if design.n() < r + 2 {
        return Err(Error::InvalidDesign(format!(
            "{} observations are too few for a {}-parameter model (need at least {})",
            design.n(),
            r,
            r + 2
        )));
    }
    if let Some(scal) = spec.scal {
        if scal <= design.last() {
            return Err(Error::InvalidParameters(format!(
                "beta scaling constant {scal} must exceed the last time point {}",
                design.last()
            )));
        }
    }
    Ok(())
}

/// Fits `spec` to `data` by ordinary least squares.
pub fn fit_ols(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    check_inputs(data, spec)?;
    let degenerate = data.is_constant();
    if degenerate && opts.reject_degenerate {
        return Err(Error::DegenerateData("all responses are equal".into()));
    }
    let problem = Problem::new(spec, data);

    let mut best: Option<Outcome> = None;
    let mut starts_used = 0;
    let consider = |outcome: Outcome, best: &mut Option<Outcome>| {
        if outcome.converged
            && outcome.rss.is_finite()
            && best.as_ref().is_none_or(|b| outcome.rss < b.rss)
        {
            *best = Some(outcome);
        }
    };

    if let Some(warm) = opts.warm_start {
        starts_used += 1;
        consider(problem.solve_from(warm.0, opts), &mut best);
    }
    if best.is_none() {
        for start in problem.grid_starts(data) {
            starts_used += 1;
            consider(problem.solve_from(start, opts), &mut best);
        }
    }
    let best = best.ok_or(Error::NonConvergence {
        starts: starts_used,
    })?;

    let n = data.design().n();
    let r = spec.param_count();
    let rss = best.rss.max(0.0);
    Ok(FitResult {
        spec: *spec,
        params: ParamVector(best.params),
        sigma2: rss / (n - r) as f64,
        rss,
        aic: aic(rss, n, r).ok(),
        n,
        converged: true,
        n_starts_used: starts_used,
        degenerate,
    })
}

/// One candidate's outcome in a model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub spec: ModelSpec,
    pub aic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub best: FitResult,
    pub candidates: Vec<CandidateFit>,
}

fn aic_rank(fit: &FitResult) -> f64 {
    fit.aic.unwrap_or(f64::NEG_INFINITY)
}

/// Picks the minimum-AIC fit among candidates (first one wins ties).
pub fn select_from_fits(fits: Vec<Result<FitResult>>) -> Result<ModelSelection> {
    let mut best: Option<FitResult> = None;
    let mut candidates = Vec::with_capacity(fits.len());
    let mut last_error = None;
    for fit in fits {
        match fit {
            Ok(fit) => {
                candidates.push(CandidateFit {
                    spec: fit.spec,
                    aic: fit.aic,
                    error: None,
                });
                if best.as_ref().is_none_or(|b| aic_rank(&fit) < aic_rank(b)) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                candidates.push(CandidateFit {
                    spec: ModelSpec::four_pll(),
                    aic: None,
                    error: Some(e.to_string()),
                });
                last_error = Some(e);
            }
        }
    }
    match best {
        Some(best) => Ok(ModelSelection { best, candidates }),
        None => Err(last_error.unwrap_or_else(|| Error::InvalidConfig("no candidate models".into()))),
    }
}

/// Fits every candidate and returns the one with the smallest AIC.
pub fn select_model(data: &Dataset, candidates: &[ModelSpec], opts: &FitOptions) -> Result<ModelSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate models".into()));
    }
    let fits = candidates.iter().map(|spec| fit_ols(data, spec, opts)).collect();
    let mut selection = select_from_fits(fits)?;
    for (c, spec) in selection.candidates.iter_mut().zip(candidates) {
        c.spec = *spec;
    }
    Ok(selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeDesign;

    fn noise_free(spec: &ModelSpec, theta: &ParamVector) -> Dataset {
        let design = TimeDesign::reference();
        let responses = design
            .times()
            .iter()
            .zip(design.replicates())
            .map(|(&t, &n)| vec![spec.eval(theta, t).unwrap(); n])
            .collect();
        Dataset::new(design, responses).unwrap()
    }

    #[test]
    fn aic_formula() {
        assert!((aic(47.0, 47, 4).unwrap() - 10.0).abs() < 1e-12);
        let v = aic(4.7, 47, 4).unwrap();
        assert!((v - (47.0 * 0.1f64.ln() + 10.0)).abs() < 1e-12);
        assert!((v + 98.22).abs() < 0.01);
        assert!(aic(1.0, 47, 4).unwrap() < aic(2.0, 47, 4).unwrap());
        assert!(aic(0.0, 47, 4).is_err());
    }

    #[test]
    fn recovers_noise_free_four_pll() {
        let spec = ModelSpec::four_pll();
        let theta = ParamVector::new(8.791, -3.783, 17.589, 5.0);
        let fit = fit_ols(&noise_free(&spec, &theta), &spec, &FitOptions::default()).unwrap();
        for k in 0..4 {
            let rel = (fit.params.0[k] - theta.0[k]).abs() / theta.0[k].abs();
            assert!(rel < 1e-4, "param {k}: {:?}", fit.params);
        }
        assert!(fit.rss < 1e-12);
    }

    #[test]
    fn constant_responses_flagged() {
        let design = TimeDesign::reference();
        let responses = design.replicates().iter().map(|&n| vec![5.0; n]).collect();
        let data = Dataset::new(design, responses).unwrap();
        let fit = fit_ols(&data, &ModelSpec::four_pll(), &FitOptions::default()).unwrap();
        assert!(fit.degenerate);
        assert!(fit.params.b().abs() < 1e-9);
        assert!((fit.params.a() - 5.0).abs() < 1e-9);
        assert!(fit.rss < 1e-20);
        let strict = FitOptions {
            reject_degenerate: true,
            ..Default::default()
        };
        assert!(matches!(
            fit_ols(&data, &ModelSpec::four_pll(), &strict),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn too_few_observations() {
        let data = Dataset::from_observations(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 3.0), (4.0, 3.0)]).unwrap();
        assert!(matches!(
            fit_ols(&data, &ModelSpec::four_pll(), &FitOptions::default()),
            Err(Error::InvalidDesign(_))
        ));
    }

    #[test]
    fn beta_scal_must_exceed_last_time() {
        let spec = ModelSpec::beta(40.0).unwrap();
        let data = noise_free(&ModelSpec::four_pll(), &ParamVector::new(1.0, 1.0, 10.0, 2.0));
        assert!(fit_ols(&data, &spec, &FitOptions::default()).is_err());
    }

    #[test]
    fn selection_prefers_lower_aic_and_first_on_ties() {
        let mk = |aic: f64, spec: ModelSpec| FitResult {
            spec,
            params: ParamVector::new(0.0, 1.0, 1.0, 1.0),
            sigma2: 1.0,
            rss: 1.0,
            aic: Some(aic),
            n: 47,
            converged: true,
            n_starts_used: 1,
            degenerate: false,
        };
        let beta = ModelSpec::beta(54.0).unwrap();
        let sel = select_from_fits(vec![Ok(mk(90.4, ModelSpec::four_pll())), Ok(mk(98.2, beta))]).unwrap();
        assert_eq!(sel.best.spec.family, Family::FourPll);
        let sel = select_from_fits(vec![Ok(mk(98.2, ModelSpec::four_pll())), Ok(mk(98.2, beta))]).unwrap();
        assert_eq!(sel.best.spec.family, Family::FourPll);
        let sel = select_from_fits(vec![Ok(mk(98.2, beta))]).unwrap();
        assert_eq!(sel.best.spec.family, Family::Beta);
        assert!(select_from_fits(vec![Err(Error::NonConvergence { starts: 1 })]).is_err());
    }

    #[test]
    fn solve4_identity() {
        let mut a = [[0.0; 4]; 4];
        for i in 0..4 {
            a[i][i] = 2.0;
        }
        let x = solve4(a, [2.0, 4.0, 6.0, 8.0]).unwrap();
        for (k, v) in x.iter().enumerate() {
            assert!((v - (k as f64 + 1.0)).abs() < 1e-12);
        }
        assert!(solve4([[0.0; 4]; 4], [1.0; 4]).is_none());
    }
}
