//! Log-linear Poisson propensity model for the observed treatment process.
//!
//! The treatment pattern at period `t` is modeled as a Poisson process with
//! intensity `exp(gamma' X_t(u))`, where `X_t` is a stack of raster
//! covariates. The likelihood integral uses the same midpoint quadrature as
//! every other integral in the crate, so fitted intensities and the weight
//! denominators built from them agree exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point_process::IntensitySurface;
use crate::spatial::{min_sq_distance_into, Location, PixelGrid, PointPattern, Raster, RasterShape, Window};

/// Exponents are clamped to `[-EXP_CLAMP, EXP_CLAMP]` before `exp`.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Clone, Debug)]
pub enum CovariateLayer {
    Intercept,
    /// One surface shared by every period.
    Spatial(Raster),
    /// `surfaces[t - 1]` is the surface for period `t`.
    Temporal(Vec<Raster>),
}

/// `exp(-decay * distance to the nearest event of period t - 1)` for
/// `t = 1..=periods`; zero at `t = 1` and after periods without events.
pub fn lagged_event_smoother(
    patterns: &[PointPattern],
    window: Window,
    shape: RasterShape,
    periods: usize,
    decay: f64,
) -> Result<CovariateLayer> {
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(Error::invalid("smoother decay must be positive"));
    }
    let mut out = Vec::with_capacity(periods);
    out.push(Raster::constant(window, shape, 0.0));
    for t in 2..=periods {
        let events: &[Location] = patterns.iter().find(|p| p.t == t - 1).map_or(&[], |p| &p.points);
        let mut sq = vec![f64::INFINITY; shape.len()];
        min_sq_distance_into(&mut sq, events, &window, shape);
        let values = sq
            .into_iter()
            .map(|v| if v.is_finite() { (-decay * v.sqrt()).exp() } else { 0.0 })
            .collect();
        out.push(Raster::new(window, shape.nx, shape.ny, values)?);
    }
    Ok(CovariateLayer::Temporal(out))
}

/// Named covariate surfaces on a common grid, for periods `1..=periods`.
#[derive(Clone, Debug)]
pub struct CovariateStack {
    window: Window,
    shape: RasterShape,
    periods: usize,
    names: Vec<String>,
    layers: Vec<CovariateLayer>,
    ones: Vec<f64>,
}

impl CovariateStack {
    pub fn new(
        window: Window,
        shape: RasterShape,
        periods: usize,
        names: Vec<String>,
        layers: Vec<CovariateLayer>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("covariate stack needs at least one layer"));
        }
        if names.len() != layers.len() {
            return Err(Error::invalid("one name per covariate layer is required"));
        }
        if periods == 0 {
            return Err(Error::invalid("covariate stack must cover at least one period"));
        }
        let check = |r: &Raster, name: &str| -> Result<()> {
            if r.shape() != shape || *r.window() != window {
                return Err(Error::invalid(format!("covariate '{name}' is on a different grid")));
            }
            if r.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("covariate '{name}' has non-finite values")));
            }
            Ok(())
        };
        for (layer, name) in layers.iter().zip(&names) {
            match layer {
                CovariateLayer::Intercept => {}
                CovariateLayer::Spatial(r) => check(r, name)?,
                CovariateLayer::Temporal(rs) => {
                    if rs.len() < periods {
                        return Err(Error::invalid(format!(
                            "covariate '{name}' has {} periods, need {periods}",
                            rs.len()
                        )));
                    }
                    for r in rs {
                        check(r, name)?;
                    }
                }
            }
        }
        Ok(Self {
            window,
            shape,
            periods,
            names,
            layers,
            ones: vec![1.0; shape.len()],
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }
    pub fn shape(&self) -> RasterShape {
        self.shape
    }
    pub fn periods(&self) -> usize {
        self.periods
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn len(&self) -> usize {
        self.layers.len()
    }
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn intercept_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, CovariateLayer::Intercept))
    }

    pub fn cell_area(&self) -> f64 {
        self.window.area() / self.shape.len() as f64
    }

    /// Cell values of layer `k` at period `t`.
    pub fn layer_values(&self, k: usize, t: usize) -> &[f64] {
        match &self.layers[k] {
            CovariateLayer::Intercept => &self.ones,
            CovariateLayer::Spatial(r) => r.values(),
            CovariateLayer::Temporal(rs) => rs[t - 1].values(),
        }
    }

    fn check_period(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.periods {
            return Err(Error::invalid(format!(
                "period {t} outside covariate range 1..={}",
                self.periods
            )));
        }
        Ok(())
    }

    /// Linear predictor on every cell, clamped; returns the number of clamped cells.
    pub fn linear_predictor(&self, gamma: &[f64], t: usize, out: &mut Vec<f64>) -> usize {
        out.clear();
        out.resize(self.shape.len(), 0.0);
        for (k, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.layer_values(k, t)) {
                *o += g * x;
            }
        }
        let mut clamped = 0;
        for o in out.iter_mut() {
            if *o > EXP_CLAMP {
                *o = EXP_CLAMP;
                clamped += 1;
            } else if *o < -EXP_CLAMP {
                *o = -EXP_CLAMP;
                clamped += 1;
            }
        }
        clamped
    }
}

/// Negative-free Poisson log-likelihood with its derivatives.
pub struct PoissonLikelihood<'a> {
    covariates: &'a CovariateStack,
    periods: Vec<usize>,
    /// Sum over events of covariate values at the containing cell.
    event_sums: Vec<f64>,
    events: usize,
}

impl<'a> PoissonLikelihood<'a> {
    /// Likelihood over the given periods of `treatments` (matched on `t`).
    pub fn new(
        covariates: &'a CovariateStack,
        treatments: &[PointPattern],
        periods: &[usize],
    ) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::invalid("propensity fit needs at least one period"));
        }
        let k = covariates.len();
        let mut event_sums = vec![0.0; k];
        let mut events = 0;
        for &t in periods {
            covariates.check_period(t)?;
            let pattern = treatments
                .iter()
                .find(|p| p.t == t)
                .ok_or_else(|| Error::invalid(format!("no treatment pattern for period {t}")))?;
            for &s in &pattern.points {
                let c = covariates.window.cell_index(covariates.shape.nx, covariates.shape.ny, s)?;
                for (j, acc) in event_sums.iter_mut().enumerate() {
                    *acc += covariates.layer_values(j, t)[c];
                }
                events += 1;
            }
        }
        Ok(Self {
            covariates,
            periods: periods.to_vec(),
            event_sums,
            events,
        })
    }

    pub fn events(&self) -> usize {
        self.events
    }

    pub fn value(&self, gamma: &[f64]) -> f64 {
        let da = self.covariates.cell_area();
        let mut eta = Vec::new();
        let mut integral = 0.0;
        for &t in &self.periods {
            self.covariates.linear_predictor(gamma, t, &mut eta);
            integral += eta.iter().map(|e| e.exp()).sum::<f64>() * da;
        }
        dot(gamma, &self.event_sums) - integral
    }

    pub fn gradient(&self, gamma: &[f64]) -> Vec<f64> {
        self.derivatives(gamma, false).1
    }

    /// Observed information (negative Hessian).
    pub fn information(&self, gamma: &[f64]) -> DMatrix<f64> {
        self.derivatives(gamma, true).2
    }

    /// `(value, gradient, information)`; information is only filled when asked.
    pub fn derivatives(&self, gamma: &[f64], with_info: bool) -> (f64, Vec<f64>, DMatrix<f64>) {
        let k = self.covariates.len();
        let da = self.covariates.cell_area();
        let mut eta = Vec::new();
        let mut integral = 0.0;
        let mut grad_int = vec![0.0; k];
        let mut info = DMatrix::zeros(k, k);
        for &t in &self.periods {
            self.covariates.linear_predictor(gamma, t, &mut eta);
            for e in eta.iter_mut() {
                *e = e.exp() * da;
            }
            integral += eta.iter().sum::<f64>();
            for a in 0..k {
                let xa = self.covariates.layer_values(a, t);
                grad_int[a] += dot(xa, &eta);
                if with_info {
                    for b in a..k {
                        let xb = self.covariates.layer_values(b, t);
                        let s: f64 = xa.iter().zip(xb).zip(&eta).map(|((p, q), w)| p * q * w).sum();
                        info[(a, b)] += s;
                    }
                }
            }
        }
        if with_info {
            for a in 0..k {
                for b in 0..a {
                    info[(a, b)] = info[(b, a)];
                }
            }
        }
        let value = dot(gamma, &self.event_sums) - integral;
        let grad = self
            .event_sums
            .iter()
            .zip(&grad_int)
            .map(|(s, g)| s - g)
            .collect();
        (value, grad, info)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub gamma_hat: Vec<f64>,
    pub log_likelihood: f64,
    /// Sup norm of the score at `gamma_hat`.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub observed_information: Vec<Vec<f64>>,
    pub periods: Vec<usize>,
    pub events: usize,
}

impl FitReport {
    /// Standard errors from the inverse observed information.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let k = self.gamma_hat.len();
        let m = DMatrix::from_fn(k, k, |i, j| self.observed_information[i][j]);
        let inv = m.cholesky()?.inverse();
        Some((0..k).map(|i| inv[(i, i)].sqrt()).collect())
    }
}

/// Maximum likelihood fit over all periods `1..=T` of the stack.
pub fn fit_propensity(covariates: &CovariateStack, treatments: &[PointPattern]) -> Result<FitReport> {
    let periods: Vec<usize> = (1..=covariates.periods()).collect();
    fit_propensity_periods(covariates, treatments, &periods, FitOptions::default())
}

/// Damped Newton maximization of the likelihood over `periods`.
///
/// Converged when the sup norm of the score is below `tolerance`, or after a
/// full Newton step taken once the decrement `g' I^-1 g` is negligible
/// relative to the log-likelihood.
pub fn fit_propensity_periods(
    covariates: &CovariateStack,
    treatments: &[PointPattern],
    periods: &[usize],
    options: FitOptions,
) -> Result<FitReport> {
    let lik = PoissonLikelihood::new(covariates, treatments, periods)?;
    let k = covariates.len();
    let mut gamma = vec![0.0; k];
    if let Some(i) = covariates.intercept_index() {
        let exposure = periods.len() as f64 * covariates.window().area();
        gamma[i] = if lik.events() > 0 {
            (lik.events() as f64 / exposure).ln()
        } else {
            -EXP_CLAMP / 2.0
        };
    }

    let (mut f, mut g, mut info) = lik.derivatives(&gamma, true);
    let mut iterations = 0;
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut polished = false;

    while iterations < options.max_iterations {
        let gv = DVector::from_column_slice(&g);
        let dir = invert_information(&info, covariates.names())? * &gv;
        let decrement = dir.dot(&gv);
        if sup(&g) <= options.tolerance {
            break;
        }
        iterations += 1;
        let full: Vec<f64> = gamma.iter().zip(dir.iter()).map(|(a, d)| a + d).collect();
        // Inside the quadratic region the gain is below the rounding of the
        // log-likelihood, so the line search cannot judge the step.
        let next = if decrement <= DECREMENT_FLOOR * f.abs().max(1.0) {
            if polished {
                break;
            }
            polished = true;
            full
        } else {
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = gamma.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
                let ft = lik.value(&trial);
                if ft.is_finite() && ft >= f + 1e-4 * step * decrement {
                    accepted = Some(trial);
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some(t) => t,
                None => break,
            }
        };
        (f, g, info) = lik.derivatives(&next, true);
        gamma = next;
    }

    let info = lik.information(&gamma);
    invert_information(&info, covariates.names())?;
    let gradient_norm = sup(&g);
    Ok(FitReport {
        gamma_hat: gamma,
        log_likelihood: f,
        gradient_norm,
        iterations,
        converged: gradient_norm <= options.tolerance || polished,
        observed_information: (0..k).map(|i| (0..k).map(|j| info[(i, j)]).collect()).collect(),
        periods: periods.to_vec(),
        events: lik.events(),
    })
}

/// Relative size of the Newton decrement treated as converged.
const DECREMENT_FLOOR: f64 = 1e-10;

fn invert_information(info: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let eig = info.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::Singular(format!(
            "propensity information is singular; covariates {names:?} are collinear on the grid"
        )));
    }
    info.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("propensity information is not positive definite".into()))
}

/// Fitted (or known) propensity model bound to its covariates.
#[derive(Clone, Debug)]
pub struct PropensityModel {
    gamma: Vec<f64>,
    covariates: Arc<CovariateStack>,
}

impl PropensityModel {
    pub fn new(gamma: Vec<f64>, covariates: Arc<CovariateStack>) -> Result<Self> {
        if gamma.len() != covariates.len() {
            return Err(Error::invalid(format!(
                "model has {} coefficients for {} covariates",
                gamma.len(),
                covariates.len()
            )));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(Self { gamma, covariates })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn covariates(&self) -> &CovariateStack {
        &self.covariates
    }

    /// Intensity surface at period `t` and the number of clamped cells.
    pub fn intensity_with_diagnostics(&self, t: usize) -> Result<(IntensitySurface, usize)> {
        self.covariates.check_period(t)?;
        let mut eta = Vec::new();
        let clamped = self.covariates.linear_predictor(&self.gamma, t, &mut eta);
        for e in eta.iter_mut() {
            *e = e.exp();
        }
        let shape = self.covariates.shape();
        let raster = Raster::new(*self.covariates.window(), shape.nx, shape.ny, eta)?;
        Ok((IntensitySurface::new(raster)?, clamped))
    }

    pub fn to_document(&self, report: Option<&FitReport>) -> ModelDocument {
        let mut clamped_cells = 0;
        for t in 1..=self.covariates.periods() {
            let mut eta = Vec::new();
            clamped_cells += self.covariates.linear_predictor(&self.gamma, t, &mut eta);
        }
        ModelDocument {
            names: self.covariates.names().to_vec(),
            gamma: self.gamma.clone(),
            shape: self.covariates.shape(),
            window: *self.covariates.window(),
            clamped_cells,
            fit: report.cloned(),
        }
    }
}

pub fn evaluate_propensity_intensity(model: &PropensityModel, t: usize) -> Result<IntensitySurface> {
    Ok(model.intensity_with_diagnostics(t)?.0)
}

/// Persisted form of a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub names: Vec<String>,
    pub gamma: Vec<f64>,
    pub shape: RasterShape,
    pub window: Window,
    pub clamped_cells: usize,
    pub fit: Option<FitReport>,
}

impl ModelDocument {
    /// Rebinds the stored coefficients to a covariate stack with matching names and grid.
    pub fn bind(&self, covariates: Arc<CovariateStack>) -> Result<PropensityModel> {
        if covariates.names() != self.names.as_slice() {
            return Err(Error::invalid(format!(
                "model covariates {:?} do not match {:?}",
                self.names,
                covariates.names()
            )));
        }
        if covariates.shape() != self.shape || *covariates.window() != self.window {
            return Err(Error::invalid("model grid does not match the covariates"));
        }
        PropensityModel::new(self.gamma.clone(), covariates)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountPrediction {
    pub t: usize,
    pub predicted: f64,
    pub observed: usize,
}

/// Expected treatment counts over a set of pixels, next to the observed counts.
///
/// A raster cell belongs to the pixel containing its center. An empty region
/// predicts zero events.
pub fn predict_counts(
    model: &PropensityModel,
    periods: &[usize],
    grid: &PixelGrid,
    region: &[usize],
    treatments: &[PointPattern],
) -> Result<Vec<CountPrediction>> {
    if let Some(&bad) = region.iter().find(|&&i| i >= grid.len()) {
        return Err(Error::invalid(format!("pixel {bad} outside the grid")));
    }
    let mut in_region = vec![false; grid.len()];
    for &i in region {
        in_region[i] = true;
    }
    let cells = grid.cell_assignment(model.covariates().shape());
    let mut out = Vec::with_capacity(periods.len());
    for &t in periods {
        let (surface, _) = model.intensity_with_diagnostics(t)?;
        let da = surface.raster().cell_area();
        let predicted = surface
            .raster()
            .values()
            .iter()
            .zip(&cells)
            .filter(|(_, &p)| in_region[p])
            .map(|(v, _)| v * da)
            .sum();
        let observed = match treatments.iter().find(|p| p.t == t) {
            Some(p) => p
                .points
                .iter()
                .map(|&s| grid.pixel_of(s))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|&i| in_region[i])
                .count(),
            None => 0,
        };
        out.push(CountPrediction { t, predicted, observed });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{PatternSampler, SeedStream};
    use crate::spatial::Location;

    fn stack_with(layers: Vec<(&str, CovariateLayer)>, periods: usize) -> CovariateStack {
        let shape = RasterShape::new(12, 10).unwrap();
        let (names, layers): (Vec<_>, Vec<_>) =
            layers.into_iter().map(|(n, l)| (n.to_string(), l)).unzip();
        CovariateStack::new(Window::new(0.0, 3.0, 0.0, 2.0).unwrap(), shape, periods, names, layers)
            .unwrap()
    }

    fn smooth_field(w: Window, f: impl Fn(f64, f64) -> f64) -> Raster {
        Raster::from_fn(w, RasterShape::new(12, 10).unwrap(), |l: Location| f(l.x, l.y))
    }

    fn simulate(model: &PropensityModel, periods: usize, seed: u64) -> Vec<PointPattern> {
        let root = SeedStream::new(seed, 0);
        (1..=periods)
            .map(|t| {
                let s = PatternSampler::new(&evaluate_propensity_intensity(model, t).unwrap());
                s.sample(t, &mut root.derive("t", t as u64).rng())
            })
            .collect()
    }

    #[test]
    fn intercept_only_matches_closed_form() {
        let cov = Arc::new(stack_with(vec![("intercept", CovariateLayer::Intercept)], 20));
        let truth = PropensityModel::new(vec![0.4], cov.clone()).unwrap();
        let pats = simulate(&truth, 20, 5);
        let n: usize = pats.iter().map(|p| p.len()).sum();
        let fit = fit_propensity(&cov, &pats).unwrap();
        assert!(fit.converged);
        let expected = (n as f64 / (20.0 * 6.0)).ln();
        assert!((fit.gamma_hat[0] - expected).abs() < 1e-8);

        let model = PropensityModel::new(fit.gamma_hat.clone(), cov).unwrap();
        let grid = PixelGrid::new(Window::new(0.0, 3.0, 0.0, 2.0).unwrap(), 3, 2).unwrap();
        let all: Vec<usize> = (0..grid.len()).collect();
        let pred = predict_counts(&model, &[1, 2], &grid, &all, &pats).unwrap();
        for row in pred {
            assert!((row.predicted - n as f64 / 20.0).abs() < 1e-8);
        }
        let none = predict_counts(&model, &[1], &grid, &[], &pats).unwrap();
        assert_eq!(none[0].predicted, 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let w = Window::new(0.0, 3.0, 0.0, 2.0).unwrap();
        let temporal: Vec<Raster> = (0..6)
            .map(|t| smooth_field(w, move |x, y| ((x + t as f64) * 0.7).sin() * y / 2.0))
            .collect();
        let cov = stack_with(
            vec![
                ("intercept", CovariateLayer::Intercept),
                ("a", CovariateLayer::Spatial(smooth_field(w, |x, _| x / 3.0))),
                ("b", CovariateLayer::Temporal(temporal)),
            ],
            6,
        );
        let cov = Arc::new(cov);
        let truth = PropensityModel::new(vec![1.0, 0.8, -0.5], cov.clone()).unwrap();
        let pats = simulate(&truth, 6, 8);
        let periods: Vec<usize> = (1..=6).collect();
        let lik = PoissonLikelihood::new(&cov, &pats, &periods).unwrap();
        let mut rng = SeedStream::new(99, 0).rng();
        use rand::Rng;
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let analytic = lik.gradient(&g);
            for j in 0..3 {
                let h = 1e-5 * (1.0 + g[j].abs());
                let mut up = g.clone();
                let mut dn = g.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (lik.value(&up) - lik.value(&dn)) / (2.0 * h);
                let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(1.0);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn fit_is_start_independent_and_scores_vanish() {
        let w = Window::new(0.0, 3.0, 0.0, 2.0).unwrap();
        let cov = Arc::new(stack_with(
            vec![
                ("intercept", CovariateLayer::Intercept),
                ("a", CovariateLayer::Spatial(smooth_field(w, |x, y| (x - 1.5) * y))),
            ],
            30,
        ));
        let truth = PropensityModel::new(vec![0.2, 0.6], cov.clone()).unwrap();
        let pats = simulate(&truth, 30, 12);
        let fit = fit_propensity(&cov, &pats).unwrap();
        assert!(fit.converged);
        assert!(fit.gradient_norm <= 1e-6);
        // Concavity: Newton iterations from a distant start reach the same optimum.
        let periods: Vec<usize> = (1..=30).collect();
        let lik = PoissonLikelihood::new(&cov, &pats, &periods).unwrap();
        let mut g = vec![-1.0, 2.0];
        for _ in 0..100 {
            let (_, grad, info) = lik.derivatives(&g, true);
            let step = info.cholesky().unwrap().solve(&DVector::from_column_slice(&grad));
            let mut t = 1.0;
            let f0 = lik.value(&g);
            loop {
                let trial: Vec<f64> = g.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
                if lik.value(&trial) >= f0 || t < 1e-8 {
                    g = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        for j in 0..2 {
            assert!((g[j] - fit.gamma_hat[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_design_is_singular() {
        let w = Window::new(0.0, 3.0, 0.0, 2.0).unwrap();
        let cov = stack_with(
            vec![
                ("intercept", CovariateLayer::Intercept),
                ("two", CovariateLayer::Spatial(smooth_field(w, |_, _| 2.0))),
            ],
            3,
        );
        let pats: Vec<PointPattern> = (1..=3)
            .map(|t| PointPattern::new(t, vec![Location::new(1.0, 1.0)]))
            .collect();
        assert!(matches!(fit_propensity(&cov, &pats), Err(Error::Singular(_))));
    }

    #[test]
    fn intensity_evaluation_is_log_linear() {
        let w = Window::new(0.0, 3.0, 0.0, 2.0).unwrap();
        let cov = Arc::new(stack_with(
            vec![
                ("intercept", CovariateLayer::Intercept),
                ("a", CovariateLayer::Spatial(smooth_field(w, |x, _| x))),
            ],
            2,
        ));
        let zero = PropensityModel::new(vec![0.0, 0.0], cov.clone()).unwrap();
        assert!(evaluate_propensity_intensity(&zero, 1)
            .unwrap()
            .raster()
            .values()
            .iter()
            .all(|&v| v == 1.0));
        let two = PropensityModel::new(vec![2f64.ln(), 0.0], cov.clone()).unwrap();
        assert!(evaluate_propensity_intensity(&two, 2)
            .unwrap()
            .raster()
            .values()
            .iter()
            .all(|&v| (v - 2.0).abs() < 1e-12));
        let base = PropensityModel::new(vec![0.3, 0.5], cov.clone()).unwrap();
        let doubled = PropensityModel::new(vec![0.6, 0.5], cov.clone()).unwrap();
        let a = evaluate_propensity_intensity(&base, 1).unwrap();
        let b = evaluate_propensity_intensity(&doubled, 1).unwrap();
        for (x, y) in a.raster().values().iter().zip(b.raster().values()) {
            assert!((y / x - 0.3f64.exp()).abs() < 1e-12);
        }
        assert!(evaluate_propensity_intensity(&base, 3).is_err());
    }

    #[test]
    fn exponent_is_clamped() {
        let cov = Arc::new(stack_with(vec![("intercept", CovariateLayer::Intercept)], 1));
        let huge = PropensityModel::new(vec![1000.0], cov).unwrap();
        let (surface, clamped) = huge.intensity_with_diagnostics(1).unwrap();
        assert_eq!(clamped, 120);
        assert!(surface.raster().values().iter().all(|v| v.is_finite()));
        assert_eq!(huge.to_document(None).clamped_cells, 120);
    }

    #[test]
    fn adding_the_true_covariate_improves_predictions() {
        let w = Window::new(0.0, 3.0, 0.0, 2.0).unwrap();
        let temporal: Vec<Raster> = (0..40)
            .map(|t| smooth_field(w, move |x, _| ((t as f64) * 0.9 + x).sin()))
            .collect();
        let full = Arc::new(stack_with(
            vec![
                ("intercept", CovariateLayer::Intercept),
                ("z", CovariateLayer::Temporal(temporal)),
            ],
            40,
        ));
        let truth = PropensityModel::new(vec![0.0, 1.2], full.clone()).unwrap();
        let pats = simulate(&truth, 40, 31);
        let reduced = Arc::new(stack_with(vec![("intercept", CovariateLayer::Intercept)], 40));
        let grid = PixelGrid::new(Window::new(0.0, 3.0, 0.0, 2.0).unwrap(), 1, 1).unwrap();
        let periods: Vec<usize> = (1..=40).collect();
        let mae = |cov: Arc<CovariateStack>| {
            let fit = fit_propensity(&cov, &pats).unwrap();
            let m = PropensityModel::new(fit.gamma_hat, cov).unwrap();
            let rows = predict_counts(&m, &periods, &grid, &[0], &pats).unwrap();
            rows.iter().map(|r| (r.predicted - r.observed as f64).abs()).sum::<f64>() / 40.0
        };
        assert!(mae(full) < mae(reduced));
    }
}
