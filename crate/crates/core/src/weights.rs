//! Stochastic interventions, multi-period importance weights and
//! pseudo-outcome panels.
//!
//! Weights stay in log space until they multiply outcome counts; products of
//! seven or ten single-period ratios overflow otherwise. Truncation is applied
//! before Hájek stabilization, so truncated weights enter the stabilizing mean.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point_process::{log_density_ratio, IntensitySurface};
use crate::propensity::PropensityModel;
use crate::spatial::{count_in_pixels, PixelGrid, PointPattern};

/// Poisson intervention with intensity `c * phi`, applied independently over
/// `m` consecutive periods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    phi: IntensitySurface,
    c: f64,
    m: usize,
}

impl InterventionSpec {
    pub fn new(phi: IntensitySurface, c: f64, m: usize) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("intervention scale must be positive, got {c}")));
        }
        if m == 0 {
            return Err(Error::invalid("intervention duration must be at least one period"));
        }
        let total = phi.total();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "baseline density integrates to {total}, expected 1"
            )));
        }
        Ok(Self { phi, c, m })
    }

    pub fn phi(&self) -> &IntensitySurface {
        &self.phi
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn m(&self) -> usize {
        self.m
    }

    /// Per-period intensity `c * phi`.
    pub fn intensity(&self) -> IntensitySurface {
        self.phi.scaled(self.c).expect("scaling a valid density stays valid")
    }
}

/// Log density ratios `log f_h(W_t) / e_t(W_t)` for each period in `periods`.
pub fn single_period_log_ratios(
    intervention: &InterventionSpec,
    model: &PropensityModel,
    treatments: &[PointPattern],
    periods: std::ops::RangeInclusive<usize>,
) -> Result<Vec<f64>> {
    let h = intervention.intensity();
    periods
        .map(|t| {
            let pattern = find_period(treatments, t)?;
            let (e, _) = model.intensity_with_diagnostics(t)?;
            log_density_ratio(pattern, &h, &e)
        })
        .collect()
}

fn find_period(patterns: &[PointPattern], t: usize) -> Result<&PointPattern> {
    // Patterns are usually stored in order, one per period.
    if let Some(p) = patterns.get(t.wrapping_sub(1)).filter(|p| p.t == t) {
        return Ok(p);
    }
    patterns
        .iter()
        .find(|p| p.t == t)
        .ok_or_else(|| Error::invalid(format!("no pattern for period {t}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFlags {
    /// Quantile level of truncation, if applied.
    pub truncated: Option<f64>,
    pub stabilized: bool,
}

/// Multi-period weights `rho_t`, `t = first_t ..= first_t + len - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSeries {
    first_t: usize,
    log_rho: Vec<f64>,
    flags: WeightFlags,
    /// Mean of the weights divided out by stabilization.
    stabilizing_mean: Option<f64>,
}

impl WeightSeries {
    pub fn raw(first_t: usize, log_rho: Vec<f64>) -> Result<Self> {
        if log_rho.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical("log weights must not be NaN or +inf".into()));
        }
        Ok(Self {
            first_t,
            log_rho,
            flags: WeightFlags {
                truncated: None,
                stabilized: false,
            },
            stabilizing_mean: None,
        })
    }

    /// Windowed sums of single-period log ratios for periods `1..=T`:
    /// `log rho_t = sum_{j=t-m+1}^{t} single[j-1]`, for `t = m..=T`.
    pub fn from_single_period(single: &[f64], m: usize) -> Result<Self> {
        if m == 0 || single.len() < m {
            return Err(Error::invalid(format!(
                "need at least {m} periods to form {m}-period weights, have {}",
                single.len()
            )));
        }
        let log_rho = single.windows(m).map(|w| w.iter().sum()).collect();
        Self::raw(m, log_rho)
    }

    pub fn first_t(&self) -> usize {
        self.first_t
    }
    pub fn last_t(&self) -> usize {
        self.first_t + self.log_rho.len() - 1
    }
    pub fn len(&self) -> usize {
        self.log_rho.len()
    }
    pub fn is_empty(&self) -> bool {
        self.log_rho.is_empty()
    }
    pub fn periods(&self) -> std::ops::RangeInclusive<usize> {
        self.first_t..=self.last_t()
    }
    pub fn log_rho(&self) -> &[f64] {
        &self.log_rho
    }
    pub fn flags(&self) -> WeightFlags {
        self.flags
    }
    pub fn stabilizing_mean(&self) -> Option<f64> {
        self.stabilizing_mean
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_rho.iter().map(|l| l.exp()).collect()
    }

    /// Mean weight, computed stably in log space.
    pub fn mean_weight(&self) -> f64 {
        log_mean_exp(&self.log_rho).exp()
    }
}

fn log_mean_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    max + (s / logs.len() as f64).ln()
}

/// Multi-period log weights of `intervention` against `model` for
/// `t = m..=T`, where `T` is the last covariate period.
pub fn compute_log_weights(
    intervention: &InterventionSpec,
    model: &PropensityModel,
    treatments: &[PointPattern],
    periods: std::ops::RangeInclusive<usize>,
) -> Result<WeightSeries> {
    let m = intervention.m();
    let (start, end) = (*periods.start(), *periods.end());
    if start < m || end < start {
        return Err(Error::invalid(format!(
            "weights need m <= first period <= last period (m={m}, periods {start}..={end})"
        )));
    }
    let single = single_period_log_ratios(intervention, model, treatments, start + 1 - m..=end)?;
    let log_rho = single.windows(m).map(|w| w.iter().sum()).collect();
    WeightSeries::raw(start, log_rho)
}

/// Type-7 sample quantile of sorted data (linear interpolation between order
/// statistics).
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Caps weights at their empirical `q`-quantile.
pub fn truncate_weights(series: &WeightSeries, q: f64) -> Result<WeightSeries> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("truncation quantile {q} outside (0, 1]")));
    }
    if series.flags.stabilized {
        return Err(Error::invalid("truncate before stabilizing"));
    }
    let mut out = series.clone();
    out.flags.truncated = Some(q);
    if q == 1.0 || series.is_empty() {
        return Ok(out);
    }
    // Quantiles are taken on the weights themselves, scaled by the largest
    // weight to stay finite; type-7 interpolation is scale-equivariant.
    let max = series.log_rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(out);
    }
    let mut scaled: Vec<f64> = series.log_rho.iter().map(|l| (l - max).exp()).collect();
    scaled.sort_by(|a, b| a.total_cmp(b));
    let cap = quantile_type7(&scaled, q);
    let log_cap = cap.ln() + max;
    for l in &mut out.log_rho {
        if (*l - max).exp() > cap {
            *l = log_cap;
        }
    }
    Ok(out)
}

/// Divides every weight by the series mean.
pub fn stabilize_hajek(series: &WeightSeries) -> Result<WeightSeries> {
    if series.is_empty() {
        return Err(Error::invalid("cannot stabilize an empty weight series"));
    }
    let log_mean = log_mean_exp(&series.log_rho);
    if log_mean == f64::NEG_INFINITY {
        return Err(Error::Numerical("all weights are zero; Hájek weights undefined".into()));
    }
    let mut out = series.clone();
    for l in &mut out.log_rho {
        *l -= log_mean;
    }
    out.flags.stabilized = true;
    out.stabilizing_mean = Some(log_mean.exp());
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    Ipw,
    Hajek,
}

/// Weighted outcome counts, one column per usable period.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoOutcomePanel {
    /// `p x n` with column `j` for period `first_t + j`.
    values: DMatrix<f64>,
    first_t: usize,
    intervention: String,
    mode: WeightingMode,
}

impl PseudoOutcomePanel {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
    pub fn first_t(&self) -> usize {
        self.first_t
    }
    pub fn mode(&self) -> WeightingMode {
        self.mode
    }
    pub fn intervention(&self) -> &str {
        &self.intervention
    }
    pub fn pixels(&self) -> usize {
        self.values.nrows()
    }
    pub fn periods(&self) -> usize {
        self.values.ncols()
    }

    /// `(t, pixel, value)` rows in period-major order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.values.ncols()).flat_map(move |j| {
            (0..self.values.nrows()).map(move |i| (self.first_t + j, i, self.values[(i, j)]))
        })
    }
}

/// Outcome counts per pixel for every period of `periods`.
pub fn pixel_counts(
    outcomes: &[PointPattern],
    grid: &PixelGrid,
    periods: std::ops::RangeInclusive<usize>,
) -> Result<DMatrix<f64>> {
    let cols: Vec<usize> = periods.collect();
    let mut m = DMatrix::zeros(grid.len(), cols.len());
    for (j, &t) in cols.iter().enumerate() {
        let pattern = find_period(outcomes, t)
            .map_err(|_| Error::invalid(format!("outcomes missing period {t}")))?;
        for (i, c) in count_in_pixels(pattern, grid)?.into_iter().enumerate() {
            m[(i, j)] = c as f64;
        }
    }
    Ok(m)
}

/// `Y~_it = w_t * N_{S_i}(Y_t)` over the periods of `series`.
pub fn build_pseudo_outcomes(
    series: &WeightSeries,
    outcomes: &[PointPattern],
    grid: &PixelGrid,
    intervention: &str,
) -> Result<PseudoOutcomePanel> {
    let mut values = pixel_counts(outcomes, grid, series.periods())?;
    for (j, w) in series.weights().into_iter().enumerate() {
        values.column_mut(j).scale_mut(w);
    }
    Ok(PseudoOutcomePanel {
        values,
        first_t: series.first_t(),
        intervention: intervention.to_string(),
        mode: if series.flags().stabilized {
            WeightingMode::Hajek
        } else {
            WeightingMode::Ipw
        },
    })
}

/// Pixel-by-period contrast `panel_hpp - panel_hp`.
pub fn pseudo_effect(
    panel_hpp: &PseudoOutcomePanel,
    panel_hp: &PseudoOutcomePanel,
) -> Result<DMatrix<f64>> {
    if panel_hpp.mode != panel_hp.mode {
        return Err(Error::invalid("pseudo-outcome panels use different weighting modes"));
    }
    if panel_hpp.first_t != panel_hp.first_t || panel_hpp.values.shape() != panel_hp.values.shape() {
        return Err(Error::invalid("pseudo-outcome panels are not aligned"));
    }
    Ok(&panel_hpp.values - &panel_hp.values)
}
