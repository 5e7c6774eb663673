//! Weights, per-period regressions and inference for one intervention pair.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis_matrix, lagged_moderator, BasisSpec};
use crate::error::{Error, Result};
use crate::inference::{
    build_a_vectors, estimate_variance_bound, test_no_heterogeneity, HeterogeneityTest, QInputs,
    QMode, VarianceBound,
};
use crate::regression::{fit_time_beta, CateFit, Projector, RankPolicy, TimeFit};
use crate::spatial::ModeratorPanel;
use crate::weights::{stabilize_hajek, truncate_weights, WeightSeries, WeightingMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub mode: WeightingMode,
    /// Truncation quantile; `None` keeps raw weights.
    pub truncation: Option<f64>,
    pub q_mode: QMode,
    pub rank_policy: RankPolicy,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            mode: WeightingMode::Hajek,
            truncation: None,
            q_mode: QMode::WeightScaled,
            rank_policy: RankPolicy::Error,
        }
    }
}

/// Data for one contrast `h''` versus `h'`.
#[derive(Clone, Copy, Debug)]
pub struct PairData<'a> {
    /// Outcome counts, `p x T`, column `t - 1` for period `t`.
    pub counts: &'a DMatrix<f64>,
    /// Single-period log ratios for periods `1..=T`.
    pub single_hp: &'a [f64],
    pub single_hpp: &'a [f64],
    pub moderator: &'a ModeratorPanel,
    pub basis: &'a BasisSpec,
    pub m: usize,
    pub ids: (&'a str, &'a str),
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub fit: CateFit,
    pub bound: VarianceBound,
    pub test: HeterogeneityTest,
    pub weights_hp: WeightSeries,
    pub weights_hpp: WeightSeries,
}

/// Processed multi-period weights: truncated when requested, then
/// stabilized for the Hájek estimator.
pub fn processed_weights(single: &[f64], m: usize, options: &EstimationOptions) -> Result<WeightSeries> {
    let mut s = WeightSeries::from_single_period(single, m)?;
    if let Some(q) = options.truncation {
        s = truncate_weights(&s, q)?;
    }
    if options.mode == WeightingMode::Hajek {
        s = stabilize_hajek(&s)?;
    }
    Ok(s)
}

pub fn estimate_pair(data: &PairData<'_>, options: &EstimationOptions) -> Result<Estimate> {
    let total = data.counts.ncols();
    if data.single_hp.len() != total || data.single_hpp.len() != total {
        return Err(Error::invalid(format!(
            "weights cover {} / {} periods but outcomes cover {total}",
            data.single_hp.len(),
            data.single_hpp.len()
        )));
    }
    if data.counts.nrows() != data.moderator.pixels() {
        return Err(Error::invalid("moderator and outcome panels have different pixel counts"));
    }
    let wp = processed_weights(data.single_hp, data.m, options)?;
    let wpp = processed_weights(data.single_hpp, data.m, options)?;
    let (w1, w2) = (wp.weights(), wpp.weights());

    let spatial = data.moderator.periods().is_none();
    let mut cached: Option<Projector> = None;
    let mut fits = Vec::with_capacity(wp.len());
    let mut support = Vec::new();
    let p = data.counts.nrows();
    let (mut y1, mut y2) = (vec![0.0; p], vec![0.0; p]);
    for (j, t) in wp.periods().enumerate() {
        if !spatial || cached.is_none() {
            let z = build_basis_matrix(data.moderator, t, data.m, data.basis)?;
            cached = Some(Projector::new(&z, options.rank_policy)?);
            support.extend_from_slice(lagged_moderator(data.moderator, t, data.m)?);
        }
        let n = data.counts.column(t - 1);
        for i in 0..p {
            y1[i] = w1[j] * n[i];
            y2[i] = w2[j] * n[i];
        }
        fits.push(fit_time_beta(t, cached.as_ref().expect("projector set"), &y1, &y2)?);
    }

    let fit = CateFit::new(
        fits,
        data.basis.clone(),
        data.m,
        options.mode,
        (data.ids.0.to_string(), data.ids.1.to_string()),
        &support,
    )?;
    let bound = match options.mode {
        WeightingMode::Hajek => {
            let a = build_a_vectors(&fit.fits, &wp, &wpp)?;
            let inputs = QInputs::from_single_period(data.single_hp, data.single_hpp, data.m);
            estimate_variance_bound(&a, &inputs, options.q_mode)?
        }
        WeightingMode::Ipw => VarianceBound::ipw(&fit.fits)?,
    };
    let test = heterogeneity(&fit, &bound)?;
    Ok(Estimate {
        fit,
        bound,
        test,
        weights_hp: wp,
        weights_hpp: wpp,
    })
}

/// No-heterogeneity test on the non-intercept coefficients of a fit.
pub fn heterogeneity(fit: &CateFit, bound: &VarianceBound) -> Result<HeterogeneityTest> {
    let cols = fit.basis.tested_columns();
    test_no_heterogeneity(&fit.beta_bar[cols.clone()], &bound.submatrix(cols), bound.n_eff)
}

/// Per-period coefficients as a table `(t, beta)`.
pub fn beta_table(fits: &[TimeFit]) -> Vec<(usize, Vec<f64>)> {
    fits.iter().map(|f| (f.t, f.beta.clone())).collect()
}
