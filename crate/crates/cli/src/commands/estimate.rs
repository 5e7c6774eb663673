//! `estimate`: weights, pseudo-outcome regression and inference for every M.

use std::path::Path;

use serde::Serialize;
use stcate::basis::BasisKind;
use stcate::inference::{cate_confidence_interval, normal_quantile};
use stcate::io::{write_atomic, write_beta_csv, write_json, write_weights_csv};
use stcate::pipeline::{beta_table, estimate_pair, EstimationOptions, PairData};
use stcate::regression::RankPolicy;
use stcate::weights::{pixel_counts, single_period_log_ratios};
use stcate::{HeterogeneityTest, InterventionSpec, ModeratorKind};

use super::num;
use crate::config::AnalysisConfig;
use crate::data::{load_dataset, load_moderator, load_or_fit_model, load_phi};
use crate::error::CliError;

/// One row of a CATE table.
#[derive(Clone, Debug, Serialize)]
pub struct CateRow {
    /// `tau` for a moderator value, `difference` for `tau(1) - tau(0)`.
    pub quantity: &'static str,
    pub r: f64,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub extrapolated: bool,
}

#[derive(Serialize)]
struct MResult {
    m: usize,
    n_eff: usize,
    coefficient_names: Vec<String>,
    beta_bar: Vec<f64>,
    standard_errors: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    test: HeterogeneityTest,
    moderator_support: (f64, f64),
    minimum_norm: bool,
    mean_weight_hp: f64,
    mean_weight_hpp: f64,
    table: Vec<CateRow>,
}

#[derive(Serialize)]
struct Summary<'a> {
    periods: usize,
    pixels: usize,
    propensity_model: String,
    results: Vec<MResult>,
    config: &'a AnalysisConfig,
}

fn table_csv(rows: &[CateRow]) -> String {
    let mut s = String::from("quantity,r,estimate,se,lo,hi,extrapolated\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.quantity,
            num(r.r),
            num(r.estimate),
            num(r.se),
            num(r.lo),
            num(r.hi),
            r.extrapolated
        ));
    }
    s
}

pub fn run(cfg: &AnalysisConfig, out: &Path) -> Result<(), CliError> {
    let intervention = cfg
        .intervention
        .as_ref()
        .ok_or_else(|| CliError::config("estimation needs an `intervention` block"))?;
    let basis = cfg
        .basis
        .as_ref()
        .ok_or_else(|| CliError::config("estimation needs a `basis`"))?;
    let data = load_dataset(cfg)?;
    let outcomes = data
        .outcomes
        .as_ref()
        .ok_or_else(|| CliError::config("estimation needs an `outcomes` file"))?;
    let moderator = load_moderator(cfg, &data)?;
    if matches!(basis.kind(), BasisKind::Binary) && moderator.kind() != ModeratorKind::Binary {
        return Err(CliError::config("a binary basis needs a binary moderator"));
    }
    let (model, model_source) = load_or_fit_model(cfg, &data)?;
    let phi = load_phi(cfg, &intervention.phi, &data)?;

    let range = 1..=data.periods;
    let spec_hp = InterventionSpec::new(phi.clone(), intervention.c_hp, 1)?;
    let spec_hpp = InterventionSpec::new(phi, intervention.c_hpp, 1)?;
    let single_hp = single_period_log_ratios(&spec_hp, &model, &data.treatments, range.clone())?;
    let single_hpp = single_period_log_ratios(&spec_hpp, &model, &data.treatments, range.clone())?;
    let counts = pixel_counts(outcomes, &data.grid, range)?;
    let options = EstimationOptions {
        mode: cfg.mode,
        truncation: cfg.truncation,
        q_mode: cfg.q_mode,
        rank_policy: RankPolicy::Error,
    };
    let z = normal_quantile(0.5 + cfg.level / 2.0);

    let mut results = Vec::new();
    for &m in &intervention.m_values {
        if m >= data.periods {
            return Err(CliError::config(format!("M = {m} needs more than {} periods", data.periods)));
        }
        let pair = PairData {
            counts: &counts,
            single_hp: &single_hp,
            single_hpp: &single_hpp,
            moderator: &moderator,
            basis,
            m,
            ids: ("h_prime", "h_double_prime"),
        };
        let mut est = estimate_pair(&pair, &options)?;
        est.fit = est.fit.with_district_scale(cfg.district_scale)?;
        let grid = match &cfg.r_grid {
            Some(g) => g.clone(),
            None if moderator.kind() == ModeratorKind::Binary => vec![0.0, 1.0],
            None => {
                let (lo, hi) = est.fit.support;
                (0..11).map(|i| lo + (hi - lo) * i as f64 / 10.0).collect()
            }
        };
        let mut rows = Vec::with_capacity(grid.len() + 1);
        for &r in &grid {
            let ci = cate_confidence_interval(&est.fit, &est.bound, r, cfg.level)?;
            rows.push(CateRow {
                quantity: "tau",
                r,
                estimate: ci.estimate,
                se: (ci.hi - ci.estimate) / z,
                lo: ci.lo,
                hi: ci.hi,
                extrapolated: ci.extrapolated,
            });
        }
        let se = est.bound.standard_errors();
        if matches!(basis.kind(), BasisKind::Binary) {
            let k = basis.tested_columns().start;
            let (b, s) = (est.fit.beta_bar[k] * cfg.district_scale, se[k] * cfg.district_scale);
            rows.push(CateRow {
                quantity: "difference",
                r: 1.0,
                estimate: b,
                se: s,
                lo: b - z * s,
                hi: b + z * s,
                extrapolated: false,
            });
        }
        write_atomic(&out.join(format!("cate_m{m}.csv")), table_csv(&rows).as_bytes())?;
        write_beta_csv(
            &out.join(format!("beta_m{m}.csv")),
            &basis.column_names(),
            &beta_table(&est.fit.fits),
        )?;
        write_weights_csv(&out.join(format!("weights_m{m}_hp.csv")), &est.weights_hp)?;
        write_weights_csv(&out.join(format!("weights_m{m}_hpp.csv")), &est.weights_hpp)?;
        let l = est.bound.sigma.nrows();
        results.push(MResult {
            m,
            n_eff: est.bound.n_eff,
            coefficient_names: basis.column_names(),
            beta_bar: est.fit.beta_bar.clone(),
            standard_errors: se,
            sigma: (0..l).map(|i| (0..l).map(|j| est.bound.sigma[(i, j)]).collect()).collect(),
            test: est.test,
            moderator_support: est.fit.support,
            minimum_norm: est.fit.min_norm(),
            mean_weight_hp: est.weights_hp.mean_weight(),
            mean_weight_hpp: est.weights_hpp.mean_weight(),
            table: rows,
        });
    }
    let summary = Summary {
        periods: data.periods,
        pixels: data.grid.len(),
        propensity_model: model_source,
        results,
        config: cfg,
    };
    write_json(&out.join("summary.json"), &serde_json::to_value(&summary).map_err(stcate::Error::from)?)?;
    Ok(())
}
