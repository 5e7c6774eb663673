//! `fit-propensity`: model JSON plus full-sample and held-out count checks.

use std::path::Path;

use serde::Serialize;
use stcate::io::{write_atomic, write_json};
use stcate::propensity::{fit_propensity_periods, predict_counts, CountPrediction, FitOptions};
use stcate::PropensityModel;

use super::num;
use crate::config::AnalysisConfig;
use crate::data::{fit_model, load_dataset};
use crate::error::CliError;

#[derive(Serialize)]
struct HeldOut {
    train_periods: usize,
    converged: bool,
    gamma: Vec<f64>,
    /// Pearson correlation of predicted and observed held-out counts.
    correlation: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    names: &'a [String],
    gamma: &'a [f64],
    standard_errors: Option<Vec<f64>>,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
    events: usize,
    periods: usize,
    held_out: HeldOut,
    config: &'a AnalysisConfig,
}

fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn table(rows: &[CountPrediction], train: Option<usize>) -> String {
    let mut s = String::from(if train.is_some() {
        "t,split,predicted,observed\n"
    } else {
        "t,predicted,observed\n"
    });
    for r in rows {
        match train {
            Some(n) => {
                let split = if r.t <= n { "train" } else { "holdout" };
                s.push_str(&format!("{},{split},{},{}\n", r.t, num(r.predicted), r.observed));
            }
            None => s.push_str(&format!("{},{},{}\n", r.t, num(r.predicted), r.observed)),
        }
    }
    s
}

pub fn run(cfg: &AnalysisConfig, out: &Path) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let (model, report) = fit_model(&data)?;
    write_json(&out.join("model.json"), &model.to_document(Some(&report)))?;

    let all: Vec<usize> = (1..=data.periods).collect();
    let region: Vec<usize> = (0..data.grid.len()).collect();
    let full = predict_counts(&model, &all, &data.grid, &region, &data.treatments)?;
    write_atomic(&out.join("predictions_full.csv"), table(&full, None).as_bytes())?;

    if data.periods < 2 {
        return Err(CliError::config("the held-out check needs at least two periods"));
    }
    let n_train = ((data.periods as f64 * cfg.train_fraction).floor() as usize).clamp(1, data.periods - 1);
    let train: Vec<usize> = (1..=n_train).collect();
    let train_fit = fit_propensity_periods(&data.covariates, &data.treatments, &train, FitOptions::default())?;
    let train_model = PropensityModel::new(train_fit.gamma_hat.clone(), data.covariates.clone())?;
    let split = predict_counts(&train_model, &all, &data.grid, &region, &data.treatments)?;
    write_atomic(&out.join("predictions_train.csv"), table(&split, Some(n_train)).as_bytes())?;
    let held: Vec<&CountPrediction> = split.iter().filter(|r| r.t > n_train).collect();
    let pred: Vec<f64> = held.iter().map(|r| r.predicted).collect();
    let obs: Vec<f64> = held.iter().map(|r| r.observed as f64).collect();

    let summary = Summary {
        names: data.covariates.names(),
        gamma: &report.gamma_hat,
        standard_errors: report.standard_errors(),
        log_likelihood: report.log_likelihood,
        iterations: report.iterations,
        converged: report.converged,
        events: report.events,
        periods: data.periods,
        held_out: HeldOut {
            train_periods: n_train,
            converged: train_fit.converged,
            gamma: train_fit.gamma_hat.clone(),
            correlation: correlation(&pred, &obs),
        },
        config: cfg,
    };
    write_json(&out.join("fit_summary.json"), &summary)?;
    Ok(())
}
