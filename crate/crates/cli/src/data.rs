//! Loads the observed data named by an analysis configuration.

use std::sync::Arc;

use stcate::io::{read_json, read_moderator_csv, read_points_csv, read_raster_csv, read_raster_stack_csv};
use stcate::point_process::estimate_density_kde;
use stcate::propensity::{fit_propensity, lagged_event_smoother, FitReport};
use stcate::spatial::make_pixel_grid;
use stcate::{
    CovariateLayer, CovariateStack, IntensitySurface, Location, ModelDocument, ModeratorPanel, PixelGrid,
    PointPattern, PropensityModel,
};

use crate::config::{AnalysisConfig, CovariateSource, EventSource, PhiSource};
use crate::error::CliError;

pub struct Dataset {
    pub periods: usize,
    pub treatments: Vec<PointPattern>,
    pub outcomes: Option<Vec<PointPattern>>,
    pub covariates: Arc<CovariateStack>,
    pub grid: PixelGrid,
}

fn pad(mut p: Vec<PointPattern>, periods: usize) -> Vec<PointPattern> {
    for t in p.len() + 1..=periods {
        p.push(PointPattern::empty(t));
    }
    p
}

pub fn load_dataset(cfg: &AnalysisConfig) -> Result<Dataset, CliError> {
    let treatments = read_points_csv(&cfg.treatments, &cfg.window, cfg.periods)?;
    let outcomes = match &cfg.outcomes {
        Some(p) => Some(read_points_csv(p, &cfg.window, cfg.periods)?),
        None => None,
    };
    let periods = cfg
        .periods
        .unwrap_or_else(|| treatments.len().max(outcomes.as_ref().map_or(0, |o| o.len())));
    if periods == 0 {
        return Err(CliError::config("no periods: event files are empty and `periods` is not set"));
    }
    let treatments = pad(treatments, periods);
    let outcomes = outcomes.map(|o| pad(o, periods));

    let mut names = Vec::with_capacity(cfg.covariates.len());
    let mut layers = Vec::with_capacity(cfg.covariates.len());
    for c in &cfg.covariates {
        names.push(c.name().to_string());
        layers.push(match c {
            CovariateSource::Intercept { .. } => CovariateLayer::Intercept,
            CovariateSource::Spatial { path, .. } => CovariateLayer::Spatial(read_raster_csv(path)?),
            CovariateSource::Temporal { path, .. } => CovariateLayer::Temporal(read_raster_stack_csv(path)?),
            CovariateSource::LaggedEvents { source, decay, .. } => {
                let events = match source {
                    EventSource::Treatments => &treatments,
                    EventSource::Outcomes => outcomes
                        .as_ref()
                        .ok_or_else(|| CliError::config("lagged outcome covariate needs an outcomes file"))?,
                };
                lagged_event_smoother(events, cfg.window, cfg.raster, periods, *decay)?
            }
        });
    }
    let covariates = Arc::new(CovariateStack::new(cfg.window, cfg.raster, periods, names, layers)?);
    let grid = make_pixel_grid(cfg.window, cfg.pixels.nx, cfg.pixels.ny)?;
    Ok(Dataset {
        periods,
        treatments,
        outcomes,
        covariates,
        grid,
    })
}

/// Fits the propensity model; non-convergence is a numerical failure.
pub fn fit_model(data: &Dataset) -> Result<(PropensityModel, FitReport), CliError> {
    let report = fit_propensity(&data.covariates, &data.treatments)?;
    if !report.converged {
        return Err(stcate::Error::Numerical(format!(
            "propensity fit did not converge after {} iterations (score norm {:e})",
            report.iterations, report.gradient_norm
        ))
        .into());
    }
    let model = PropensityModel::new(report.gamma_hat.clone(), data.covariates.clone())?;
    Ok((model, report))
}

/// The persisted model when configured, an inline fit otherwise.
pub fn load_or_fit_model(cfg: &AnalysisConfig, data: &Dataset) -> Result<(PropensityModel, String), CliError> {
    match &cfg.model {
        Some(path) => {
            let doc: ModelDocument = read_json(path)?;
            Ok((doc.bind(data.covariates.clone())?, path.display().to_string()))
        }
        None => Ok((fit_model(data)?.0, "inline fit".into())),
    }
}

pub fn load_phi(cfg: &AnalysisConfig, source: &PhiSource, data: &Dataset) -> Result<IntensitySurface, CliError> {
    match source {
        PhiSource::Kde { path } => {
            let events: Vec<Location> = match path {
                Some(p) => read_points_csv(p, &cfg.window, None)?
                    .into_iter()
                    .flat_map(|p| p.points)
                    .collect(),
                None => data.treatments.iter().flat_map(|p| p.points.iter().copied()).collect(),
            };
            if events.is_empty() {
                return Err(CliError::config("cannot estimate a baseline density from zero events"));
            }
            Ok(estimate_density_kde(&events, cfg.window, cfg.raster)?.0)
        }
        PhiSource::Raster { path } => {
            let r = read_raster_csv(path)?;
            if r.shape() != cfg.raster || *r.window() != cfg.window {
                return Err(CliError::config(format!(
                    "baseline raster '{}' is not on the analysis grid",
                    path.display()
                )));
            }
            if r.values().iter().any(|v| *v < 0.0) {
                return Err(CliError::config("baseline raster has negative values"));
            }
            let total = r.integral();
            if !(total > 0.0) {
                return Err(CliError::config("baseline raster integrates to zero"));
            }
            Ok(IntensitySurface::new(r.map(|v| v / total))?)
        }
    }
}

pub fn load_moderator(cfg: &AnalysisConfig, data: &Dataset) -> Result<ModeratorPanel, CliError> {
    let src = cfg
        .moderator
        .as_ref()
        .ok_or_else(|| CliError::config("estimation needs a `moderator` table"))?;
    let panel = read_moderator_csv(&src.path, data.grid.len(), src.kind)?;
    if let Some(t) = panel.periods() {
        if t < data.periods {
            return Err(CliError::config(format!(
                "moderator table covers {t} periods, data has {}",
                data.periods
            )));
        }
    }
    Ok(panel)
}
