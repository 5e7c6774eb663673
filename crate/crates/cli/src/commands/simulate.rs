//! `simulate`: Monte Carlo study report, optionally exporting one dataset.

use std::path::Path;

use stcate::io::{write_json, write_points_csv, write_raster_csv, write_raster_stack_csv};
use stcate::sim::experiment::{prepare_replication, replication_stream};
use stcate::sim::report::write_report;
use stcate::sim::{run_experiment, World};
use stcate::{BasisSpec, ModeratorKind, Raster, WeightingMode};

use crate::config::{
    AnalysisConfig, CovariateSource, EventSource, ExportRequest, InterventionConfig, ModeratorSource, PhiSource,
    SimulateConfig,
};
use crate::error::CliError;

/// Desk-scale defaults become the published study size.
pub const FULL_SCALE_PERIODS: usize = 500;
pub const FULL_SCALE_REPS: usize = 500;

pub fn run(cfg: &SimulateConfig, out: &Path, threads: Option<usize>) -> Result<(), CliError> {
    if let Some(req) = &cfg.export {
        export(cfg, req, &out.join("dataset"))?;
    }
    let report = run_experiment(&cfg.experiment, threads)?;
    write_report(&report, out)?;
    if let Some(f) = report.families.iter().find(|f| f.n_ok == 0) {
        let first = f.failures.first().map_or(String::new(), |e| format!(" (replication {}: {})", e.rep, e.message));
        return Err(stcate::Error::Numerical(format!(
            "every replication failed for {} M={} {}{first}",
            f.scenario, f.m, f.label
        ))
        .into());
    }
    Ok(())
}

pub fn apply_full_scale(cfg: &mut SimulateConfig) {
    cfg.experiment.n_reps = FULL_SCALE_REPS;
    for s in &mut cfg.experiment.scenarios {
        s.periods = Some(FULL_SCALE_PERIODS);
    }
}

/// Writes the data of one replication and an analysis config that reads it.
fn export(cfg: &SimulateConfig, req: &ExportRequest, dir: &Path) -> Result<(), CliError> {
    let scenario = cfg
        .experiment
        .scenarios
        .iter()
        .find(|s| s.name == req.scenario)
        .ok_or_else(|| CliError::config(format!("export names unknown scenario '{}'", req.scenario)))?;
    let world = World::new(scenario.dgp_config()?)?;
    let rep = prepare_replication(&world, &replication_stream(cfg.experiment.master_seed, &scenario.name, req.rep))?;
    let panel = &rep.panel;
    let (w, s) = (world.config.window, world.shape());
    let raster = |v: &[f64]| Raster::new(w, s.nx, s.ny, v.to_vec());

    write_points_csv(&dir.join("treatments.csv"), &panel.treatments)?;
    write_points_csv(&dir.join("outcomes.csv"), &panel.outcomes)?;
    write_raster_csv(&dir.join("x1.csv"), &world.x1)?;
    write_raster_csv(&dir.join("x2.csv"), &world.x2)?;
    let x3: Vec<Raster> = panel.x3.iter().map(|v| raster(v)).collect::<Result<_, _>>()?;
    let x4: Vec<Raster> = panel.x4.iter().map(|v| raster(v)).collect::<Result<_, _>>()?;
    write_raster_stack_csv(&dir.join("x3.csv"), &x3)?;
    write_raster_stack_csv(&dir.join("x4.csv"), &x4)?;

    let mut m = String::new();
    match panel.moderator.periods() {
        None => {
            m.push_str("pixel,value\n");
            for (i, v) in panel.moderator.column(1)?.iter().enumerate() {
                m.push_str(&format!("{i},{v}\n"));
            }
        }
        Some(t_max) => {
            m.push_str("pixel,t,value\n");
            for t in 1..=t_max {
                for (i, v) in panel.moderator.column(t)?.iter().enumerate() {
                    m.push_str(&format!("{i},{t},{v}\n"));
                }
            }
        }
    }
    stcate::io::write_atomic(&dir.join("moderator.csv"), m.as_bytes())?;

    let pairs = scenario.resolved_pairs();
    let (a, b) = pairs.first().copied().unwrap_or((0, 0));
    let analysis = AnalysisConfig {
        window: w,
        raster: s,
        pixels: world.config.pixels,
        periods: Some(panel.periods()),
        treatments: "treatments.csv".into(),
        outcomes: Some("outcomes.csv".into()),
        covariates: vec![
            CovariateSource::Intercept {
                name: "intercept".into(),
            },
            CovariateSource::Spatial {
                name: "x1".into(),
                path: "x1.csv".into(),
            },
            CovariateSource::Spatial {
                name: "x2".into(),
                path: "x2.csv".into(),
            },
            CovariateSource::Temporal {
                name: "x3".into(),
                path: "x3.csv".into(),
            },
            CovariateSource::Temporal {
                name: "x4".into(),
                path: "x4.csv".into(),
            },
            CovariateSource::LaggedEvents {
                name: "w_lag".into(),
                source: EventSource::Treatments,
                decay: world.config.decay,
            },
            CovariateSource::LaggedEvents {
                name: "y_lag".into(),
                source: EventSource::Outcomes,
                decay: world.config.decay,
            },
        ],
        moderator: Some(ModeratorSource {
            path: "moderator.csv".into(),
            kind: panel.moderator.kind(),
        }),
        model: None,
        intervention: Some(InterventionConfig {
            phi: PhiSource::Kde { path: None },
            c_hp: scenario.c_values[a],
            c_hpp: scenario.c_values[b],
            m_values: scenario.m_values.clone(),
        }),
        basis: Some(if panel.moderator.kind() == ModeratorKind::Binary {
            BasisSpec::binary()
        } else {
            scenario.basis.clone()
        }),
        mode: WeightingMode::Hajek,
        truncation: None,
        q_mode: scenario.q_mode,
        level: scenario.level,
        r_grid: Some(scenario.r_grid.clone()),
        district_scale: 1.0,
        seed: cfg.experiment.master_seed,
        train_fraction: 0.8,
    };
    write_json(&dir.join("analysis.json"), &analysis)?;
    Ok(())
}
