//! Configuration files for the subcommands.
//!
//! Relative paths inside a configuration are resolved against the directory
//! holding the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stcate::basis::BasisSpec;
use stcate::inference::QMode;
use stcate::sim::{DgpConfig, ExperimentConfig};
use stcate::{ModeratorKind, RasterShape, WeightingMode, Window};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    Treatments,
    Outcomes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateSource {
    Intercept {
        #[serde(default = "intercept_name")]
        name: String,
    },
    /// One raster CSV used for every period.
    Spatial { name: String, path: PathBuf },
    /// Raster stack CSV with one surface per period.
    Temporal { name: String, path: PathBuf },
    /// `exp(-decay * distance)` to the previous period's events.
    LaggedEvents {
        name: String,
        source: EventSource,
        decay: f64,
    },
}

fn intercept_name() -> String {
    "intercept".into()
}

impl CovariateSource {
    pub fn name(&self) -> &str {
        match self {
            CovariateSource::Intercept { name }
            | CovariateSource::Spatial { name, .. }
            | CovariateSource::Temporal { name, .. }
            | CovariateSource::LaggedEvents { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeratorSource {
    /// `pixel,value` or `pixel,t,value` CSV.
    pub path: PathBuf,
    pub kind: ModeratorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSource {
    /// Normalized KDE of an event file; the treatments when `path` is absent.
    Kde {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    /// Raster CSV, normalized to integrate to one.
    Raster { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionConfig {
    pub phi: PhiSource,
    pub c_hp: f64,
    pub c_hpp: f64,
    pub m_values: Vec<usize>,
}

fn default_level() -> f64 {
    0.95
}
fn default_scale() -> f64 {
    1.0
}
fn default_train() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub window: Window,
    pub raster: RasterShape,
    pub pixels: RasterShape,
    /// Number of periods; the largest period in the event files when absent.
    #[serde(default)]
    pub periods: Option<usize>,
    pub treatments: PathBuf,
    #[serde(default)]
    pub outcomes: Option<PathBuf>,
    pub covariates: Vec<CovariateSource>,
    #[serde(default)]
    pub moderator: Option<ModeratorSource>,
    /// Persisted propensity model; `estimate` fits inline when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub intervention: Option<InterventionConfig>,
    #[serde(default)]
    pub basis: Option<BasisSpec>,
    #[serde(default = "default_mode")]
    pub mode: WeightingMode,
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub q_mode: QMode,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Moderator values for the CATE table; defaults to 0 and 1 for binary
    /// moderators and eleven points across the observed range otherwise.
    #[serde(default)]
    pub r_grid: Option<Vec<f64>>,
    /// Multiplies every CATE and interval, e.g. pixels per district.
    #[serde(default = "default_scale")]
    pub district_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Share of leading periods used for the held-out prediction check.
    #[serde(default = "default_train")]
    pub train_fraction: f64,
}

fn default_mode() -> WeightingMode {
    WeightingMode::Hajek
}

impl AnalysisConfig {
    /// Makes every path absolute with respect to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.treatments);
        if let Some(p) = &mut self.outcomes {
            fix(p);
        }
        if let Some(p) = &mut self.model {
            fix(p);
        }
        if let Some(m) = &mut self.moderator {
            fix(&mut m.path);
        }
        for c in &mut self.covariates {
            match c {
                CovariateSource::Spatial { path, .. } | CovariateSource::Temporal { path, .. } => fix(path),
                _ => {}
            }
        }
        if let Some(i) = &mut self.intervention {
            match &mut i.phi {
                PhiSource::Kde { path: Some(p) } | PhiSource::Raster { path: p } => fix(p),
                PhiSource::Kde { path: None } => {}
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut files = vec![("treatments", &self.treatments)];
        if let Some(p) = &self.outcomes {
            files.push(("outcomes", p));
        }
        if let Some(p) = &self.model {
            files.push(("model", p));
        }
        if let Some(m) = &self.moderator {
            files.push(("moderator", &m.path));
        }
        for c in &self.covariates {
            if let CovariateSource::Spatial { path, .. } | CovariateSource::Temporal { path, .. } = c {
                files.push(("covariate", path));
            }
        }
        if let Some(i) = &self.intervention {
            if let PhiSource::Kde { path: Some(p) } | PhiSource::Raster { path: p } = &i.phi {
                files.push(("phi", p));
            }
            if !(i.c_hp > 0.0 && i.c_hp.is_finite() && i.c_hpp > 0.0 && i.c_hpp.is_finite()) {
                return Err(CliError::config("intervention scales c_hp and c_hpp must be positive"));
            }
            if i.m_values.is_empty() || i.m_values.contains(&0) {
                return Err(CliError::config("m_values must be a non-empty list of positive integers"));
            }
        }
        for (what, p) in files {
            if !p.is_file() {
                return Err(CliError::config(format!("{what} file '{}' does not exist", p.display())));
            }
        }
        if self.covariates.is_empty() {
            return Err(CliError::config("at least one covariate is required"));
        }
        let mut names: Vec<&str> = self.covariates.iter().map(|c| c.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::config("covariate names must be unique"));
        }
        if let Some(q) = self.truncation {
            if !(q > 0.0 && q <= 1.0) {
                return Err(CliError::config("truncation quantile must lie in (0, 1]"));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::config("level must lie in (0, 1)"));
        }
        if !(self.district_scale > 0.0 && self.district_scale.is_finite()) {
            return Err(CliError::config("district_scale must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::config("train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRequest {
    pub scenario: String,
    #[serde(default)]
    pub rep: usize,
}

/// Experiment configuration plus an optional dataset export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    /// Writes one replication's data and an analysis config next to the report.
    #[serde(default)]
    pub export: Option<ExportRequest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Scenario name; together with the seed and `rep` it selects the
    /// replication exactly as `simulate` does.
    pub scenario: String,
    #[serde(default)]
    pub dgp: Option<String>,
    #[serde(default)]
    pub dgp_config: Option<DgpConfig>,
    #[serde(default)]
    pub periods: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub rep: usize,
    pub m: usize,
    pub c_hp: f64,
    pub c_hpp: f64,
    pub basis: BasisSpec,
    pub k: usize,
    pub r_grid: Vec<f64>,
}

/// Keys that name observed data; the oracle only runs on a known DGP.
pub const EXTERNAL_DATA_KEYS: [&str; 6] = ["treatments", "outcomes", "covariates", "moderator", "events", "model"];

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read '{}': {e}", path.display())))
}

pub fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::config(format!("{}:{}: {e}", path.display(), e.line()))
    })
}

pub fn load_analysis(path: &Path) -> Result<AnalysisConfig, CliError> {
    let mut cfg: AnalysisConfig = parse(path, &read_text(path)?)?;
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_oracle(path: &Path) -> Result<OracleConfig, CliError> {
    let text = read_text(path)?;
    let value: serde_json::Value = parse(path, &text)?;
    if let Some(obj) = value.as_object() {
        if let Some(k) = EXTERNAL_DATA_KEYS.iter().find(|k| obj.contains_key(**k)) {
            return Err(CliError::config(format!(
                "oracle refuses external data ('{k}'): truth is only defined under a known data-generating process"
            )));
        }
    }
    parse(path, &text)
}
