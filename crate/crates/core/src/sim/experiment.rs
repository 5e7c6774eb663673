//! Replication runner: generate, fit, estimate, compare with the oracle,
//! aggregate.
//!
//! Replications are independent work units. Each draws from its own stream
//! derived from the master seed and its index, results are collected in
//! index order and aggregated sequentially, so reports do not depend on the
//! number of worker threads.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::inference::{cate_confidence_interval, QMode};
use crate::pipeline::{estimate_pair, EstimationOptions, PairData};
use crate::point_process::{estimate_density_kde, log_density_ratio, IntensitySurface, SeedStream};
use crate::propensity::{fit_propensity, PropensityModel};
use crate::regression::RankPolicy;
use crate::sim::oracle::{oracle_true_cate, OracleEstimate, OracleRequest};
use crate::sim::panel::{generate_panel, propensity_covariates, true_propensity, Panel};
use crate::sim::world::{DgpConfig, World};
use crate::spatial::{Location, PointPattern};
use crate::weights::{pixel_counts, WeightingMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsVariant {
    /// The data-generating treatment model.
    True,
    Estimated,
    /// Estimated model with truncated weights.
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub ps: PsVariant,
    pub mode: WeightingMode,
}

impl Variant {
    pub fn label(&self) -> String {
        let ps = match self.ps {
            PsVariant::True => "true_ps",
            PsVariant::Estimated => "estimated_ps",
            PsVariant::Truncated => "truncated_ps",
        };
        let mode = match self.mode {
            WeightingMode::Ipw => "ipw",
            WeightingMode::Hajek => "hajek",
        };
        format!("{mode}_{ps}")
    }

    pub fn all() -> Vec<Variant> {
        let mut v = Vec::new();
        for ps in [PsVariant::True, PsVariant::Estimated, PsVariant::Truncated] {
            for mode in [WeightingMode::Ipw, WeightingMode::Hajek] {
                v.push(Variant { ps, mode });
            }
        }
        v
    }
}

fn default_c() -> Vec<f64> {
    vec![3.0, 5.0, 7.0]
}
fn default_q() -> f64 {
    0.99
}
fn default_level() -> f64 {
    0.95
}
fn default_variants() -> Vec<Variant> {
    Variant::all()
}

/// One study: a DGP, intervention grid, basis and estimator variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Preset name, used when `dgp_config` is absent.
    #[serde(default)]
    pub dgp: Option<String>,
    #[serde(default)]
    pub dgp_config: Option<DgpConfig>,
    /// Overrides the DGP's number of periods.
    #[serde(default)]
    pub periods: Option<usize>,
    pub m_values: Vec<usize>,
    #[serde(default = "default_c")]
    pub c_values: Vec<f64>,
    /// Index pairs into `c_values`, `(h', h'')`; all `i < j` when empty.
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
    pub basis: BasisSpec,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_q")]
    pub truncation_q: f64,
    #[serde(default)]
    pub q_mode: QMode,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Oracle draws per period; 0 skips the oracle.
    #[serde(default)]
    pub oracle_k: usize,
    pub r_grid: Vec<f64>,
}

impl Scenario {
    pub fn dgp_config(&self) -> Result<DgpConfig> {
        let mut cfg = match (&self.dgp_config, &self.dgp) {
            (Some(c), _) => c.clone(),
            (None, Some(name)) => DgpConfig::preset(name)?,
            (None, None) => return Err(Error::invalid(format!("scenario '{}' names no DGP", self.name))),
        };
        if let Some(t) = self.periods {
            cfg.periods = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolved_pairs(&self) -> Vec<(usize, usize)> {
        if !self.pairs.is_empty() {
            return self.pairs.clone();
        }
        let n = self.c_values.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = self.dgp_config()?;
        if self.m_values.is_empty() || self.m_values.iter().any(|&m| m == 0 || m + 1 >= cfg.periods) {
            return Err(Error::invalid(format!(
                "scenario '{}': every M must satisfy 1 <= M < T - 1",
                self.name
            )));
        }
        if self.c_values.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("intervention scales must be positive"));
        }
        if self.resolved_pairs().iter().any(|&(a, b)| a >= self.c_values.len() || b >= self.c_values.len()) {
            return Err(Error::invalid("intervention pair index out of range"));
        }
        if self.variants.is_empty() || self.r_grid.is_empty() {
            return Err(Error::invalid("scenario needs variants and an evaluation grid"));
        }
        if !(self.truncation_q > 0.0 && self.truncation_q <= 1.0) {
            return Err(Error::invalid("truncation quantile outside (0, 1]"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("confidence level outside (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_reps: usize,
    pub scenarios: Vec<Scenario>,
}

/// Per-replication stream of a scenario.
pub fn replication_stream(master_seed: u64, scenario: &str, rep: usize) -> SeedStream {
    SeedStream::new(master_seed, 0).derive(scenario, 0).derive("rep", rep as u64)
}

/// Oracle stream for one contrast within a replication.
pub fn oracle_stream(rep: &SeedStream, m: usize, c_hp: f64, c_hpp: f64) -> SeedStream {
    rep.derive(&format!("oracle:{m}:{c_hp}:{c_hpp}"), 0)
}

/// Everything about one replication that estimators and the oracle share.
pub struct Replication {
    pub panel: Panel,
    pub phi: IntensitySurface,
    pub counts: DMatrix<f64>,
    pub true_model: PropensityModel,
}

pub fn prepare_replication(world: &World, stream: &SeedStream) -> Result<Replication> {
    let panel = generate_panel(world, &stream.derive("panel", 0))?;
    let all: Vec<Location> = panel.treatments.iter().flat_map(|p| p.points.iter().copied()).collect();
    let (phi, _) = estimate_density_kde(&all, world.config.window, world.shape())?;
    let counts = pixel_counts(&panel.outcomes, &world.grid, 1..=panel.periods())?;
    let cov = Arc::new(propensity_covariates(world, &panel)?);
    let true_model = true_propensity(world, cov)?;
    Ok(Replication {
        panel,
        phi,
        counts,
        true_model,
    })
}

/// `log phi(W_t)/e_t(W_t) - (1 - int e_t)` for `t = 1..=T`; the log ratio for
/// `h = c phi` follows by adding `N_t log c - (c - 1)`.
pub fn unit_log_ratios(
    phi: &IntensitySurface,
    model: &PropensityModel,
    treatments: &[PointPattern],
) -> Result<Vec<f64>> {
    treatments
        .iter()
        .map(|w| log_density_ratio(w, phi, &model.intensity_with_diagnostics(w.t)?.0))
        .collect()
}

pub fn scale_log_ratios(unit: &[f64], treatments: &[PointPattern], c: f64) -> Vec<f64> {
    let lc = c.ln();
    unit.iter()
        .zip(treatments)
        .map(|(u, w)| u + w.len() as f64 * lc - (c - 1.0))
        .collect()
}

/// One estimator's result in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub beta_bar: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub tau: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub se: Vec<f64>,
    pub p_value: f64,
}

/// Results of one replication for one `(M, pair)` family.
#[derive(Clone, Debug)]
pub struct RepFamily {
    pub oracle: Option<std::result::Result<OracleEstimate, String>>,
    pub estimates: Vec<std::result::Result<RepEstimate, String>>,
}

/// Runs every family of a scenario on one replication.
pub fn run_replication(world: &World, scenario: &Scenario, stream: &SeedStream) -> Result<Vec<RepFamily>> {
    let rep = prepare_replication(world, stream)?;
    let treatments = &rep.panel.treatments;
    let needs_fit = scenario.variants.iter().any(|v| v.ps != PsVariant::True);
    let fitted: std::result::Result<PropensityModel, String> = if needs_fit {
        let cov = Arc::new(rep.true_model.covariates().clone());
        fit_propensity(&cov, treatments)
            .and_then(|r| {
                if r.converged {
                    PropensityModel::new(r.gamma_hat, cov.clone())
                } else {
                    Err(Error::Numerical("propensity fit did not converge".into()))
                }
            })
            .map_err(|e| e.to_string())
    } else {
        Err("not fitted".into())
    };
    let unit_true = unit_log_ratios(&rep.phi, &rep.true_model, treatments).map_err(|e| e.to_string());
    let unit_est = fitted
        .as_ref()
        .map_err(|e| e.clone())
        .and_then(|m| unit_log_ratios(&rep.phi, m, treatments).map_err(|e| e.to_string()));

    let mut out = Vec::new();
    for &m in &scenario.m_values {
        for &(a, b) in &scenario.resolved_pairs() {
            let (c1, c2) = (scenario.c_values[a], scenario.c_values[b]);
            let oracle = (scenario.oracle_k > 0).then(|| {
                let req = OracleRequest {
                    phi: &rep.phi,
                    c_hp: c1,
                    c_hpp: c2,
                    m,
                    basis: &scenario.basis,
                    k: scenario.oracle_k,
                };
                oracle_true_cate(world, &rep.panel, &req, &oracle_stream(stream, m, c1, c2))
                    .map_err(|e| e.to_string())
            });
            let estimates = scenario
                .variants
                .iter()
                .map(|v| {
                    let unit = match v.ps {
                        PsVariant::True => &unit_true,
                        _ => &unit_est,
                    };
                    let unit = unit.as_ref().map_err(|e| e.clone())?;
                    estimate_variant(&rep, scenario, *v, unit, m, (c1, c2)).map_err(|e| e.to_string())
                })
                .collect();
            out.push(RepFamily { oracle, estimates });
        }
    }
    Ok(out)
}

fn estimate_variant(
    rep: &Replication,
    scenario: &Scenario,
    variant: Variant,
    unit: &[f64],
    m: usize,
    (c1, c2): (f64, f64),
) -> Result<RepEstimate> {
    let treatments = &rep.panel.treatments;
    let s1 = scale_log_ratios(unit, treatments, c1);
    let s2 = scale_log_ratios(unit, treatments, c2);
    let data = PairData {
        counts: &rep.counts,
        single_hp: &s1,
        single_hpp: &s2,
        moderator: &rep.panel.moderator,
        basis: &scenario.basis,
        m,
        ids: ("h_prime", "h_double_prime"),
    };
    let options = EstimationOptions {
        mode: variant.mode,
        truncation: (variant.ps == PsVariant::Truncated).then_some(scenario.truncation_q),
        q_mode: scenario.q_mode,
        rank_policy: RankPolicy::Error,
    };
    let est = estimate_pair(&data, &options)?;
    let mut r = RepEstimate {
        beta_bar: est.fit.beta_bar.clone(),
        beta_se: est.bound.standard_errors(),
        tau: Vec::new(),
        lo: Vec::new(),
        hi: Vec::new(),
        se: Vec::new(),
        p_value: est.test.p_value,
    };
    let z = crate::inference::normal_quantile(0.5 + scenario.level / 2.0);
    for &x in &scenario.r_grid {
        let ci = cate_confidence_interval(&est.fit, &est.bound, x, scenario.level)?;
        r.tau.push(ci.estimate);
        r.lo.push(ci.lo);
        r.hi.push(ci.hi);
        r.se.push((ci.hi - ci.estimate) / z);
    }
    Ok(r)
}

/// Aggregate over replications at one moderator value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: f64,
    /// Mean oracle truth; NaN without an oracle.
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub coverage: f64,
    pub mc_sd: f64,
    /// Root mean squared estimated standard error.
    pub rms_se: f64,
    /// `rms_se / mc_sd`.
    pub bound_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub index: usize,
    pub mean_estimate: f64,
    pub mc_sd: f64,
    pub rms_se: f64,
    pub mean_truth: f64,
    /// Mean and standard error of `beta_bar - truth` over replications.
    pub diff_mean: f64,
    pub diff_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub rep: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub scenario: String,
    pub m: usize,
    pub c_hp: f64,
    pub c_hpp: f64,
    pub variant: Variant,
    pub label: String,
    pub n_ok: usize,
    pub failures: Vec<Failure>,
    pub rejection_rate: f64,
    pub curve: Vec<CurvePoint>,
    pub coefficients: Vec<CoefficientSummary>,
    pub oracle_failures: Vec<Failure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub n_reps: usize,
    pub scenarios: Vec<Scenario>,
    pub families: Vec<FamilyReport>,
    /// Wall-clock seconds per scenario; excluded from persisted reports.
    #[serde(skip)]
    pub runtime_secs: Vec<f64>,
}

impl ExperimentReport {
    pub fn family(&self, scenario: &str, m: usize, variant: Variant) -> Option<&FamilyReport> {
        self.families
            .iter()
            .find(|f| f.scenario == scenario && f.m == m && f.variant == variant)
    }
}

/// Runs all scenarios; `threads` sizes a dedicated worker pool.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    if config.n_reps == 0 {
        return Err(Error::invalid("n_reps must be at least 1"));
    }
    for s in &config.scenarios {
        s.validate()?;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| run_all(config))
}

fn run_all(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut families = Vec::new();
    let mut runtime = Vec::new();
    for scenario in &config.scenarios {
        let start = Instant::now();
        let world = World::new(scenario.dgp_config()?)?;
        let reps: Vec<std::result::Result<Vec<RepFamily>, String>> = (0..config.n_reps)
            .into_par_iter()
            .map(|i| {
                run_replication(&world, scenario, &replication_stream(config.master_seed, &scenario.name, i))
                    .map_err(|e| e.to_string())
            })
            .collect();
        families.extend(aggregate(scenario, &reps));
        runtime.push(start.elapsed().as_secs_f64());
    }
    Ok(ExperimentReport {
        master_seed: config.master_seed,
        n_reps: config.n_reps,
        scenarios: config.scenarios.clone(),
        families,
        runtime_secs: runtime,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn aggregate(scenario: &Scenario, reps: &[std::result::Result<Vec<RepFamily>, String>]) -> Vec<FamilyReport> {
    let mut out = Vec::new();
    let pairs = scenario.resolved_pairs();
    let mut idx = 0;
    for &m in &scenario.m_values {
        for &(a, b) in &pairs {
            let (c1, c2) = (scenario.c_values[a], scenario.c_values[b]);
            for (vi, &variant) in scenario.variants.iter().enumerate() {
                let mut ok: Vec<(&RepEstimate, Option<&OracleEstimate>)> = Vec::new();
                let mut failures = Vec::new();
                let mut oracle_failures = Vec::new();
                for (rep, r) in reps.iter().enumerate() {
                    let fam = match r {
                        Ok(f) => &f[idx],
                        Err(e) => {
                            failures.push(Failure { rep, message: e.clone() });
                            continue;
                        }
                    };
                    let oracle = match &fam.oracle {
                        Some(Ok(o)) => Some(o),
                        Some(Err(e)) => {
                            if vi == 0 {
                                oracle_failures.push(Failure { rep, message: e.clone() });
                            }
                            failures.push(Failure { rep, message: format!("oracle: {e}") });
                            continue;
                        }
                        None => None,
                    };
                    match &fam.estimates[vi] {
                        Ok(e) => ok.push((e, oracle)),
                        Err(e) => failures.push(Failure { rep, message: e.clone() }),
                    }
                }
                out.push(summarize(scenario, m, (c1, c2), variant, &ok, failures, oracle_failures));
            }
            idx += 1;
        }
    }
    out
}

fn summarize(
    scenario: &Scenario,
    m: usize,
    (c1, c2): (f64, f64),
    variant: Variant,
    ok: &[(&RepEstimate, Option<&OracleEstimate>)],
    failures: Vec<Failure>,
    oracle_failures: Vec<Failure>,
) -> FamilyReport {
    let with_truth = ok.iter().all(|(_, o)| o.is_some()) && !ok.is_empty();
    let curve = scenario
        .r_grid
        .iter()
        .enumerate()
        .map(|(g, &r)| {
            let est: Vec<f64> = ok.iter().map(|(e, _)| e.tau[g]).collect();
            let se2: Vec<f64> = ok.iter().map(|(e, _)| e.se[g].powi(2)).collect();
            let (truth, bias, coverage) = if with_truth {
                let tr: Vec<f64> = ok.iter().map(|(_, o)| o.expect("oracle present").tau(r)).collect();
                let diff: Vec<f64> = est.iter().zip(&tr).map(|(a, b)| a - b).collect();
                let cov = ok
                    .iter()
                    .zip(&tr)
                    .filter(|((e, _), t)| e.lo[g] <= **t && **t <= e.hi[g])
                    .count() as f64
                    / ok.len() as f64;
                (mean(&tr), mean(&diff), cov)
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            let mc_sd = sd(&est);
            let rms_se = mean(&se2).sqrt();
            CurvePoint {
                r,
                truth,
                mean_estimate: mean(&est),
                bias,
                coverage,
                mc_sd,
                rms_se,
                bound_ratio: rms_se / mc_sd,
            }
        })
        .collect();
    let l = scenario.basis.n_columns();
    let coefficients = (0..l)
        .map(|i| {
            let est: Vec<f64> = ok.iter().map(|(e, _)| e.beta_bar[i]).collect();
            let se2: Vec<f64> = ok.iter().map(|(e, _)| e.beta_se[i].powi(2)).collect();
            let (mean_truth, diff_mean, diff_se) = if with_truth {
                let tr: Vec<f64> = ok.iter().map(|(_, o)| o.expect("oracle present").beta[i]).collect();
                let diff: Vec<f64> = est.iter().zip(&tr).map(|(a, b)| a - b).collect();
                (mean(&tr), mean(&diff), sd(&diff) / (diff.len() as f64).sqrt())
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            CoefficientSummary {
                index: i,
                mean_estimate: mean(&est),
                mc_sd: sd(&est),
                rms_se: mean(&se2).sqrt(),
                mean_truth,
                diff_mean,
                diff_se,
            }
        })
        .collect();
    let rejections = ok.iter().filter(|(e, _)| e.p_value < 0.05).count();
    FamilyReport {
        scenario: scenario.name.clone(),
        m,
        c_hp: c1,
        c_hpp: c2,
        variant,
        label: variant.label(),
        n_ok: ok.len(),
        failures,
        rejection_rate: if ok.is_empty() { f64::NAN } else { rejections as f64 / ok.len() as f64 },
        curve,
        coefficients,
        oracle_failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::QMode;

    fn tiny(oracle_k: usize) -> Scenario {
        Scenario {
            name: "tiny".into(),
            dgp: Some("binary_no_carryover".into()),
            dgp_config: None,
            periods: Some(25),
            m_values: vec![1],
            c_values: vec![3.0, 7.0],
            pairs: vec![],
            basis: BasisSpec::binary(),
            variants: vec![
                Variant { ps: PsVariant::True, mode: WeightingMode::Hajek },
                Variant { ps: PsVariant::Estimated, mode: WeightingMode::Ipw },
            ],
            truncation_q: 0.99,
            q_mode: QMode::WeightScaled,
            level: 0.95,
            oracle_k,
            r_grid: vec![0.0, 1.0],
        }
    }

    #[test]
    fn unit_ratio_scaling_matches_direct_ratio() {
        let world = World::new({
            let mut c = DgpConfig::preset("binary").unwrap();
            c.periods = 8;
            c
        })
        .unwrap();
        let rep = prepare_replication(&world, &SeedStream::new(3, 0)).unwrap();
        let unit = unit_log_ratios(&rep.phi, &rep.true_model, &rep.panel.treatments).unwrap();
        let scaled = scale_log_ratios(&unit, &rep.panel.treatments, 5.0);
        let h = rep.phi.scaled(5.0).unwrap();
        for (t, w) in rep.panel.treatments.iter().enumerate() {
            let e = rep.true_model.intensity_with_diagnostics(w.t).unwrap().0;
            let direct = log_density_ratio(w, &h, &e).unwrap();
            assert!((direct - scaled[t]).abs() < 1e-9 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn single_replication_report_matches_manual_run() {
        let config = ExperimentConfig {
            master_seed: 5,
            n_reps: 1,
            scenarios: vec![tiny(2)],
        };
        let report = run_experiment(&config, Some(1)).unwrap();
        assert_eq!(report.families.len(), 2);
        let world = World::new(tiny(2).dgp_config().unwrap()).unwrap();
        let manual = run_replication(&world, &tiny(2), &replication_stream(5, "tiny", 0)).unwrap();
        let est = manual[0].estimates[0].as_ref().unwrap();
        let fam = &report.families[0];
        assert_eq!(fam.n_ok, 1);
        assert_eq!(fam.curve[1].mean_estimate, est.tau[1]);
        let truth = manual[0].oracle.as_ref().unwrap().as_ref().unwrap().tau(1.0);
        assert_eq!(fam.curve[1].truth, truth);
        assert!(fam.curve.iter().all(|c| c.coverage == 0.0 || c.coverage == 1.0));
    }

    #[test]
    fn reports_do_not_depend_on_thread_count() {
        let config = ExperimentConfig {
            master_seed: 11,
            n_reps: 3,
            scenarios: vec![tiny(0)],
        };
        let a = run_experiment(&config, Some(1)).unwrap();
        let b = run_experiment(&config, Some(3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn scenario_validation() {
        let mut s = tiny(0);
        s.m_values = vec![0];
        assert!(s.validate().is_err());
        let mut s = tiny(0);
        s.pairs = vec![(0, 5)];
        assert!(s.validate().is_err());
        let mut s = tiny(0);
        s.dgp = None;
        assert!(s.validate().is_err());
        assert_eq!(tiny(0).resolved_pairs(), vec![(0, 1)]);
    }
}
