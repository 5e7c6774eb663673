//! Report files for an experiment run.
//!
//! `summary.json`, `curves.csv` and `coefficients.csv` are deterministic for
//! a given configuration. Wall-clock timings go to `timing.json`.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::io::{write_atomic, write_json};
use crate::sim::experiment::ExperimentReport;

pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const TIMING_FILE: &str = "timing.json";

fn num(v: f64) -> String {
    if v.is_nan() {
        String::from("NA")
    } else {
        format!("{v}")
    }
}

pub fn curves_csv(report: &ExperimentReport) -> String {
    let mut s = String::from(
        "scenario,m,c_hp,c_hpp,estimator,r,truth,mean_estimate,bias,coverage,mc_sd,rms_se,bound_ratio,n_ok\n",
    );
    for f in &report.families {
        for p in &f.curve {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                f.scenario,
                f.m,
                num(f.c_hp),
                num(f.c_hpp),
                f.label,
                num(p.r),
                num(p.truth),
                num(p.mean_estimate),
                num(p.bias),
                num(p.coverage),
                num(p.mc_sd),
                num(p.rms_se),
                num(p.bound_ratio),
                f.n_ok
            ));
        }
    }
    s
}

pub fn coefficients_csv(report: &ExperimentReport) -> String {
    let mut s = String::from(
        "scenario,m,c_hp,c_hpp,estimator,index,mean_estimate,mc_sd,rms_se,mean_truth,diff_mean,diff_se,rejection_rate\n",
    );
    for f in &report.families {
        for c in &f.coefficients {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                f.scenario,
                f.m,
                num(f.c_hp),
                num(f.c_hpp),
                f.label,
                c.index,
                num(c.mean_estimate),
                num(c.mc_sd),
                num(c.rms_se),
                num(c.mean_truth),
                num(c.diff_mean),
                num(c.diff_se),
                num(f.rejection_rate)
            ));
        }
    }
    s
}

#[derive(Serialize)]
struct Timing<'a> {
    scenario: &'a str,
    seconds: f64,
}

pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    // NaN is not valid JSON; serialize through a value with nulls.
    let value = serde_json::to_value(report)?;
    write_json(&dir.join(SUMMARY_FILE), &value)?;
    write_atomic(&dir.join(CURVES_FILE), curves_csv(report).as_bytes())?;
    write_atomic(&dir.join(COEFFICIENTS_FILE), coefficients_csv(report).as_bytes())?;
    let timing: Vec<Timing> = report
        .scenarios
        .iter()
        .zip(&report.runtime_secs)
        .map(|(s, t)| Timing {
            scenario: &s.name,
            seconds: *t,
        })
        .collect();
    write_json(&dir.join(TIMING_FILE), &timing)
}
