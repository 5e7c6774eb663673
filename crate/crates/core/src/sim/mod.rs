//! Simulation study: data generation, oracle truth, replication runner and
//! report files.

pub mod experiment;
pub mod oracle;
pub mod panel;
pub mod report;
pub mod world;

pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentReport, FamilyReport, PsVariant, Scenario, Variant,
};
pub use oracle::{oracle_true_cate, OracleEstimate, OracleRequest};
pub use panel::{generate_confounders, generate_panel, Panel};
pub use world::{DgpConfig, ModeratorChoice, World};
