//! `oracle`: Monte Carlo truth for one replication of a known DGP.

use std::path::Path;

use stcate::io::{write_atomic, write_json};
use stcate::sim::experiment::{oracle_stream, prepare_replication, replication_stream};
use stcate::sim::{oracle_true_cate, DgpConfig, OracleRequest, World};

use super::num;
use crate::config::OracleConfig;
use crate::error::CliError;

pub fn run(cfg: &OracleConfig, out: &Path, paper_scale: bool) -> Result<(), CliError> {
    let mut dgp = match (&cfg.dgp_config, &cfg.dgp) {
        (Some(c), _) => c.clone(),
        (None, Some(name)) => DgpConfig::preset(name)?,
        (None, None) => return Err(CliError::config("oracle config names no DGP (`dgp` or `dgp_config`)")),
    };
    if let Some(t) = cfg.periods {
        dgp.periods = t;
    }
    if paper_scale {
        dgp.periods = super::simulate::FULL_SCALE_PERIODS;
    }
    dgp.validate()?;
    if cfg.k == 0 || cfg.m == 0 || cfg.r_grid.is_empty() {
        return Err(CliError::config("oracle needs k >= 1, m >= 1 and a non-empty r_grid"));
    }
    let world = World::new(dgp)?;
    let stream = replication_stream(cfg.master_seed, &cfg.scenario, cfg.rep);
    let rep = prepare_replication(&world, &stream)?;
    let req = OracleRequest {
        phi: &rep.phi,
        c_hp: cfg.c_hp,
        c_hpp: cfg.c_hpp,
        m: cfg.m,
        basis: &cfg.basis,
        k: cfg.k,
    };
    let est = oracle_true_cate(&world, &rep.panel, &req, &oracle_stream(&stream, cfg.m, cfg.c_hp, cfg.c_hpp))?;
    write_json(&out.join("oracle.json"), &est)?;
    let mut s = String::from("r,truth,mc_se\n");
    for p in est.curve(&cfg.r_grid) {
        s.push_str(&format!("{},{},{}\n", num(p.r), num(p.truth), num(p.mc_se)));
    }
    write_atomic(&out.join("truth.csv"), s.as_bytes())?;
    Ok(())
}
