//! Monte Carlo projection truth by counterfactual rollouts under the known
//! data-generating process.
//!
//! For each period `t` and draw `k`, treatment paths for `t-M+1..=t` are
//! drawn from both interventions and outcomes are rolled forward from the
//! factual history. The two paths share randomness: the pattern of the
//! larger intervention is drawn and thinned to obtain the smaller one, and
//! outcome draws reuse one stream. The final-period pixel contrast uses the
//! expected counts given the path, which has the same mean as a sampled
//! count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis_matrix, BasisSpec};
use crate::error::{Error, Result};
use crate::point_process::{IntensitySurface, PatternSampler, SeedStream};
use crate::regression::{Projector, RankPolicy};
use crate::sim::panel::{outcome_base, outcome_intensity, sampler, smoother, OutcomeHistory, Panel};
use crate::sim::world::World;
use crate::spatial::Location;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub m: usize,
    pub c_hp: f64,
    pub c_hpp: f64,
    pub k: usize,
    pub periods: usize,
    pub basis: BasisSpec,
    /// Projection truth: mean of the per-draw, per-period coefficients.
    pub beta: Vec<f64>,
    /// Sample covariance of the per-draw coefficients.
    pub cov: Vec<Vec<f64>>,
    /// `sd / sqrt(K * periods)` per coefficient.
    pub mc_se: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub r: f64,
    pub truth: f64,
    pub mc_se: f64,
}

impl OracleEstimate {
    pub fn tau(&self, r: f64) -> f64 {
        self.basis.row(r).iter().zip(&self.beta).map(|(z, b)| z * b).sum()
    }

    /// Truth and Monte Carlo standard error at `r`.
    pub fn at(&self, r: f64) -> TruthPoint {
        let z = DVector::from_vec(self.basis.row(r));
        let l = z.len();
        let cov = DMatrix::from_fn(l, l, |i, j| self.cov[i][j]);
        let var = (z.transpose() * cov * &z)[0].max(0.0);
        TruthPoint {
            r,
            truth: self.tau(r),
            mc_se: (var / (self.k * self.periods) as f64).sqrt(),
        }
    }

    pub fn curve(&self, grid: &[f64]) -> Vec<TruthPoint> {
        grid.iter().map(|&r| self.at(r)).collect()
    }
}

/// Request for one oracle evaluation.
#[derive(Clone, Copy, Debug)]
pub struct OracleRequest<'a> {
    pub phi: &'a IntensitySurface,
    pub c_hp: f64,
    pub c_hpp: f64,
    pub m: usize,
    pub basis: &'a BasisSpec,
    pub k: usize,
}

struct Scratch {
    cf_w: Vec<Vec<f64>>,
    cf_y: Vec<Vec<f64>>,
    lam: Vec<f64>,
}

pub fn oracle_true_cate(
    world: &World,
    panel: &Panel,
    req: &OracleRequest<'_>,
    stream: &SeedStream,
) -> Result<OracleEstimate> {
    let t_max = panel.periods();
    let m = req.m;
    if req.k == 0 {
        return Err(Error::invalid("oracle needs at least one draw"));
    }
    if m == 0 || m > t_max {
        return Err(Error::invalid(format!("intervention length {m} outside 1..={t_max}")));
    }
    if !(req.c_hp > 0.0 && req.c_hpp > 0.0) {
        return Err(Error::invalid("intervention scales must be positive"));
    }
    let c_max = req.c_hp.max(req.c_hpp);
    let keep = req.c_hp.min(req.c_hpp) / c_max;
    let big = PatternSampler::new(&req.phi.scaled(c_max)?);
    let bases: Vec<Vec<f64>> = (0..t_max)
        .map(|i| outcome_base(world, &panel.x3[i], &panel.x4[i]))
        .collect();
    let l = req.basis.n_columns();
    let spatial = panel.moderator.periods().is_none();
    let fixed = if spatial {
        Some(Projector::new(
            &build_basis_matrix(&panel.moderator, m, m, req.basis)?,
            RankPolicy::Error,
        )?)
    } else {
        None
    };

    // Per period: sum of coefficients and of their outer products.
    let per_t: Vec<(Vec<f64>, Vec<f64>)> = (m..=t_max)
        .into_par_iter()
        .map(|t| -> Result<(Vec<f64>, Vec<f64>)> {
            let own;
            let proj = match &fixed {
                Some(p) => p,
                None => {
                    own = Projector::new(
                        &build_basis_matrix(&panel.moderator, t, m, req.basis)?,
                        RankPolicy::Error,
                    )?;
                    &own
                }
            };
            let mut rng = stream.derive("oracle_period", t as u64).rng();
            let mut scratch = Scratch {
                cf_w: vec![Vec::new(); m],
                cf_y: vec![Vec::new(); m],
                lam: Vec::new(),
            };
            let p = world.grid.len();
            let (mut e_hp, mut e_hpp) = (vec![0.0; p], vec![0.0; p]);
            let mut sum = vec![0.0; l];
            let mut outer = vec![0.0; l * l];
            let mut paths_big: Vec<Vec<Location>> = vec![Vec::new(); m];
            let mut paths_small: Vec<Vec<Location>> = vec![Vec::new(); m];
            for _ in 0..req.k {
                for s in 0..m {
                    paths_big[s].clear();
                    big.sample_into(&mut rng, &mut paths_big[s]);
                    paths_small[s].clear();
                    for &pt in &paths_big[s] {
                        if rng.random::<f64>() < keep {
                            paths_small[s].push(pt);
                        }
                    }
                }
                let y_seed: u64 = rng.random();
                let (hp_path, hpp_path) = if req.c_hp >= req.c_hpp {
                    (&paths_big, &paths_small)
                } else {
                    (&paths_small, &paths_big)
                };
                rollout(world, panel, &bases, t, m, hp_path, y_seed, &mut scratch, &mut e_hp)?;
                rollout(world, panel, &bases, t, m, hpp_path, y_seed, &mut scratch, &mut e_hpp)?;
                let d: Vec<f64> = e_hpp.iter().zip(&e_hp).map(|(a, b)| a - b).collect();
                let beta = proj.apply_slice(&d);
                for i in 0..l {
                    sum[i] += beta[i];
                    for j in 0..l {
                        outer[i * l + j] += beta[i] * beta[j];
                    }
                }
            }
            Ok((sum, outer))
        })
        .collect::<Result<_>>()?;

    let n = (per_t.len() * req.k) as f64;
    let mut sum = vec![0.0; l];
    let mut outer = vec![0.0; l * l];
    for (s, o) in &per_t {
        for i in 0..l {
            sum[i] += s[i];
        }
        for i in 0..l * l {
            outer[i] += o[i];
        }
    }
    let beta: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let denom = (n - 1.0).max(1.0);
    let mut cov: Vec<Vec<f64>> = (0..l)
        .map(|i| (0..l).map(|j| (outer[i * l + j] - n * beta[i] * beta[j]) / denom).collect())
        .collect();
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] = row[i].max(0.0);
    }
    let mc_se = (0..l).map(|i| (cov[i][i] / n).sqrt()).collect();
    Ok(OracleEstimate {
        m,
        c_hp: req.c_hp,
        c_hpp: req.c_hpp,
        k: req.k,
        periods: per_t.len(),
        basis: req.basis.clone(),
        beta,
        cov,
        mc_se,
    })
}

/// Rolls outcomes forward along one treatment path and writes the expected
/// final-period pixel counts.
#[allow(clippy::too_many_arguments)]
fn rollout(
    world: &World,
    panel: &Panel,
    bases: &[Vec<f64>],
    t: usize,
    m: usize,
    path: &[Vec<Location>],
    y_seed: u64,
    scratch: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    let cfg = &world.config;
    let start = t + 1 - m;
    let sample_y = cfg.outcome.gamma_y != 0.0 && m > 1;
    let mut ry = SeedStream::new(y_seed, 0).rng();
    let depth = cfg.lookback.max(4);
    for (idx, s) in (start..=t).enumerate() {
        smoother(world, &path[idx], &mut scratch.cf_w[idx]);
        let Scratch { cf_w, cf_y, lam } = scratch;
        let w_hist: Vec<Option<&[f64]>> = (0..depth)
            .map(|j| {
                if s < j + 1 {
                    None
                } else if s - j >= start {
                    Some(cf_w[s - j - start].as_slice())
                } else {
                    Some(panel.w_star[s - j - 1].as_slice())
                }
            })
            .collect();
        let x3_lag: Vec<Option<&[f64]>> =
            (1..=4).map(|j| (s > j).then(|| panel.x3[s - j - 1].as_slice())).collect();
        let y_prev = if s < 2 {
            None
        } else if s - 1 >= start {
            Some(cf_y[s - 1 - start].as_slice())
        } else {
            Some(panel.y_star[s - 2].as_slice())
        };
        let hist = OutcomeHistory {
            w: &w_hist,
            x3_lag: &x3_lag,
            y_prev,
        };
        outcome_intensity(world, &bases[s - 1], &hist, lam);
        if s < t {
            let mut ys = Vec::new();
            if sample_y {
                let y = sampler(world, lam.clone())?.sample(s, &mut ry);
                smoother(world, &y.points, &mut ys);
            } else {
                ys.resize(world.shape().len(), 0.0);
            }
            cf_y[idx] = ys;
        } else {
            world.pixel_expectation(lam, out);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::estimate_density_kde;
    use crate::sim::panel::generate_panel;
    use crate::sim::world::DgpConfig;

    fn setup(name: &str, periods: usize) -> (World, Panel, IntensitySurface) {
        let mut cfg = DgpConfig::preset(name).unwrap();
        cfg.periods = periods;
        let world = World::new(cfg).unwrap();
        let panel = generate_panel(&world, &SeedStream::new(17, 0)).unwrap();
        let all: Vec<Location> = panel.treatments.iter().flat_map(|p| p.points.clone()).collect();
        let (phi, _) = estimate_density_kde(&all, world.config.window, world.shape()).unwrap();
        (world, panel, phi)
    }

    #[test]
    fn identical_interventions_have_zero_truth() {
        let (world, panel, phi) = setup("binary", 12);
        let basis = BasisSpec::binary();
        for m in [1, 3] {
            let req = OracleRequest {
                phi: &phi,
                c_hp: 5.0,
                c_hpp: 5.0,
                m,
                basis: &basis,
                k: 4,
            };
            let o = oracle_true_cate(&world, &panel, &req, &SeedStream::new(1, 2)).unwrap();
            assert!(o.beta.iter().all(|&b| b == 0.0));
            assert_eq!(o.periods, 13 - m);
        }
    }

    #[test]
    fn more_treatment_means_larger_effect() {
        let (world, panel, phi) = setup("binary_no_carryover", 30);
        let basis = BasisSpec::binary();
        let run = |c2: f64| {
            let req = OracleRequest {
                phi: &phi,
                c_hp: 3.0,
                c_hpp: c2,
                m: 1,
                basis: &basis,
                k: 20,
            };
            oracle_true_cate(&world, &panel, &req, &SeedStream::new(4, 4)).unwrap()
        };
        let (a, b) = (run(5.0), run(7.0));
        assert!(a.beta[0] > 0.0);
        assert!(b.beta[0] > a.beta[0] + 3.0 * (a.mc_se[0] + b.mc_se[0]));
    }

    #[test]
    fn homogeneous_dgp_has_flat_truth() {
        let (world, panel, phi) = setup("homogeneous", 40);
        let basis = BasisSpec::binary();
        let req = OracleRequest {
            phi: &phi,
            c_hp: 3.0,
            c_hpp: 7.0,
            m: 1,
            basis: &basis,
            k: 20,
        };
        let o = oracle_true_cate(&world, &panel, &req, &SeedStream::new(6, 1)).unwrap();
        assert!(o.beta[1].abs() < 3.0 * o.mc_se[1], "slope {} se {}", o.beta[1], o.mc_se[1]);
    }

    #[test]
    fn mc_error_shrinks_with_draws() {
        let (world, panel, phi) = setup("binary_no_carryover", 20);
        let basis = BasisSpec::binary();
        let se = |k: usize| {
            let req = OracleRequest {
                phi: &phi,
                c_hp: 3.0,
                c_hpp: 7.0,
                m: 1,
                basis: &basis,
                k,
            };
            oracle_true_cate(&world, &panel, &req, &SeedStream::new(2, 9)).unwrap().mc_se[0]
        };
        let ratio = se(40) / se(160);
        assert!((ratio - 2.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn spatio_temporal_and_multi_period_rollouts_run() {
        let (world, panel, phi) = setup("spatio_temporal", 10);
        let basis = BasisSpec::natural_spline(3, 0.0, 1.0).unwrap();
        let req = OracleRequest {
            phi: &phi,
            c_hp: 3.0,
            c_hpp: 7.0,
            m: 3,
            basis: &basis,
            k: 3,
        };
        let o = oracle_true_cate(&world, &panel, &req, &SeedStream::new(8, 8)).unwrap();
        assert_eq!(o.beta.len(), 4);
        assert!(o.beta.iter().all(|b| b.is_finite()));
        let again = oracle_true_cate(&world, &panel, &req, &SeedStream::new(8, 8)).unwrap();
        assert_eq!(o, again);
    }
}
