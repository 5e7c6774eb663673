//! Sequential generation of confounders, treatments and outcomes.

use std::sync::Arc;

use crate::error::Result;
use crate::point_process::{IntensitySurface, PatternSampler, SeedStream};
use crate::propensity::{CovariateLayer, CovariateStack, PropensityModel, EXP_CLAMP};
use crate::sim::world::{ModeratorChoice, World};
use crate::spatial::{min_sq_distance_into, Location, ModeratorPanel, PointPattern, Raster};

/// One simulated dataset. Per-period vectors are indexed by `t - 1`.
#[derive(Clone, Debug)]
pub struct Panel {
    pub treatments: Vec<PointPattern>,
    pub outcomes: Vec<PointPattern>,
    pub x3: Vec<Vec<f64>>,
    pub x4: Vec<Vec<f64>>,
    /// Single-period smoothers `W*_t`, `Y*_t` on cells.
    pub w_star: Vec<Vec<f64>>,
    pub y_star: Vec<Vec<f64>>,
    pub moderator: ModeratorPanel,
}

impl Panel {
    pub fn periods(&self) -> usize {
        self.treatments.len()
    }
}

/// `exp(-decay * distance to the nearest event)` on every cell.
pub fn smoother(world: &World, events: &[Location], out: &mut Vec<f64>) {
    out.clear();
    out.resize(world.shape().len(), f64::INFINITY);
    min_sq_distance_into(out, events, &world.config.window, world.shape());
    let decay = world.config.decay;
    for v in out.iter_mut() {
        *v = if v.is_finite() { (-decay * v.sqrt()).exp() } else { 0.0 };
    }
}

/// Distance smoother with unit decay, as used for `X3t` and `X4t`.
fn proximity(world: &World, events: &[Location]) -> Vec<f64> {
    let mut sq = vec![f64::INFINITY; world.shape().len()];
    min_sq_distance_into(&mut sq, events, &world.config.window, world.shape());
    sq.into_iter()
        .map(|v| if v.is_finite() { (-v.sqrt()).exp() } else { 0.0 })
        .collect()
}

/// Confounder draws `(X3t, X4t, Z3 events)` for every period.
pub struct Confounders {
    pub x3: Vec<Vec<f64>>,
    pub x4: Vec<Vec<f64>>,
    pub z3: Vec<Vec<Location>>,
}

pub fn draw_confounders(world: &World, stream: &SeedStream) -> Confounders {
    let mut r3 = stream.derive("x3", 0).rng();
    let mut r4 = stream.derive("x4", 0).rng();
    let t_max = world.config.periods;
    let mut out = Confounders {
        x3: Vec::with_capacity(t_max),
        x4: Vec::with_capacity(t_max),
        z3: Vec::with_capacity(t_max),
    };
    for _ in 0..t_max {
        let mut z3 = Vec::new();
        world.z3.sample_into(&mut r3, &mut z3);
        let mut z4 = Vec::new();
        world.z4.sample_into(&mut r4, &mut z4);
        out.x3.push(proximity(world, &z3));
        out.x4.push(proximity(world, &z4));
        out.z3.push(z3);
    }
    out
}

/// Confounder stack `X1, X2, X3t, X4t`.
pub fn generate_confounders(world: &World, stream: &SeedStream) -> Result<CovariateStack> {
    let c = draw_confounders(world, stream);
    let w = world.config.window;
    let s = world.shape();
    let temporal = |v: Vec<Vec<f64>>| -> Result<CovariateLayer> {
        Ok(CovariateLayer::Temporal(
            v.into_iter()
                .map(|x| Raster::new(w, s.nx, s.ny, x))
                .collect::<Result<_>>()?,
        ))
    };
    CovariateStack::new(
        w,
        s,
        world.config.periods,
        ["x1", "x2", "x3", "x4"].map(String::from).to_vec(),
        vec![
            CovariateLayer::Spatial(world.x1.clone()),
            CovariateLayer::Spatial(world.x2.clone()),
            temporal(c.x3)?,
            temporal(c.x4)?,
        ],
    )
}

/// Static part of the outcome log-intensity at one period.
pub fn outcome_base(world: &World, x3: &[f64], x4: &[f64]) -> Vec<f64> {
    let o = &world.config.outcome;
    let (x1, x2) = (world.x1.values(), world.x2.values());
    (0..x1.len())
        .map(|i| o.gamma0 + o.gamma_x[0] * x1[i] + o.gamma_x[1] * x2[i] + o.gamma_x[2] * x3[i] + o.gamma_x[3] * x4[i])
        .collect()
}

/// Treatment-dependent history entering the outcome intensity at `t`.
pub struct OutcomeHistory<'a> {
    /// `w[j]` is `W*_{t-j}`, `None` before the first period.
    pub w: &'a [Option<&'a [f64]>],
    /// `x3_lag[j - 1]` is `X3_{t-j}`.
    pub x3_lag: &'a [Option<&'a [f64]>],
    pub y_prev: Option<&'a [f64]>,
}

/// Outcome intensity on cells given the base and the history.
pub fn outcome_intensity(world: &World, base: &[f64], h: &OutcomeHistory<'_>, out: &mut Vec<f64>) {
    let cfg = &world.config;
    let o = &cfg.outcome;
    out.clear();
    out.extend_from_slice(base);
    let lookback = cfg.lookback.min(h.w.len());
    let spatial_gamma = match cfg.moderator {
        ModeratorChoice::SpatioTemporalX3 => None,
        _ => Some(o.interaction.first().copied().unwrap_or(0.0)),
    };
    for (i, v) in out.iter_mut().enumerate() {
        let mut wm = 0.0f64;
        for w in h.w[..lookback].iter().flatten() {
            wm = wm.max(w[i]);
        }
        *v += o.gamma_w * wm;
        if let Some(g1) = spatial_gamma {
            *v += g1 * world.moderator_cells[i] * wm;
        }
        if let Some(y) = h.y_prev {
            *v += o.gamma_y * y[i];
        }
    }
    if spatial_gamma.is_none() {
        for (j, g) in o.interaction.iter().enumerate() {
            // gamma_{j+1} X3_{t-j-1} W*_{t-j}
            if let (Some(Some(x)), Some(Some(w))) = (h.x3_lag.get(j), h.w.get(j)) {
                for (i, v) in out.iter_mut().enumerate() {
                    *v += g * x[i] * w[i];
                }
            }
        }
    }
    for v in out.iter_mut() {
        *v = v.clamp(-EXP_CLAMP, EXP_CLAMP).exp();
    }
}

/// Treatment intensity on cells at `t` given the previous smoothers.
pub fn treatment_intensity(
    world: &World,
    x3: &[f64],
    x4: &[f64],
    w_prev: Option<&[f64]>,
    y_prev: Option<&[f64]>,
) -> Vec<f64> {
    let a = &world.config.treatment;
    let (x1, x2) = (world.x1.values(), world.x2.values());
    (0..x1.len())
        .map(|i| {
            let mut eta = a.alpha0
                + a.alpha_x[0] * x1[i]
                + a.alpha_x[1] * x2[i]
                + a.alpha_x[2] * x3[i]
                + a.alpha_x[3] * x4[i];
            if let Some(w) = w_prev {
                eta += a.alpha_w * w[i];
            }
            if let Some(y) = y_prev {
                eta += a.alpha_y * y[i];
            }
            eta.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
        })
        .collect()
}

pub(crate) fn sampler(world: &World, intensity: Vec<f64>) -> Result<PatternSampler> {
    let s = world.shape();
    let r = Raster::new(world.config.window, s.nx, s.ny, intensity)?;
    Ok(PatternSampler::new(&IntensitySurface::new(r)?))
}

/// Generates `t = 1..=T` in order from one stream.
pub fn generate_panel(world: &World, stream: &SeedStream) -> Result<Panel> {
    let cfg = &world.config;
    let t_max = cfg.periods;
    let conf = draw_confounders(world, stream);
    let mut rw = stream.derive("treatments", 0).rng();
    let mut ry = stream.derive("outcomes", 0).rng();

    let mut treatments = Vec::with_capacity(t_max);
    let mut outcomes = Vec::with_capacity(t_max);
    let mut w_star: Vec<Vec<f64>> = Vec::with_capacity(t_max);
    let mut y_star: Vec<Vec<f64>> = Vec::with_capacity(t_max);
    let mut lam = Vec::new();
    for t in 1..=t_max {
        let x3 = &conf.x3[t - 1];
        let x4 = &conf.x4[t - 1];
        fn prev(v: &[Vec<f64>], t: usize) -> Option<&[f64]> {
            (t >= 2).then(|| v[t - 2].as_slice())
        }
        let lw = treatment_intensity(world, x3, x4, prev(&w_star, t), prev(&y_star, t));
        let w = sampler(world, lw)?.sample(t, &mut rw);
        let mut ws = Vec::new();
        smoother(world, &w.points, &mut ws);
        w_star.push(ws);

        let base = outcome_base(world, x3, x4);
        let w_hist: Vec<Option<&[f64]>> =
            (0..cfg.lookback.max(4)).map(|j| (t > j).then(|| w_star[t - 1 - j].as_slice())).collect();
        let x3_lag: Vec<Option<&[f64]>> =
            (1..=4).map(|j| (t > j).then(|| conf.x3[t - 1 - j].as_slice())).collect();
        let hist = OutcomeHistory {
            w: &w_hist,
            x3_lag: &x3_lag,
            y_prev: prev(&y_star, t),
        };
        outcome_intensity(world, &base, &hist, &mut lam);
        let y = sampler(world, std::mem::take(&mut lam))?.sample(t, &mut ry);
        let mut ys = Vec::new();
        smoother(world, &y.points, &mut ys);
        y_star.push(ys);
        treatments.push(w);
        outcomes.push(y);
    }

    let moderator = match cfg.moderator {
        ModeratorChoice::SpatioTemporalX3 => {
            let cols = conf
                .z3
                .iter()
                .map(|z| {
                    (0..world.grid.len())
                        .map(|i| {
                            let c = world.grid.centroid(i);
                            let d2 = z.iter().map(|e| e.dist2(&c)).fold(f64::INFINITY, f64::min);
                            if d2.is_finite() { (-d2.sqrt()).exp() } else { 0.0 }
                        })
                        .collect()
                })
                .collect();
            ModeratorPanel::spatio_temporal(cfg.moderator.kind(), cols)?
        }
        _ => ModeratorPanel::spatial(cfg.moderator.kind(), world.moderator_pixels.clone())?,
    };
    Ok(Panel {
        treatments,
        outcomes,
        x3: conf.x3,
        x4: conf.x4,
        w_star,
        y_star,
        moderator,
    })
}

/// Propensity covariates `1, X1, X2, X3t, X4t, W*_{t-1}, Y*_{t-1}`.
pub fn propensity_covariates(world: &World, panel: &Panel) -> Result<CovariateStack> {
    let w = world.config.window;
    let s = world.shape();
    let t_max = panel.periods();
    let raster = |v: &[f64]| Raster::new(w, s.nx, s.ny, v.to_vec());
    let lagged = |v: &[Vec<f64>]| -> Result<CovariateLayer> {
        let mut out = Vec::with_capacity(t_max);
        out.push(Raster::constant(w, s, 0.0));
        for x in &v[..t_max - 1] {
            out.push(raster(x)?);
        }
        Ok(CovariateLayer::Temporal(out))
    };
    let current = |v: &[Vec<f64>]| -> Result<CovariateLayer> {
        Ok(CovariateLayer::Temporal(v.iter().map(|x| raster(x)).collect::<Result<_>>()?))
    };
    CovariateStack::new(
        w,
        s,
        t_max,
        ["intercept", "x1", "x2", "x3", "x4", "w_lag", "y_lag"]
            .map(String::from)
            .to_vec(),
        vec![
            CovariateLayer::Intercept,
            CovariateLayer::Spatial(world.x1.clone()),
            CovariateLayer::Spatial(world.x2.clone()),
            current(&panel.x3)?,
            current(&panel.x4)?,
            lagged(&panel.w_star)?,
            lagged(&panel.y_star)?,
        ],
    )
}

/// The data-generating treatment model as a propensity model.
pub fn true_propensity(world: &World, covariates: Arc<CovariateStack>) -> Result<PropensityModel> {
    PropensityModel::new(world.config.true_alpha(), covariates)
}

/// Adjusts the treatment and outcome intercepts so that mean counts per
/// period hit the targets, by repeated short runs.
pub fn calibrate_intercepts(
    mut config: crate::sim::world::DgpConfig,
    target_w: f64,
    target_y: f64,
    periods: usize,
    rounds: usize,
    seed: u64,
) -> Result<crate::sim::world::DgpConfig> {
    let full = config.periods;
    config.periods = periods;
    for round in 0..rounds {
        let world = World::new(config.clone())?;
        let panel = generate_panel(&world, &SeedStream::new(seed, 0).derive("calibrate", round as u64))?;
        let mean = |p: &[PointPattern]| p.iter().map(|x| x.len()).sum::<usize>() as f64 / p.len() as f64;
        let (mw, my) = (mean(&panel.treatments), mean(&panel.outcomes));
        config.treatment.alpha0 += (target_w / mw.max(0.1)).ln();
        config.outcome.gamma0 += (target_y / my.max(0.1)).ln();
    }
    config.periods = full;
    Ok(config)
}
