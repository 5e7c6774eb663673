//! Data-generating configuration and the seed-independent surfaces derived
//! from it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point_process::{estimate_density_kde, IntensitySurface, PatternSampler, SeedStream};
use crate::spatial::{Location, ModeratorKind, PixelGrid, Raster, RasterShape, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub center: [f64; 2],
    pub sd: f64,
    pub weight: f64,
}

/// Fixed Gaussian mixture whose kernel density stands in for an observed
/// event map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<MixtureComponent>,
    pub points: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geography {
    /// Road segments `[x0, y0, x1, y1]`.
    pub roads: Vec<[f64; 4]>,
    /// Treat the window border as part of the road network.
    pub include_border: bool,
    pub capital: [f64; 2],
    /// `X2 = exp(-capital_decay * distance to the capital)`.
    pub capital_decay: f64,
    pub x3_events: Mixture,
    pub x4_events: Mixture,
}

/// `Z ~ Poisson(exp(rho0 + rho1 * g))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfounderProcess {
    pub rho0: f64,
    pub rho1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentCoefs {
    pub alpha0: f64,
    /// Coefficients of `X1, X2, X3t, X4t`.
    pub alpha_x: [f64; 4],
    pub alpha_w: f64,
    pub alpha_y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCoefs {
    pub gamma0: f64,
    pub gamma_x: [f64; 4],
    pub gamma_w: f64,
    pub gamma_y: f64,
    /// One coefficient for spatial moderators, up to four lagged ones for
    /// the spatio-temporal moderator.
    pub interaction: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeratorChoice {
    /// Continuous `X2`.
    SpatialX2,
    /// `1{X2 > threshold}` at the pixel centroid.
    SpatialBinary { threshold: f64 },
    /// Alternating pixels; unrelated to any confounder.
    Checkerboard,
    /// Continuous `X3t`.
    SpatioTemporalX3,
}

impl ModeratorChoice {
    pub fn kind(&self) -> ModeratorKind {
        match self {
            ModeratorChoice::SpatialBinary { .. } | ModeratorChoice::Checkerboard => ModeratorKind::Binary,
            _ => ModeratorKind::Continuous,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub name: String,
    pub window: Window,
    pub raster: RasterShape,
    pub pixels: RasterShape,
    pub periods: usize,
    pub geography: Geography,
    pub x3: ConfounderProcess,
    pub x4: ConfounderProcess,
    pub treatment: TreatmentCoefs,
    pub outcome: OutcomeCoefs,
    pub moderator: ModeratorChoice,
    /// Smoothers are `exp(-decay * distance)`.
    pub decay: f64,
    /// Number of treatment periods entering the outcome smoother.
    pub lookback: usize,
}

const PRESETS: &[(&str, &str)] = &[
    ("spatial", include_str!("../../presets/spatial.json")),
    ("spatio_temporal", include_str!("../../presets/spatio_temporal.json")),
    ("binary", include_str!("../../presets/binary.json")),
    ("binary_no_carryover", include_str!("../../presets/binary_no_carryover.json")),
    ("homogeneous", include_str!("../../presets/homogeneous.json")),
    ("strong_interaction", include_str!("../../presets/strong_interaction.json")),
];

impl DgpConfig {
    /// Calibrated configuration shipped with the crate.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::invalid(format!("unknown preset '{name}'")))?;
        let cfg: DgpConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|(n, _)| *n).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods == 0 {
            return Err(Error::invalid("DGP needs at least one period"));
        }
        if self.lookback == 0 {
            return Err(Error::invalid("outcome lookback must be at least one period"));
        }
        if !(self.decay > 0.0) {
            return Err(Error::invalid("smoother decay must be positive"));
        }
        if self.pixels.nx == 0 || self.pixels.ny == 0 || self.raster.nx == 0 || self.raster.ny == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        let n = self.outcome.interaction.len();
        match self.moderator {
            ModeratorChoice::SpatioTemporalX3 if n > 4 => {
                return Err(Error::invalid("at most four lagged interaction terms"))
            }
            ModeratorChoice::SpatioTemporalX3 => {}
            _ if n > 1 => return Err(Error::invalid("spatial moderators take one interaction term")),
            _ => {}
        }
        let finite = [
            self.treatment.alpha0,
            self.treatment.alpha_w,
            self.treatment.alpha_y,
            self.outcome.gamma0,
            self.outcome.gamma_w,
            self.outcome.gamma_y,
            self.x3.rho0,
            self.x3.rho1,
            self.x4.rho0,
            self.x4.rho1,
        ]
        .into_iter()
        .chain(self.treatment.alpha_x)
        .chain(self.outcome.gamma_x)
        .chain(self.outcome.interaction.iter().copied())
        .all(f64::is_finite);
        if !finite {
            return Err(Error::invalid("DGP coefficients must be finite"));
        }
        Ok(())
    }

    /// Treatment coefficients in propensity-covariate order.
    pub fn true_alpha(&self) -> Vec<f64> {
        let t = &self.treatment;
        let mut a = vec![t.alpha0];
        a.extend(t.alpha_x);
        a.push(t.alpha_w);
        a.push(t.alpha_y);
        a
    }
}

/// Surfaces that depend only on the configuration.
#[derive(Clone, Debug)]
pub struct World {
    pub config: DgpConfig,
    pub grid: PixelGrid,
    /// Pixel of every raster cell.
    pub cell_pixel: Vec<usize>,
    pub x1: Raster,
    pub x2: Raster,
    pub g3: IntensitySurface,
    pub g4: IntensitySurface,
    pub z3: PatternSampler,
    pub z4: PatternSampler,
    /// Spatial moderator per pixel and broadcast to cells; empty for the
    /// spatio-temporal moderator.
    pub moderator_pixels: Vec<f64>,
    pub moderator_cells: Vec<f64>,
}

impl World {
    pub fn new(config: DgpConfig) -> Result<Self> {
        config.validate()?;
        let window = config.window;
        let shape = config.raster;
        let grid = PixelGrid::new(window, config.pixels.nx, config.pixels.ny)?;
        let cell_pixel = grid.cell_assignment(shape);
        let geo = &config.geography;

        let x1 = Raster::from_fn(window, shape, |loc| (-road_distance(geo, &window, loc)).exp());
        let x2_at = |loc: Location| (-geo.capital_decay * capital_distance(geo, loc)).exp();
        let x2 = Raster::from_fn(window, shape, x2_at);
        let g3 = mixture_density(&geo.x3_events, window, shape)?;
        let g4 = mixture_density(&geo.x4_events, window, shape)?;
        let z = |g: &IntensitySurface, p: ConfounderProcess| -> Result<PatternSampler> {
            let s = IntensitySurface::new(g.raster().map(|v| (p.rho0 + p.rho1 * v).exp()))?;
            Ok(PatternSampler::new(&s))
        };
        let z3 = z(&g3, config.x3)?;
        let z4 = z(&g4, config.x4)?;

        let pixel_values: Vec<f64> = match config.moderator {
            ModeratorChoice::SpatialX2 => (0..grid.len()).map(|i| x2_at(grid.centroid(i))).collect(),
            ModeratorChoice::SpatialBinary { threshold } => (0..grid.len())
                .map(|i| f64::from(u8::from(x2_at(grid.centroid(i)) > threshold)))
                .collect(),
            ModeratorChoice::Checkerboard => (0..grid.len())
                .map(|i| ((i % grid.px() + i / grid.px()) % 2) as f64)
                .collect(),
            ModeratorChoice::SpatioTemporalX3 => Vec::new(),
        };
        let moderator_cells = match config.moderator {
            ModeratorChoice::SpatialX2 => x2.values().to_vec(),
            ModeratorChoice::SpatioTemporalX3 => Vec::new(),
            _ => cell_pixel.iter().map(|&p| pixel_values[p]).collect(),
        };
        Ok(Self {
            config,
            grid,
            cell_pixel,
            x1,
            x2,
            g3,
            g4,
            z3,
            z4,
            moderator_pixels: pixel_values,
            moderator_cells,
        })
    }

    pub fn shape(&self) -> RasterShape {
        self.config.raster
    }

    pub fn cell_area(&self) -> f64 {
        self.config.window.area() / self.config.raster.len() as f64
    }

    /// Sums cell intensities into expected pixel counts.
    pub fn pixel_expectation(&self, intensity: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let da = self.cell_area();
        for (v, &p) in intensity.iter().zip(&self.cell_pixel) {
            out[p] += v * da;
        }
    }
}

fn segment_distance(seg: &[f64; 4], p: Location) -> f64 {
    let (ax, ay, bx, by) = (seg[0], seg[1], seg[2], seg[3]);
    let (vx, vy) = (bx - ax, by - ay);
    let len2 = vx * vx + vy * vy;
    let s = if len2 > 0.0 {
        (((p.x - ax) * vx + (p.y - ay) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (p.x - ax - s * vx, p.y - ay - s * vy);
    (dx * dx + dy * dy).sqrt()
}

fn road_distance(geo: &Geography, window: &Window, p: Location) -> f64 {
    let mut d = geo
        .roads
        .iter()
        .map(|s| segment_distance(s, p))
        .fold(f64::INFINITY, f64::min);
    if geo.include_border {
        d = d
            .min(p.x - window.x_min())
            .min(window.x_max() - p.x)
            .min(p.y - window.y_min())
            .min(window.y_max() - p.y);
    }
    d
}

fn capital_distance(geo: &Geography, p: Location) -> f64 {
    ((p.x - geo.capital[0]).powi(2) + (p.y - geo.capital[1]).powi(2)).sqrt()
}

/// Kernel density of a seeded sample from the mixture, kept inside the window.
fn mixture_density(mix: &Mixture, window: Window, shape: RasterShape) -> Result<IntensitySurface> {
    if mix.components.is_empty() || mix.points == 0 {
        return Err(Error::invalid("event mixture needs components and points"));
    }
    let total: f64 = mix.components.iter().map(|c| c.weight).sum();
    if !(total > 0.0) || mix.components.iter().any(|c| !(c.sd > 0.0) || c.weight < 0.0) {
        return Err(Error::invalid("mixture weights and spreads must be positive"));
    }
    let mut rng = SeedStream::new(mix.seed, 0).derive("mixture", 0).rng();
    let mut points = Vec::with_capacity(mix.points);
    while points.len() < mix.points {
        let mut u = rng.random::<f64>() * total;
        let comp = mix
            .components
            .iter()
            .find(|c| {
                u -= c.weight;
                u < 0.0
            })
            .unwrap_or(&mix.components[mix.components.len() - 1]);
        let n = Normal::new(0.0, comp.sd).map_err(|e| Error::invalid(e.to_string()))?;
        let p = Location::new(comp.center[0] + n.sample(&mut rng), comp.center[1] + n.sample(&mut rng));
        if window.contains(p) {
            points.push(p);
        }
    }
    Ok(estimate_density_kde(&points, window, shape)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load_and_validate() {
        for name in DgpConfig::preset_names() {
            let cfg = DgpConfig::preset(name).unwrap();
            assert_eq!(cfg.name, name);
            World::new(cfg).unwrap();
        }
        assert!(DgpConfig::preset("nope").is_err());
    }

    #[test]
    fn confounder_surfaces() {
        let world = World::new(DgpConfig::preset("spatial").unwrap()).unwrap();
        assert!(world.x1.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(world.x2.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!((world.g3.total() - 1.0).abs() < 1e-12);
        assert_eq!(world.moderator_pixels.len(), world.grid.len());
    }

    #[test]
    fn binary_moderators_are_zero_one() {
        for name in ["binary", "homogeneous"] {
            let world = World::new(DgpConfig::preset(name).unwrap()).unwrap();
            let ones = world.moderator_pixels.iter().filter(|&&v| v == 1.0).count();
            assert!(world.moderator_pixels.iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(ones > 0 && ones < world.grid.len());
        }
    }

    #[test]
    fn segment_distance_cases() {
        let s = [0.0, 0.0, 2.0, 0.0];
        assert!((segment_distance(&s, Location::new(1.0, 1.5)) - 1.5).abs() < 1e-15);
        assert!((segment_distance(&s, Location::new(3.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((segment_distance(&[1.0, 1.0, 1.0, 1.0], Location::new(1.0, 2.0)) - 1.0).abs() < 1e-15);
    }
}
