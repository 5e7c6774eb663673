//! Poisson point processes on piecewise-constant intensity surfaces.
//!
//! Densities of point patterns are only ever exposed as ratios. Both the
//! numerator and the denominator are taken relative to the unit-rate Poisson
//! process on the window, so the reference measure cancels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{Location, PointPattern, Raster, RasterShape, Window};

/// Intensities at or below this value count as zero for overlap checks.
pub const INTENSITY_FLOOR: f64 = 1e-300;

/// Nonnegative intensity (events per unit area per period).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensitySurface {
    raster: Raster,
}

impl IntensitySurface {
    pub fn new(raster: Raster) -> Result<Self> {
        if let Some(v) = raster.values().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("intensity value {v} is negative or non-finite")));
        }
        Ok(Self { raster })
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    /// Expected number of events.
    pub fn total(&self) -> f64 {
        self.raster.integral()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.raster.map(|v| v * c))
    }

    pub fn value_at(&self, loc: Location) -> Result<f64> {
        self.raster.value_at(loc)
    }
}

/// A reproducible random stream: one master seed, many independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Child stream identified by a fixed label and an index.
    pub fn derive(&self, label: &str, index: u64) -> Self {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.stream_id.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= splitmix(index);
        Self {
            master_seed: self.master_seed,
            stream_id: splitmix(h),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sampler with the cell distribution precomputed, for repeated draws from
/// one surface.
#[derive(Clone, Debug)]
pub struct PatternSampler {
    window: Window,
    shape: RasterShape,
    cumulative: Vec<f64>,
    total: f64,
}

impl PatternSampler {
    pub fn new(intensity: &IntensitySurface) -> Self {
        let r = intensity.raster();
        let mut acc = 0.0;
        let cumulative: Vec<f64> = r
            .values()
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
        Self {
            window: *r.window(),
            shape: r.shape(),
            cumulative,
            total: acc * r.cell_area(),
        }
    }

    pub fn expected_count(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> PointPattern {
        let mut points = Vec::new();
        self.sample_into(rng, &mut points);
        PointPattern::new(t, points)
    }

    /// Appends one realization to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<Location>) {
        if self.total <= 0.0 {
            return;
        }
        let n = Poisson::new(self.total)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0);
        let mass = *self.cumulative.last().unwrap();
        let dx = self.window.width() / self.shape.nx as f64;
        let dy = self.window.height() / self.shape.ny as f64;
        out.reserve(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * mass;
            let cell = self
                .cumulative
                .partition_point(|&c| c <= u)
                .min(self.cumulative.len() - 1);
            let ix = (cell % self.shape.nx) as f64;
            let iy = (cell / self.shape.nx) as f64;
            let x = self.window.x_min() + (ix + rng.random::<f64>()) * dx;
            let y = self.window.y_min() + (iy + rng.random::<f64>()) * dy;
            out.push(Location::new(x, y));
        }
    }
}

/// Draws a pattern from the Poisson process with the given intensity.
pub fn sample_poisson_pattern<R: Rng + ?Sized>(
    intensity: &IntensitySurface,
    t: usize,
    rng: &mut R,
) -> PointPattern {
    PatternSampler::new(intensity).sample(t, rng)
}

/// Per-axis bandwidths of a product Gaussian kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub x: f64,
    pub y: f64,
}

/// Silverman's rule of thumb on each axis, floored at one raster cell.
pub fn silverman_bandwidth(events: &[Location], window: &Window, shape: RasterShape) -> Bandwidth {
    let xs: Vec<f64> = events.iter().map(|l| l.x).collect();
    let ys: Vec<f64> = events.iter().map(|l| l.y).collect();
    Bandwidth {
        x: silverman_1d(xs).max(window.width() / shape.nx as f64),
        y: silverman_1d(ys).max(window.height() / shape.ny as f64),
    }
}

fn silverman_1d(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    v.sort_by(|a, b| a.total_cmp(b));
    let iqr = crate::weights::quantile_type7(&v, 0.75) - crate::weights::quantile_type7(&v, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Normalized Gaussian kernel density of `events` on the raster grid, with
/// Silverman bandwidths.
pub fn estimate_density_kde(
    events: &[Location],
    window: Window,
    shape: RasterShape,
) -> Result<(IntensitySurface, Bandwidth)> {
    let bw = silverman_bandwidth(events, &window, shape);
    Ok((estimate_density_kde_with(events, window, shape, bw)?, bw))
}

pub fn estimate_density_kde_with(
    events: &[Location],
    window: Window,
    shape: RasterShape,
    bw: Bandwidth,
) -> Result<IntensitySurface> {
    if events.is_empty() {
        return Err(Error::invalid("density estimation needs at least one event"));
    }
    if !(bw.x > 0.0 && bw.y > 0.0) {
        return Err(Error::invalid("bandwidths must be positive"));
    }
    let dx = window.width() / shape.nx as f64;
    let dy = window.height() / shape.ny as f64;
    let mut values = vec![0.0; shape.len()];
    let mut fx = vec![0.0; shape.nx];
    let mut fy = vec![0.0; shape.ny];
    for e in events {
        for (ix, f) in fx.iter_mut().enumerate() {
            let u = (window.x_min() + (ix as f64 + 0.5) * dx - e.x) / bw.x;
            *f = (-0.5 * u * u).exp();
        }
        for (iy, f) in fy.iter_mut().enumerate() {
            let u = (window.y_min() + (iy as f64 + 0.5) * dy - e.y) / bw.y;
            *f = (-0.5 * u * u).exp();
        }
        for (iy, &gy) in fy.iter().enumerate() {
            if gy == 0.0 {
                continue;
            }
            let row = &mut values[iy * shape.nx..(iy + 1) * shape.nx];
            for (v, &gx) in row.iter_mut().zip(&fx) {
                *v += gx * gy;
            }
        }
    }
    let raster = Raster::new(window, shape.nx, shape.ny, values)?;
    let total = raster.integral();
    if !(total > 0.0) {
        return Err(Error::Numerical("kernel density vanished on the grid".into()));
    }
    IntensitySurface::new(raster.map(|v| v / total))
}

/// Log of the density ratio of `pattern` under two Poisson processes.
///
/// Fails with an overlap violation when the denominator intensity vanishes at
/// an event of the pattern.
pub fn log_density_ratio(
    pattern: &PointPattern,
    numerator: &IntensitySurface,
    denominator: &IntensitySurface,
) -> Result<f64> {
    let mut acc = 0.0;
    for &s in &pattern.points {
        let den = denominator.value_at(s)?;
        if den <= INTENSITY_FLOOR {
            return Err(Error::OverlapViolation {
                t: pattern.t,
                x: s.x,
                y: s.y,
            });
        }
        acc += numerator.value_at(s)?.ln() - den.ln();
    }
    Ok(acc - (numerator.total() - denominator.total()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> IntensitySurface {
        IntensitySurface::new(Raster::constant(
            Window::unit(),
            RasterShape::new(8, 8).unwrap(),
            v,
        ))
        .unwrap()
    }

    #[test]
    fn zero_intensity_gives_empty_patterns() {
        let mut rng = SeedStream::new(1, 0).rng();
        let z = constant(0.0);
        for _ in 0..100 {
            assert!(sample_poisson_pattern(&z, 1, &mut rng).is_empty());
        }
    }

    #[test]
    fn count_law_for_constant_intensity() {
        let s = PatternSampler::new(&constant(5.0));
        let mut rng = SeedStream::new(7, 3).rng();
        let n = 10_000;
        let counts: Vec<f64> = (0..n).map(|_| s.sample(1, &mut rng).len() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 5.0).abs() < 0.1, "mean {mean}");
        assert!((var - 5.0).abs() < 0.25, "var {var}");
    }

    #[test]
    fn points_follow_cell_mass() {
        let w = Window::unit();
        let r = Raster::new(w, 2, 1, vec![0.0, 50.0]).unwrap();
        let s = PatternSampler::new(&IntensitySurface::new(r).unwrap());
        let mut rng = SeedStream::new(3, 1).rng();
        for _ in 0..50 {
            for p in s.sample(1, &mut rng).points {
                assert!(p.x >= 0.5 && p.x <= 1.0);
            }
        }
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let s = PatternSampler::new(&constant(20.0));
        let a = s.sample(1, &mut SeedStream::new(9, 4).rng());
        let b = s.sample(1, &mut SeedStream::new(9, 4).rng());
        let c = s.sample(1, &mut SeedStream::new(9, 5).rng());
        assert_eq!(a, b);
        assert_ne!(a, c);
        let root = SeedStream::new(9, 0);
        assert_eq!(root.derive("rep", 3), root.derive("rep", 3));
        assert_ne!(root.derive("rep", 3), root.derive("rep", 4));
        assert_ne!(root.derive("rep", 3), root.derive("oracle", 3));
    }

    #[test]
    fn kde_single_event_peaks_at_its_cell() {
        let shape = RasterShape::new(20, 20).unwrap();
        let e = Location::new(0.33, 0.71);
        let (kde, _) = estimate_density_kde(&[e], Window::unit(), shape).unwrap();
        let r = kde.raster();
        let argmax = (0..r.values().len())
            .max_by(|&a, &b| r.values()[a].total_cmp(&r.values()[b]))
            .unwrap();
        assert_eq!(argmax, r.cell_index(e).unwrap());
        assert!((kde.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kde_two_clusters_have_two_modes() {
        let shape = RasterShape::new(40, 20).unwrap();
        let w = Window::new(0.0, 4.0, 0.0, 2.0).unwrap();
        let bw = Bandwidth { x: 0.1, y: 0.1 };
        let a = Location::new(0.95, 1.05);
        let b = Location::new(a.x + 10.0 * bw.x * 2.0, 1.05);
        let mut events = Vec::new();
        for k in 0..5 {
            let off = (k as f64 - 2.0) * 0.01;
            events.push(Location::new(a.x + off, a.y - off));
            events.push(Location::new(b.x - off, b.y + off));
        }
        let kde = estimate_density_kde_with(&events, w, shape, bw).unwrap();
        let r = kde.raster();
        let v = r.values();
        let is_local_max = |c: usize| {
            let (ix, iy) = ((c % 40) as isize, (c / 40) as isize);
            (-1..=1).all(|dy| {
                (-1..=1).all(|dx| {
                    let (jx, jy) = (ix + dx, iy + dy);
                    if (dx, dy) == (0, 0) || jx < 0 || jy < 0 || jx >= 40 || jy >= 20 {
                        return true;
                    }
                    v[c] >= v[(jy * 40 + jx) as usize]
                })
            })
        };
        let maxima: Vec<usize> = (0..v.len()).filter(|&c| is_local_max(c)).collect();
        assert_eq!(maxima, vec![r.cell_index(a).unwrap(), r.cell_index(b).unwrap()]);
        assert!((kde.total() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kde_rejects_empty_input() {
        assert!(estimate_density_kde(&[], Window::unit(), RasterShape::new(4, 4).unwrap()).is_err());
    }

    #[test]
    fn ratio_identities() {
        let a = constant(2.0);
        let b = constant(1.0);
        let pat = PointPattern::new(
            1,
            vec![Location::new(0.1, 0.2), Location::new(0.5, 0.5), Location::new(0.9, 0.3)],
        );
        assert_eq!(log_density_ratio(&pat, &a, &a).unwrap(), 0.0);
        let expected = 3.0 * 2f64.ln() - 1.0;
        assert!((log_density_ratio(&pat, &a, &b).unwrap() - expected).abs() < 1e-12);
        let empty = PointPattern::empty(1);
        let r = log_density_ratio(&empty, &constant(3.0), &constant(5.0)).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        let fwd = log_density_ratio(&pat, &a, &b).unwrap();
        let back = log_density_ratio(&pat, &b, &a).unwrap();
        assert!((fwd + back).abs() < 1e-12);
    }

    #[test]
    fn overlap_violation_reports_location() {
        let w = Window::unit();
        let den = IntensitySurface::new(Raster::new(w, 2, 1, vec![0.0, 1.0]).unwrap()).unwrap();
        let pat = PointPattern::new(4, vec![Location::new(0.75, 0.5), Location::new(0.25, 0.5)]);
        match log_density_ratio(&pat, &constant(1.0), &den) {
            Err(Error::OverlapViolation { t, x, y }) => assert_eq!((t, x, y), (4, 0.25, 0.5)),
            other => panic!("expected overlap violation, got {other:?}"),
        }
    }

    #[test]
    fn importance_weights_average_to_one() {
        let w = Window::unit();
        let shape = RasterShape::new(10, 10).unwrap();
        let den = IntensitySurface::new(Raster::from_fn(w, shape, |l| 3.0 + 4.0 * l.x)).unwrap();
        let num = IntensitySurface::new(Raster::from_fn(w, shape, |l| 4.0 + 2.0 * l.y)).unwrap();
        let sampler = PatternSampler::new(&den);
        let mut rng = SeedStream::new(21, 0).rng();
        let n = 10_000;
        let ws: Vec<f64> = (0..n)
            .map(|_| log_density_ratio(&sampler.sample(1, &mut rng), &num, &den).unwrap().exp())
            .collect();
        let mean = ws.iter().sum::<f64>() / n as f64;
        let sd = (ws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }
}
