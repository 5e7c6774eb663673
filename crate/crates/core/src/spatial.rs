//! Windows, rasters, pixel partitions and point patterns.
//!
//! Every grid in the crate uses the same cell convention: cells are
//! half-open `[lo, hi)` on both axes except along the top and right edges of
//! the window, which are closed. Cell and pixel indices are row-major with
//! row 0 at the lowest `y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular observation window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub struct Window {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl TryFrom<WindowRepr> for Window {
    type Error = Error;
    fn try_from(r: WindowRepr) -> Result<Self> {
        Window::new(r.x_min, r.x_max, r.y_min, r.y_max)
    }
}

impl From<Window> for WindowRepr {
    fn from(w: Window) -> Self {
        WindowRepr {
            x_min: w.x_min,
            x_max: w.x_max,
            y_min: w.y_min,
            y_max: w.y_max,
        }
    }
}

impl Window {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!(
                "degenerate window [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn unit() -> Self {
        Self {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, loc: Location) -> bool {
        loc.x >= self.x_min && loc.x <= self.x_max && loc.y >= self.y_min && loc.y <= self.y_max
    }

    /// Index of the cell of an `nx` x `ny` tiling containing `loc`.
    pub fn cell_index(&self, nx: usize, ny: usize, loc: Location) -> Result<usize> {
        if !self.contains(loc) {
            return Err(Error::OutsideWindow { x: loc.x, y: loc.y });
        }
        let ix = axis_bin(loc.x, self.x_min, self.width(), nx);
        let iy = axis_bin(loc.y, self.y_min, self.height(), ny);
        Ok(iy * nx + ix)
    }
}

fn axis_bin(v: f64, lo: f64, extent: f64, n: usize) -> usize {
    let b = ((v - lo) / extent * n as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(n - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Events observed in one time period. Periods are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    pub t: usize,
    pub points: Vec<Location>,
}

impl PointPattern {
    pub fn new(t: usize, points: Vec<Location>) -> Self {
        Self { t, points }
    }

    pub fn empty(t: usize) -> Self {
        Self { t, points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Grid dimensions of a raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterShape {
    pub nx: usize,
    pub ny: usize,
}

impl RasterShape {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("raster dimensions must be positive"));
        }
        Ok(Self { nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Piecewise-constant field over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    window: Window,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(window: Window, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        RasterShape::new(nx, ny)?;
        if values.len() != nx * ny {
            return Err(Error::invalid(format!(
                "raster expects {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::invalid(format!("raster value {i} is NaN")));
        }
        Ok(Self {
            window,
            nx,
            ny,
            values,
        })
    }

    pub fn constant(window: Window, shape: RasterShape, value: f64) -> Self {
        Self {
            window,
            nx: shape.nx,
            ny: shape.ny,
            values: vec![value; shape.len()],
        }
    }

    /// Evaluates `f` at every cell center.
    pub fn from_fn(window: Window, shape: RasterShape, mut f: impl FnMut(Location) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for iy in 0..shape.ny {
            for ix in 0..shape.nx {
                values.push(f(cell_center(&window, shape, ix, iy)));
            }
        }
        Self {
            window,
            nx: shape.nx,
            ny: shape.ny,
            values,
        }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn shape(&self) -> RasterShape {
        RasterShape {
            nx: self.nx,
            ny: self.ny,
        }
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell_area(&self) -> f64 {
        self.window.area() / (self.nx * self.ny) as f64
    }

    pub fn cell_index(&self, loc: Location) -> Result<usize> {
        self.window.cell_index(self.nx, self.ny, loc)
    }

    pub fn cell_center(&self, index: usize) -> Location {
        cell_center(&self.window, self.shape(), index % self.nx, index / self.nx)
    }

    /// Value of the cell containing `loc`.
    pub fn value_at(&self, loc: Location) -> Result<f64> {
        Ok(self.values[self.cell_index(loc)?])
    }

    /// Midpoint-rule integral over the window.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            window: self.window,
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.window == other.window
    }
}

pub(crate) fn cell_center(window: &Window, shape: RasterShape, ix: usize, iy: usize) -> Location {
    let dx = window.width() / shape.nx as f64;
    let dy = window.height() / shape.ny as f64;
    Location::new(
        window.x_min() + (ix as f64 + 0.5) * dx,
        window.y_min() + (iy as f64 + 0.5) * dy,
    )
}

pub fn raster_value_at(raster: &Raster, loc: Location) -> Result<f64> {
    raster.value_at(loc)
}

pub fn raster_integral(raster: &Raster) -> f64 {
    raster.integral()
}

/// Distance from every cell center to the nearest event.
///
/// An empty event set yields `+inf` everywhere, so `exp(-D)` surfaces built
/// from it are identically zero.
pub fn distance_raster(events: &[Location], window: Window, shape: RasterShape) -> Raster {
    let mut values = vec![f64::INFINITY; shape.len()];
    min_sq_distance_into(&mut values, events, &window, shape);
    for v in &mut values {
        *v = v.sqrt();
    }
    Raster {
        window,
        nx: shape.nx,
        ny: shape.ny,
        values,
    }
}

/// Lowers each entry of `sq` to the squared distance from its cell center to
/// the nearest of `events`, when that is smaller.
pub fn min_sq_distance_into(sq: &mut [f64], events: &[Location], window: &Window, shape: RasterShape) {
    if events.is_empty() {
        return;
    }
    let dx = window.width() / shape.nx as f64;
    let dy = window.height() / shape.ny as f64;
    for iy in 0..shape.ny {
        let cy = window.y_min() + (iy as f64 + 0.5) * dy;
        let row = &mut sq[iy * shape.nx..(iy + 1) * shape.nx];
        for (ix, slot) in row.iter_mut().enumerate() {
            let cx = window.x_min() + (ix as f64 + 0.5) * dx;
            for e in events {
                let ddx = cx - e.x;
                let ddy = cy - e.y;
                let d = ddx * ddx + ddy * ddy;
                if d < *slot {
                    *slot = d;
                }
            }
        }
    }
}

/// Partition of a window into `px * py` equal rectangles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelGrid {
    window: Window,
    px: usize,
    py: usize,
}

impl PixelGrid {
    pub fn new(window: Window, px: usize, py: usize) -> Result<Self> {
        if px == 0 || py == 0 {
            return Err(Error::invalid("pixel counts must be positive"));
        }
        Ok(Self { window, px, py })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }
    pub fn px(&self) -> usize {
        self.px
    }
    pub fn py(&self) -> usize {
        self.py
    }
    pub fn len(&self) -> usize {
        self.px * self.py
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_area(&self) -> f64 {
        self.window.area() / self.len() as f64
    }

    pub fn pixel_of(&self, loc: Location) -> Result<usize> {
        self.window.cell_index(self.px, self.py, loc)
    }

    /// `(x_lo, x_hi, y_lo, y_hi)` of pixel `i`.
    pub fn bounds(&self, i: usize) -> (f64, f64, f64, f64) {
        let dx = self.window.width() / self.px as f64;
        let dy = self.window.height() / self.py as f64;
        let ix = (i % self.px) as f64;
        let iy = (i / self.px) as f64;
        let x0 = self.window.x_min() + ix * dx;
        let y0 = self.window.y_min() + iy * dy;
        (x0, x0 + dx, y0, y0 + dy)
    }

    pub fn centroid(&self, i: usize) -> Location {
        cell_center(
            &self.window,
            RasterShape {
                nx: self.px,
                ny: self.py,
            },
            i % self.px,
            i / self.px,
        )
    }

    /// Pixel containing the center of every raster cell.
    pub fn cell_assignment(&self, shape: RasterShape) -> Vec<usize> {
        (0..shape.len())
            .map(|c| {
                let loc = cell_center(&self.window, shape, c % shape.nx, c / shape.nx);
                self.pixel_of(loc).expect("cell centers lie inside the window")
            })
            .collect()
    }
}

pub fn make_pixel_grid(window: Window, px: usize, py: usize) -> Result<PixelGrid> {
    PixelGrid::new(window, px, py)
}

/// Number of events of `pattern` in every pixel.
pub fn count_in_pixels(pattern: &PointPattern, grid: &PixelGrid) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; grid.len()];
    for &p in &pattern.points {
        counts[grid.pixel_of(p)?] += 1;
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeratorKind {
    Binary,
    Continuous,
}

/// Per-pixel moderator values, either time-invariant or one column per period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeratorPanel {
    pixels: usize,
    periods: Option<usize>,
    kind: ModeratorKind,
    values: Vec<f64>,
}

impl ModeratorPanel {
    pub fn spatial(kind: ModeratorKind, values: Vec<f64>) -> Result<Self> {
        let p = values.len();
        Self::check(kind, &values)?;
        Ok(Self {
            pixels: p,
            periods: None,
            kind,
            values,
        })
    }

    /// `columns[t - 1]` holds the values for period `t`.
    pub fn spatio_temporal(kind: ModeratorKind, columns: Vec<Vec<f64>>) -> Result<Self> {
        let periods = columns.len();
        if periods == 0 {
            return Err(Error::invalid("moderator panel has no periods"));
        }
        let p = columns[0].len();
        if columns.iter().any(|c| c.len() != p) {
            return Err(Error::invalid("moderator columns differ in length"));
        }
        let values: Vec<f64> = columns.into_iter().flatten().collect();
        Self::check(kind, &values)?;
        Ok(Self {
            pixels: p,
            periods: Some(periods),
            kind,
            values,
        })
    }

    fn check(kind: ModeratorKind, values: &[f64]) -> Result<()> {
        if values.is_empty() {
            return Err(Error::invalid("moderator panel is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("moderator values must be finite"));
        }
        if kind == ModeratorKind::Binary && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary moderator values must be 0 or 1"));
        }
        Ok(())
    }

    pub fn kind(&self) -> ModeratorKind {
        self.kind
    }
    pub fn pixels(&self) -> usize {
        self.pixels
    }
    pub fn periods(&self) -> Option<usize> {
        self.periods
    }

    /// Values of all pixels at period `t` (1-based).
    pub fn column(&self, t: usize) -> Result<&[f64]> {
        match self.periods {
            None => Ok(&self.values),
            Some(n) if t >= 1 && t <= n => Ok(&self.values[(t - 1) * self.pixels..t * self.pixels]),
            Some(n) => Err(Error::invalid(format!(
                "moderator period {t} outside 1..={n}"
            ))),
        }
    }

    pub fn all_values(&self) -> &[f64] {
        &self.values
    }
}
