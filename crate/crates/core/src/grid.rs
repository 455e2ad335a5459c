//! Occupancy probability grid with a C¹ bicubic lookup.
//!
//! Cell `(ix, iy)` covers `[origin + i * res, origin + (i + 1) * res)` on each
//! axis; its center sits at `origin + (i + 0.5) * res`. Cells are stored row
//! by row with `iy` increasing towards +y (north).

use std::collections::HashSet;

use nalgebra::Point2;

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud2D, Pose2D};

/// Probability assigned to cells the benchmark splat does not reach.
pub const BACKGROUND_PROBABILITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<f64>,
}

/// Truncated Gaussian used to paint synthetic maps around scan points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatKernel {
    pub sigma_cells: f64,
    pub peak: f64,
    pub background: f64,
    /// Cut-off radius in multiples of `sigma_cells`.
    pub truncation_sigmas: f64,
}

impl Default for SplatKernel {
    fn default() -> Self {
        SplatKernel {
            sigma_cells: 1.5,
            peak: 0.9,
            background: BACKGROUND_PROBABILITY,
            truncation_sigmas: 4.0,
        }
    }
}

impl SplatKernel {
    /// Probability at `d_cells` (distance in cell units) from a single point.
    pub fn value_at(&self, d_cells: f64) -> f64 {
        if d_cells > self.truncation_sigmas * self.sigma_cells {
            return self.background;
        }
        let g = (-(d_cells * d_cells) / (2.0 * self.sigma_cells * self.sigma_cells)).exp();
        self.background + (self.peak - self.background) * g
    }

    pub fn radius_cells(&self) -> f64 {
        self.truncation_sigmas * self.sigma_cells
    }
}

/// Odds multipliers and clamps for incremental map building.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccupancyUpdate {
    pub hit_odds: f64,
    pub miss_odds: f64,
    pub min_probability: f64,
    pub max_probability: f64,
}

impl Default for OccupancyUpdate {
    fn default() -> Self {
        OccupancyUpdate {
            hit_odds: 1.5,
            miss_odds: 0.7,
            min_probability: 0.02,
            max_probability: 0.98,
        }
    }
}

impl OccupancyUpdate {
    pub fn apply(&self, p: f64, odds_factor: f64) -> f64 {
        let p = p.clamp(self.min_probability, self.max_probability);
        let odds = p / (1.0 - p) * odds_factor;
        (odds / (1.0 + odds)).clamp(self.min_probability, self.max_probability)
    }
}

/// Catmull-Rom segment between `p1` and `p2` at parameter `t` in `[0, 1]`.
#[inline]
fn catmull_rom<T: Real>(p: [f64; 4], t: T) -> T {
    let [p0, p1, p2, p3] = p;
    let c1 = 0.5 * (p2 - p0);
    let c2 = 0.5 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3);
    let c3 = 0.5 * (3.0 * (p1 - p2) + p3 - p0);
    ((t * c3 + c2) * t + c1) * t + p1
}

#[inline]
fn catmull_rom_t<T: Real>(p: [T; 4], t: T) -> T {
    let [p0, p1, p2, p3] = p;
    let c1 = (p2 - p0) * 0.5;
    let c2 = (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * 0.5;
    let c3 = ((p1 - p2) * 3.0 + p3 - p0) * 0.5;
    ((t * c3 + c2) * t + c1) * t + p1
}

/// Splits a continuous cell coordinate into a base index and a local
/// parameter, clamping to the interpolation window `[0, n - 1]`.
#[inline]
fn locate<T: Real>(u: T, n: usize) -> (i64, T) {
    let max = (n - 1) as f64;
    let u = if u.value() <= 0.0 {
        T::constant(0.0)
    } else if u.value() >= max {
        T::constant(max)
    } else {
        u
    };
    if n == 1 {
        return (0, T::constant(0.0));
    }
    let base = (u.value().floor() as i64).min(n as i64 - 2);
    (base, u - base as f64)
}

impl ProbabilityGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        fill: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::argument("grid must have at least one cell"));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::argument(format!(
                "resolution must be > 0, got {resolution}"
            )));
        }
        if !(0.0..=1.0).contains(&fill) {
            return Err(Error::argument(format!(
                "probability {fill} outside [0, 1]"
            )));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::argument("grid origin must be finite"));
        }
        Ok(ProbabilityGrid {
            width,
            height,
            resolution,
            origin,
            cells: vec![fill; width * height],
        })
    }

    /// Smallest grid covering `[min, max]` plus `margin` meters on each side.
    pub fn covering(
        min: [f64; 2],
        max: [f64; 2],
        margin: f64,
        resolution: f64,
        fill: f64,
    ) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::argument(format!(
                "resolution must be > 0, got {resolution}"
            )));
        }
        let origin = [min[0] - margin, min[1] - margin];
        let width = ((max[0] + margin - origin[0]) / resolution).ceil().max(1.0) as usize;
        let height = ((max[1] + margin - origin[1]) / resolution).ceil().max(1.0) as usize;
        ProbabilityGrid::new(width, height, resolution, origin, fill)
    }

    /// Paints one truncated Gaussian per world-frame point, combining
    /// overlapping kernels by their maximum.
    pub fn from_pointcloud(
        points: &PointCloud2D,
        resolution: f64,
        padding_cells: usize,
        kernel: &SplatKernel,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::argument(
                "cannot build a grid from an empty point cloud",
            ));
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points.iter() {
            min = [min[0].min(p.x), min[1].min(p.y)];
            max = [max[0].max(p.x), max[1].max(p.y)];
        }
        // the extra half cell puts the extreme points on cell centers
        let margin = (padding_cells as f64 + 0.5) * resolution;
        let mut grid = ProbabilityGrid::covering(min, max, margin, resolution, kernel.background)?;

        let reach = kernel.radius_cells().ceil() as i64 + 1;
        for p in points.iter() {
            let (cu, cv) = grid.continuous_index(p.x, p.y);
            let (ci, cj) = (cu.round() as i64, cv.round() as i64);
            for j in (cj - reach)..=(cj + reach) {
                for i in (ci - reach)..=(ci + reach) {
                    if !grid.contains_index(i, j) {
                        continue;
                    }
                    let d = (i as f64 - cu).hypot(j as f64 - cv);
                    let value = kernel.value_at(d);
                    let cell = &mut grid.cells[j as usize * grid.width + i as usize];
                    if value > *cell {
                        *cell = value;
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::argument(format!("probability {p} outside [0, 1]")));
        }
        if ix >= self.width || iy >= self.height {
            return Err(Error::argument(format!(
                "cell ({ix}, {iy}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        self.cells[iy * self.width + ix] = p;
        Ok(())
    }

    pub fn contains_index(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    /// Cell containing a world point, if it lies on the grid.
    pub fn cell_of(&self, wx: f64, wy: f64) -> Option<(usize, usize)> {
        let (ix, iy) = self.cell_index_unchecked(wx, wy);
        self.contains_index(ix, iy)
            .then_some((ix as usize, iy as usize))
    }

    pub(crate) fn cell_index_unchecked(&self, wx: f64, wy: f64) -> (i64, i64) {
        (
            ((wx - self.origin[0]) / self.resolution).floor() as i64,
            ((wy - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2<f64> {
        Point2::new(
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Position in cell units where integer values are cell centers.
    fn continuous_index<T: Real>(&self, wx: T, wy: T) -> (T, T) {
        (
            (wx - self.origin[0]) / self.resolution - 0.5,
            (wy - self.origin[1]) / self.resolution - 0.5,
        )
    }

    #[inline]
    fn clamped(&self, ix: i64, iy: i64) -> f64 {
        let ix = ix.clamp(0, self.width as i64 - 1) as usize;
        let iy = iy.clamp(0, self.height as i64 - 1) as usize;
        self.cells[iy * self.width + ix]
    }

    /// Bicubic Catmull-Rom lookup at a world position.
    ///
    /// Queries outside the window spanned by the outermost cell centers are
    /// clamped onto it (zero gradient across the border). The result is
    /// clipped to `[0, 1]` since Catmull-Rom can overshoot at sharp edges.
    pub fn interpolate<T: Real>(&self, wx: T, wy: T) -> T {
        let (u, v) = self.continuous_index(wx, wy);
        let (i0, tu) = locate(u, self.width);
        let (j0, tv) = locate(v, self.height);

        let mut rows = [T::constant(0.0); 4];
        for (dj, row) in rows.iter_mut().enumerate() {
            let j = j0 - 1 + dj as i64;
            let samples = [
                self.clamped(i0 - 1, j),
                self.clamped(i0, j),
                self.clamped(i0 + 1, j),
                self.clamped(i0 + 2, j),
            ];
            *row = catmull_rom(samples, tu);
        }
        let value = catmull_rom_t(rows, tv);
        if value.value() < 0.0 {
            T::constant(0.0)
        } else if value.value() > 1.0 {
            T::constant(1.0)
        } else {
            value
        }
    }

    /// Integrates one scan taken at `pose` with per-scan hit/miss odds updates.
    ///
    /// Each cell is updated at most once per scan and hits take precedence
    /// over misses. Endpoints at or beyond `max_range` only contribute misses
    /// up to `max_range`. Rays are clipped to the grid.
    pub fn insert_scan(
        &mut self,
        pose: &Pose2D,
        cloud: &PointCloud2D,
        max_range: f64,
        update: &OccupancyUpdate,
    ) {
        let (sx, sy) = self.cell_index_unchecked(pose.x, pose.y);
        let mut hits = HashSet::new();
        let mut misses = HashSet::new();
        for p in cloud.iter() {
            let range = p.coords.norm();
            let (is_hit, local) = if range >= max_range {
                (false, p * (max_range / range))
            } else {
                (true, *p)
            };
            let end = pose.transform_point(&local);
            let (ex, ey) = self.cell_index_unchecked(end.x, end.y);
            bresenham((sx, sy), (ex, ey), |cx, cy| {
                if self.contains_index(cx, cy) {
                    misses.insert((cx as usize, cy as usize));
                }
            });
            if is_hit && self.contains_index(ex, ey) {
                hits.insert((ex as usize, ey as usize));
            }
        }
        // Sorted for a deterministic update order.
        let mut hits: Vec<_> = hits.into_iter().collect();
        hits.sort_unstable();
        let mut misses: Vec<_> = misses.into_iter().filter(|c| !hits.contains(c)).collect();
        misses.sort_unstable();
        for (ix, iy) in hits {
            let c = &mut self.cells[iy * self.width + ix];
            *c = update.apply(*c, update.hit_odds);
        }
        for (ix, iy) in misses {
            let c = &mut self.cells[iy * self.width + ix];
            *c = update.apply(*c, update.miss_odds);
        }
    }
}

/// Visits the cells on the digital line from `start` to `end`, excluding `end`.
pub(crate) fn bresenham(start: (i64, i64), end: (i64, i64), mut visit: impl FnMut(i64, i64)) {
    let (mut x, mut y) = start;
    let dx = (end.0 - x).abs();
    let dy = -(end.1 - y).abs();
    let sx = if x < end.0 { 1 } else { -1 };
    let sy = if y < end.1 { 1 } else { -1 };
    let mut err = dx + dy;
    while (x, y) != end {
        visit(x, y);
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
